#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense n-dimensional array of doubles, row-major. Immutable by convention
// once handed to the tape; the few mutating call sites (optimizer updates,
// finite differences) own their copies.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(Shape shape, double v);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t d) const { return shape_[d]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major accessors for the ranks the pipeline uses.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double item() const;  // value of a 1-element tensor

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace xmodal
