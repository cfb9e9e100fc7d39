#include "xmodal/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace xmodal {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

static std::size_t checked_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimError("tensor extent must be positive, got shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw DimError("tensor data length " + std::to_string(data_.size()) +
                   " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = v;
  return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (numel() != 1) throw DimError("item() requires a 1-element tensor, got " + shape_str(shape_));
  return data_[0];
}

}  // namespace xmodal
