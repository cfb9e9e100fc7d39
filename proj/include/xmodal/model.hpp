#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmodal/encoders.hpp"

namespace xmodal {

// Registration-ordered named parameter tensors. The order is stable across
// runs so checkpoints, optimizer slots, and gradients line up by index.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  const std::string& name(std::size_t i) const { return items_[i].first; }
  Tensor& tensor(std::size_t i) { return items_[i].second; }
  const Tensor& tensor(std::size_t i) const { return items_[i].second; }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

struct ModelSpec {
  std::size_t embed_dim = 32;    // D, conv output channels and 2H
  std::size_t hidden = 16;       // H
  std::size_t word_dim = 16;     // E
  std::size_t conv_hidden = 16;  // middle conv channels (3 -> conv_hidden -> D)
  std::size_t conv_stride = 2;
  std::size_t vocab_size = 2;
  std::size_t max_seq = 32;
  bool tie_directions = false;
};

// Both encoders' parameters plus per-tape binding.
class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);

  struct Bound {
    VisualEncoderParams visual;
    TextEncoderParams text;
    std::vector<Var> all;  // aligned with the store's registration order
  };

  Bound bind(Tape& tape) const;
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelSpec& spec() const { return spec_; }

  // Minimum input height/width accepted by the conv stack.
  std::size_t min_image_extent() const;

  // Value-level encoders on a scratch tape, for evaluation and inspection.
  Tensor image_feature(const Tensor& image, Pooling pooling) const;
  TextEncoding text_encoding(const std::vector<std::size_t>& tokens) const;

 private:
  ModelSpec spec_;
  ParamStore params_;
};

}  // namespace xmodal
