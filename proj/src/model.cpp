#include "xmodal/model.hpp"

#include <cmath>
#include <random>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name))
    throw InputError("ParamStore: duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(init));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw InputError("ParamStore: unknown parameter '" + name + "'");
  return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw InputError("ParamStore: unknown parameter '" + name + "'");
  return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

namespace {

Tensor uniform_fan_in(const Shape& shape, std::size_t fan_in,
                      std::mt19937_64& eng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(shape, -bound, bound, eng);
}

// One direction's recurrent weights. The forget-gate bias block starts at
// +1.0 so early cell states persist.
void add_direction(ParamStore& store, const std::string& prefix, std::size_t h,
                   std::size_t e, std::mt19937_64& eng) {
  store.add(prefix + ".w_x", uniform_fan_in({4 * h, e}, e, eng));
  store.add(prefix + ".w_h", uniform_fan_in({4 * h, h}, h, eng));
  Tensor bias = Tensor::full({4 * h}, 0.0);
  for (std::size_t i = h; i < 2 * h; ++i) bias[i] = 1.0;
  store.add(prefix + ".bias", bias);
}

}  // namespace

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.embed_dim == 0 || spec.hidden == 0 || spec.word_dim == 0 ||
      spec.conv_hidden == 0)
    throw InputError("ModelSpec: zero-sized dimension");
  if (spec.embed_dim != 2 * spec.hidden)
    throw InputError("ModelSpec: embed_dim must equal 2*hidden, got " +
                     std::to_string(spec.embed_dim) + " vs hidden " +
                     std::to_string(spec.hidden));
  if (spec.vocab_size < 2)
    throw InputError("ModelSpec: vocab_size must be at least 2");

  auto eng = make_engine(seed, {kSeedInit});

  const std::size_t k = 3;  // conv kernel extent
  params_.add("conv0.w",
              uniform_fan_in({spec.conv_hidden, 3, k, k}, 3 * k * k, eng));
  params_.add("conv0.b", Tensor::full({spec.conv_hidden}, 0.0));
  params_.add("conv1.w", uniform_fan_in({spec.embed_dim, spec.conv_hidden, k, k},
                                        spec.conv_hidden * k * k, eng));
  params_.add("conv1.b", Tensor::full({spec.embed_dim}, 0.0));

  params_.add("embed", uniform_fan_in({spec.vocab_size, spec.word_dim},
                                      spec.word_dim, eng));
  add_direction(params_, "rnn.fwd", spec.hidden, spec.word_dim, eng);
  if (spec.tie_directions) {
    params_.add("rnn.bwd.w_x", Tensor(params_.at("rnn.fwd.w_x")));
    params_.add("rnn.bwd.w_h", Tensor(params_.at("rnn.fwd.w_h")));
    params_.add("rnn.bwd.bias", Tensor(params_.at("rnn.fwd.bias")));
  } else {
    add_direction(params_, "rnn.bwd", spec.hidden, spec.word_dim, eng);
  }
}

Model::Bound Model::bind(Tape& tape) const {
  Bound b;
  std::map<std::string, Var> by_name;
  b.all.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var v = tape.leaf(params_.tensor(i));
    by_name[params_.name(i)] = v;
    b.all.push_back(v);
  }
  b.visual.conv_w = {by_name.at("conv0.w"), by_name.at("conv1.w")};
  b.visual.conv_b = {by_name.at("conv0.b"), by_name.at("conv1.b")};
  b.visual.stride = spec_.conv_stride;
  b.text.embedding = by_name.at("embed");
  b.text.fwd = {by_name.at("rnn.fwd.w_x"), by_name.at("rnn.fwd.w_h"),
                by_name.at("rnn.fwd.bias")};
  b.text.bwd = {by_name.at("rnn.bwd.w_x"), by_name.at("rnn.bwd.w_h"),
                by_name.at("rnn.bwd.bias")};
  b.text.hidden = spec_.hidden;
  return b;
}

std::size_t Model::min_image_extent() const {
  // Two valid 3x3 convolutions, the first at stride spec_.conv_stride.
  // Output extent of layer 0 must be >= 3.
  return spec_.conv_stride * 2 + 3;
}

Tensor Model::image_feature(const Tensor& image, Pooling pooling) const {
  Tape tape;
  Bound b = bind(tape);
  Var img = tape.leaf(image);
  Var feat = encode_image(tape, img, b.visual, pooling);
  return tape.value(feat);
}

TextEncoding Model::text_encoding(const std::vector<std::size_t>& tokens) const {
  Tape tape;
  Bound b = bind(tape);
  TextEncodingVars enc = encode_text(tape, tokens, b.text, spec_.max_seq);
  return {tape.value(enc.feature), tape.value(enc.memory_gate)};
}

}  // namespace xmodal
