#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmodal/association.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/encoders.hpp"
#include "xmodal/evaltool.hpp"
#include "xmodal/mining.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

// Flat key=value configuration. Every key is declared in the schema with a
// type and range; unknown keys and malformed values are rejected at load.
struct Config {
  // model.*
  std::size_t embed_dim = 32;
  std::size_t hidden = 16;
  std::size_t word_dim = 16;
  std::size_t conv_hidden = 16;
  std::size_t conv_stride = 2;
  std::size_t max_seq = 32;
  double temperature = 5.0;
  GateMode gate_mode = GateMode::elementwise;
  Pooling pooling = Pooling::sgmp;
  bool tie_directions = false;

  // loss.*
  double margin = 0.2;
  double dropout_rate = 0.3;
  DropoutApply dropout_policy = DropoutApply::positive_pairs_only;
  bool use_triplet = true;
  bool use_hardest = true;
  bool use_semi = true;

  // mining.*
  PositiveMode positive_mode = PositiveMode::closest;

  // batch.*
  std::size_t batch_identities = 8;
  std::size_t batch_images_per_id = 2;
  std::size_t batch_texts_per_image = 2;

  // optim.*
  double lr = 2e-3;
  std::vector<std::size_t> decay_epochs = {70, 90};
  double decay_rate = 0.1;
  std::size_t epochs = 100;
  std::size_t checkpoint_every = 50;
  std::size_t eval_every = 1;

  // data.*
  std::string data_dir = "data";
  std::size_t data_num_identities = 100;
  std::size_t data_attributes = 8;
  std::size_t data_synonyms = 3;
  double data_image_noise = 0.1;
  double data_described_fraction = 0.5;
  std::size_t data_images_per_id = 2;
  std::size_t data_texts_per_image = 2;
  std::size_t data_height = 16;
  std::size_t data_width = 16;

  // eval.*
  EvalMode eval_mode = EvalMode::plain_cosine;
  std::vector<std::size_t> eval_ks = {1, 5, 10};

  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

// Parses `key = value` lines ('#' comments, blank lines allowed).
Config load_config(const std::string& path);

// Applies one `key=value` override; unknown key or bad value throws.
void apply_override(Config& cfg, const std::string& assignment);

// Range/consistency checks shared by load and overrides.
void validate(const Config& cfg);

ModelSpec model_spec(const Config& cfg, std::size_t vocab_size);
SyntheticSpec synthetic_spec(const Config& cfg);
BatchSpec batch_spec(const Config& cfg);
ScoreConfig score_config(const Config& cfg);

}  // namespace xmodal
