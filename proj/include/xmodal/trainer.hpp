#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "xmodal/association.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;                  // mean over the epoch's steps
  std::map<std::size_t, double> topk;  // held-out retrieval accuracy
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::string metrics_path;
  std::string checkpoint_path;
  LossBreakdown first_step;  // before any parameter update
};

// Identities with id % 5 == 0 form the held-out split.
bool is_heldout_identity(int id);
void split_dataset(const Dataset& ds, Dataset& train, Dataset& heldout);

double lr_at_epoch(const Config& cfg, std::size_t epoch);

// Encodes a dataset's images and texts with the current parameters.
struct EncodedSet {
  std::vector<Tensor> img_feats;
  std::vector<int> img_ids;
  std::vector<TextEncoding> txt_encodings;
  std::vector<int> txt_ids;
};
EncodedSet encode_all(const Model& model, const Dataset& ds, Pooling pooling);

std::map<std::size_t, double> heldout_eval(const Model& model, const Dataset& heldout,
                                           const Config& cfg);

Checkpoint make_checkpoint(const Model& model, const std::vector<Tensor>& adam_m,
                           const std::vector<Tensor>& adam_v, std::size_t step,
                           std::size_t epoch, std::uint64_t seed);
void restore_model(Model& model, const Checkpoint& ck);

// Full training loop: sample, encode, mine, loss, backward, Adam.
// Writes <out_dir>/metrics.jsonl plus periodic and final checkpoints.
TrainResult train(const Config& cfg, const Dataset& ds, std::ostream* console);

}  // namespace xmodal
