#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xmodal/encoders.hpp"
#include "xmodal/mining.hpp"

namespace xmodal {

enum class GateMode { elementwise, scalar };
enum class PairTarget { match, non_match };
enum class DropoutApply { positive_pairs_only, both, none };

struct PairScore {
  double raw_cosine;   // ungated cosine of the normalized features
  double gated_logit;  // temperature * sum_d gate_d * that_d * phat_d
  double score;        // sigmoid(gated_logit), strictly in (0,1)
};

struct LossBreakdown {
  double l_pos = 0, l_hardest = 0, l_semi = 0, l_tri_img = 0, l_tri_txt = 0;
  double total = 0;
};

struct DropoutPolicy {
  double rate = 0.0;  // in [0,1)
  DropoutApply apply_to = DropoutApply::positive_pairs_only;
};

struct ScoreConfig {
  double temperature = 5.0;
  GateMode gate_mode = GateMode::elementwise;
  double norm_eps = 1e-12;  // added under the norm square root
};

// Gated sigmoid-cosine association score. With norm_eps 0 a zero-norm
// feature raises EvalError instead of silently normalizing.
PairScore score(const Tensor& img_feat, const TextEncoding& txt,
                double temperature, GateMode mode = GateMode::elementwise,
                double norm_eps = 0.0);

// -(1/N) sum l*log(s) + (1-l)*log(1-s) over (score, label) pairs.
double bce_matching_loss(const std::vector<std::pair<double, int>>& scored);

// Mean hinge max(margin + E(a,p) - E(a,n), 0) over rows, E Euclidean.
double triplet_loss(const Tensor& anchors, const Tensor& positives,
                    const Tensor& negatives, double margin);

// Mean negative log score (match) or log one-minus-score (non-match),
// scores clamped to [1e-12, 1-1e-12] first.
double pair_nll(const std::vector<double>& scores, PairTarget target);

// Inverted-scaling dropout mask: each entry 1/(1-rate) with prob 1-rate, else 0.
Tensor sample_mask(std::size_t dim, double rate, std::mt19937_64& eng);

// Graph-level building blocks.
Var normalize(Tape& tape, Var v, double eps);
Var score_node(Tape& tape, Var img_feat, Var txt_feat, Var gate,
               const ScoreConfig& cfg);
Var pair_nll_node(Tape& tape, const std::vector<Var>& scores, PairTarget target);
Var triplet_loss_node(Tape& tape, const std::vector<Var>& anchors,
                      const std::vector<Var>& positives,
                      const std::vector<Var>& negatives, double margin);

// One batch's encoded features on a shared tape. The *_pos variants carry
// dropout masks when the policy applies them; otherwise they alias the
// unmasked handles.
struct BatchVars {
  std::vector<Var> img_feats, img_feats_pos;
  std::vector<Var> txt_feats, txt_feats_pos;
  std::vector<Var> txt_gates;
  std::vector<int> img_ids, txt_ids;
  std::vector<std::size_t> txt_src;
};

struct LossGraph {
  Var l_pos, l_hardest, l_semi, l_tri_img, l_tri_txt;
  Var total;
};

// All five components of the composite loss with unit weights. Positive
// pairs use the masked features; mined pairs and triplets never do. A plan
// with no triplets for a modality contributes zero for that component.
LossGraph total_loss(Tape& tape, const BatchVars& batch, const MiningPlan& plan,
                     double margin, const ScoreConfig& cfg);

LossBreakdown breakdown(const Tape& tape, const LossGraph& g);

}  // namespace xmodal
