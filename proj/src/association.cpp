#include "xmodal/association.hpp"

#include <cmath>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr double kScoreClamp = 1e-12;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double norm_or_throw(const Tensor& v, double eps, const char* which) {
  double n2 = 0.0;
  for (std::size_t k = 0; k < v.numel(); ++k) n2 += v[k] * v[k];
  double n = std::sqrt(n2 + eps);
  if (n == 0.0)
    throw EvalError(std::string("score: zero-norm ") + which + " feature");
  return n;
}

}  // namespace

PairScore score(const Tensor& img_feat, const TextEncoding& txt,
                double temperature, GateMode mode, double norm_eps) {
  if (!(temperature > 0.0))
    throw InputError("score: temperature must be positive");
  if (!img_feat.same_shape(txt.feature) || !img_feat.same_shape(txt.memory_gate))
    throw DimError("score: feature shapes disagree: image " +
                   shape_str(img_feat.shape()) + " text " +
                   shape_str(txt.feature.shape()) + " gate " +
                   shape_str(txt.memory_gate.shape()));

  double ni = norm_or_throw(img_feat, norm_eps, "image");
  double nt = norm_or_throw(txt.feature, norm_eps, "text");

  double inv_nt = 1.0 / nt, inv_ni = 1.0 / ni;
  double cosine = 0.0, gated = 0.0, gate_sum = 0.0;
  for (std::size_t d = 0; d < img_feat.numel(); ++d) {
    double th = txt.feature[d] * inv_nt;
    double ph = img_feat[d] * inv_ni;
    cosine += th * ph;
    gated += txt.memory_gate[d] * th * ph;
    gate_sum += txt.memory_gate[d];
  }
  double logit;
  if (mode == GateMode::elementwise) {
    logit = temperature * gated;
  } else {
    logit = temperature * (gate_sum / static_cast<double>(img_feat.numel())) * cosine;
  }
  return {cosine, logit, stable_sigmoid(logit)};
}

double bce_matching_loss(const std::vector<std::pair<double, int>>& scored) {
  if (scored.empty()) throw InputError("bce_matching_loss: empty score list");
  double acc = 0.0;
  for (const auto& [s, label] : scored) {
    double c = std::min(std::max(s, kScoreClamp), 1.0 - kScoreClamp);
    acc += label ? -std::log(c) : -std::log(1.0 - c);
  }
  return acc / static_cast<double>(scored.size());
}

double triplet_loss(const Tensor& anchors, const Tensor& positives,
                    const Tensor& negatives, double margin) {
  if (anchors.rank() != 2)
    throw DimError("triplet_loss: expected [B,D] tensors, got " +
                   shape_str(anchors.shape()));
  if (!anchors.same_shape(positives) || !anchors.same_shape(negatives))
    throw DimError("triplet_loss: shape mismatch " + shape_str(anchors.shape()) +
                   " vs " + shape_str(positives.shape()) + " vs " +
                   shape_str(negatives.shape()));
  if (!std::isfinite(margin)) throw InputError("triplet_loss: margin must be finite");
  std::size_t b = anchors.extent(0), d = anchors.extent(1);
  if (b == 0) throw InputError("triplet_loss: empty batch");

  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double dp = 0.0, dn = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double ep = anchors[i * d + k] - positives[i * d + k];
      double en = anchors[i * d + k] - negatives[i * d + k];
      dp += ep * ep;
      dn += en * en;
    }
    acc += std::max(margin + std::sqrt(dp) - std::sqrt(dn), 0.0);
  }
  return acc / static_cast<double>(b);
}

double pair_nll(const std::vector<double>& scores, PairTarget target) {
  if (scores.empty()) throw InputError("pair_nll: empty score list");
  double acc = 0.0;
  for (double s : scores) {
    double c = std::min(std::max(s, kScoreClamp), 1.0 - kScoreClamp);
    acc += target == PairTarget::match ? -std::log(c) : -std::log(1.0 - c);
  }
  return acc / static_cast<double>(scores.size());
}

Tensor sample_mask(std::size_t dim, double rate, std::mt19937_64& eng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw InputError("sample_mask: rate must lie in [0,1)");
  Tensor mask = Tensor::full({dim}, 1.0);
  if (rate == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = keep(eng) ? scale : 0.0;
  return mask;
}

Var normalize(Tape& tape, Var v, double eps) {
  Var n2 = tape.dot(v, v);
  Var n = tape.sqrt(tape.add_const(n2, eps));
  return tape.scale_by(v, tape.recip(n));
}

Var score_node(Tape& tape, Var img_feat, Var txt_feat, Var gate,
               const ScoreConfig& cfg) {
  if (!(cfg.temperature > 0.0))
    throw InputError("score_node: temperature must be positive");
  Var phat = normalize(tape, img_feat, cfg.norm_eps);
  Var that = normalize(tape, txt_feat, cfg.norm_eps);
  Var logit;
  if (cfg.gate_mode == GateMode::elementwise) {
    logit = tape.scale_const(tape.dot(tape.mul(gate, that), phat), cfg.temperature);
  } else {
    std::size_t d = tape.value(gate).numel();
    Var gate_mean = tape.scale_const(tape.sum(gate), 1.0 / static_cast<double>(d));
    logit = tape.scale_by(tape.scale_const(tape.dot(that, phat), cfg.temperature),
                          gate_mean);
  }
  return tape.sigmoid(logit);
}

Var pair_nll_node(Tape& tape, const std::vector<Var>& scores, PairTarget target) {
  if (scores.empty()) throw InputError("pair_nll_node: empty score list");
  std::vector<Var> terms;
  terms.reserve(scores.size());
  for (Var s : scores) {
    Var c = tape.clamp(s, kScoreClamp, 1.0 - kScoreClamp);
    if (target == PairTarget::non_match) c = tape.add_const(tape.scale_const(c, -1.0), 1.0);
    terms.push_back(tape.scale_const(tape.log(c), -1.0));
  }
  return tape.scale_const(tape.add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

namespace {

Var euclidean(Tape& tape, Var a, Var b) {
  Var d = tape.sub(a, b);
  return tape.sqrt(tape.dot(d, d));
}

}  // namespace

Var triplet_loss_node(Tape& tape, const std::vector<Var>& anchors,
                      const std::vector<Var>& positives,
                      const std::vector<Var>& negatives, double margin) {
  if (anchors.empty()) throw InputError("triplet_loss_node: empty batch");
  if (anchors.size() != positives.size() || anchors.size() != negatives.size())
    throw InputError("triplet_loss_node: triplet arrays disagree in length");
  std::vector<Var> terms;
  terms.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    Var gap = tape.sub(euclidean(tape, anchors[i], positives[i]),
                       euclidean(tape, anchors[i], negatives[i]));
    terms.push_back(tape.relu(tape.add_const(gap, margin)));
  }
  return tape.scale_const(tape.add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

LossGraph total_loss(Tape& tape, const BatchVars& batch, const MiningPlan& plan,
                     double margin, const ScoreConfig& cfg) {
  if (batch.img_feats.size() != batch.img_ids.size() ||
      batch.img_feats.size() != batch.img_feats_pos.size() ||
      batch.txt_feats.size() != batch.txt_ids.size() ||
      batch.txt_feats.size() != batch.txt_feats_pos.size() ||
      batch.txt_feats.size() != batch.txt_gates.size() ||
      batch.txt_feats.size() != batch.txt_src.size())
    throw InputError("total_loss: batch arrays disagree in length");
  if (batch.txt_feats.empty()) throw InputError("total_loss: empty batch");

  auto check_pair = [&](const PairIdx& p) {
    if (p.image >= batch.img_feats.size() || p.text >= batch.txt_feats.size())
      throw InputError("total_loss: mined pair index out of range");
  };
  auto check_triplet = [&](const Triplet& t, std::size_t n) {
    if (t.anchor >= n || t.positive >= n || t.negative >= n)
      throw InputError("total_loss: triplet index out of range");
  };

  Var zero = tape.leaf(Tensor::full({1}, 0.0));

  std::vector<Var> pos_scores;
  pos_scores.reserve(batch.txt_feats.size());
  for (std::size_t t = 0; t < batch.txt_feats.size(); ++t) {
    std::size_t i = batch.txt_src[t];
    if (i >= batch.img_feats.size())
      throw InputError("total_loss: text source index out of range");
    pos_scores.push_back(score_node(tape, batch.img_feats_pos[i],
                                    batch.txt_feats_pos[t], batch.txt_gates[t], cfg));
  }

  LossGraph g;
  g.l_pos = pair_nll_node(tape, pos_scores, PairTarget::match);

  auto mined_nll = [&](const std::vector<PairIdx>& pairs) {
    if (pairs.empty()) return zero;
    std::vector<Var> scores;
    scores.reserve(pairs.size());
    for (const PairIdx& p : pairs) {
      check_pair(p);
      scores.push_back(score_node(tape, batch.img_feats[p.image],
                                  batch.txt_feats[p.text], batch.txt_gates[p.text], cfg));
    }
    return pair_nll_node(tape, scores, PairTarget::non_match);
  };
  g.l_hardest = mined_nll(plan.hardest_pairs);
  g.l_semi = mined_nll(plan.semi_hard_pairs);

  auto triplet_term = [&](const std::vector<Triplet>& triplets,
                          const std::vector<Var>& feats) {
    if (triplets.empty()) return zero;
    std::vector<Var> a, p, n;
    for (const Triplet& t : triplets) {
      check_triplet(t, feats.size());
      a.push_back(feats[t.anchor]);
      p.push_back(feats[t.positive]);
      n.push_back(feats[t.negative]);
    }
    return triplet_loss_node(tape, a, p, n, margin);
  };
  g.l_tri_img = triplet_term(plan.image_triplets, batch.img_feats);
  g.l_tri_txt = triplet_term(plan.text_triplets, batch.txt_feats);

  g.total = tape.add_n({g.l_tri_img, g.l_tri_txt, g.l_hardest, g.l_semi, g.l_pos});
  return g;
}

LossBreakdown breakdown(const Tape& tape, const LossGraph& g) {
  LossBreakdown b;
  b.l_pos = tape.value(g.l_pos).item();
  b.l_hardest = tape.value(g.l_hardest).item();
  b.l_semi = tape.value(g.l_semi).item();
  b.l_tri_img = tape.value(g.l_tri_img).item();
  b.l_tri_txt = tape.value(g.l_tri_txt).item();
  b.total = tape.value(g.total).item();
  return b;
}

}  // namespace xmodal
