#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "xmodal/association.hpp"
#include "xmodal/mining.hpp"

using namespace xmodal;

namespace {

Tensor vec(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor randu(Shape shape, std::mt19937_64& eng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), lo, hi, eng);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Leafs a feature batch for total_loss; positive-pair features optionally
// carry a mask.
BatchVars leaf_batch(Tape& tape, const std::vector<Tensor>& img_feats,
                     const std::vector<int>& img_ids,
                     const std::vector<Tensor>& txt_feats,
                     const std::vector<int>& txt_ids,
                     const std::vector<Tensor>& gates,
                     const std::vector<std::size_t>& txt_src,
                     const std::vector<Tensor>* img_masks = nullptr,
                     const std::vector<Tensor>* txt_masks = nullptr) {
  BatchVars b;
  b.img_ids = img_ids;
  b.txt_ids = txt_ids;
  b.txt_src = txt_src;
  for (std::size_t i = 0; i < img_feats.size(); ++i) {
    Var f = tape.leaf(img_feats[i]);
    b.img_feats.push_back(f);
    b.img_feats_pos.push_back(img_masks ? tape.mul(f, tape.leaf((*img_masks)[i])) : f);
  }
  for (std::size_t t = 0; t < txt_feats.size(); ++t) {
    Var f = tape.leaf(txt_feats[t]);
    b.txt_feats.push_back(f);
    b.txt_feats_pos.push_back(txt_masks ? tape.mul(f, tape.leaf((*txt_masks)[t])) : f);
    b.txt_gates.push_back(tape.leaf(gates[t]));
  }
  return b;
}

ScoreMatrix score_matrix(const std::vector<Tensor>& img_feats,
                         const std::vector<int>& img_ids,
                         const std::vector<Tensor>& txt_feats,
                         const std::vector<Tensor>& gates,
                         const std::vector<int>& txt_ids, double temperature) {
  ScoreMatrix sm;
  sm.rows = img_feats.size();
  sm.cols = txt_feats.size();
  sm.image_ids = img_ids;
  sm.text_ids = txt_ids;
  sm.scores.resize(sm.rows * sm.cols);
  for (std::size_t i = 0; i < sm.rows; ++i)
    for (std::size_t j = 0; j < sm.cols; ++j)
      sm.scores[i * sm.cols + j] =
          score(img_feats[i], {txt_feats[j], gates[j]}, temperature,
                GateMode::elementwise, 1e-12)
              .score;
  return sm;
}

}  // namespace

TEST_CASE("score of identical unit directions") {
  TextEncoding txt{vec({2, 0, 0, 0}), Tensor::full({4}, 1.0)};
  PairScore s = score(vec({5, 0, 0, 0}), txt, 1.0);
  CHECK(s.raw_cosine == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.gated_logit == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.score == doctest::Approx(sigmoid(1.0)).epsilon(1e-12));
  CHECK(std::abs(s.score - 0.7311) < 1e-4);
}

TEST_CASE("score of orthogonal features") {
  TextEncoding txt{vec({0, 1, 0}), Tensor::full({3}, 0.8)};
  PairScore s = score(vec({1, 0, 0}), txt, 5.0);
  CHECK(s.raw_cosine == 0.0);
  CHECK(s.gated_logit == 0.0);
  CHECK(s.score == 0.5);
}

TEST_CASE("score scale invariance") {
  std::mt19937_64 eng(61);
  Tensor img = randu({6}, eng);
  TextEncoding txt{randu({6}, eng), randu({6}, eng, 0.1, 0.9)};
  PairScore base = score(img, txt, 5.0);
  for (double lam : {0.25, 3.0, 1000.0}) {
    Tensor scaled = img;
    for (std::size_t d = 0; d < scaled.numel(); ++d) scaled[d] *= lam;
    PairScore s = score(scaled, txt, 5.0);
    CHECK(s.score == doctest::Approx(base.score).epsilon(1e-12));
    CHECK(s.raw_cosine == doctest::Approx(base.raw_cosine).epsilon(1e-12));
  }
}

TEST_CASE("score edge cases") {
  TextEncoding txt{vec({0, 1}), vec({0.5, 0.5})};
  CHECK_THROWS_AS(score(vec({0, 0}), txt, 5.0), EvalError);  // zero norm, eps 0
  CHECK(score(vec({0, 0}), txt, 5.0, GateMode::elementwise, 1e-12).score == 0.5);
  CHECK_THROWS_AS(score(vec({1, 0}), txt, 0.0), InputError);
  TextEncoding bad{vec({0, 1, 2}), vec({0.5, 0.5, 0.5})};
  CHECK_THROWS_AS(score(vec({1, 0}), bad, 5.0), DimError);
}

TEST_CASE("scalar gate mode collapses the gate to its mean") {
  std::mt19937_64 eng(67);
  Tensor img = randu({5}, eng);
  TextEncoding txt{randu({5}, eng), randu({5}, eng, 0.2, 0.8)};
  PairScore s = score(img, txt, 5.0, GateMode::scalar);
  double mean = 0.0;
  for (std::size_t d = 0; d < 5; ++d) mean += txt.memory_gate[d];
  mean /= 5.0;
  PairScore plain = score(img, txt, 1.0);  // temperature 1: logit is gated cos
  CHECK(s.gated_logit == doctest::Approx(5.0 * mean * plain.raw_cosine).epsilon(1e-12));
  CHECK(s.score == doctest::Approx(sigmoid(5.0 * mean * plain.raw_cosine)).epsilon(1e-12));
}

TEST_CASE("bce matching loss") {
  CHECK(bce_matching_loss({{0.5, 1}}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  double near_one = bce_matching_loss({{1.0 - 1e-9, 1}});
  CHECK(near_one > 0.0);
  CHECK(near_one < 1e-8);
  double two = bce_matching_loss({{0.9, 1}, {0.2, 0}});
  CHECK(two == doctest::Approx(-0.5 * (std::log(0.9) + std::log(0.8))).epsilon(1e-12));
  CHECK(std::abs(two - 0.1643) < 1e-4);
  CHECK_THROWS_AS(bce_matching_loss({}), InputError);
}

TEST_CASE("triplet loss distances") {
  // 1-d layout gives exact distances: E(a,p)=1, E(a,n)=5
  CHECK(triplet_loss(Tensor({1, 1}, {0}), Tensor({1, 1}, {1}), Tensor({1, 1}, {5}), 2.0) == 0.0);
  CHECK(triplet_loss(Tensor({1, 1}, {0}), Tensor({1, 1}, {3}), Tensor({1, 1}, {1}), 0.5) == 2.5);
  Tensor same({1, 3}, {0.4, -0.2, 1.0});
  CHECK(triplet_loss(same, same, same, 0.7) == 0.7);

  // mean over rows: one active hinge, one inactive
  Tensor a({2, 1}, {0, 0}), p({2, 1}, {3, 1}), n({2, 1}, {1, 5});
  CHECK(triplet_loss(a, p, n, 0.5) == doctest::Approx(1.25).epsilon(1e-12));

  CHECK_THROWS_AS(triplet_loss(vec({1}), vec({1}), vec({1}), 0.2), DimError);
  CHECK_THROWS_AS(triplet_loss(Tensor({1, 2}, {0, 0}), Tensor({1, 1}, {0}),
                               Tensor({1, 2}, {0, 0}), 0.2),
                  DimError);
}

TEST_CASE("pair negative log likelihood") {
  CHECK(pair_nll({0.5}, PairTarget::non_match) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  double match99 = pair_nll({0.99}, PairTarget::match);
  CHECK(match99 == doctest::Approx(-std::log(0.99)).epsilon(1e-12));
  CHECK(std::abs(match99 - 0.01005) < 1e-5);
  double asym = pair_nll({1e-15}, PairTarget::non_match);  // clamped at 1e-12
  CHECK(asym >= 0.0);
  CHECK(asym < 1e-9);
  CHECK_THROWS_AS(pair_nll({}, PairTarget::match), InputError);
}

TEST_CASE("graph score matches the value score") {
  std::mt19937_64 eng(71);
  ScoreConfig cfg;
  for (int rep = 0; rep < 20; ++rep) {
    Tensor img = randu({8}, eng);
    Tensor txt = randu({8}, eng);
    Tensor gate = randu({8}, eng, 0.05, 0.95);
    Tape tape;
    Var s = score_node(tape, tape.leaf(img), tape.leaf(txt), tape.leaf(gate), cfg);
    double value = score(img, {txt, gate}, cfg.temperature, cfg.gate_mode, cfg.norm_eps).score;
    CHECK(tape.value(s).item() == doctest::Approx(value).epsilon(1e-12));
  }
  cfg.gate_mode = GateMode::scalar;
  Tensor img = randu({8}, eng);
  Tensor txt = randu({8}, eng);
  Tensor gate = randu({8}, eng, 0.05, 0.95);
  Tape tape;
  Var s = score_node(tape, tape.leaf(img), tape.leaf(txt), tape.leaf(gate), cfg);
  CHECK(tape.value(s).item() ==
        doctest::Approx(score(img, {txt, gate}, cfg.temperature, GateMode::scalar,
                              cfg.norm_eps)
                            .score)
            .epsilon(1e-12));
}

TEST_CASE("graph nll and triplet nodes match the value losses") {
  std::mt19937_64 eng(73);
  Tape tape;
  std::vector<double> raw = {0.12, 0.7, 0.93, 0.5};
  std::vector<Var> leaves;
  for (double s : raw) leaves.push_back(tape.leaf(Tensor::scalar(s)));
  CHECK(tape.value(pair_nll_node(tape, leaves, PairTarget::match)).item() ==
        doctest::Approx(pair_nll(raw, PairTarget::match)).epsilon(1e-12));
  CHECK(tape.value(pair_nll_node(tape, leaves, PairTarget::non_match)).item() ==
        doctest::Approx(pair_nll(raw, PairTarget::non_match)).epsilon(1e-12));
  CHECK_THROWS_AS(pair_nll_node(tape, {}, PairTarget::match), InputError);

  const std::size_t b = 3, d = 4;
  Tensor a2({b, d}), p2({b, d}), n2({b, d});
  std::vector<Var> av, pv, nv;
  for (std::size_t i = 0; i < b; ++i) {
    Tensor ai = randu({d}, eng), pi = randu({d}, eng), ni = randu({d}, eng);
    for (std::size_t k = 0; k < d; ++k) {
      a2.at(i, k) = ai[k];
      p2.at(i, k) = pi[k];
      n2.at(i, k) = ni[k];
    }
    av.push_back(tape.leaf(ai));
    pv.push_back(tape.leaf(pi));
    nv.push_back(tape.leaf(ni));
  }
  CHECK(tape.value(triplet_loss_node(tape, av, pv, nv, 0.4)).item() ==
        doctest::Approx(triplet_loss(a2, p2, n2, 0.4)).epsilon(1e-12));
  CHECK_THROWS_AS(triplet_loss_node(tape, {}, {}, {}, 0.4), InputError);
}

TEST_CASE("total loss vanishes when every pair is saturated") {
  // Two identities at antipodal unit directions; temperature large enough to
  // push every positive score to 1-eps and every mined negative to eps.
  std::vector<Tensor> img_feats = {vec({1, 0}), vec({1, 0}), vec({-1, 0}), vec({-1, 0})};
  std::vector<int> img_ids = {0, 0, 1, 1};
  std::vector<Tensor> txt_feats = img_feats;
  std::vector<int> txt_ids = img_ids;
  std::vector<Tensor> gates(4, Tensor::full({2}, 1.0));
  std::vector<std::size_t> txt_src = {0, 1, 2, 3};

  Tape tape;
  BatchVars bv = leaf_batch(tape, img_feats, img_ids, txt_feats, txt_ids, gates, txt_src);
  MiningPlan plan;
  plan.image_triplets = {{0, 1, 2}, {1, 0, 3}, {2, 3, 0}, {3, 2, 1}};
  plan.text_triplets = plan.image_triplets;
  plan.semi_hard_pairs = {{0, 2}, {2, 0}};
  plan.hardest_pairs = {{0, 3}, {3, 1}};

  ScoreConfig cfg;
  cfg.temperature = 200.0;
  LossGraph g = total_loss(tape, bv, plan, 0.2, cfg);
  LossBreakdown b = breakdown(tape, g);
  CHECK(b.l_tri_img == 0.0);
  CHECK(b.l_tri_txt == 0.0);
  CHECK(b.total >= 0.0);
  CHECK(b.total < 1e-6);
}

TEST_CASE("total loss components agree with a straight-line recomputation") {
  std::mt19937_64 eng(79);
  const std::size_t dim = 6;
  std::vector<Tensor> img_feats, txt_feats, gates;
  std::vector<int> img_ids, txt_ids;
  std::vector<std::size_t> txt_src;
  for (int id = 0; id < 3; ++id)
    for (int k = 0; k < 2; ++k) {
      std::size_t pos = img_feats.size();
      img_feats.push_back(randu({dim}, eng));
      img_ids.push_back(id);
      for (int l = 0; l < 2; ++l) {
        txt_feats.push_back(randu({dim}, eng));
        txt_ids.push_back(id);
        txt_src.push_back(pos);
      }
    }

  gates.assign(txt_feats.size(), Tensor::full({dim}, 0.7));

  ScoreConfig cfg;
  ScoreMatrix sm = score_matrix(img_feats, img_ids, txt_feats, gates, txt_ids,
                                cfg.temperature);
  MiningPlan plan = build_plan(img_feats, img_ids, txt_feats, txt_ids, txt_src,
                               sm, PositiveMode::closest);
  REQUIRE(!plan.image_triplets.empty());
  REQUIRE(!plan.semi_hard_pairs.empty());
  REQUIRE(!plan.hardest_pairs.empty());

  const double margin = 0.2;
  Tape tape;
  BatchVars bv = leaf_batch(tape, img_feats, img_ids, txt_feats, txt_ids, gates, txt_src);
  LossBreakdown got = breakdown(tape, total_loss(tape, bv, plan, margin, cfg));

  auto pair_score = [&](std::size_t i, std::size_t t) {
    return score(img_feats[i], {txt_feats[t], gates[t]}, cfg.temperature,
                 cfg.gate_mode, cfg.norm_eps)
        .score;
  };
  std::vector<double> pos;
  for (std::size_t t = 0; t < txt_feats.size(); ++t)
    pos.push_back(pair_score(txt_src[t], t));
  double l_pos = pair_nll(pos, PairTarget::match);

  auto mined = [&](const std::vector<PairIdx>& pairs) {
    std::vector<double> s;
    for (const PairIdx& p : pairs) s.push_back(pair_score(p.image, p.text));
    return pair_nll(s, PairTarget::non_match);
  };
  double l_hardest = mined(plan.hardest_pairs);
  double l_semi = mined(plan.semi_hard_pairs);

  auto tri = [&](const std::vector<Triplet>& ts, const std::vector<Tensor>& feats) {
    std::size_t n = ts.size();
    Tensor a({n, dim}), p({n, dim}), ng({n, dim});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < dim; ++k) {
        a.at(i, k) = feats[ts[i].anchor][k];
        p.at(i, k) = feats[ts[i].positive][k];
        ng.at(i, k) = feats[ts[i].negative][k];
      }
    return triplet_loss(a, p, ng, margin);
  };
  double l_tri_img = tri(plan.image_triplets, img_feats);
  double l_tri_txt = tri(plan.text_triplets, txt_feats);

  CHECK(got.l_pos == doctest::Approx(l_pos).epsilon(1e-12));
  CHECK(got.l_hardest == doctest::Approx(l_hardest).epsilon(1e-12));
  CHECK(got.l_semi == doctest::Approx(l_semi).epsilon(1e-12));
  CHECK(got.l_tri_img == doctest::Approx(l_tri_img).epsilon(1e-12));
  CHECK(got.l_tri_txt == doctest::Approx(l_tri_txt).epsilon(1e-12));
  CHECK(got.total ==
        doctest::Approx(l_tri_img + l_tri_txt + l_hardest + l_semi + l_pos)
            .epsilon(1e-12));
}

TEST_CASE("empty mined lists contribute zero") {
  std::mt19937_64 eng(83);
  std::vector<Tensor> img_feats = {randu({4}, eng), randu({4}, eng)};
  std::vector<Tensor> txt_feats = {randu({4}, eng), randu({4}, eng)};
  std::vector<Tensor> gates = {randu({4}, eng, 0.1, 0.9), randu({4}, eng, 0.1, 0.9)};
  Tape tape;
  BatchVars bv = leaf_batch(tape, img_feats, {0, 1}, txt_feats, {0, 1}, gates, {0, 1});
  MiningPlan plan;  // nothing mined
  LossBreakdown b = breakdown(tape, total_loss(tape, bv, plan, 0.2, {}));
  CHECK(b.l_hardest == 0.0);
  CHECK(b.l_semi == 0.0);
  CHECK(b.l_tri_img == 0.0);
  CHECK(b.l_tri_txt == 0.0);
  CHECK(b.total == b.l_pos);
  CHECK(b.l_pos > 0.0);
}

TEST_CASE("total loss rejects out-of-range plan indices") {
  std::mt19937_64 eng(89);
  std::vector<Tensor> feats = {randu({4}, eng), randu({4}, eng)};
  std::vector<Tensor> gates = {randu({4}, eng, 0.1, 0.9), randu({4}, eng, 0.1, 0.9)};
  Tape tape;
  BatchVars bv = leaf_batch(tape, feats, {0, 1}, feats, {0, 1}, gates, {0, 1});
  MiningPlan plan;
  plan.hardest_pairs = {{5, 0}};
  CHECK_THROWS_AS(total_loss(tape, bv, plan, 0.2, {}), InputError);
  MiningPlan plan2;
  plan2.image_triplets = {{0, 1, 7}};
  CHECK_THROWS_AS(total_loss(tape, bv, plan2, 0.2, {}), InputError);
}

TEST_CASE("dropout mask values and scaling") {
  std::mt19937_64 eng(97);
  Tensor ones = sample_mask(16, 0.0, eng);
  for (std::size_t d = 0; d < 16; ++d) CHECK(ones[d] == 1.0);

  const double rate = 0.4;
  Tensor m = sample_mask(10000, rate, eng);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (std::size_t d = 0; d < m.numel(); ++d) {
    bool valid = m[d] == 0.0 || m[d] == doctest::Approx(1.0 / (1.0 - rate));
    CHECK(valid);
    mean += m[d];
    zeros += m[d] == 0.0;
  }
  mean /= static_cast<double>(m.numel());
  CHECK(std::abs(mean - 1.0) < 0.05);
  CHECK(zeros > 3000);
  CHECK(zeros < 5000);
  CHECK_THROWS_AS(sample_mask(4, 1.0, eng), InputError);
  CHECK_THROWS_AS(sample_mask(4, -0.1, eng), InputError);
}

TEST_CASE("masking positives moves only the positive component") {
  std::mt19937_64 eng(101);
  const std::size_t dim = 8;
  std::vector<Tensor> img_feats, txt_feats, gates;
  std::vector<int> img_ids, txt_ids;
  std::vector<std::size_t> txt_src;
  for (int id = 0; id < 3; ++id)
    for (int k = 0; k < 2; ++k) {
      std::size_t pos = img_feats.size();
      img_feats.push_back(randu({dim}, eng));
      img_ids.push_back(id);
      txt_feats.push_back(randu({dim}, eng));
      txt_ids.push_back(id);
      txt_src.push_back(pos);
    }
  gates.assign(txt_feats.size(), Tensor::full({dim}, 0.6));

  ScoreMatrix sm = score_matrix(img_feats, img_ids, txt_feats, gates, txt_ids, 5.0);
  MiningPlan plan = build_plan(img_feats, img_ids, txt_feats, txt_ids, txt_src,
                               sm, PositiveMode::closest);

  std::vector<Tensor> img_masks, txt_masks;
  for (std::size_t i = 0; i < img_feats.size(); ++i)
    img_masks.push_back(sample_mask(dim, 0.5, eng));
  for (std::size_t t = 0; t < txt_feats.size(); ++t)
    txt_masks.push_back(sample_mask(dim, 0.5, eng));

  Tape masked_tape;
  BatchVars masked = leaf_batch(masked_tape, img_feats, img_ids, txt_feats,
                                txt_ids, gates, txt_src, &img_masks, &txt_masks);
  LossBreakdown with_mask =
      breakdown(masked_tape, total_loss(masked_tape, masked, plan, 0.2, {}));

  Tape plain_tape;
  BatchVars plain = leaf_batch(plain_tape, img_feats, img_ids, txt_feats,
                               txt_ids, gates, txt_src);
  LossBreakdown without =
      breakdown(plain_tape, total_loss(plain_tape, plain, plan, 0.2, {}));

  CHECK(with_mask.l_hardest == without.l_hardest);
  CHECK(with_mask.l_semi == without.l_semi);
  CHECK(with_mask.l_tri_img == without.l_tri_img);
  CHECK(with_mask.l_tri_txt == without.l_tri_txt);
  CHECK(with_mask.l_pos != without.l_pos);
}
