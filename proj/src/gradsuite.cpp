#include "xmodal/gradsuite.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/association.hpp"
#include "xmodal/error.hpp"
#include "xmodal/mining.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed, std::uint64_t salt,
              double lo = -1.0, double hi = 1.0) {
  auto eng = make_engine(seed, {kSeedInit, salt});
  return Tensor::uniform(std::move(shape), lo, hi, eng);
}

// Smallest distance between the two largest values of each group, used to
// keep finite differences away from max-op argmax flips.
double top2_gap(const Tensor& t, std::size_t groups, std::size_t stride_sel) {
  double gap = 1e300;
  std::size_t per = t.numel() / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    double best = -1e300, second = -1e300;
    for (std::size_t k = 0; k < per; ++k) {
      double v = stride_sel ? t[k * groups + g] : t[g * per + k];
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    gap = std::min(gap, best - second);
  }
  return gap;
}

Tensor rand_gapped(Shape shape, std::size_t groups, std::size_t stride_sel,
                   std::uint64_t seed, std::uint64_t salt) {
  for (std::uint64_t k = 0; k < 64; ++k) {
    Tensor t = rand_t(shape, seed, salt + k * 1000003);
    if (top2_gap(t, groups, stride_sel) > 1e-2) return t;
  }
  throw EvalError("gradsuite: could not sample tie-free max-op input");
}

Tensor rand_away_from(Shape shape, double point, double clearance,
                      std::uint64_t seed, std::uint64_t salt) {
  for (std::uint64_t k = 0; k < 64; ++k) {
    Tensor t = rand_t(shape, seed, salt + k * 1000003);
    bool ok = true;
    for (std::size_t i = 0; i < t.numel(); ++i)
      if (std::abs(t[i] - point) < clearance) ok = false;
    if (ok) return t;
  }
  throw EvalError("gradsuite: could not sample input clear of a kink");
}

// Weighted reduction so gradient routing errors change the result.
Var weighted_sum(Tape& tape, Var v, std::uint64_t seed, std::uint64_t salt) {
  Tensor w = rand_t(tape.value(v).shape(), seed, salt, 0.25, 1.75);
  return tape.sum(tape.mul(v, tape.leaf(std::move(w))));
}

struct ToyBatch {
  Model model;
  std::vector<Tensor> images;
  std::vector<std::vector<std::size_t>> texts;
  std::vector<int> img_ids, txt_ids;
  std::vector<std::size_t> txt_src;
  MiningPlan plan;
  ScoreConfig sc;
  double margin = 0.2;
};

ModelSpec toy_spec() {
  ModelSpec ms;
  ms.embed_dim = 8;
  ms.hidden = 4;
  ms.word_dim = 6;
  ms.conv_hidden = 4;
  ms.conv_stride = 2;
  ms.vocab_size = 12;
  ms.max_seq = 8;
  return ms;
}

ToyBatch make_toy_batch(std::uint64_t seed) {
  ToyBatch b{Model(toy_spec(), seed), {}, {}, {}, {}, {}, {}, {}, 0.2};
  b.sc.temperature = 5.0;
  b.sc.gate_mode = GateMode::elementwise;

  auto eng = make_engine(seed, {kSeedData, 99});
  std::uniform_int_distribution<std::size_t> tok(1, 11);
  std::uniform_int_distribution<std::size_t> len(3, 5);
  for (std::size_t i = 0; i < 8; ++i) {
    b.images.push_back(rand_t({3, 8, 8}, seed, 500 + i, -0.8, 0.8));
    b.img_ids.push_back(static_cast<int>(i / 2));
    std::vector<std::size_t> t(len(eng));
    for (auto& x : t) x = tok(eng);
    b.texts.push_back(std::move(t));
    b.txt_ids.push_back(static_cast<int>(i / 2));
    b.txt_src.push_back(i);
  }

  // Mining runs once on the unperturbed forward pass; the plan stays
  // frozen so finite differences never cross a mining decision boundary.
  std::vector<Tensor> img_vals;
  std::vector<TextEncoding> txt_encs;
  std::vector<Tensor> txt_vals;
  for (const Tensor& img : b.images)
    img_vals.push_back(b.model.image_feature(img, Pooling::sgmp));
  for (const auto& t : b.texts) {
    txt_encs.push_back(b.model.text_encoding(t));
    txt_vals.push_back(txt_encs.back().feature);
  }
  ScoreMatrix sm;
  sm.rows = sm.cols = 8;
  sm.image_ids = b.img_ids;
  sm.text_ids = b.txt_ids;
  sm.scores.resize(64);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      sm.scores[i * 8 + j] =
          score(img_vals[i], txt_encs[j], b.sc.temperature, b.sc.gate_mode, 1e-12).score;
  b.plan = build_plan(img_vals, b.img_ids, txt_vals, b.txt_ids, b.txt_src, sm,
                      PositiveMode::closest);
  return b;
}

Var toy_loss(Tape& tape, const ParamVars& pv, const ToyBatch& b) {
  VisualEncoderParams vp;
  vp.conv_w = {pv.at("conv0.w"), pv.at("conv1.w")};
  vp.conv_b = {pv.at("conv0.b"), pv.at("conv1.b")};
  vp.stride = 2;
  TextEncoderParams tp;
  tp.embedding = pv.at("embed");
  tp.fwd = {pv.at("rnn.fwd.w_x"), pv.at("rnn.fwd.w_h"), pv.at("rnn.fwd.bias")};
  tp.bwd = {pv.at("rnn.bwd.w_x"), pv.at("rnn.bwd.w_h"), pv.at("rnn.bwd.bias")};
  tp.hidden = 4;

  BatchVars bv;
  bv.img_ids = b.img_ids;
  bv.txt_ids = b.txt_ids;
  bv.txt_src = b.txt_src;
  for (const Tensor& img : b.images) {
    Var f = encode_image(tape, tape.leaf(img), vp, Pooling::sgmp);
    bv.img_feats.push_back(f);
    bv.img_feats_pos.push_back(f);
  }
  for (const auto& tokens : b.texts) {
    TextEncodingVars enc = encode_text(tape, tokens, tp, 8);
    bv.txt_feats.push_back(enc.feature);
    bv.txt_feats_pos.push_back(enc.feature);
    bv.txt_gates.push_back(enc.memory_gate);
  }
  return total_loss(tape, bv, b.plan, b.margin, b.sc).total;
}

}  // namespace

std::vector<GradReport> run_grad_suite(const SuiteOptions& opt) {
  std::vector<GradReport> reports;
  const std::uint64_t seed = opt.seed;
  auto check = [&](const std::string& name, const ScalarFn& fn,
                   const std::map<std::string, Tensor>& params) {
    reports.push_back(grad_check(name, fn, params, opt.h));
  };

  check("matmul",
        [](Tape& t, const ParamVars& p) {
          return t.sum(t.matmul(p.at("a"), p.at("b")));
        },
        {{"a", rand_t({3, 4}, seed, 1)}, {"b", rand_t({4, 2}, seed, 2)}});

  check("add",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.add(p.at("a"), p.at("b")), seed, 3);
        },
        {{"a", rand_t({2, 3}, seed, 4)}, {"b", rand_t({2, 3}, seed, 5)}});

  check("sub",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.sub(p.at("a"), p.at("b")), seed, 6);
        },
        {{"a", rand_t({2, 3}, seed, 7)}, {"b", rand_t({2, 3}, seed, 8)}});

  check("mul",
        [](Tape& t, const ParamVars& p) {
          return t.sum(t.mul(p.at("a"), p.at("b")));
        },
        {{"a", rand_t({2, 3}, seed, 9)}, {"b", rand_t({2, 3}, seed, 10)}});

  check("sigmoid",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.sigmoid(p.at("x")), seed, 11);
        },
        {{"x", rand_t({3}, seed, 12, -2.0, 2.0)}});

  check("relu",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.relu(p.at("x")), seed, 13);
        },
        {{"x", rand_away_from({5}, 0.0, 1e-2, seed, 14)}});

  check("tanh",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.tanh(p.at("x")), seed, 15);
        },
        {{"x", rand_t({4}, seed, 16, -2.0, 2.0)}});

  check("spatial_max",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.spatial_max(p.at("x")), seed, 17);
        },
        {{"x", rand_gapped({2, 3, 4}, 2, 0, seed, 18)}});

  check("spatial_avg",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.spatial_avg(p.at("x")), seed, 19);
        },
        {{"x", rand_t({2, 3, 4}, seed, 20)}});

  check("max_over_time",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.max_over_time(p.at("h")), seed, 21);
        },
        {{"h", rand_gapped({5, 4}, 4, 1, seed, 22)}});

  check("conv2d",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.conv2d(p.at("x"), p.at("w"), p.at("b"), 2),
                              seed, 23);
        },
        {{"x", rand_t({2, 5, 5}, seed, 24)},
         {"w", rand_t({3, 2, 3, 3}, seed, 25)},
         {"b", rand_t({3}, seed, 26)}});

  check("embed_rows",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.embed_rows(p.at("table"), {1, 3, 3, 0}), seed, 27);
        },
        {{"table", rand_t({6, 4}, seed, 28)}});

  check("concat",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.concat({p.at("a"), p.at("b")}), seed, 29);
        },
        {{"a", rand_t({3}, seed, 30)}, {"b", rand_t({2}, seed, 31)}});

  check("stack_rows",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.stack_rows({p.at("a"), p.at("b"), p.at("c")}),
                              seed, 32);
        },
        {{"a", rand_t({4}, seed, 33)},
         {"b", rand_t({4}, seed, 34)},
         {"c", rand_t({4}, seed, 35)}});

  check("slice",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.slice(p.at("x"), 2, 3), seed, 36);
        },
        {{"x", rand_t({6}, seed, 37)}});

  check("reshape",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.reshape(p.at("x"), {2, 3}), seed, 38);
        },
        {{"x", rand_t({6}, seed, 39)}});

  check("dot",
        [](Tape& t, const ParamVars& p) { return t.dot(p.at("a"), p.at("b")); },
        {{"a", rand_t({5}, seed, 40)}, {"b", rand_t({5}, seed, 41)}});

  check("sum", [](Tape& t, const ParamVars& p) { return t.sum(p.at("x")); },
        {{"x", rand_t({7}, seed, 42)}});

  check("sqrt",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.sqrt(p.at("x")), seed, 43);
        },
        {{"x", rand_t({4}, seed, 44, 0.2, 2.0)}});

  check("log",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.log(p.at("x")), seed, 45);
        },
        {{"x", rand_t({4}, seed, 46, 0.2, 2.0)}});

  check("recip",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.recip(p.at("x")), seed, 47);
        },
        {{"x", rand_t({4}, seed, 48, 0.3, 2.0)}});

  check("clamp",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.clamp(p.at("x"), -0.5, 0.5), seed, 49);
        },
        {{"x", [&] {
            Tensor x = rand_away_from({6}, 0.5, 1e-2, seed, 50);
            for (std::uint64_t k = 0; k < 64; ++k) {
              bool ok = true;
              for (std::size_t i = 0; i < x.numel(); ++i)
                if (std::abs(x[i] + 0.5) < 1e-2) ok = false;
              if (ok) break;
              x = rand_away_from({6}, 0.5, 1e-2, seed, 50 + 7000 * (k + 1));
            }
            return x;
          }()}});

  check("scale_chain",
        [](Tape& t, const ParamVars& p) {
          Var y = t.scale_by(t.add_const(t.scale_const(p.at("x"), 1.7), 0.3),
                             p.at("s"));
          return t.sum(y);
        },
        {{"x", rand_t({4}, seed, 51)}, {"s", rand_t({1}, seed, 52, 0.5, 1.5)}});

  check("add_n",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, t.add_n({p.at("a"), p.at("b"), p.at("c")}), seed, 53);
        },
        {{"a", rand_t({3}, seed, 54)},
         {"b", rand_t({3}, seed, 55)},
         {"c", rand_t({3}, seed, 56)}});

  check("sgmp",
        [&](Tape& t, const ParamVars& p) {
          return weighted_sum(t, sgmp(t, p.at("x")), seed, 57);
        },
        {{"x", rand_gapped({2, 4, 4}, 2, 0, seed, 58)}});

  {
    ModelSpec ms = toy_spec();
    Model m(ms, seed + 101);
    std::map<std::string, Tensor> params;
    for (std::size_t i = 0; i < m.params().size(); ++i)
      if (m.params().name(i).rfind("conv", 0) == 0)
        params[m.params().name(i)] = m.params().tensor(i);
    params["img"] = rand_t({3, 8, 8}, seed, 59, -0.8, 0.8);
    check("encode_image",
          [&](Tape& t, const ParamVars& p) {
            VisualEncoderParams vp;
            vp.conv_w = {p.at("conv0.w"), p.at("conv1.w")};
            vp.conv_b = {p.at("conv0.b"), p.at("conv1.b")};
            vp.stride = 2;
            return weighted_sum(t, encode_image(t, p.at("img"), vp, Pooling::sgmp),
                                seed, 60);
          },
          params);
  }

  {
    ModelSpec ms = toy_spec();
    Model m(ms, seed + 202);
    std::map<std::string, Tensor> params;
    for (std::size_t i = 0; i < m.params().size(); ++i)
      if (m.params().name(i).rfind("conv", 0) != 0)
        params[m.params().name(i)] = m.params().tensor(i);
    std::vector<std::size_t> tokens = {1, 4, 7, 2};
    check("encode_text",
          [&, tokens](Tape& t, const ParamVars& p) {
            TextEncoderParams tp;
            tp.embedding = p.at("embed");
            tp.fwd = {p.at("rnn.fwd.w_x"), p.at("rnn.fwd.w_h"), p.at("rnn.fwd.bias")};
            tp.bwd = {p.at("rnn.bwd.w_x"), p.at("rnn.bwd.w_h"), p.at("rnn.bwd.bias")};
            tp.hidden = 4;
            TextEncodingVars enc = encode_text(t, tokens, tp, 8);
            return t.add(weighted_sum(t, enc.feature, seed, 61),
                         weighted_sum(t, enc.memory_gate, seed, 62));
          },
          params);
  }

  check("score",
        [](Tape& t, const ParamVars& p) {
          ScoreConfig sc;
          sc.temperature = 5.0;
          return score_node(t, p.at("img"), p.at("txt"), t.sigmoid(p.at("gate")), sc);
        },
        {{"img", rand_t({6}, seed, 63)},
         {"txt", rand_t({6}, seed, 64)},
         {"gate", rand_t({6}, seed, 65)}});

  check("pair_nll",
        [](Tape& t, const ParamVars& p) {
          std::vector<Var> match, non_match;
          for (std::size_t i = 0; i < 3; ++i) {
            Var s = t.sigmoid(t.slice(p.at("x"), i, 1));
            (i % 2 ? match : non_match).push_back(s);
          }
          return t.add(pair_nll_node(t, match, PairTarget::match),
                       pair_nll_node(t, non_match, PairTarget::non_match));
        },
        {{"x", rand_t({3}, seed, 66, -1.5, 1.5)}});

  {
    std::map<std::string, Tensor> params;
    for (std::uint64_t k = 0; k < 64; ++k) {
      params = {{"a0", rand_t({5}, seed, 70 + k * 101)},
                {"a1", rand_t({5}, seed, 71 + k * 101)},
                {"p0", rand_t({5}, seed, 72 + k * 101)},
                {"p1", rand_t({5}, seed, 73 + k * 101)},
                {"n0", rand_t({5}, seed, 74 + k * 101)},
                {"n1", rand_t({5}, seed, 75 + k * 101)}};
      auto d = [&](const char* a, const char* b) {
        double acc = 0;
        for (std::size_t i = 0; i < 5; ++i) {
          double v = params.at(a)[i] - params.at(b)[i];
          acc += v * v;
        }
        return std::sqrt(acc);
      };
      double h0 = 0.2 + d("a0", "p0") - d("a0", "n0");
      double h1 = 0.2 + d("a1", "p1") - d("a1", "n1");
      // One active hinge and one inactive hinge, both clear of the kink.
      bool clear = h0 > 1e-2 && h1 < -1e-2 && d("a0", "p0") > 1e-2 &&
                   d("a1", "p1") > 1e-2 && d("a0", "n0") > 1e-2 &&
                   d("a1", "n1") > 1e-2;
      if (clear) break;
    }
    check("triplet_hinge",
          [](Tape& t, const ParamVars& p) {
            return triplet_loss_node(t, {p.at("a0"), p.at("a1")},
                                     {p.at("p0"), p.at("p1")},
                                     {p.at("n0"), p.at("n1")}, 0.2);
          },
          params);
  }

  {
    ToyBatch batch = make_toy_batch(seed + 303);
    std::map<std::string, Tensor> params;
    const ParamStore& ps = batch.model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) params[ps.name(i)] = ps.tensor(i);
    check("total_loss",
          [&batch](Tape& t, const ParamVars& p) { return toy_loss(t, p, batch); },
          params);
  }

  return reports;
}

bool suite_passes(const std::vector<GradReport>& reports, double tol) {
  return std::all_of(reports.begin(), reports.end(),
                     [tol](const GradReport& r) { return r.pass(tol); });
}

}  // namespace xmodal
