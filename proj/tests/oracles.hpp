#pragma once

// Brute-force reference implementations for the miners and the evaluator,
// written against the documented rules only (exhaustive scans, first-wins
// tie handling, emission-order dedup). Shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "xmodal/mining.hpp"
#include "xmodal/tensor.hpp"

namespace testutil {

using xmodal::PairIdx;
using xmodal::PositiveMode;
using xmodal::ScoreMatrix;
using xmodal::Tensor;
using xmodal::Triplet;

inline double sqdist(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return acc;
}

inline std::vector<Triplet> oracle_triplets(const std::vector<Tensor>& feats,
                                            const std::vector<int>& ids,
                                            PositiveMode mode) {
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < feats.size(); ++a) {
    std::vector<std::size_t> same, diff;
    for (std::size_t j = 0; j < feats.size(); ++j) {
      if (j == a) continue;
      (ids[j] == ids[a] ? same : diff).push_back(j);
    }
    if (same.empty() || diff.empty()) continue;
    auto closer = [&](std::size_t x, std::size_t y) {
      return sqdist(feats[a], feats[x]) < sqdist(feats[a], feats[y]);
    };
    // min/max_element keep the earliest of equals, matching the tie rule.
    std::size_t p = mode == PositiveMode::closest
                        ? *std::min_element(same.begin(), same.end(), closer)
                        : *std::max_element(same.begin(), same.end(), closer);
    std::size_t n = *std::min_element(diff.begin(), diff.end(), closer);
    out.push_back({a, p, n});
  }
  return out;
}

inline void emit_dedup(std::vector<PairIdx>& out, PairIdx p) {
  if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
}

inline std::vector<PairIdx> oracle_semi_hard(const std::vector<Tensor>& img_feats,
                                             const std::vector<int>& img_ids,
                                             const std::vector<Tensor>& txt_feats,
                                             const std::vector<int>& txt_ids,
                                             const std::vector<std::size_t>& txt_src) {
  std::vector<PairIdx> out;
  for (std::size_t t = 0; t < txt_feats.size(); ++t) {
    std::size_t i = txt_src[t];
    std::vector<std::size_t> imgs, txts;
    for (std::size_t j = 0; j < img_feats.size(); ++j)
      if (img_ids[j] != img_ids[i]) imgs.push_back(j);
    for (std::size_t u = 0; u < txt_feats.size(); ++u)
      if (txt_ids[u] != txt_ids[t]) txts.push_back(u);
    if (imgs.empty() || txts.empty())
      throw xmodal::InputError("oracle_semi_hard: single-identity batch");
    std::size_t near_img = *std::min_element(
        imgs.begin(), imgs.end(), [&](std::size_t x, std::size_t y) {
          return sqdist(img_feats[i], img_feats[x]) < sqdist(img_feats[i], img_feats[y]);
        });
    std::size_t near_txt = *std::min_element(
        txts.begin(), txts.end(), [&](std::size_t x, std::size_t y) {
          return sqdist(txt_feats[t], txt_feats[x]) < sqdist(txt_feats[t], txt_feats[y]);
        });
    emit_dedup(out, {i, near_txt});
    emit_dedup(out, {near_img, t});
  }
  return out;
}

// nullopt means some anchor ran out of non-excluded candidates.
inline std::optional<std::vector<PairIdx>> oracle_hardest(
    const ScoreMatrix& sm, const std::set<PairIdx>& exclude,
    const std::vector<std::size_t>& txt_src) {
  std::vector<PairIdx> out;
  for (std::size_t t = 0; t < sm.cols; ++t) {
    std::size_t i = txt_src[t];
    std::vector<std::size_t> txts, imgs;
    for (std::size_t j = 0; j < sm.cols; ++j)
      if (sm.text_ids[j] != sm.image_ids[i] && !exclude.count({i, j})) txts.push_back(j);
    for (std::size_t r = 0; r < sm.rows; ++r)
      if (sm.image_ids[r] != sm.text_ids[t] && !exclude.count({r, t})) imgs.push_back(r);
    if (txts.empty() || imgs.empty()) return std::nullopt;
    std::size_t hard_txt = *std::max_element(
        txts.begin(), txts.end(),
        [&](std::size_t x, std::size_t y) { return sm.at(i, x) < sm.at(i, y); });
    std::size_t hard_img = *std::max_element(
        imgs.begin(), imgs.end(),
        [&](std::size_t x, std::size_t y) { return sm.at(x, t) < sm.at(y, t); });
    emit_dedup(out, {i, hard_txt});
    emit_dedup(out, {hard_img, t});
  }
  return out;
}

// A random identity-balanced feature batch plus a random score matrix.
// Coarse mode quantizes everything so exact ties are common.
struct FuzzBatch {
  std::vector<Tensor> img_feats, txt_feats;
  std::vector<int> img_ids, txt_ids;
  std::vector<std::size_t> txt_src;
  ScoreMatrix sm;
};

inline Tensor random_feature(std::mt19937_64& eng, std::size_t dim, bool coarse) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t({dim});
  for (std::size_t k = 0; k < dim; ++k) {
    double v = u(eng);
    t[k] = coarse ? std::round(v * 2.0) / 2.0 : v;
  }
  return t;
}

inline FuzzBatch random_fuzz_batch(std::mt19937_64& eng, std::size_t P,
                                   std::size_t K, std::size_t L,
                                   std::size_t dim, bool coarse) {
  FuzzBatch b;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < K; ++k) {
      std::size_t img_pos = b.img_feats.size();
      b.img_feats.push_back(random_feature(eng, dim, coarse));
      b.img_ids.push_back(static_cast<int>(p));
      for (std::size_t l = 0; l < L; ++l) {
        b.txt_feats.push_back(random_feature(eng, dim, coarse));
        b.txt_ids.push_back(static_cast<int>(p));
        b.txt_src.push_back(img_pos);
      }
    }
  b.sm.rows = b.img_feats.size();
  b.sm.cols = b.txt_feats.size();
  b.sm.image_ids = b.img_ids;
  b.sm.text_ids = b.txt_ids;
  std::uniform_real_distribution<double> s(0.05, 0.95);
  b.sm.scores.resize(b.sm.rows * b.sm.cols);
  for (double& v : b.sm.scores) {
    v = s(eng);
    if (coarse) v = std::clamp(std::round(v * 10.0) / 10.0, 0.1, 0.9);
  }
  return b;
}

// Descending-cosine ranking with lower-index-first ties, done the slow way.
inline std::vector<std::size_t> oracle_ranking(const Tensor& query,
                                               const std::vector<Tensor>& gallery) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < query.numel(); ++k) {
      ab += query[k] * gallery[g][k];
      aa += query[k] * query[k];
      bb += gallery[g][k] * gallery[g][k];
    }
    double denom = std::sqrt(aa) * std::sqrt(bb);
    scored.emplace_back(denom == 0.0 ? 0.0 : ab / denom, g);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::vector<std::size_t> order;
  for (const auto& [s, g] : scored) order.push_back(g);
  return order;
}

}  // namespace testutil
