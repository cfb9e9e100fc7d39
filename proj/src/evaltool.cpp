#include "xmodal/evaltool.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  double denom = std::sqrt(aa) * std::sqrt(bb);
  if (denom == 0.0) return 0.0;
  return ab / denom;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

RankingResult evaluate(const std::vector<Tensor>& gallery_feats,
                       const std::vector<int>& gallery_ids,
                       const std::vector<TextEncoding>& queries,
                       const std::vector<int>& query_ids,
                       EvalMode mode, const std::vector<std::size_t>& ks,
                       double temperature) {
  if (gallery_feats.empty()) throw InputError("evaluate: empty gallery");
  if (gallery_feats.size() != gallery_ids.size())
    throw InputError("evaluate: gallery feature/label count mismatch");
  if (queries.size() != query_ids.size())
    throw InputError("evaluate: query feature/label count mismatch");
  if (queries.empty()) throw InputError("evaluate: no queries");
  for (const Tensor& g : gallery_feats)
    if (!g.same_shape(queries[0].feature))
      throw InputError("evaluate: gallery dimension " + shape_str(g.shape()) +
                       " disagrees with query dimension " +
                       shape_str(queries[0].feature.shape()));

  RankingResult res;
  res.ranked.reserve(queries.size());
  res.first_correct_rank.reserve(queries.size());

  for (std::size_t q = 0; q < queries.size(); ++q) {
    bool id_present = false;
    for (int gid : gallery_ids)
      if (gid == query_ids[q]) id_present = true;
    if (!id_present)
      throw InputError("evaluate: query " + std::to_string(q) +
                       " identity absent from gallery");

    std::vector<double> sim(gallery_feats.size());
    double gate_mean = 0.0;
    if (mode == EvalMode::gated) {
      const Tensor& gate = queries[q].memory_gate;
      for (std::size_t d = 0; d < gate.numel(); ++d) gate_mean += gate[d];
      gate_mean /= static_cast<double>(gate.numel());
    }
    for (std::size_t g = 0; g < gallery_feats.size(); ++g) {
      double c = cosine(queries[q].feature, gallery_feats[g]);
      sim[g] = mode == EvalMode::plain_cosine
                   ? c
                   : stable_sigmoid(temperature * gate_mean * c);
    }

    std::vector<std::size_t> order(gallery_feats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sim[a] > sim[b];
    });

    std::size_t first = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[order[r]] == query_ids[q]) {
        first = r + 1;
        break;
      }
    }
    res.ranked.push_back(std::move(order));
    res.first_correct_rank.push_back(first);
  }

  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t rank : res.first_correct_rank)
      if (rank <= k) ++hits;
    res.topk[k] = static_cast<double>(hits) / static_cast<double>(queries.size());
  }
  return res;
}

std::string format_results_table(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "config";
  if (!rows.empty())
    for (const auto& [k, acc] : rows[0].topk) out << std::setw(10) << ("top-" + std::to_string(k));
  out << "\n";
  for (const ResultRow& row : rows) {
    out << std::left << std::setw(28) << row.label;
    for (const auto& [k, acc] : row.topk)
      out << std::setw(10) << (std::to_string(acc * 100.0).substr(0, 5) + "%");
    out << "\n";
  }
  return out.str();
}

std::string format_results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "config";
  if (!rows.empty())
    for (const auto& [k, acc] : rows[0].topk) out << ",top" << k;
  out << "\n";
  out << std::setprecision(17);
  for (const ResultRow& row : rows) {
    out << row.label;
    for (const auto& [k, acc] : row.topk) out << "," << acc;
    out << "\n";
  }
  return out.str();
}

}  // namespace xmodal
