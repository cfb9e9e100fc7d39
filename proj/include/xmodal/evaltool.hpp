#pragma once

#include <map>
#include <string>
#include <vector>

#include "xmodal/association.hpp"
#include "xmodal/encoders.hpp"

namespace xmodal {

enum class EvalMode { plain_cosine, gated };

struct RankingResult {
  std::vector<std::vector<std::size_t>> ranked;     // per query, best first
  std::vector<std::size_t> first_correct_rank;      // 1-based
  std::map<std::size_t, double> topk;               // k -> accuracy
};

// Ranks every gallery image per text query, descending by similarity; ties
// rank the lower image index first. Plain cosine by default; gated mode
// scales each query's cosines by sigmoid-of-mean-gate times temperature
// under a sigmoid, which preserves the per-query ordering.
RankingResult evaluate(const std::vector<Tensor>& gallery_feats,
                       const std::vector<int>& gallery_ids,
                       const std::vector<TextEncoding>& queries,
                       const std::vector<int>& query_ids,
                       EvalMode mode = EvalMode::plain_cosine,
                       const std::vector<std::size_t>& ks = {1, 5, 10},
                       double temperature = 5.0);

struct ResultRow {
  std::string label;
  std::map<std::size_t, double> topk;
};

// Plain-text and CSV accuracy tables, one row per configuration label.
std::string format_results_table(const std::vector<ResultRow>& rows);
std::string format_results_csv(const std::vector<ResultRow>& rows);

}  // namespace xmodal
