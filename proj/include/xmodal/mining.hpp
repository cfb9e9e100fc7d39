#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct BatchSpec {
  std::size_t identities = 8;       // P
  std::size_t images_per_id = 2;    // K
  std::size_t texts_per_image = 2;  // L
};

struct Batch {
  // Parallel arrays over the batch's P*K images and P*K*L texts.
  std::vector<std::size_t> image_rows;  // dataset image indices
  std::vector<int> image_ids;
  std::vector<std::pair<std::size_t, std::size_t>> text_refs;  // (dataset image, text slot)
  std::vector<int> text_ids;
  std::vector<std::size_t> text_src;  // batch-local source image position
  std::vector<std::string> warnings;
};

struct Triplet {
  std::size_t anchor, positive, negative;
  bool operator==(const Triplet& o) const {
    return anchor == o.anchor && positive == o.positive && negative == o.negative;
  }
};

struct PairIdx {
  std::size_t image, text;
  bool operator==(const PairIdx& o) const {
    return image == o.image && text == o.text;
  }
  bool operator<(const PairIdx& o) const {
    return image != o.image ? image < o.image : text < o.text;
  }
};

struct ScoreMatrix {
  std::size_t rows = 0, cols = 0;  // images x texts
  std::vector<double> scores;      // row-major, each strictly in (0,1)
  std::vector<int> image_ids, text_ids;

  double at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
  void check() const;
};

struct MiningPlan {
  std::vector<Triplet> image_triplets, text_triplets;
  std::vector<PairIdx> semi_hard_pairs, hardest_pairs;
  std::vector<std::string> warnings;
};

enum class PositiveMode { closest, farthest };

// P distinct identities, K images each, L texts per image. Short identities
// are padded by sampling with replacement (recorded as a warning).
Batch sample_batch(const Dataset& ds, const BatchSpec& spec, std::uint64_t seed);

// One triplet per anchor with >= 2 same-identity samples. The negative is
// always the nearest different-identity sample; the positive follows mode.
// Ties break to the lowest index.
std::vector<Triplet> mine_triplets(const std::vector<Tensor>& feats,
                                   const std::vector<int>& ids,
                                   PositiveMode mode,
                                   std::vector<std::string>* warnings = nullptr);

// For each positive pair, the nearest different-identity neighbour in each
// modality's own feature space yields two swapped negative pairs.
std::vector<PairIdx> mine_semi_hard(const std::vector<Tensor>& img_feats,
                                    const std::vector<int>& img_ids,
                                    const std::vector<Tensor>& txt_feats,
                                    const std::vector<int>& txt_ids,
                                    const std::vector<std::size_t>& txt_src);

// Highest-scoring different-identity counterpart per anchor, skipping
// excluded pairs in favour of the next-highest candidate.
std::vector<PairIdx> mine_hardest(const ScoreMatrix& sm,
                                  const std::set<PairIdx>& exclude,
                                  const std::vector<std::size_t>& txt_src);

MiningPlan build_plan(const std::vector<Tensor>& img_feats,
                      const std::vector<int>& img_ids,
                      const std::vector<Tensor>& txt_feats,
                      const std::vector<int>& txt_ids,
                      const std::vector<std::size_t>& txt_src,
                      const ScoreMatrix& sm, PositiveMode mode);

}  // namespace xmodal
