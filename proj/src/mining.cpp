#include "xmodal/mining.hpp"

#include <algorithm>
#include <random>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

void ScoreMatrix::check() const {
  if (image_ids.size() != rows || text_ids.size() != cols)
    throw InputError("ScoreMatrix: label arrays disagree with extents");
  if (scores.size() != rows * cols)
    throw InputError("ScoreMatrix: score count disagrees with extents");
  for (double s : scores)
    if (!(s > 0.0 && s < 1.0))
      throw InputError("ScoreMatrix: scores must lie strictly in (0,1)");
}

namespace {

double dist2(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

}  // namespace

Batch sample_batch(const Dataset& ds, const BatchSpec& spec, std::uint64_t seed) {
  if (spec.identities < 2)
    throw InputError("sample_batch: need at least 2 identities per batch");
  if (spec.images_per_id == 0 || spec.texts_per_image == 0)
    throw InputError("sample_batch: images_per_id and texts_per_image must be >= 1");

  auto groups = ds.by_identity();
  if (groups.size() < spec.identities)
    throw InputError("sample_batch: dataset has " + std::to_string(groups.size()) +
                     " identities, batch needs " + std::to_string(spec.identities));

  std::vector<int> id_list;
  id_list.reserve(groups.size());
  for (const auto& [id, rows] : groups) id_list.push_back(id);

  auto eng = make_engine(seed, {kSeedBatch});
  std::shuffle(id_list.begin(), id_list.end(), eng);
  id_list.resize(spec.identities);

  Batch batch;
  for (int id : id_list) {
    const std::vector<std::size_t>& rows = groups.at(id);
    std::vector<std::size_t> picks;
    if (rows.size() >= spec.images_per_id) {
      std::vector<std::size_t> pool = rows;
      std::shuffle(pool.begin(), pool.end(), eng);
      picks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.images_per_id));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      for (std::size_t k = 0; k < spec.images_per_id; ++k)
        picks.push_back(rows[pick(eng)]);
      batch.warnings.push_back("identity " + std::to_string(id) +
                               " has fewer than " +
                               std::to_string(spec.images_per_id) +
                               " images; sampled with replacement");
    }

    for (std::size_t row : picks) {
      std::size_t img_pos = batch.image_rows.size();
      batch.image_rows.push_back(row);
      batch.image_ids.push_back(id);

      const auto& texts = ds.images[row].texts;
      if (texts.empty())
        throw InputError("sample_batch: dataset image " + std::to_string(row) +
                         " has no texts");
      std::vector<std::size_t> slots;
      if (texts.size() >= spec.texts_per_image) {
        std::vector<std::size_t> pool(texts.size());
        for (std::size_t s = 0; s < pool.size(); ++s) pool[s] = s;
        std::shuffle(pool.begin(), pool.end(), eng);
        slots.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.texts_per_image));
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, texts.size() - 1);
        for (std::size_t k = 0; k < spec.texts_per_image; ++k)
          slots.push_back(pick(eng));
        batch.warnings.push_back("image " + std::to_string(row) +
                                 " has fewer than " +
                                 std::to_string(spec.texts_per_image) +
                                 " texts; sampled with replacement");
      }
      for (std::size_t slot : slots) {
        batch.text_refs.emplace_back(row, slot);
        batch.text_ids.push_back(id);
        batch.text_src.push_back(img_pos);
      }
    }
  }
  return batch;
}

std::vector<Triplet> mine_triplets(const std::vector<Tensor>& feats,
                                   const std::vector<int>& ids,
                                   PositiveMode mode,
                                   std::vector<std::string>* warnings) {
  if (feats.size() != ids.size())
    throw InputError("mine_triplets: feature/label count mismatch");
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < feats.size(); ++a) {
    bool have_p = false, have_n = false;
    std::size_t best_p = 0, best_n = 0;
    double best_pd = 0.0, best_nd = 0.0;
    for (std::size_t j = 0; j < feats.size(); ++j) {
      if (j == a) continue;
      double d = dist2(feats[a], feats[j]);
      if (ids[j] == ids[a]) {
        bool better = !have_p || (mode == PositiveMode::closest ? d < best_pd
                                                                : d > best_pd);
        if (better) {
          best_p = j;
          best_pd = d;
          have_p = true;
        }
      } else if (!have_n || d < best_nd) {
        best_n = j;
        best_nd = d;
        have_n = true;
      }
    }
    if (!have_p || !have_n) {
      if (warnings)
        warnings->push_back("triplet anchor " + std::to_string(a) + " skipped: no " +
                            (have_p ? "different" : "same") + "-identity sample");
      continue;
    }
    out.push_back({a, best_p, best_n});
  }
  return out;
}

std::vector<PairIdx> mine_semi_hard(const std::vector<Tensor>& img_feats,
                                    const std::vector<int>& img_ids,
                                    const std::vector<Tensor>& txt_feats,
                                    const std::vector<int>& txt_ids,
                                    const std::vector<std::size_t>& txt_src) {
  if (img_feats.size() != img_ids.size() || txt_feats.size() != txt_ids.size() ||
      txt_src.size() != txt_feats.size())
    throw InputError("mine_semi_hard: array length mismatch");

  std::vector<PairIdx> out;
  std::set<PairIdx> seen;
  auto emit = [&](PairIdx p) {
    if (seen.insert(p).second) out.push_back(p);
  };

  for (std::size_t t = 0; t < txt_feats.size(); ++t) {
    std::size_t i = txt_src[t];
    if (i >= img_feats.size())
      throw InputError("mine_semi_hard: text source index out of range");

    bool have_img = false, have_txt = false;
    std::size_t near_img = 0, near_txt = 0;
    double best_imgd = 0.0, best_txtd = 0.0;
    for (std::size_t j = 0; j < img_feats.size(); ++j) {
      if (img_ids[j] == img_ids[i]) continue;
      double d = dist2(img_feats[i], img_feats[j]);
      if (!have_img || d < best_imgd) {
        near_img = j;
        best_imgd = d;
        have_img = true;
      }
    }
    for (std::size_t u = 0; u < txt_feats.size(); ++u) {
      if (txt_ids[u] == txt_ids[t]) continue;
      double d = dist2(txt_feats[t], txt_feats[u]);
      if (!have_txt || d < best_txtd) {
        near_txt = u;
        best_txtd = d;
        have_txt = true;
      }
    }
    if (!have_img || !have_txt)
      throw InputError("mine_semi_hard: batch needs at least two identities");
    emit({i, near_txt});
    emit({near_img, t});
  }
  return out;
}

std::vector<PairIdx> mine_hardest(const ScoreMatrix& sm,
                                  const std::set<PairIdx>& exclude,
                                  const std::vector<std::size_t>& txt_src) {
  sm.check();
  if (txt_src.size() != sm.cols)
    throw InputError("mine_hardest: text source array length mismatch");

  std::vector<PairIdx> out;
  std::set<PairIdx> seen;
  auto emit = [&](PairIdx p) {
    if (seen.insert(p).second) out.push_back(p);
  };

  for (std::size_t t = 0; t < sm.cols; ++t) {
    std::size_t i = txt_src[t];
    if (i >= sm.rows)
      throw InputError("mine_hardest: text source index out of range");

    bool found = false;
    std::size_t hard_txt = 0;
    double best = 0.0;
    for (std::size_t j = 0; j < sm.cols; ++j) {
      if (sm.text_ids[j] == sm.image_ids[i]) continue;
      if (exclude.count({i, j})) continue;
      if (!found || sm.at(i, j) > best) {
        hard_txt = j;
        best = sm.at(i, j);
        found = true;
      }
    }
    if (!found)
      throw MiningExhausted("mine_hardest: every text candidate for image " +
                            std::to_string(i) + " is excluded");

    bool found_img = false;
    std::size_t hard_img = 0;
    double best_img = 0.0;
    for (std::size_t j = 0; j < sm.rows; ++j) {
      if (sm.image_ids[j] == sm.text_ids[t]) continue;
      if (exclude.count({j, t})) continue;
      if (!found_img || sm.at(j, t) > best_img) {
        hard_img = j;
        best_img = sm.at(j, t);
        found_img = true;
      }
    }
    if (!found_img)
      throw MiningExhausted("mine_hardest: every image candidate for text " +
                            std::to_string(t) + " is excluded");

    emit({i, hard_txt});
    emit({hard_img, t});
  }
  return out;
}

MiningPlan build_plan(const std::vector<Tensor>& img_feats,
                      const std::vector<int>& img_ids,
                      const std::vector<Tensor>& txt_feats,
                      const std::vector<int>& txt_ids,
                      const std::vector<std::size_t>& txt_src,
                      const ScoreMatrix& sm, PositiveMode mode) {
  MiningPlan plan;
  plan.image_triplets = mine_triplets(img_feats, img_ids, mode, &plan.warnings);
  plan.text_triplets = mine_triplets(txt_feats, txt_ids, mode, &plan.warnings);
  plan.semi_hard_pairs = mine_semi_hard(img_feats, img_ids, txt_feats, txt_ids, txt_src);
  std::set<PairIdx> exclude(plan.semi_hard_pairs.begin(), plan.semi_hard_pairs.end());
  plan.hardest_pairs = mine_hardest(sm, exclude, txt_src);
  return plan;
}

}  // namespace xmodal
