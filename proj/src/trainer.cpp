#include "xmodal/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "xmodal/error.hpp"
#include "xmodal/evaltool.hpp"
#include "xmodal/mining.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using json = nlohmann::json;

bool is_heldout_identity(int id) { return id % 5 == 0; }

void split_dataset(const Dataset& ds, Dataset& train, Dataset& heldout) {
  train = Dataset{ds.channels, ds.height, ds.width, {}, ds.vocab};
  heldout = Dataset{ds.channels, ds.height, ds.width, {}, ds.vocab};
  for (const ImageRecord& rec : ds.images)
    (is_heldout_identity(rec.identity) ? heldout : train).images.push_back(rec);
}

double lr_at_epoch(const Config& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (std::size_t d : cfg.decay_epochs)
    if (epoch >= d) lr *= cfg.decay_rate;
  return lr;
}

EncodedSet encode_all(const Model& model, const Dataset& ds, Pooling pooling) {
  EncodedSet out;
  for (const ImageRecord& rec : ds.images) {
    out.img_feats.push_back(model.image_feature(rec.pixels, pooling));
    out.img_ids.push_back(rec.identity);
    for (const auto& tokens : rec.texts) {
      out.txt_encodings.push_back(model.text_encoding(tokens));
      out.txt_ids.push_back(rec.identity);
    }
  }
  return out;
}

std::map<std::size_t, double> heldout_eval(const Model& model, const Dataset& heldout,
                                           const Config& cfg) {
  EncodedSet enc = encode_all(model, heldout, cfg.pooling);
  RankingResult r = evaluate(enc.img_feats, enc.img_ids, enc.txt_encodings,
                             enc.txt_ids, cfg.eval_mode, cfg.eval_ks,
                             cfg.temperature);
  return r.topk;
}

Checkpoint make_checkpoint(const Model& model, const std::vector<Tensor>& adam_m,
                           const std::vector<Tensor>& adam_v, std::size_t step,
                           std::size_t epoch, std::uint64_t seed) {
  Checkpoint ck;
  const ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add(ps.name(i), ps.tensor(i));
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add("adam.m." + ps.name(i), adam_m[i]);
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add("adam.v." + ps.name(i), adam_v[i]);
  ck.add("meta.step", Tensor::scalar(static_cast<double>(step)));
  ck.add("meta.epoch", Tensor::scalar(static_cast<double>(epoch)));
  ck.add("meta.seed", Tensor::scalar(std::bit_cast<double>(seed)));
  return ck;
}

void restore_model(Model& model, const Checkpoint& ck) {
  ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Tensor& saved = ck.at(ps.name(i));
    if (!saved.same_shape(ps.tensor(i)))
      throw IoError("checkpoint: tensor '" + ps.name(i) + "' has shape " +
                    shape_str(saved.shape()) + ", model expects " +
                    shape_str(ps.tensor(i).shape()));
    ps.tensor(i) = saved;
  }
}

namespace {

struct StepOutcome {
  LossBreakdown loss;
  std::vector<Tensor> grads;  // aligned with the param store
};

// One forward/backward pass over a sampled batch on a fresh tape.
StepOutcome run_step(const Model& model, const Dataset& train, const Config& cfg,
                     std::uint64_t batch_seed, std::uint64_t dropout_seed) {
  Batch batch = sample_batch(train, batch_spec(cfg), batch_seed);

  Tape tape;
  Model::Bound bound = model.bind(tape);
  ScoreConfig sc = score_config(cfg);

  BatchVars bv;
  bv.img_ids = batch.image_ids;
  bv.txt_ids = batch.text_ids;
  bv.txt_src = batch.text_src;

  bool mask_positives = cfg.dropout_rate > 0.0 &&
                        cfg.dropout_policy != DropoutApply::none;
  bool mask_everything = cfg.dropout_rate > 0.0 &&
                         cfg.dropout_policy == DropoutApply::both;
  auto dropout_eng = make_engine(dropout_seed, {kSeedDropout});

  for (std::size_t i = 0; i < batch.image_rows.size(); ++i) {
    Var img = tape.leaf(train.images[batch.image_rows[i]].pixels);
    Var feat = encode_image(tape, img, bound.visual, cfg.pooling);
    Var feat_pos = feat;
    if (mask_positives) {
      Var mask = tape.leaf(sample_mask(cfg.embed_dim, cfg.dropout_rate, dropout_eng));
      feat_pos = tape.mul(feat, mask);
    }
    bv.img_feats.push_back(mask_everything ? feat_pos : feat);
    bv.img_feats_pos.push_back(feat_pos);
  }
  for (std::size_t t = 0; t < batch.text_refs.size(); ++t) {
    const auto& [row, slot] = batch.text_refs[t];
    TextEncodingVars enc = encode_text(tape, train.images[row].texts[slot],
                                       bound.text, cfg.max_seq);
    Var feat_pos = enc.feature;
    if (mask_positives) {
      Var mask = tape.leaf(sample_mask(cfg.embed_dim, cfg.dropout_rate, dropout_eng));
      feat_pos = tape.mul(enc.feature, mask);
    }
    bv.txt_feats.push_back(mask_everything ? feat_pos : enc.feature);
    bv.txt_feats_pos.push_back(feat_pos);
    bv.txt_gates.push_back(enc.memory_gate);
  }

  // Mining runs on the forward values of the mined-pair features.
  std::vector<Tensor> img_vals, txt_vals;
  std::vector<TextEncoding> txt_encs;
  for (Var v : bv.img_feats) img_vals.push_back(tape.value(v));
  for (std::size_t t = 0; t < bv.txt_feats.size(); ++t) {
    txt_vals.push_back(tape.value(bv.txt_feats[t]));
    txt_encs.push_back({tape.value(bv.txt_feats[t]), tape.value(bv.txt_gates[t])});
  }

  ScoreMatrix sm;
  sm.rows = img_vals.size();
  sm.cols = txt_vals.size();
  sm.image_ids = batch.image_ids;
  sm.text_ids = batch.text_ids;
  sm.scores.resize(sm.rows * sm.cols);
  for (std::size_t i = 0; i < sm.rows; ++i)
    for (std::size_t j = 0; j < sm.cols; ++j)
      sm.scores[i * sm.cols + j] =
          score(img_vals[i], txt_encs[j], cfg.temperature, cfg.gate_mode, 1e-12).score;

  MiningPlan plan;
  try {
    plan = build_plan(img_vals, batch.image_ids, txt_vals, batch.text_ids,
                      batch.text_src, sm, cfg.positive_mode);
  } catch (const MiningExhausted& e) {
    // Degenerate features in a tiny batch can leave some anchor with every
    // candidate already claimed by the semi-hard set. Drop the hardest
    // component for this step instead of killing the run.
    plan.image_triplets =
        mine_triplets(img_vals, batch.image_ids, cfg.positive_mode, &plan.warnings);
    plan.text_triplets =
        mine_triplets(txt_vals, batch.text_ids, cfg.positive_mode, &plan.warnings);
    plan.semi_hard_pairs = mine_semi_hard(img_vals, batch.image_ids, txt_vals,
                                          batch.text_ids, batch.text_src);
    plan.warnings.push_back(e.what());
  }

  LossGraph g = total_loss(tape, bv, plan, cfg.margin, sc);

  std::vector<Var> objective_terms = {g.l_pos};
  if (cfg.use_semi) objective_terms.push_back(g.l_semi);
  if (cfg.use_hardest) objective_terms.push_back(g.l_hardest);
  if (cfg.use_triplet) {
    objective_terms.push_back(g.l_tri_img);
    objective_terms.push_back(g.l_tri_txt);
  }
  Var objective = tape.add_n(objective_terms);
  tape.backward(objective);

  StepOutcome out;
  out.loss = breakdown(tape, g);
  out.grads.reserve(bound.all.size());
  for (Var p : bound.all) out.grads.push_back(tape.grad(p));
  return out;
}

void check_finite(const LossBreakdown& loss, const Model& model,
                  std::size_t epoch, std::size_t step) {
  auto where = " at epoch " + std::to_string(epoch) + " step " + std::to_string(step);
  for (auto [name, v] : std::initializer_list<std::pair<const char*, double>>{
           {"l_pos", loss.l_pos},
           {"l_hardest", loss.l_hardest},
           {"l_semi", loss.l_semi},
           {"l_tri_img", loss.l_tri_img},
           {"l_tri_txt", loss.l_tri_txt},
           {"total", loss.total}})
    if (!std::isfinite(v))
      throw EvalError("train: non-finite loss component " + std::string(name) + where);
  const ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!ps.tensor(i).all_finite())
      throw EvalError("train: non-finite values in parameter " + ps.name(i) + where);
}

json metrics_line(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["l_pos"] = m.loss.l_pos;
  j["l_hardest"] = m.loss.l_hardest;
  j["l_semi"] = m.loss.l_semi;
  j["l_tri_img"] = m.loss.l_tri_img;
  j["l_tri_txt"] = m.loss.l_tri_txt;
  j["total"] = m.loss.total;
  for (const auto& [k, acc] : m.topk) j["top" + std::to_string(k)] = acc;
  return j;
}

}  // namespace

TrainResult train(const Config& cfg, const Dataset& ds, std::ostream* console) {
  Dataset train_set, heldout;
  split_dataset(ds, train_set, heldout);
  if (train_set.images.empty() || heldout.images.empty())
    throw InputError("train: identity split left an empty side (need ids both "
                     "divisible and not divisible by 5)");
  std::size_t train_ids = train_set.by_identity().size();
  if (train_ids < cfg.batch_identities)
    throw InputError("train: " + std::to_string(train_ids) +
                     " training identities cannot fill batches of " +
                     std::to_string(cfg.batch_identities));

  Model model(model_spec(cfg, ds.vocab.size()), cfg.seed);
  std::size_t min_extent = model.min_image_extent();
  if (ds.height < min_extent || ds.width < min_extent)
    throw InputError("train: images " + std::to_string(ds.height) + "x" +
                     std::to_string(ds.width) + " smaller than conv minimum " +
                     std::to_string(min_extent));

  ParamStore& ps = model.params();
  std::vector<Tensor> adam_m, adam_v;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    adam_m.emplace_back(ps.tensor(i).shape());
    adam_v.emplace_back(ps.tensor(i).shape());
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t adam_t = 0;

  fs::create_directories(cfg.out_dir);
  std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("train: cannot open " + metrics_path);

  std::size_t batch_images = cfg.batch_identities * cfg.batch_images_per_id;
  std::size_t steps_per_epoch =
      std::max<std::size_t>(1, train_set.images.size() / batch_images);

  TrainResult result;
  result.metrics_path = metrics_path;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at_epoch(cfg, epoch);
    LossBreakdown epoch_loss;

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      StepOutcome out = run_step(model, train_set, cfg,
                                 derive_seed(cfg.seed, {kSeedBatch, epoch, step}),
                                 derive_seed(cfg.seed, {kSeedDropout, epoch, step}));
      if (epoch == 0 && step == 0) result.first_step = out.loss;

      ++adam_t;
      double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
      double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
      for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor& p = ps.tensor(i);
        const Tensor& grad = out.grads[i];
        for (std::size_t k = 0; k < p.numel(); ++k) {
          double g = grad[k];
          adam_m[i][k] = beta1 * adam_m[i][k] + (1.0 - beta1) * g;
          adam_v[i][k] = beta2 * adam_v[i][k] + (1.0 - beta2) * g * g;
          double mhat = adam_m[i][k] / bc1;
          double vhat = adam_v[i][k] / bc2;
          p[k] -= lr * mhat / (std::sqrt(vhat) + adam_eps);
        }
      }

      check_finite(out.loss, model, epoch, step);
      epoch_loss.l_pos += out.loss.l_pos;
      epoch_loss.l_hardest += out.loss.l_hardest;
      epoch_loss.l_semi += out.loss.l_semi;
      epoch_loss.l_tri_img += out.loss.l_tri_img;
      epoch_loss.l_tri_txt += out.loss.l_tri_txt;
      epoch_loss.total += out.loss.total;
    }

    double inv = 1.0 / static_cast<double>(steps_per_epoch);
    epoch_loss.l_pos *= inv;
    epoch_loss.l_hardest *= inv;
    epoch_loss.l_semi *= inv;
    epoch_loss.l_tri_img *= inv;
    epoch_loss.l_tri_txt *= inv;
    epoch_loss.total *= inv;

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = epoch_loss;
    if (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)
      m.topk = heldout_eval(model, heldout, cfg);
    metrics << metrics_line(m).dump() << "\n";
    result.history.push_back(m);

    if (console) {
      (*console) << "epoch " << epoch << " lr " << lr << " loss " << epoch_loss.total;
      for (const auto& [k, acc] : m.topk)
        (*console) << " top" << k << " " << acc;
      (*console) << "\n";
    }

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::string path =
          (fs::path(cfg.out_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".xmck")).string();
      save_checkpoint(path, make_checkpoint(model, adam_m, adam_v, adam_t, epoch + 1, cfg.seed));
    }
  }

  if (!metrics.flush()) throw IoError("train: metrics write failed");
  result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint_final.xmck").string();
  save_checkpoint(result.checkpoint_path,
                  make_checkpoint(model, adam_m, adam_v, adam_t, cfg.epochs, cfg.seed));
  return result;
}

}  // namespace xmodal
