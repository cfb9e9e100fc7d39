#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/error.hpp"
#include "xmodal/evaltool.hpp"
#include "xmodal/gradsuite.hpp"
#include "xmodal/mining.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/trainer.hpp"

namespace {

using namespace xmodal;
using nlohmann::json;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  bool seed_given = false;
  std::uint64_t seed = 0;
};

Config resolve_config(const CommonOpts& o) {
  Config cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  for (const std::string& s : o.sets) apply_override(cfg, s);
  if (o.seed_given) cfg.seed = o.seed;
  validate(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--set", o.sets, "override, e.g. --set optim.lr=1e-3")
      ->take_all();
  cmd->add_option("--seed", o.seed, "master RNG seed")
      ->each([&o](const std::string&) { o.seed_given = true; });
}

Model restored_model(const Config& cfg, const Dataset& ds,
                     const std::string& checkpoint_path) {
  Model model(model_spec(cfg, ds.vocab.size()), cfg.seed);
  if (!checkpoint_path.empty())
    restore_model(model, load_checkpoint(checkpoint_path));
  return model;
}

int cmd_gen_data(const CommonOpts& o) {
  Config cfg = resolve_config(o);
  gen_data(synthetic_spec(cfg), cfg.seed, cfg.data_dir);
  std::cout << "wrote dataset to " << cfg.data_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  Config cfg = resolve_config(o);
  Dataset ds = load_dataset(cfg.data_dir);
  TrainResult res = train(cfg, ds, &std::cout);
  std::cout << "metrics: " << res.metrics_path << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint_path,
             const std::string& split, const std::string& out_base,
             const std::string& label) {
  Config cfg = resolve_config(o);
  Dataset ds = load_dataset(cfg.data_dir);
  Dataset train_set, heldout;
  split_dataset(ds, train_set, heldout);
  const Dataset& subject = split == "all" ? ds
                           : split == "train" ? train_set
                                              : heldout;
  if (subject.images.empty())
    throw InputError("eval: split '" + split + "' is empty");

  Model model = restored_model(cfg, ds, checkpoint_path);
  EncodedSet enc = encode_all(model, subject, cfg.pooling);
  RankingResult r = evaluate(enc.img_feats, enc.img_ids, enc.txt_encodings,
                             enc.txt_ids, cfg.eval_mode, cfg.eval_ks,
                             cfg.temperature);
  ResultRow row{label.empty() ? (checkpoint_path.empty() ? "untrained" : "checkpoint")
                              : label,
                r.topk};
  std::cout << format_results_table({row});
  if (!out_base.empty()) {
    std::ofstream txt(out_base + ".txt"), csv(out_base + ".csv");
    if (!txt || !csv) throw IoError("eval: cannot write " + out_base + ".{txt,csv}");
    txt << format_results_table({row});
    csv << format_results_csv({row});
  }
  return 0;
}

int cmd_mine(const CommonOpts& o, const std::string& checkpoint_path,
             std::uint64_t batch_seed, const std::string& out_path) {
  Config cfg = resolve_config(o);
  Dataset ds = load_dataset(cfg.data_dir);
  Model model = restored_model(cfg, ds, checkpoint_path);

  Batch batch = sample_batch(ds, batch_spec(cfg), batch_seed);
  std::vector<Tensor> img_vals, txt_vals;
  std::vector<TextEncoding> txt_encs;
  for (std::size_t row : batch.image_rows)
    img_vals.push_back(model.image_feature(ds.images[row].pixels, cfg.pooling));
  for (const auto& [row, slot] : batch.text_refs) {
    txt_encs.push_back(model.text_encoding(ds.images[row].texts[slot]));
    txt_vals.push_back(txt_encs.back().feature);
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
  MiningPlan plan = build_plan(img_vals, batch.image_ids, txt_vals, batch.text_ids,
                               batch.text_src, sm, cfg.positive_mode);

  json j;
  j["batch"] = {{"image_rows", batch.image_rows},
                {"image_ids", batch.image_ids},
                {"text_ids", batch.text_ids},
                {"text_src", batch.text_src}};
  auto triplets = [](const std::vector<Triplet>& ts) {
    json arr = json::array();
    for (const Triplet& t : ts)
      arr.push_back({{"anchor", t.anchor}, {"positive", t.positive}, {"negative", t.negative}});
    return arr;
  };
  auto pairs = [](const std::vector<PairIdx>& ps) {
    json arr = json::array();
    for (const PairIdx& p : ps) arr.push_back({{"image", p.image}, {"text", p.text}});
    return arr;
  };
  j["image_triplets"] = triplets(plan.image_triplets);
  j["text_triplets"] = triplets(plan.text_triplets);
  j["semi_hard_pairs"] = pairs(plan.semi_hard_pairs);
  j["hardest_pairs"] = pairs(plan.hardest_pairs);
  j["warnings"] = plan.warnings;

  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("mine: cannot write " + out_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CommonOpts& o, double tol) {
  SuiteOptions opt;
  opt.tol = tol;
  if (o.seed_given) opt.seed = o.seed;
  std::vector<GradReport> reports = run_grad_suite(opt);
  bool ok = true;
  for (const GradReport& r : reports) {
    bool pass = r.pass(opt.tol);
    ok = ok && pass;
    std::cout << std::left << std::setw(16) << r.op_name << std::scientific
              << std::setprecision(3) << r.max_rel_error << (pass ? "  PASS" : "  FAIL")
              << "\n";
  }
  std::cout << (ok ? "gradcheck: all ops within tolerance\n"
                   : "gradcheck: tolerance exceeded\n");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal metric-learning engine"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, mine_o, grad_o;
  std::string eval_ckpt, eval_split = "heldout", eval_out, eval_label;
  std::string mine_ckpt, mine_out;
  std::uint64_t mine_batch_seed = 0;
  double grad_tol = 1e-4;

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen, gen_o);

  CLI::App* tr = app.add_subcommand("train", "run the training loop");
  add_common(tr, train_o);

  CLI::App* ev = app.add_subcommand("eval", "retrieval accuracy of a checkpoint");
  add_common(ev, eval_o);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file (omit for fresh params)");
  ev->add_option("--split", eval_split, "heldout|train|all")
      ->check(CLI::IsMember({"heldout", "train", "all"}));
  ev->add_option("--out", eval_out, "basename for .txt/.csv result tables");
  ev->add_option("--label", eval_label, "row label in the results table");

  CLI::App* mn = app.add_subcommand("mine", "dump one batch's mining plan as JSON");
  add_common(mn, mine_o);
  mn->add_option("--checkpoint", mine_ckpt, "checkpoint file (omit for fresh params)");
  mn->add_option("--batch-seed", mine_batch_seed, "seed for batch sampling");
  mn->add_option("--out", mine_out, "output file (default stdout)");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, grad_o);
  gc->add_option("--tol", grad_tol, "max relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (tr->parsed()) return cmd_train(train_o);
    if (ev->parsed()) return cmd_eval(eval_o, eval_ckpt, eval_split, eval_out, eval_label);
    if (mn->parsed()) return cmd_mine(mine_o, mine_ckpt, mine_batch_seed, mine_out);
    if (gc->parsed()) return cmd_gradcheck(grad_o, grad_tol);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
