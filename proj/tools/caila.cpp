#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "caila/checkpoint.hpp"
#include "caila/config.hpp"
#include "caila/data.hpp"
#include "caila/error.hpp"
#include "caila/eval.hpp"
#include "caila/trainer.hpp"

namespace fs = std::filesystem;
using namespace caila;

namespace {

struct GenFlags {
  std::string out;
  int attrs = 6;
  int objs = 6;
  double seen_frac = 0.667;
  int per_pair = 20;
  int per_pair_eval = 5;
  int image_hw = 64;
  double noise = 0.02;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenFlags& f) {
  if (f.per_pair < 1 || f.per_pair_eval < 1)
    throw ConfigError("per-pair counts must be at least 1");
  const VocabSpec vocab = default_vocab(f.attrs, f.objs);
  const LabelSpace ls = split_compositions(vocab, f.seen_frac, f.seed);
  RenderSpec spec;
  spec.image_hw = f.image_hw;
  spec.noise = float(f.noise);
  spec.seed = f.seed;
  PerPairCounts counts;
  counts.train = f.per_pair;
  counts.val_seen = counts.val_unseen = f.per_pair_eval;
  counts.test_seen = counts.test_unseen = f.per_pair_eval;
  generate_dataset(ls, spec, counts, f.seed, f.out);

  const std::size_t seen = ls.seen.size();
  const std::size_t unseen = ls.unseen.size();
  std::cout << "seen pairs: " << seen << "\n"
            << "unseen pairs: " << unseen << "\n"
            << "train images: " << seen * std::size_t(f.per_pair) << "\n"
            << "val images: " << (seen + unseen) * std::size_t(f.per_pair_eval) << "\n"
            << "test images: " << (seen + unseen) * std::size_t(f.per_pair_eval) << "\n"
            << "wrote " << f.out << "\n";
  return 0;
}

struct TrainFlags {
  std::string data;
  std::string config;
  std::string out;
  std::string metrics;
  std::uint64_t seed = 0;
  bool has_data = false, has_out = false, has_metrics = false, has_seed = false;
};

int run_train(const TrainFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = load_run_config(f.config);
  if (f.has_data) cfg.data_dir = f.data;
  if (f.has_out) cfg.checkpoint_path = f.out;
  if (f.has_metrics) cfg.metrics_path = f.metrics;
  if (f.has_seed) cfg.train.seed = f.seed;
  cfg.validate();
  if (!fs::exists(cfg.data_dir))
    throw ConfigError("data directory '" + cfg.data_dir + "' does not exist");

  const LoadedData data = load_dataset(cfg.data_dir);
  const TrainResult r = train(data, cfg.encoder, cfg.train, &std::cout);
  save_checkpoint(cfg.checkpoint_path, r.model, r.backbone_hash);
  save_metrics(r.log, cfg.metrics_path);

  if (r.best_epoch >= 0) {
    const EpochMetrics& best = r.log[std::size_t(r.best_epoch)];
    std::cout << "best epoch " << best.epoch << ": val auc " << best.val_auc << ", seen "
              << format_percent(best.val_seen) << "%, unseen " << format_percent(best.val_unseen)
              << "%\n";
  } else {
    std::cout << "no training epochs; saved the stage-0 weights\n";
  }
  std::cout << "checkpoint: " << cfg.checkpoint_path << "\n"
            << "metrics: " << cfg.metrics_path << "\n";
  return 0;
}

struct EvalFlags {
  std::string ckpt;
  std::string data;
  std::string world = "closed";
  std::string split = "test";
  std::string report = "report.txt";
  std::string curve = "curve.csv";
};

int run_eval(const EvalFlags& f) {
  const World world = world_from_name(f.world);
  if (f.split != "test" && f.split != "val")
    throw ConfigError("split must be 'test' or 'val', got '" + f.split + "'");
  if (!fs::exists(f.ckpt)) throw ConfigError("checkpoint '" + f.ckpt + "' does not exist");
  if (!fs::exists(f.data)) throw ConfigError("data directory '" + f.data + "' does not exist");

  const Checkpoint ck = load_checkpoint(f.ckpt);
  const ModelParams model = ck.restore();
  const LoadedData data = load_dataset(f.data);

  std::vector<EvalSample> samples = f.split == "test" ? data.test_seen : data.val_seen;
  const std::vector<EvalSample>& unseen = f.split == "test" ? data.test_unseen : data.val_unseen;
  samples.insert(samples.end(), unseen.begin(), unseen.end());
  if (samples.empty()) throw ConfigError("split '" + f.split + "' has no samples");

  const ScoreMatrix m = score_all(model, samples, data.labels, world);
  const EvalReport rep = evaluate(m);
  save_report(rep, f.report);
  save_curve(rep.curve, f.curve);

  std::cout << "world: " << world_name(world) << "\n"
            << "candidates: " << rep.candidate_count << "\n"
            << "auc: " << rep.auc << "\n"
            << "best hm: " << format_percent(rep.best_hm) << "%\n"
            << "best seen: " << format_percent(rep.best_seen) << "%, best unseen: "
            << format_percent(rep.best_unseen) << "%\n"
            << "report: " << f.report << "\n"
            << "curve: " << f.curve << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concept-aware adapter pipeline for compositional zero-shot learning"};
  app.require_subcommand(1);

  GenFlags gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "render a synthetic composition dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--attrs", gen.attrs, "number of attributes");
  gen_cmd->add_option("--objs", gen.objs, "number of objects");
  gen_cmd->add_option("--seen-frac", gen.seen_frac, "fraction of pairs marked seen");
  gen_cmd->add_option("--per-pair", gen.per_pair, "train images per seen pair");
  gen_cmd->add_option("--per-pair-eval", gen.per_pair_eval, "val/test images per pair");
  gen_cmd->add_option("--image-hw", gen.image_hw, "image edge in pixels");
  gen_cmd->add_option("--noise", gen.noise, "additive noise amplitude");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");

  TrainFlags tr;
  CLI::App* train_cmd = app.add_subcommand("train", "two-stage training run");
  train_cmd->add_option("--data", tr.data, "dataset directory");
  train_cmd->add_option("--config", tr.config, "run configuration file");
  train_cmd->add_option("--out", tr.out, "checkpoint output path");
  train_cmd->add_option("--metrics", tr.metrics, "metrics csv output path");
  train_cmd->add_option("--seed", tr.seed, "overrides the config seed");

  EvalFlags ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "bias-sweep evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", ev.data, "dataset directory")->required();
  eval_cmd->add_option("--world", ev.world, "closed or open candidate set");
  eval_cmd->add_option("--split", ev.split, "test or val");
  eval_cmd->add_option("--report", ev.report, "report output path");
  eval_cmd->add_option("--curve", ev.curve, "accuracy curve output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  tr.has_data = train_cmd->count("--data") > 0;
  tr.has_out = train_cmd->count("--out") > 0;
  tr.has_metrics = train_cmd->count("--metrics") > 0;
  tr.has_seed = train_cmd->count("--seed") > 0;

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
