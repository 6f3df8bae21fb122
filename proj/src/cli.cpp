#include "otloc/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "otloc/datagen.hpp"
#include "otloc/evalkit.hpp"
#include "otloc/trainer.hpp"

namespace otloc {

namespace {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config file handling. The JSON config mirrors the flag surface; any flag
// given on the command line overrides its config key. Unknown keys are
// rejected outright.
// ---------------------------------------------------------------------------

void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

struct RunConfig {
  GenSpec gen;
  TrainConfig train;
  std::vector<double> thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
  std::string out_dir;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: parse error in '" + path + "': " + e.what());
  }
  check_keys(j, {"gen", "train", "eval", "out_dir"}, "top level");

  if (j.contains("out_dir")) rc.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    check_keys(g,
               {"classes", "sub_events_per_class", "prototype_pool_size", "feature_dim",
                "clips_per_video", "instances_min", "instances_max", "train_videos",
                "test_videos", "noise_sigma", "background_sigma", "prototype_sharing",
                "seed"},
               "gen");
    if (g.contains("classes")) rc.gen.num_classes = g.at("classes").get<int>();
    if (g.contains("sub_events_per_class"))
      rc.gen.sub_events_per_class = g.at("sub_events_per_class").get<int>();
    if (g.contains("prototype_pool_size"))
      rc.gen.prototype_pool_size = g.at("prototype_pool_size").get<int>();
    if (g.contains("feature_dim")) rc.gen.feature_dim = g.at("feature_dim").get<int>();
    if (g.contains("clips_per_video"))
      rc.gen.clips_per_video = g.at("clips_per_video").get<int>();
    if (g.contains("instances_min")) rc.gen.instances_min = g.at("instances_min").get<int>();
    if (g.contains("instances_max")) rc.gen.instances_max = g.at("instances_max").get<int>();
    if (g.contains("train_videos")) rc.gen.train_videos = g.at("train_videos").get<int>();
    if (g.contains("test_videos")) rc.gen.test_videos = g.at("test_videos").get<int>();
    if (g.contains("noise_sigma")) rc.gen.noise_sigma = g.at("noise_sigma").get<double>();
    if (g.contains("background_sigma"))
      rc.gen.background_sigma = g.at("background_sigma").get<double>();
    if (g.contains("prototype_sharing"))
      rc.gen.prototype_sharing = g.at("prototype_sharing").get<bool>();
    if (g.contains("seed")) rc.gen.seed = g.at("seed").get<uint64_t>();
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"epochs", "batch_size", "learning_rate", "shots", "lambda_reg", "tau",
                "seed", "strategy", "prompts", "n_ctx", "d_ctx", "fpn_levels", "conv_depth",
                "score_threshold", "nms_iou", "top_k", "sinkhorn"},
               "train");
    if (t.contains("epochs")) rc.train.epochs = t.at("epochs").get<int>();
    if (t.contains("batch_size")) rc.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("learning_rate"))
      rc.train.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("shots")) rc.train.shots = t.at("shots").get<int>();
    if (t.contains("lambda_reg")) rc.train.lambda_reg = t.at("lambda_reg").get<double>();
    if (t.contains("tau")) rc.train.tau = t.at("tau").get<double>();
    if (t.contains("seed")) rc.train.seed = t.at("seed").get<uint64_t>();
    if (t.contains("strategy"))
      rc.train.strategy = strategy_from_name(t.at("strategy").get<std::string>());
    if (t.contains("prompts")) rc.train.num_prompts = t.at("prompts").get<int>();
    if (t.contains("n_ctx")) rc.train.n_ctx = t.at("n_ctx").get<int>();
    if (t.contains("d_ctx")) rc.train.d_ctx = t.at("d_ctx").get<int>();
    if (t.contains("fpn_levels")) rc.train.fpn_levels = t.at("fpn_levels").get<int>();
    if (t.contains("conv_depth")) rc.train.conv_depth = t.at("conv_depth").get<int>();
    if (t.contains("score_threshold"))
      rc.train.score_threshold = t.at("score_threshold").get<double>();
    if (t.contains("nms_iou")) rc.train.nms_iou = t.at("nms_iou").get<double>();
    if (t.contains("top_k")) rc.train.top_k = t.at("top_k").get<int>();
    if (t.contains("sinkhorn")) {
      const auto& s = t.at("sinkhorn");
      check_keys(s, {"lambda", "delta", "max_iters"}, "train.sinkhorn");
      if (s.contains("lambda")) rc.train.sinkhorn.lambda = s.at("lambda").get<double>();
      if (s.contains("delta")) rc.train.sinkhorn.delta = s.at("delta").get<double>();
      if (s.contains("max_iters")) rc.train.sinkhorn.max_iters = s.at("max_iters").get<int>();
    }
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"thresholds"}, "eval");
    if (e.contains("thresholds"))
      rc.thresholds = e.at("thresholds").get<std::vector<double>>();
  }
  return rc;
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"shots", cfg.shots},
          {"lambda_reg", cfg.lambda_reg},
          {"tau", cfg.tau},
          {"seed", cfg.seed},
          {"strategy", strategy_name(cfg.strategy)},
          {"prompts", cfg.num_prompts},
          {"n_ctx", cfg.n_ctx},
          {"d_ctx", cfg.d_ctx},
          {"fpn_levels", cfg.fpn_levels},
          {"conv_depth", cfg.conv_depth},
          {"score_threshold", cfg.score_threshold},
          {"nms_iou", cfg.nms_iou},
          {"top_k", cfg.top_k},
          {"sinkhorn",
           {{"lambda", cfg.sinkhorn.lambda},
            {"delta", cfg.sinkhorn.delta},
            {"max_iters", cfg.sinkhorn.max_iters}}}};
}

nlohmann::json gen_spec_json(const GenSpec& g) {
  return {{"classes", g.num_classes},
          {"sub_events_per_class", g.sub_events_per_class},
          {"prototype_pool_size", g.prototype_pool_size},
          {"feature_dim", g.feature_dim},
          {"clips_per_video", g.clips_per_video},
          {"instances_min", g.instances_min},
          {"instances_max", g.instances_max},
          {"train_videos", g.train_videos},
          {"test_videos", g.test_videos},
          {"noise_sigma", g.noise_sigma},
          {"background_sigma", g.background_sigma},
          {"prototype_sharing", g.prototype_sharing},
          {"seed", g.seed}};
}

void write_resolved_config(const std::string& out_dir, const nlohmann::json& j) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "config.resolved.json");
  if (!out) throw ConfigError("cannot write config.resolved.json in '" + out_dir + "'");
  out << j.dump(2) << "\n";
}

std::vector<double> parse_threshold_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad threshold value '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty threshold list");
  return out;
}

// ---------------------------------------------------------------------------
// Shared train/eval steps.
// ---------------------------------------------------------------------------

struct TrainOutputs {
  ModelState model;
  std::vector<EpochStats> history;
};

TrainOutputs run_training(const Corpus& corpus, const TrainConfig& cfg) {
  auto it = corpus.splits.find("train");
  if (it == corpus.splits.end() || it->second.empty()) {
    throw DataError("corpus has no train split");
  }
  int num_classes = corpus.manifest.spec.num_classes;
  int feature_dim = corpus.manifest.spec.feature_dim;

  Rng sample_rng = Rng(cfg.seed).fork(5);
  std::vector<FeatureSequence> support =
      sample_few_shot(it->second, cfg.shots, num_classes, sample_rng);

  TrainOutputs out{init_model(num_classes, feature_dim, cfg), {}};
  std::vector<GradSlot*> params = trainable_params(out.model);
  OptimizerState opt = OptimizerState::make(params);
  out.history = train(out.model, support, opt);
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "epoch,cls,reg,total\n";
  char buf[128];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.cls, e.reg,
                  e.total);
    out << buf;
  }
}

EvalReport run_eval(const ModelState& model, const Corpus& corpus,
                    const std::vector<double>& thresholds) {
  auto it = corpus.splits.find("test");
  if (it == corpus.splits.end() || it->second.empty()) {
    throw DataError("corpus has no test split");
  }
  if (corpus.manifest.spec.feature_dim != model.feature_dim) {
    throw DataError("model feature dim " + std::to_string(model.feature_dim) +
                    " does not match corpus dim " +
                    std::to_string(corpus.manifest.spec.feature_dim));
  }
  if (corpus.manifest.spec.num_classes != model.num_classes) {
    throw DataError("model class count " + std::to_string(model.num_classes) +
                    " does not match corpus class count " +
                    std::to_string(corpus.manifest.spec.num_classes));
  }
  std::vector<Detection> detections;
  for (const FeatureSequence& video : it->second) {
    for (const ActionInstance& inst : predict_video(model, video)) {
      detections.push_back({video.video_id, inst.start, inst.end, inst.class_id, inst.score});
    }
  }
  return evaluate(detections, it->second, thresholds, model.num_classes);
}

void print_report(const EvalReport& rep) {
  std::printf("%-12s %s\n", "threshold", "mAP");
  for (size_t i = 0; i < rep.thresholds.size(); ++i) {
    std::printf("%-12.2f %.4f\n", rep.thresholds[i], rep.map_per_threshold[i]);
  }
  std::printf("%-12s %.4f\n", "average", rep.average_map);
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc) {
  Corpus corpus = generate_corpus(rc.gen);
  write_corpus(corpus, rc.out_dir);
  nlohmann::json resolved;
  resolved["gen"] = gen_spec_json(rc.gen);
  resolved["out_dir"] = rc.out_dir;
  write_resolved_config(rc.out_dir, resolved);
  std::printf("wrote corpus with %d classes to %s\n", rc.gen.num_classes,
              rc.out_dir.c_str());
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_dir) {
  Corpus corpus = read_corpus(data_dir);
  TrainOutputs out = run_training(corpus, rc.train);
  fs::create_directories(rc.out_dir);
  save_model(out.model, (fs::path(rc.out_dir) / "model.json").string());
  write_loss_csv((fs::path(rc.out_dir) / "loss.csv").string(), out.history);
  nlohmann::json resolved;
  resolved["train"] = train_config_json(rc.train);
  resolved["out_dir"] = rc.out_dir;
  write_resolved_config(rc.out_dir, resolved);
  double final_loss = out.history.empty() ? 0.0 : out.history.back().total;
  std::printf("trained %d epochs, final loss %.6f\n", rc.train.epochs, final_loss);
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& model_path,
             const std::string& data_dir) {
  ModelState model = load_model(model_path);
  Corpus corpus = read_corpus(data_dir);
  EvalReport rep = run_eval(model, corpus, rc.thresholds);
  fs::create_directories(rc.out_dir);
  {
    std::ofstream out(fs::path(rc.out_dir) / "report.json");
    out << report_to_json(rep) << "\n";
  }
  {
    std::ofstream out(fs::path(rc.out_dir) / "report.csv");
    out << report_to_csv(rep);
  }
  nlohmann::json resolved;
  resolved["eval"] = {{"thresholds", rc.thresholds}};
  resolved["out_dir"] = rc.out_dir;
  write_resolved_config(rc.out_dir, resolved);
  print_report(rep);
  return 0;
}

int cmd_dump_plan(const std::string& model_path, const std::string& data_dir,
                  const std::string& video_id, int class_id, const std::string& out_path) {
  ModelState model = load_model(model_path);
  Corpus corpus = read_corpus(data_dir);

  const FeatureSequence* video = nullptr;
  for (const auto& [split, videos] : corpus.splits) {
    for (const FeatureSequence& v : videos) {
      if (v.video_id == video_id) {
        video = &v;
        break;
      }
    }
  }
  if (!video) throw DataError("dump-plan: video id '" + video_id + "' not found");

  Matrix table = transport_cost_table(model, *video, class_id);
  std::ofstream out(out_path);
  if (!out) throw DataError("dump-plan: cannot write '" + out_path + "'");
  out << "frame";
  for (int j = 0; j < table.cols; ++j) out << ",prompt_" << (j + 1);
  out << "\n";
  char buf[64];
  for (int t = 0; t < table.rows; ++t) {
    out << t;
    for (int j = 0; j < table.cols; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.17g", table(t, j));
      out << buf;
    }
    out << "\n";
  }
  std::printf("wrote %dx%d transport-cost table to %s\n", table.rows, table.cols,
              out_path.c_str());
  return 0;
}

struct AblateCell {
  AlignmentStrategy strategy;
  int prompts;
  int n_ctx;
  int fpn_levels;
  uint64_t seed;
  EvalReport report;
  bool done = false;
};

int cmd_ablate(const RunConfig& rc, const std::string& data_dir,
               const std::vector<std::string>& strategies, const std::vector<int>& prompts,
               const std::vector<int>& ctx_counts, const std::vector<int>& level_counts,
               const std::vector<uint64_t>& seeds, int jobs) {
  Corpus corpus = read_corpus(data_dir);

  std::vector<AblateCell> cells;
  for (const std::string& s : strategies) {
    AlignmentStrategy strat = strategy_from_name(s);
    for (int n : prompts) {
      for (int ctx : ctx_counts) {
        for (int lv : level_counts) {
          for (uint64_t seed : seeds) {
            cells.push_back({strat, n, ctx, lv, seed, {}, false});
          }
        }
      }
    }
  }
  if (cells.empty()) throw ConfigError("ablate: empty grid");

  auto run_cell = [&](AblateCell& cell) {
    TrainConfig cfg = rc.train;
    cfg.strategy = cell.strategy;
    cfg.num_prompts = cell.prompts;
    cfg.n_ctx = cell.n_ctx;
    cfg.fpn_levels = cell.fpn_levels;
    cfg.seed = cell.seed;
    TrainOutputs out = run_training(corpus, cfg);
    cell.report = run_eval(out.model, corpus, rc.thresholds);
    cell.done = true;
  };

  if (jobs <= 1) {
    for (AblateCell& cell : cells) run_cell(cell);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_cell(cells[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  fs::create_directories(rc.out_dir);
  std::ofstream out(fs::path(rc.out_dir) / "ablation.csv");
  if (!out) throw DataError("ablate: cannot write ablation.csv");
  out << "strategy,prompts,n_ctx,fpn_levels,seed";
  for (double th : rc.thresholds) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",map@%.2f", th);
    out << buf;
  }
  out << ",avg_map\n";
  for (const AblateCell& cell : cells) {
    out << strategy_name(cell.strategy) << "," << cell.prompts << "," << cell.n_ctx << ","
        << cell.fpn_levels << "," << cell.seed;
    char buf[64];
    for (double m : cell.report.map_per_threshold) {
      std::snprintf(buf, sizeof(buf), ",%.17g", m);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g\n", cell.report.average_map);
    out << buf;
  }

  nlohmann::json resolved;
  resolved["train"] = train_config_json(rc.train);
  resolved["eval"] = {{"thresholds", rc.thresholds}};
  resolved["out_dir"] = rc.out_dir;
  write_resolved_config(rc.out_dir, resolved);
  std::printf("wrote %zu ablation cells to %s/ablation.csv\n", cells.size(),
              rc.out_dir.c_str());
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Multi-prompt optimal-transport temporal action localization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override its keys)");

  // gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  std::string gen_out;
  GenSpec gflags;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", gflags.num_classes, "Number of action classes");
  gen->add_option("--sub-events", gflags.sub_events_per_class, "Sub-events per class");
  gen->add_option("--pool", gflags.prototype_pool_size, "Prototype pool size");
  gen->add_option("--dim", gflags.feature_dim, "Feature dimension");
  gen->add_option("--clips", gflags.clips_per_video, "Clips per video");
  gen->add_option("--instances-min", gflags.instances_min, "Min instances per video");
  gen->add_option("--instances-max", gflags.instances_max, "Max instances per video");
  gen->add_option("--videos-train", gflags.train_videos, "Train split size");
  gen->add_option("--videos-test", gflags.test_videos, "Test split size");
  gen->add_option("--noise", gflags.noise_sigma, "In-action noise sigma");
  gen->add_option("--bg-sigma", gflags.background_sigma, "Background noise sigma");
  gen->add_flag("--share,!--no-share", gflags.prototype_sharing,
                "Allow classes to share sub-events");
  gen->add_option("--seed", gflags.seed, "Generation seed");

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  std::string tr_data, tr_out;
  TrainConfig tflags;
  std::string tr_strategy;
  tr->add_option("--data", tr_data, "Corpus directory")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--epochs", tflags.epochs, "Training epochs");
  tr->add_option("--batch", tflags.batch_size, "Batch size");
  tr->add_option("--lr", tflags.learning_rate, "Learning rate");
  tr->add_option("--shots", tflags.shots, "Instances per class (K)");
  tr->add_option("--strategy", tr_strategy, "Alignment: ot|hungarian|euclidean|mean");
  tr->add_option("--prompts", tflags.num_prompts, "Prompts per class (N)");
  tr->add_option("--ctx", tflags.n_ctx, "Context tokens per prompt");
  tr->add_option("--ctx-dim", tflags.d_ctx, "Context token dimension");
  tr->add_option("--fpn-levels", tflags.fpn_levels, "Pyramid levels");
  tr->add_option("--sinkhorn-lambda", tflags.sinkhorn.lambda, "Entropic regularizer");
  tr->add_option("--sinkhorn-delta", tflags.sinkhorn.delta, "Convergence threshold");
  tr->add_option("--sinkhorn-iters", tflags.sinkhorn.max_iters, "Max Sinkhorn iterations");
  tr->add_option("--lambda-reg", tflags.lambda_reg, "Regression loss weight");
  tr->add_option("--tau", tflags.tau, "Logit temperature");
  tr->add_option("--seed", tflags.seed, "Training seed");

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a model on the test split");
  std::string ev_model, ev_data, ev_out, ev_thresholds;
  double ev_score_threshold = -1.0, ev_nms = -1.0;
  int ev_topk = -1;
  ev->add_option("--model", ev_model, "Model file")->required();
  ev->add_option("--data", ev_data, "Corpus directory")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--thresholds", ev_thresholds, "Comma-separated tIoU thresholds");
  ev->add_option("--score-threshold", ev_score_threshold, "Decoder score threshold");
  ev->add_option("--nms-iou", ev_nms, "NMS IoU threshold");
  ev->add_option("--top-k", ev_topk, "Max detections per video");

  // dump-plan ---------------------------------------------------------------
  auto* dp = app.add_subcommand("dump-plan",
                                "Dump the per-frame transport-cost table for one class");
  std::string dp_model, dp_data, dp_video, dp_out;
  int dp_class = 0;
  dp->add_option("--model", dp_model, "Model file")->required();
  dp->add_option("--data", dp_data, "Corpus directory")->required();
  dp->add_option("--video", dp_video, "Video id")->required();
  dp->add_option("--class", dp_class, "Class id")->required();
  dp->add_option("--out", dp_out, "Output CSV path")->required();

  // ablate -----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "Train+eval over a configuration grid");
  std::string ab_data, ab_out;
  std::vector<std::string> ab_strategies = {"ot"};
  std::vector<int> ab_prompts = {6};
  std::vector<int> ab_ctx = {16};
  std::vector<int> ab_levels = {5};
  std::vector<uint64_t> ab_seeds = {1};
  int ab_jobs = 1;
  int ab_epochs = -1;
  int ab_shots = -1;
  ab->add_option("--data", ab_data, "Corpus directory")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--shots", ab_shots, "Override instances per class (K)");
  ab->add_option("--strategies", ab_strategies, "Strategies to sweep")->delimiter(',');
  ab->add_option("--prompts", ab_prompts, "Prompt counts to sweep")->delimiter(',');
  ab->add_option("--ctx", ab_ctx, "Context token counts to sweep")->delimiter(',');
  ab->add_option("--fpn-levels", ab_levels, "Pyramid level counts to sweep")->delimiter(',');
  ab->add_option("--seeds", ab_seeds, "Seeds to sweep")->delimiter(',');
  ab->add_option("--epochs", ab_epochs, "Override training epochs");
  ab->add_option("--jobs", ab_jobs, "Parallel worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig rc = load_run_config(config_path);

    if (gen->parsed()) {
      // Flags override the config: pick up every flag the user actually set.
      GenSpec g = rc.gen;
      if (gen->count("--classes")) g.num_classes = gflags.num_classes;
      if (gen->count("--sub-events")) g.sub_events_per_class = gflags.sub_events_per_class;
      if (gen->count("--pool")) g.prototype_pool_size = gflags.prototype_pool_size;
      if (gen->count("--dim")) g.feature_dim = gflags.feature_dim;
      if (gen->count("--clips")) g.clips_per_video = gflags.clips_per_video;
      if (gen->count("--instances-min")) g.instances_min = gflags.instances_min;
      if (gen->count("--instances-max")) g.instances_max = gflags.instances_max;
      if (gen->count("--videos-train")) g.train_videos = gflags.train_videos;
      if (gen->count("--videos-test")) g.test_videos = gflags.test_videos;
      if (gen->count("--noise")) g.noise_sigma = gflags.noise_sigma;
      if (gen->count("--bg-sigma")) g.background_sigma = gflags.background_sigma;
      if (gen->count("--share") || gen->count("--no-share"))
        g.prototype_sharing = gflags.prototype_sharing;
      if (gen->count("--seed")) g.seed = gflags.seed;
      rc.gen = g;
      rc.out_dir = gen_out;
      return cmd_gen_data(rc);
    }

    if (tr->parsed()) {
      TrainConfig t = rc.train;
      if (tr->count("--epochs")) t.epochs = tflags.epochs;
      if (tr->count("--batch")) t.batch_size = tflags.batch_size;
      if (tr->count("--lr")) t.learning_rate = tflags.learning_rate;
      if (tr->count("--shots")) t.shots = tflags.shots;
      if (tr->count("--strategy")) t.strategy = strategy_from_name(tr_strategy);
      if (tr->count("--prompts")) t.num_prompts = tflags.num_prompts;
      if (tr->count("--ctx")) t.n_ctx = tflags.n_ctx;
      if (tr->count("--ctx-dim")) t.d_ctx = tflags.d_ctx;
      if (tr->count("--fpn-levels")) t.fpn_levels = tflags.fpn_levels;
      if (tr->count("--sinkhorn-lambda")) t.sinkhorn.lambda = tflags.sinkhorn.lambda;
      if (tr->count("--sinkhorn-delta")) t.sinkhorn.delta = tflags.sinkhorn.delta;
      if (tr->count("--sinkhorn-iters")) t.sinkhorn.max_iters = tflags.sinkhorn.max_iters;
      if (tr->count("--lambda-reg")) t.lambda_reg = tflags.lambda_reg;
      if (tr->count("--tau")) t.tau = tflags.tau;
      if (tr->count("--seed")) t.seed = tflags.seed;
      rc.train = t;
      rc.out_dir = tr_out;
      return cmd_train(rc, tr_data);
    }

    if (ev->parsed()) {
      if (!ev_thresholds.empty()) rc.thresholds = parse_threshold_list(ev_thresholds);
      rc.out_dir = ev_out;
      // Decoder knobs override the values stored in the model file.
      ModelState model = load_model(ev_model);
      if (ev_score_threshold >= 0.0) model.cfg.score_threshold = ev_score_threshold;
      if (ev_nms >= 0.0) model.cfg.nms_iou = ev_nms;
      if (ev_topk >= 0) model.cfg.top_k = ev_topk;
      Corpus corpus = read_corpus(ev_data);
      EvalReport rep = run_eval(model, corpus, rc.thresholds);
      fs::create_directories(rc.out_dir);
      {
        std::ofstream out(fs::path(rc.out_dir) / "report.json");
        out << report_to_json(rep) << "\n";
      }
      {
        std::ofstream out(fs::path(rc.out_dir) / "report.csv");
        out << report_to_csv(rep);
      }
      nlohmann::json resolved;
      resolved["eval"] = {{"thresholds", rc.thresholds}};
      resolved["out_dir"] = rc.out_dir;
      write_resolved_config(rc.out_dir, resolved);
      print_report(rep);
      return 0;
    }

    if (dp->parsed()) {
      return cmd_dump_plan(dp_model, dp_data, dp_video, dp_class, dp_out);
    }

    if (ab->parsed()) {
      if (ab_epochs > 0) rc.train.epochs = ab_epochs;
      if (ab_shots > 0) rc.train.shots = ab_shots;
      rc.out_dir = ab_out;
      return cmd_ablate(rc, ab_data, ab_strategies, ab_prompts, ab_ctx, ab_levels, ab_seeds,
                        ab_jobs);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace otloc
