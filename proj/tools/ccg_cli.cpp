#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ccg/checkpoint.hpp"
#include "ccg/config.hpp"
#include "ccg/data.hpp"
#include "ccg/evaluation.hpp"
#include "ccg/head.hpp"
#include "ccg/losses.hpp"
#include "ccg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;

// A dump directory may hold train/ and test/ splits written by `synth`.
fs::path split_dir(const fs::path& data_dir, const char* split) {
  const fs::path sub = data_dir / split;
  return fs::exists(sub / ccg::kLabelsCsv) ? sub : data_dir;
}

ccg::Dataset load_split(const fs::path& data_dir, const char* split, const ccg::TrainConfig& config) {
  ccg::LoadOptions opts;
  opts.image_size = config.input_size;
  opts.num_classes = config.num_classes;
  ccg::Dataset ds = ccg::load_dataset_dir(split_dir(data_dir, split), opts);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os || !(os << text)) ccg::fail("cannot write ", path);
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string out;
  int n_train = 200;
  int n_test = 50;
  ccg::SyntheticSpec spec;
};

int run_synth(const SynthArgs& a) {
  const ccg::SyntheticSplits splits = ccg::generate_synthetic_splits(a.seed, a.n_train, a.n_test, a.spec);
  ccg::write_dataset(splits.train, fs::path(a.out) / "train");
  ccg::write_dataset(splits.test, fs::path(a.out) / "test");
  std::cout << "wrote " << splits.train.samples.size() << " training and " << splits.test.samples.size()
            << " test images to " << a.out << "\n";
  return 0;
}

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::string> ablation;
  std::optional<std::uint64_t> seed;
  std::string data_dir;
  std::string checkpoint;
  std::string out;
};

ccg::TrainConfig build_config(const CommonArgs& a) {
  ccg::TrainConfig config;
  if (!a.config_file.empty()) config = ccg::load_config(a.config_file);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) ccg::fail("--set expects key=value, got '", kv, "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.ablation) config.ablation = ccg::parse_ablation(*a.ablation);
  if (a.seed) config.seed = *a.seed;
  config.validate();
  return config;
}

int run_train(const CommonArgs& a, std::optional<std::string> resume, std::int64_t max_steps) {
  const ccg::TrainConfig config = build_config(a);
  const ccg::Dataset ds = load_split(a.data_dir, "train", config);
  ccg::TrainOptions opts;
  opts.out_dir = a.out;
  opts.verbose = true;
  opts.max_steps = max_steps;
  if (resume) opts.resume = *resume;
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", config.to_text());
  try {
    const ccg::TrainResult r = ccg::train(ds, config, opts);
    std::cout << "trained " << r.log.size() << " steps; checkpoint "
              << (r.last_checkpoint ? r.last_checkpoint->string() : std::string("(none)")) << "\n";
  } catch (const ccg::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    if (e.last_good_checkpoint) std::cerr << "last good checkpoint: " << e.last_good_checkpoint->string() << "\n";
    return 1;
  }
  return 0;
}

int run_eval(const CommonArgs& a, std::optional<double> threshold, std::optional<int> upsample) {
  const ccg::Checkpoint ckpt = ccg::load_checkpoint(a.checkpoint);
  const auto model = ccg::model_from_checkpoint(ckpt);
  const ccg::TrainConfig& config = model->config();
  const ccg::Dataset ds = load_split(a.data_dir, "test", config);
  const auto results = ccg::localize(*model, ds, threshold.value_or(config.threshold),
                                     upsample.value_or(config.upsample_factor));
  const ccg::AccuracyTable table = ccg::accuracy_table(results, ds.classes);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "accuracy.csv", ccg::table_csv(table));
  write_text(fs::path(a.out) / "accuracy.txt", ccg::table_text(table));
  std::ostringstream per_pair;
  per_pair << "sample,class,iou,both_empty\n";
  for (const auto& r : results) {
    per_pair << r.sample_id << ',' << ds.classes[r.class_index] << ',' << r.iou.iou << ',' << r.iou.both_empty << "\n";
  }
  write_text(fs::path(a.out) / "iou.csv", per_pair.str());
  std::cout << ccg::table_text(table);
  return 0;
}

int run_viz(const CommonArgs& a, std::optional<double> threshold, int limit) {
  const ccg::Checkpoint ckpt = ccg::load_checkpoint(a.checkpoint);
  const auto model = ccg::model_from_checkpoint(ckpt);
  const ccg::TrainConfig& config = model->config();
  const ccg::Dataset ds = load_split(a.data_dir, "test", config);
  fs::create_directories(a.out);
  int written = 0;
  for (const auto& s : ds.samples) {
    if (limit >= 0 && written >= limit) break;
    const ccg::ClassProbMap probs = model->predict(s.pixels, config.upsample_factor);
    for (int k = 0; k < s.num_classes(); ++k) {
      if (!s.image_labels[k]) continue;
      std::vector<ccg::BoxAnnotation> boxes;
      for (const auto& b : s.boxes) {
        if (b.class_index == k) boxes.push_back(b);
      }
      const ccg::Tensor mask = ccg::threshold_grid(ccg::channel(probs.probs, k), threshold.value_or(config.threshold));
      ccg::export_heatmap(s.pixels, mask, boxes, fs::path(a.out) / ccg::heatmap_file_name(s.id, ds.classes[k]));
      ++written;
    }
  }
  std::cout << "wrote " << written << " heatmaps to " << a.out << "\n";
  return 0;
}

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_checkpoint) {
  cmd->add_option("--config", a.config_file, "Config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "Override one config key, key=value (repeatable)");
  cmd->add_option("--ablation", a.ablation, "baseline, IR, IK, KR, IR+IK or IR+IK+KR");
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--data-dir", a.data_dir, "Dataset dump directory")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file");
  if (needs_checkpoint) ck->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised lesion localization: synthetic data, training, evaluation and heatmaps", "ccg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with train/ and test/ splits");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--n-train", synth.n_train, "Training images")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--n-test", synth.n_test, "Held-out test images")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--fraction-annotated", synth.spec.fraction_annotated, "Share of training images with boxes")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--image-size", synth.spec.image_size, "Image side in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--classes", synth.spec.num_classes, "Number of classes")->check(CLI::Range(1, 14));

  CommonArgs train_args;
  std::optional<std::string> resume;
  std::int64_t max_steps = -1;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes train_log.jsonl and per-epoch checkpoints");
  add_common(train_cmd, train_args, false);
  train_cmd->add_option("--resume", resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many steps");

  CommonArgs eval_args;
  std::optional<double> eval_threshold;
  std::optional<int> eval_upsample;
  auto* eval_cmd = app.add_subcommand("eval", "Localization accuracy at T(IoU) in {0.1,0.3,0.5,0.7}");
  add_common(eval_cmd, eval_args, true);
  eval_cmd->add_option("--threshold", eval_threshold, "Cell probability threshold");
  eval_cmd->add_option("--upsample", eval_upsample, "Feature up-sampling factor")->check(CLI::PositiveNumber);

  CommonArgs viz_args;
  std::optional<double> viz_threshold;
  int viz_limit = -1;
  auto* viz_cmd = app.add_subcommand("viz", "Export heatmap overlays <sample>_<class>.png");
  add_common(viz_cmd, viz_args, true);
  viz_cmd->add_option("--threshold", viz_threshold, "Cell probability threshold");
  viz_cmd->add_option("--limit", viz_limit, "Maximum number of heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args, resume, max_steps);
    if (*eval_cmd) return run_eval(eval_args, eval_threshold, eval_upsample);
    if (*viz_cmd) return run_viz(viz_args, viz_threshold, viz_limit);
  } catch (const ccg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsageError;
}
