#include "ccg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <random>

#include "ccg/optim.hpp"

namespace ccg {
namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

SlicParams slic_params(const TrainConfig& c) {
  return {c.patch_count, c.slic_compactness, c.slic_iterations};
}

}  // namespace

std::string to_json_line(const StepRecord& r) {
  const nlohmann::json j = {
      {"step", r.step},           {"epoch", r.epoch},         {"lr", r.lr},
      {"l_base", r.loss.l_base},  {"l_ir", r.loss.l_ir},      {"l_ik", r.loss.l_ik},
      {"l_kr", r.loss.l_kr},      {"l_all", r.loss.l_all},    {"beta_b", r.beta_b},
      {"w_base", r.weights.base}, {"w_ir", r.weights.ir},     {"w_ik", r.weights.ik},
      {"w_kr", r.weights.kr},     {"grad_norm", r.grad_norm}};
  return j.dump();
}

std::string epoch_checkpoint_name(int epoch) { return "epoch_" + std::to_string(epoch) + ".ckpt"; }

std::vector<std::size_t> training_indices(std::size_t n, const TrainConfig& config) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (config.cv_folds > 0 && static_cast<int>(i % config.cv_folds) == config.cv_fold) continue;
    idx.push_back(i);
  }
  return idx;
}

std::vector<PatchSummary> compute_patch_summaries(const Dataset& dataset, const TrainConfig& config) {
  const SlicParams params = slic_params(config);
  std::vector<PatchSummary> out;
  out.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    if (config.patch_cache_dir.empty()) {
      out.push_back(summarize_patches(s.pixels, params));
      continue;
    }
    const auto path = patch_cache_path(config.patch_cache_dir, s.id, params);
    if (auto cached = read_patch_cache(path)) {
      out.push_back(std::move(*cached));
    } else {
      out.push_back(summarize_patches(s.pixels, params));
      write_patch_cache(path, out.back());
    }
  }
  return out;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.num_classes() != config.num_classes) {
    fail("dataset has ", dataset.num_classes(), " classes, config expects ", config.num_classes);
  }
  for (const auto& s : dataset.samples) validate_sample(s, config.input_size);

  Model model(config);
  Sgd optimizer({config.momentum, config.nesterov, config.weight_decay});
  int start_epoch = 0;
  std::int64_t step = 0;
  TrainResult result;
  if (options.resume) {
    const Checkpoint ckpt = load_checkpoint(*options.resume);
    restore_checkpoint(ckpt, model, &optimizer);
    start_epoch = ckpt.epoch;
    step = ckpt.step;
    result.last_checkpoint = *options.resume;
  }

  const auto indices = training_indices(dataset.samples.size(), config);
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = indices.size() / batch;
  if (steps_per_epoch == 0) fail("training split of ", indices.size(), " samples is smaller than one batch");

  const std::vector<PatchSummary> patches = compute_patch_summaries(dataset, config);
  const LossWeights weights = effective_weights(config);
  const auto params = model.params();

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / kTrainLog, options.resume ? std::ios::app : std::ios::trunc);
    if (!log) fail("cannot write training log in ", options.out_dir);
  }

  std::int64_t steps_this_call = 0;
  int completed = start_epoch;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = indices;
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = learning_rate(config, epoch);

    double epoch_sum = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      if (options.max_steps >= 0 && steps_this_call >= options.max_steps) break;
      Batch mb;
      for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t i = order[b * batch + k];
        mb.samples.push_back(&dataset.samples[i]);
        mb.patches.push_back(&patches[i]);
      }
      ++step;
      if (options.before_step) options.before_step(step, model);

      StepRecord rec;
      model.zero_grad();
      try {
        rec.loss = model.step(mb, weights, true);
      } catch (const NonFiniteLoss& e) {
        throw TrainingAborted("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + "): " + e.what(),
                              result.last_checkpoint);
      }
      rec.grad_norm = clip_grad_norm(params, config.grad_clip);
      if (!std::isfinite(rec.grad_norm)) {
        throw TrainingAborted("step " + std::to_string(step) + ": non-finite gradient", result.last_checkpoint);
      }
      optimizer.step(params, lr);

      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.weights = weights;
      rec.beta_b = config.beta_b;
      if (log.is_open()) log << to_json_line(rec) << '\n' << std::flush;
      result.log.push_back(rec);
      epoch_sum += rec.loss.l_all;
      ++epoch_steps;
      ++steps_this_call;
    }
    if (epoch_steps == 0) break;
    result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
    const bool complete = epoch_steps == steps_per_epoch;
    if (options.verbose) {
      std::cerr << "epoch " << epoch + 1 << "/" << config.epochs << " lr " << lr << " mean l_all "
                << result.epoch_mean_loss.back() << (complete ? "" : " (partial)") << "\n";
    }
    if (!complete) break;
    completed = epoch + 1;
    if (!options.out_dir.empty()) {
      const Checkpoint ckpt = capture_checkpoint(model, &optimizer, epoch + 1, step);
      save_checkpoint(options.out_dir / epoch_checkpoint_name(epoch + 1), ckpt);
      save_checkpoint(options.out_dir / kLastCheckpoint, ckpt);
      result.last_checkpoint = options.out_dir / kLastCheckpoint;
    }
  }
  result.final_state = capture_checkpoint(model, &optimizer, completed, step);
  return result;
}

}  // namespace ccg
