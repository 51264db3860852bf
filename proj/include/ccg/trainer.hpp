#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ccg/checkpoint.hpp"
#include "ccg/config.hpp"
#include "ccg/data.hpp"
#include "ccg/model.hpp"

namespace ccg {

/// One line of the training log.
struct StepRecord {
  std::int64_t step = 0;  // 1-based
  int epoch = 0;          // 0-based
  double lr = 0;
  LossReport loss;
  LossWeights weights;
  double beta_b = 0;
  double grad_norm = 0;   // before clipping
};

std::string to_json_line(const StepRecord& r);

struct TrainOptions {
  std::filesystem::path out_dir;   // log and checkpoints; empty writes nothing
  std::optional<std::filesystem::path> resume;  // continue from this checkpoint
  std::int64_t max_steps = -1;     // stop after this many steps in this call (for tests)
  bool verbose = false;            // one summary line per epoch on stderr
  // Called before every optimizer step; tests use it to inject faults.
  std::function<void(std::int64_t step, Model&)> before_step;
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::vector<double> epoch_mean_loss;  // mean l_all per epoch run in this call
  std::optional<std::filesystem::path> last_checkpoint;
  Checkpoint final_state;
};

/// Raised when a step produces a non-finite loss. The last checkpoint
/// written (if any) is left untouched.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::optional<std::filesystem::path> last_good)
      : Error(what), last_good_checkpoint(std::move(last_good)) {}
  std::optional<std::filesystem::path> last_good_checkpoint;
};

/// Indices of the samples used for training under config.cv_folds/cv_fold.
std::vector<std::size_t> training_indices(std::size_t n, const TrainConfig& config);

/// Per-sample SLIC summaries, read from / written to config.patch_cache_dir when set.
std::vector<PatchSummary> compute_patch_summaries(const Dataset& dataset, const TrainConfig& config);

/// File names inside TrainOptions::out_dir.
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
std::string epoch_checkpoint_name(int epoch);

/// Mini-batch SGD over config.epochs epochs. Each epoch shuffles with a
/// generator seeded by (seed, epoch) and drops the last incomplete batch.
TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options = {});

}  // namespace ccg
