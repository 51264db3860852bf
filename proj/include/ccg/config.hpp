#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccg/backbone.hpp"
#include "ccg/losses.hpp"

namespace ccg {

/// Which relational losses are trained next to the base loss.
enum class Ablation { kBaseline, kIR, kIK, kKR, kIRIK, kIRIKKR };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation a);

struct LossWeights {
  double base = 0, ir = 0, ik = 0, kr = 0;
};

/// Every training and model hyperparameter. Defaults are the desk-scale
/// setup (tiny backbone, 64 px inputs, two classes); full_scale_config()
/// returns the 512 px ResNet-50 setup with the 14 NIH classes.
struct TrainConfig {
  // optimization
  int epochs = 9;
  double lr0 = 1e-3;
  double lr_decay_factor = 10.0;
  int lr_decay_every = 4;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  int batch_size = 2;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;

  // losses
  double beta_b = 4.0;
  double w_base = 0.25, w_ir = 0.25, w_ik = 0.25, w_kr = 0.25;
  Ablation ablation = Ablation::kIRIKKR;

  // model
  int num_classes = 2;
  std::string backbone = "tiny";
  int input_size = 64;
  std::vector<int> tiny_channels = {32, 64, 64, 128};
  std::vector<int> tiny_strides = {2, 2, 2, 1};
  int hidden_width = 64;
  std::array<double, 3> norm_mean = {0.5, 0.5, 0.5};
  std::array<double, 3> norm_std = {0.25, 0.25, 0.25};
  // Unit-norm feature maps; the head then applies a fixed gain sqrt(c*h*w)
  // so it sees unit-variance inputs.
  bool feature_norm = true;

  // structure
  int patch_count = 16;
  double slic_compactness = 10.0;
  int slic_iterations = 10;
  std::string patch_cache_dir;  // empty: in-memory only

  // evaluation
  int upsample_factor = 1;
  double threshold = 0.5;

  // cross-validation: with cv_folds > 0, samples with index % cv_folds == cv_fold are held out
  int cv_folds = 0;
  int cv_fold = 0;

  BackboneConfig backbone_config() const;

  /// Throws Error when a value is out of range.
  void validate() const;

  /// Sets one key from its text form; throws Error for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);

  /// Flat "key = value" text, one key per line, readable by parse_config.
  std::string to_text() const;
};

TrainConfig full_scale_config();

/// Parses "key = value" lines ('#' starts a comment) on top of `base`.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Configured weights with disabled losses zeroed and their weight split
/// equally among the enabled ones.
LossWeights effective_weights(const TrainConfig& config);

/// Raised when a loss component is NaN or infinite.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

/// Fills l_all = sum of effective weight times component. Throws
/// NonFiniteLoss if any enabled component (or the total) is not finite.
LossReport total_loss(LossReport components, const LossWeights& weights);

/// lr0 / factor^floor(epoch / every), epochs counted from 0.
double learning_rate(const TrainConfig& config, int epoch);

}  // namespace ccg
