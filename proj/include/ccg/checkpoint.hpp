#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "ccg/model.hpp"
#include "ccg/optim.hpp"

namespace ccg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume: named arrays (model params and optimizer
/// buffers under "optim/<param>"), the config text and the position.
struct Checkpoint {
  std::string config_text;
  int epoch = 0;           // epochs completed
  std::int64_t step = 0;   // optimizer steps completed
  std::map<std::string, Tensor> arrays;
};

/// Written to a temporary file and renamed, so an existing checkpoint at
/// `path` is replaced only by a complete one.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture_checkpoint(Model& model, const Sgd* optimizer, int epoch, std::int64_t step);

/// Copies arrays into the model (and optimizer). Missing arrays or shape
/// mismatches throw Error.
void restore_checkpoint(const Checkpoint& ckpt, Model& model, Sgd* optimizer);

/// A model built from the checkpoint's config with its weights restored.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ccg
