#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccg/tensor.hpp"

namespace ccg {

struct SgdOptions {
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  // round weights and momentum to float after each update so the f32
  // checkpoint holds the exact training state
  bool f32_state = true;
};

/// SGD with (Nesterov) momentum. Weight decay is added to the gradient of
/// params flagged with `decay` only. Momentum buffers are keyed by name.
class Sgd {
 public:
  explicit Sgd(SgdOptions options) : options_(options) {}

  void step(const std::vector<Param*>& params, double lr);

  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

 private:
  SgdOptions options_;
  std::map<std::string, Tensor> buffers_;
};

/// Rounds every element to the nearest float.
void round_to_f32(Tensor& t);

double global_grad_norm(const std::vector<Param*>& params);

/// Scales all grads so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<Param*>& params, double max_norm);

}  // namespace ccg
