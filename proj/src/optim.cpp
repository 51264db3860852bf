#include "ccg/optim.hpp"

#include <cmath>

namespace ccg {

void Sgd::step(const std::vector<Param*>& params, double lr) {
  for (Param* p : params) {
    require_same_shape(p->value, p->grad, p->name.c_str());
    std::vector<double> d(p->grad.data);
    if (p->decay && options_.weight_decay != 0) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += options_.weight_decay * p->value.data[i];
    }
    if (options_.momentum != 0) {
      auto [it, fresh] = buffers_.try_emplace(p->name, p->value.shape);
      Tensor& buf = it->second;
      if (fresh) {
        buf.data = d;
      } else {
        require_same_shape(buf, p->value, "momentum buffer");
        for (std::size_t i = 0; i < d.size(); ++i) buf.data[i] = options_.momentum * buf.data[i] + d[i];
      }
      if (options_.nesterov) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += options_.momentum * buf.data[i];
      } else {
        d = buf.data;
      }
    }
    for (std::size_t i = 0; i < d.size(); ++i) p->value.data[i] -= lr * d[i];
    if (options_.f32_state) {
      round_to_f32(p->value);
      if (auto it = buffers_.find(p->name); it != buffers_.end()) round_to_f32(it->second);
    }
  }
}

void round_to_f32(Tensor& t) {
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

double global_grad_norm(const std::vector<Param*>& params) {
  double s = 0;
  for (const Param* p : params) {
    for (double g : p->grad.data) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (Param* p : params) {
      for (double& g : p->grad.data) g *= s;
    }
  }
  return norm;
}

}  // namespace ccg
