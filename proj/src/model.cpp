#include "ccg/model.hpp"

#include "ccg/optim.hpp"

#include <cmath>

namespace ccg {
namespace {

void scale_grads(std::vector<Param*> params, double s) {
  for (Param* p : params) {
    for (double& g : p->grad.data) g *= s;
  }
}

void add_scaled(Tensor& into, const Tensor& g, double s) {
  require_same_shape(into, g, "gradient accumulation");
  for (std::size_t i = 0; i < into.size(); ++i) into.data[i] += s * g.data[i];
}

double head_gain(const TrainConfig& config, const Backbone& backbone) {
  if (!config.feature_norm) return 1.0;
  const double g = config.input_size / backbone.stride();
  return std::sqrt(backbone.out_channels() * g * g);
}

}  // namespace

Model::Model(const TrainConfig& config)
    : config_((config.validate(), config)),
      init_rng_(config.seed),
      backbone_(config.backbone_config(), init_rng_),
      head_(backbone_.out_channels(), config.hidden_width, config.num_classes, init_rng_, head_gain(config, backbone_)),
      relation_graph_(init_relation_graph(config.batch_size)),
      patch_aggregator_("structure.graph_fc", config.patch_count, 64.0),
      reasoning_(backbone_.out_channels(), config.patch_count) {
  for (Param* p : params()) round_to_f32(p->value);
}

GridSize Model::train_grid() const {
  const int g = config_.input_size / backbone_.stride();
  return {g, g};
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  backbone_.collect_params(out);
  head_.collect_params(out);
  out.push_back(&relation_graph_.weights);
  patch_aggregator_.collect_params(out);
  reasoning_.collect_params(out);
  return out;
}

void Model::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

ClassProbMap Model::predict(const Tensor& image, int upsample_factor) const {
  return head_.forward(upsample_features(backbone_.forward(image, nullptr), upsample_factor), nullptr);
}

LossReport Model::step(const Batch& batch, const LossWeights& weights, bool accumulate_grads) {
  const int n = static_cast<int>(batch.size());
  if (n != relation_graph_.n()) fail("batch of ", n, " does not match the configured batch size ", relation_graph_.n());
  if (batch.patches.size() != batch.samples.size()) fail("batch: patch summaries missing");

  const GridSize image_size{config_.input_size, config_.input_size};
  const GridSize grid = train_grid();

  std::vector<LayerCache> backbone_cache(static_cast<std::size_t>(n));
  std::vector<HeadCache> head_cache(static_cast<std::size_t>(n));
  std::vector<FeatureMap> features;
  std::vector<ClassProbMap> probs;
  std::vector<GridLabelMap> grid_labels;
  std::vector<std::vector<int>> image_labels, has_box;
  for (int i = 0; i < n; ++i) {
    const ImageSample& s = *batch.samples[i];
    if (s.num_classes() != config_.num_classes) fail("sample ", s.id, " has ", s.num_classes(), " classes, model has ", config_.num_classes);
    features.push_back(backbone_.forward(s.pixels, accumulate_grads ? &backbone_cache[i] : nullptr));
    probs.push_back(head_.forward(features.back(), accumulate_grads ? &head_cache[i] : nullptr));
    grid_labels.push_back(make_grid_labels(s, image_size, grid));
    image_labels.push_back(s.image_labels);
    has_box.push_back(s.has_box);
  }

  LossReport report;
  std::vector<Tensor> d_probs;
  report.l_base = base_loss(probs, grid_labels, image_labels, has_box, config_.beta_b,
                            accumulate_grads ? &d_probs : nullptr);

  ContrastGrad ir_grad, ik_grad;
  KnowledgeReasoning::Grad kr_grad;
  std::vector<std::vector<PatchGraph>> structure_graphs;
  Tensor ik_raw;
  if (weights.ir > 0) {
    report.l_ir = inter_image_loss(relation_graph_, features, accumulate_grads ? &ir_grad : nullptr);
  }
  if (weights.ik > 0) {
    structure_graphs.assign(static_cast<std::size_t>(n), std::vector<PatchGraph>(static_cast<std::size_t>(n)));
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) structure_graphs[u][v] = patch_graph(batch.patches[u]->hashes, batch.patches[v]->hashes);
    }
    ik_raw = patch_aggregator_.pair_weights(structure_graphs, false);
    report.l_ik = intra_image_loss(ik_raw, features, accumulate_grads ? &ik_grad : nullptr);
  }
  if (weights.kr > 0) {
    if (accumulate_grads) {
      // KR is the only contributor to its parameters; weight them afterwards
      std::vector<Param*> kr_params;
      reasoning_.collect_params(kr_params);
      std::vector<Tensor> saved;
      for (Param* p : kr_params) {
        saved.push_back(p->grad);
        p->zero_grad();
      }
      report.l_kr = reasoning_.loss(features, &kr_grad);
      scale_grads(kr_params, weights.kr);
      for (std::size_t i = 0; i < kr_params.size(); ++i) add_scaled(kr_params[i]->grad, saved[i], 1.0);
    } else {
      report.l_kr = reasoning_.loss(features, nullptr);
    }
  }

  report = total_loss(report, weights);
  if (!accumulate_grads) return report;

  if (weights.ir > 0) add_scaled(relation_graph_.weights.grad, ir_grad.d_weights, weights.ir);
  if (weights.ik > 0) {
    Tensor d_raw = ik_grad.d_weights;
    for (double& v : d_raw.data) v *= weights.ik;
    patch_aggregator_.backward_pairs(structure_graphs, d_raw, false);
  }
  for (int i = 0; i < n; ++i) {
    Tensor dp = d_probs[i];
    for (double& v : dp.data) v *= weights.base;
    Tensor d_features = head_.backward(dp, head_cache[i]);
    if (weights.ir > 0) add_scaled(d_features, ir_grad.d_features[i], weights.ir);
    if (weights.ik > 0) add_scaled(d_features, ik_grad.d_features[i], weights.ik);
    if (weights.kr > 0) add_scaled(d_features, kr_grad.d_features[i], weights.kr);
    backbone_.backward(d_features, backbone_cache[i]);
  }
  return report;
}

}  // namespace ccg
