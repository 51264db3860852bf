#include "ccg/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace ccg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// [C, H, W] -> [C*k*k, OH*OW]
RowMat im2col(const Tensor& x, int kernel, int stride, int padding, int oh, int ow) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(c) * kernel * kernel, static_cast<Eigen::Index>(oh) * ow);
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ch) * kernel + ky) * kernel + kx;
        double* dst = cols.row(row).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            dst[oy * ow + ox] = x.at(ch, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMat& cols, Tensor& dx, int kernel, int stride, int padding, int oh, int ow) {
  const int c = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ch) * kernel + ky) * kernel + kx;
        const double* src = cols.row(row).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            dx.at(ch, iy, ix) += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(int kernel, int stride, int padding) { return kernel == 1 && stride == 1 && padding == 0; }

}  // namespace

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding,
               bool bias, std::mt19937_64& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_(name + ".weight", Tensor({out_channels, in_channels, kernel, kernel}), true),
      bias_(name + ".bias", Tensor({bias ? out_channels : 0}), false) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
    fail("conv ", name, ": bad geometry");
  }
  // He initialization for ReLU networks
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in_channels * kernel * kernel)));
  for (double& v : weight_.value.data) v = normal(rng);
}

Tensor Conv2d::forward(const Tensor& x, LayerCache* cache) const {
  if (x.rank() != 3 || x.dim(0) != in_) {
    fail(weight_.name, ": expected ", in_, " input channels, got ", shape_string(x.shape));
  }
  const int oh = conv_out_size(x.dim(1), kernel_, stride_, padding_);
  const int ow = conv_out_size(x.dim(2), kernel_, stride_, padding_);
  if (oh <= 0 || ow <= 0) fail(weight_.name, ": input too small ", shape_string(x.shape));

  Tensor y({out_, oh, ow});
  ConstMapMat w(weight_.value.data.data(), out_, static_cast<Eigen::Index>(in_) * kernel_ * kernel_);
  MapMat out(y.data.data(), out_, static_cast<Eigen::Index>(oh) * ow);
  if (is_pointwise(kernel_, stride_, padding_)) {
    out.noalias() = w * ConstMapMat(x.data.data(), in_, static_cast<Eigen::Index>(oh) * ow);
  } else {
    out.noalias() = w * im2col(x, kernel_, stride_, padding_, oh, ow);
  }
  if (has_bias_) {
    for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value.data[o];
  }
  if (cache) cache->input = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, const LayerCache& cache) {
  const Tensor& x = cache.input;
  const int oh = dy.dim(1), ow = dy.dim(2);
  const Eigen::Index patch = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
  ConstMapMat g(dy.data.data(), out_, static_cast<Eigen::Index>(oh) * ow);
  ConstMapMat w(weight_.value.data.data(), out_, patch);
  MapMat dw(weight_.grad.data.data(), out_, patch);

  if (has_bias_) {
    for (int o = 0; o < out_; ++o) bias_.grad.data[o] += g.row(o).sum();
  }
  Tensor dx(x.shape);
  if (is_pointwise(kernel_, stride_, padding_)) {
    ConstMapMat xm(x.data.data(), in_, static_cast<Eigen::Index>(oh) * ow);
    dw.noalias() += g * xm.transpose();
    MapMat(dx.data.data(), in_, static_cast<Eigen::Index>(oh) * ow).noalias() = w.transpose() * g;
  } else {
    const RowMat cols = im2col(x, kernel_, stride_, padding_, oh, ow);
    dw.noalias() += g * cols.transpose();
    const RowMat dcols = w.transpose() * g;
    col2im_add(dcols, dx, kernel_, stride_, padding_, oh, ow);
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

Tensor ReLU::forward(const Tensor& x, LayerCache* cache) const {
  Tensor y = x;
  for (double& v : y.data) v = v > 0 ? v : 0.0;
  if (cache) cache->input = x;
  return y;
}

Tensor ReLU::backward(const Tensor& dy, const LayerCache& cache) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(cache.input.data[i] > 0)) dx.data[i] = 0.0;
  }
  return dx;
}

Tensor MapNormalize::forward(const Tensor& x, LayerCache* cache) const {
  double mean = 0;
  for (double v : x.data) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0;
  for (double v : x.data) ss += (v - mean) * (v - mean);
  const double inv = 1.0 / std::sqrt(ss + kEps);
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = (x.data[i] - mean) * inv;
  if (cache) {
    cache->input = y;  // backward needs the normalized output
    cache->scalar = inv;
  }
  return y;
}

// y = r / s with r = x - mean(x), s = sqrt(|r|^2 + eps):
// dx = (dy - mean(dy) - y * <y, dy>) / s
Tensor MapNormalize::backward(const Tensor& dy, const LayerCache& cache) {
  const Tensor& y = cache.input;
  double mean_dy = 0, dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mean_dy += dy.data[i];
    dot += dy.data[i] * y.data[i];
  }
  mean_dy /= static_cast<double>(y.size());
  Tensor dx(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] = cache.scalar * (dy.data[i] - mean_dy - y.data[i] * dot);
  return dx;
}

Tensor MaxPool2d::forward(const Tensor& x, LayerCache* cache) const {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = conv_out_size(h, kernel_, stride_, padding_);
  const int ow = conv_out_size(w, kernel_, stride_, padding_);
  Tensor y({c, oh, ow});
  std::vector<int> index(y.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = -1;
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = x.at(ch, iy, ix);
            if (v > best) {
              best = v;
              arg = (ch * h + iy) * w + ix;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
        y.data[o] = best;
        index[o] = arg;
      }
    }
  }
  if (cache) {
    cache->input = Tensor(x.shape);  // shape only
    cache->index = std::move(index);
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy, const LayerCache& cache) {
  Tensor dx(cache.input.shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[cache.index[o]] += dy.data[o];
  return dx;
}

ChannelAffine::ChannelAffine(const std::string& name, int channels)
    : scale_(name + ".scale", Tensor({channels}, 1.0), false), shift_(name + ".shift", Tensor({channels}), false) {}

Tensor ChannelAffine::forward(const Tensor& x, LayerCache* cache) const {
  if (x.dim(0) != scale_.value.dim(0)) fail(scale_.name, ": channel mismatch ", shape_string(x.shape));
  Tensor y = x;
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  for (int c = 0; c < x.dim(0); ++c) {
    const double a = scale_.value.data[c], b = shift_.value.data[c];
    for (std::size_t i = 0; i < plane; ++i) y.data[c * plane + i] = a * x.data[c * plane + i] + b;
  }
  if (cache) cache->input = x;
  return y;
}

Tensor ChannelAffine::backward(const Tensor& dy, const LayerCache& cache) {
  const Tensor& x = cache.input;
  Tensor dx(x.shape);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  for (int c = 0; c < x.dim(0); ++c) {
    const double a = scale_.value.data[c];
    double ds = 0, db = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      ds += dy.data[k] * x.data[k];
      db += dy.data[k];
      dx.data[k] = a * dy.data[k];
    }
    scale_.grad.data[c] += ds;
    shift_.grad.data[c] += db;
  }
  return dx;
}

void ChannelAffine::collect_params(std::vector<Param*>& out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
}

Tensor Sequential::forward(const Tensor& x, LayerCache* cache) const {
  if (cache) cache->children.assign(layers_.size(), {});
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, cache ? &cache->children[i] : nullptr);
  }
  return cur;
}

Tensor Sequential::backward(const Tensor& dy, const LayerCache& cache) {
  Tensor grad = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) grad = layers_[i]->backward(grad, cache.children[i]);
  return grad;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

Bottleneck::Bottleneck(const std::string& name, int in_channels, int width, int stride, std::mt19937_64& rng) {
  const int out_channels = width * kExpansion;
  main_.add(std::make_unique<Conv2d>(name + ".conv1", in_channels, width, 1, 1, 0, false, rng));
  main_.add(std::make_unique<ChannelAffine>(name + ".bn1", width));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv2", width, width, 3, stride, 1, false, rng));
  main_.add(std::make_unique<ChannelAffine>(name + ".bn2", width));
  main_.add(std::make_unique<ReLU>());
  main_.add(std::make_unique<Conv2d>(name + ".conv3", width, out_channels, 1, 1, 0, false, rng));
  main_.add(std::make_unique<ChannelAffine>(name + ".bn3", out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->add(std::make_unique<Conv2d>(name + ".downsample.0", in_channels, out_channels, 1, stride, 0, false, rng));
    shortcut_->add(std::make_unique<ChannelAffine>(name + ".downsample.1", out_channels));
  }
}

Tensor Bottleneck::forward(const Tensor& x, LayerCache* cache) const {
  if (cache) cache->children.assign(3, {});
  Tensor y = main_.forward(x, cache ? &cache->children[0] : nullptr);
  const Tensor skip = shortcut_ ? shortcut_->forward(x, cache ? &cache->children[1] : nullptr) : x;
  require_same_shape(y, skip, "bottleneck residual");
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += skip.data[i];
  return relu_.forward(y, cache ? &cache->children[2] : nullptr);
}

Tensor Bottleneck::backward(const Tensor& dy, const LayerCache& cache) {
  const Tensor d_sum = relu_.backward(dy, cache.children[2]);
  Tensor dx = main_.backward(d_sum, cache.children[0]);
  const Tensor d_skip = shortcut_ ? shortcut_->backward(d_sum, cache.children[1]) : d_sum;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += d_skip.data[i];
  return dx;
}

void Bottleneck::collect_params(std::vector<Param*>& out) {
  main_.collect_params(out);
  if (shortcut_) shortcut_->collect_params(out);
}

}  // namespace ccg
