#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "varigrad/errors.hpp"
#include "varigrad/rng.hpp"
#include "varigrad/shape_graph.hpp"

namespace varigrad::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

enum class Mode { Train, Eval };

/// Named view into one parameter block and its gradient. The order these are
/// listed in defines the serialized layout, so it must be stable.
/// Non-trainable blocks (running statistics) have no gradient.
struct ParamRef {
  std::string name;
  Mat* value;
  Mat* grad;  // nullptr when not trainable
  bool trainable;
};

inline void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params)
    if (p.trainable) p.grad->setZero();
}

/// uniform(-sqrt(1/fan_in), sqrt(1/fan_in)), drawn row-major for stability.
inline void uniform_init(Mat& w, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / double(fan_in));
  for (Index r = 0; r < w.rows(); ++r)
    for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
}

/// Fully connected layer, rows of X are samples: Y = X W^T + b^T.
struct Dense {
  Mat weight;  // out x in
  Mat bias;    // out x 1
  Mat dweight;
  Mat dbias;
  Mat x_cache;

  void init(Index out, Index in, Rng& rng) {
    weight.resize(out, in);
    uniform_init(weight, in, rng);
    bias = Mat::Zero(out, 1);
    dweight = Mat::Zero(out, in);
    dbias = Mat::Zero(out, 1);
  }

  Mat apply(const Mat& x) const {
    if (x.cols() != weight.cols())
      throw DimensionError("dense layer expects " + std::to_string(weight.cols()) + " inputs, got " +
                           std::to_string(x.cols()));
    return (x * weight.transpose()).rowwise() + bias.col(0).transpose();
  }

  Mat forward(const Mat& x) {
    x_cache = x;
    return apply(x);
  }

  Mat backward(const Mat& dy) {
    dweight += dy.transpose() * x_cache;
    dbias.col(0) += dy.colwise().sum().transpose();
    return dy * weight;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight, &dweight, true});
    out.push_back({prefix + ".bias", &bias, &dbias, true});
  }
};

struct Relu {
  Mat mask;

  static Mat apply(const Mat& x) { return x.cwiseMax(0.0); }

  Mat forward(const Mat& x) {
    mask = (x.array() > 0.0).cast<double>();
    return apply(x);
  }

  Mat backward(const Mat& dy) const { return dy.cwiseProduct(mask); }
};

/// Per-feature batch normalization. Train mode normalizes with batch
/// statistics (biased variance) and updates the running estimates; eval mode
/// is the fixed affine map gamma * (x - running_mean) / sqrt(running_var +
/// eps) + beta.
struct BatchNorm {
  Mat gamma, beta;                  // C x 1
  Mat running_mean, running_var;    // C x 1
  Mat dgamma, dbeta;
  double momentum = 0.1;
  double eps = 1e-5;

  Mat xhat_cache;
  RowVec invstd_cache;

  void init(Index channels) {
    gamma = Mat::Ones(channels, 1);
    beta = Mat::Zero(channels, 1);
    running_mean = Mat::Zero(channels, 1);
    running_var = Mat::Ones(channels, 1);
    dgamma = Mat::Zero(channels, 1);
    dbeta = Mat::Zero(channels, 1);
  }

  Mat apply(const Mat& x) const {
    const RowVec invstd = (running_var.col(0).transpose().array() + eps).rsqrt();
    Mat xhat = (x.rowwise() - running_mean.col(0).transpose()).array().rowwise() * invstd.array();
    return (xhat.array().rowwise() * gamma.col(0).transpose().array()).rowwise() +
           beta.col(0).transpose().array();
  }

  Mat forward(const Mat& x, Mode mode) {
    if (mode == Mode::Eval) return apply(x);
    const double b = double(x.rows());
    const RowVec mean = x.colwise().mean();
    const Mat centered = x.rowwise() - mean;
    const RowVec var = centered.array().square().colwise().sum() / b;
    invstd_cache = (var.array() + eps).rsqrt();
    xhat_cache = centered.array().rowwise() * invstd_cache.array();
    running_mean.col(0) = (1.0 - momentum) * running_mean.col(0) + momentum * mean.transpose();
    running_var.col(0) = (1.0 - momentum) * running_var.col(0) + momentum * var.transpose();
    return (xhat_cache.array().rowwise() * gamma.col(0).transpose().array()).rowwise() +
           beta.col(0).transpose().array();
  }

  Mat backward(const Mat& dy) {
    const double b = double(dy.rows());
    dgamma.col(0) += (dy.array() * xhat_cache.array()).colwise().sum().matrix().transpose();
    dbeta.col(0) += dy.colwise().sum().transpose();
    const Mat dxhat = dy.array().rowwise() * gamma.col(0).transpose().array();
    const RowVec s1 = dxhat.colwise().sum();
    const RowVec s2 = (dxhat.array() * xhat_cache.array()).colwise().sum();
    Mat dx = b * dxhat;
    dx.rowwise() -= s1;
    dx -= (xhat_cache.array().rowwise() * s2.array()).matrix();
    dx.array().rowwise() *= (invstd_cache.array() / b);
    return dx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", &gamma, &dgamma, true});
    out.push_back({prefix + ".beta", &beta, &dbeta, true});
    // Running statistics are serialized state, not optimized.
    out.push_back({prefix + ".running_mean", &running_mean, nullptr, false});
    out.push_back({prefix + ".running_var", &running_var, nullptr, false});
  }
};

inline Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double zmax = logits.row(r).maxCoeff();
    const RowVec e = (logits.row(r).array() - zmax).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

struct LossGrad {
  double loss = 0;
  Mat dlogits;
};

/// Mean over the batch of -log softmax(logits)[label].
inline LossGrad softmax_cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  const Index b = logits.rows();
  const Index c = logits.cols();
  if (static_cast<Index>(labels.size()) != b) throw DimensionError("one label per logits row required");
  LossGrad out;
  out.dlogits = softmax_rows(logits);
  double total = 0;
  for (Index r = 0; r < b; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= c)
      throw IndexOutOfRangeError("label " + std::to_string(label) + " outside [0," + std::to_string(c) + ")");
    const double zmax = logits.row(r).maxCoeff();
    const double lse = std::log((logits.row(r).array() - zmax).exp().sum()) + zmax;
    total += lse - logits(r, label);
    out.dlogits(r, label) -= 1.0;
  }
  out.loss = total / double(b);
  out.dlogits /= double(b);
  return out;
}

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
/// Moment buffers follow the trainable blocks in params() order.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;
  std::vector<Mat> m, v;

  void reset(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    step_count = 0;
    for (const auto& p : params) {
      if (!p.trainable) continue;
      m.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
      v.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    }
  }

  void step(const std::vector<ParamRef>& params) {
    ++step_count;
    const double c1 = 1.0 - std::pow(beta1, double(step_count));
    const double c2 = 1.0 - std::pow(beta2, double(step_count));
    std::size_t k = 0;
    for (const auto& p : params) {
      if (!p.trainable) continue;
      Mat& mk = m[k];
      Mat& vk = v[k];
      mk = beta1 * mk + (1.0 - beta1) * (*p.grad);
      vk = beta2 * vk + (1.0 - beta2) * p.grad->array().square().matrix();
      p.value->array() -= lr * (mk.array() / c1) / ((vk.array() / c2).sqrt() + eps);
      ++k;
    }
  }
};

/// Training hyperparameters shared by both downstream tasks.
struct TrainConfig {
  int batch_size = 10;
  int epochs = 50;
  double learning_rate = 1e-3;
  std::uint64_t rng_seed = 0;
  int latent_dim = 64;
  int class_count = 0;
};

}  // namespace varigrad::nn
