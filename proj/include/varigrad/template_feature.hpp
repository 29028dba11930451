#pragma once

#include <Eigen/Dense>
#include <vector>

#include "varigrad/errors.hpp"
#include "varigrad/shape_graph.hpp"
#include "varigrad/varifold.hpp"

namespace varigrad {

template <typename Scalar>
using GradientFieldT = Points<Scalar>;  // one 3-vector per template vertex

using GradientField = GradientFieldT<double>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Fixed reference shape plus its cached symmetric-normalized adjacency
/// with self-loops, D^{-1/2} (A + I) D^{-1/2}.
template <typename Scalar>
struct TemplateT {
  ShapeGraphT<Scalar> shape;
  MatrixX<Scalar> adjacency_norm;
  VectorX<Scalar> closed_degree;  // row sums of A + I
};

using Template = TemplateT<double>;

template <typename Scalar>
TemplateT<Scalar> make_template(const ShapeGraphT<Scalar>& g) {
  validate(g);
  const Index n = g.vertices.rows();
  MatrixX<Scalar> a = MatrixX<Scalar>::Identity(n, n);
  for (Index e = 0; e < g.edges.rows(); ++e) {
    a(g.edges(e, 0), g.edges(e, 1)) = Scalar(1);
    a(g.edges(e, 1), g.edges(e, 0)) = Scalar(1);
  }
  TemplateT<Scalar> t;
  t.shape = g;
  t.closed_degree = a.rowwise().sum();
  const VectorX<Scalar> dinv_sqrt = t.closed_degree.array().rsqrt();
  t.adjacency_norm = dinv_sqrt.asDiagonal() * a * dinv_sqrt.asDiagonal();
  return t;
}

/// The raw feature: gradient of the squared varifold distance to `g`, taken
/// at the template's vertices. Its shape depends only on the template, never
/// on how `g` is sampled.
template <typename Scalar>
GradientFieldT<Scalar> raw_feature(const TemplateT<Scalar>& t, const ShapeGraphT<Scalar>& g,
                                   const KernelConfigT<Scalar>& k) {
  return grad_dist_sq(t.shape, g, k);
}

enum class Activation { Rectifier, Identity };

template <typename Scalar>
struct GraphConvLayerT {
  MatrixX<Scalar> weight;  // in_channels x out_channels
  MatrixX<Scalar> bias;    // 1 x out_channels
};

/// Stack of convolutions over template connectivity,
/// H' = act(adjacency_norm * H * W + b). Optional pooling averages each
/// vertex over its closed neighborhood and then averages channel pairs,
/// halving the channel count.
template <typename Scalar>
struct ConvStackT {
  std::vector<GraphConvLayerT<Scalar>> layers;
  Activation activation = Activation::Rectifier;
  bool edge_pool = false;
};

using ConvStack = ConvStackT<double>;

template <typename Scalar>
Index conv_output_channels(const ConvStackT<Scalar>& stack) {
  Index c = stack.layers.empty() ? 3 : stack.layers.back().weight.cols();
  if (stack.edge_pool) {
    if (c % 2 != 0) throw DimensionError("edge pooling needs an even channel count");
    c /= 2;
  }
  return c;
}

template <typename Scalar>
Index feature_dim(const TemplateT<Scalar>& t, const ConvStackT<Scalar>& stack) {
  return t.shape.vertices.rows() * conv_output_channels(stack);
}

namespace detail {

/// Flatten vertex-major, channel-minor: out(v*C + c) = H(v, c).
template <typename Scalar>
VectorX<Scalar> flatten_rows(const MatrixX<Scalar>& h) {
  VectorX<Scalar> out(h.rows() * h.cols());
  for (Index v = 0; v < h.rows(); ++v)
    for (Index c = 0; c < h.cols(); ++c) out(v * h.cols() + c) = h(v, c);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> unflatten_rows(const VectorX<Scalar>& vec, Index rows, Index cols) {
  MatrixX<Scalar> h(rows, cols);
  for (Index v = 0; v < rows; ++v)
    for (Index c = 0; c < cols; ++c) h(v, c) = vec(v * cols + c);
  return h;
}

/// Neighborhood average then channel-pair average. The row-normalized
/// operator D^{-1}(A+I) is recovered as D^{-1/2} * adjacency_norm * D^{1/2}.
template <typename Scalar>
MatrixX<Scalar> edge_pool(const TemplateT<Scalar>& t, const MatrixX<Scalar>& h) {
  if (h.cols() % 2 != 0) throw DimensionError("edge pooling needs an even channel count");
  const VectorX<Scalar> dsqrt = t.closed_degree.array().sqrt();
  const VectorX<Scalar> dinv_sqrt = t.closed_degree.array().rsqrt();
  const MatrixX<Scalar> spatial = dinv_sqrt.asDiagonal() * (t.adjacency_norm * (dsqrt.asDiagonal() * h));
  MatrixX<Scalar> out(h.rows(), h.cols() / 2);
  for (Index c = 0; c < out.cols(); ++c)
    out.col(c) = (spatial.col(2 * c) + spatial.col(2 * c + 1)) / Scalar(2);
  return out;
}

}  // namespace detail

template <typename Scalar>
VectorX<Scalar> conv_forward(const TemplateT<Scalar>& t, const GradientFieldT<Scalar>& field,
                             const ConvStackT<Scalar>& stack) {
  if (field.rows() != t.shape.vertices.rows())
    throw DimensionError("gradient field has " + std::to_string(field.rows()) + " rows, template has " +
                         std::to_string(t.shape.vertices.rows()) + " vertices");
  MatrixX<Scalar> h = field;
  for (const auto& layer : stack.layers) {
    if (layer.weight.rows() != h.cols())
      throw DimensionError("conv weight expects " + std::to_string(layer.weight.rows()) + " channels, got " +
                           std::to_string(h.cols()));
    h = ((t.adjacency_norm * h * layer.weight).rowwise() + layer.bias.row(0)).eval();
    if (stack.activation == Activation::Rectifier) h = h.cwiseMax(Scalar(0));
  }
  if (stack.edge_pool) h = detail::edge_pool(t, h);
  return detail::flatten_rows(h);
}

/// End-to-end feature: gradient field on the template, convolved over the
/// template graph, flattened to a fixed dimension.
template <typename Scalar>
VectorX<Scalar> featurize(const TemplateT<Scalar>& t, const ShapeGraphT<Scalar>& g,
                          const KernelConfigT<Scalar>& k, const ConvStackT<Scalar>& stack) {
  return conv_forward(t, raw_feature(t, g, k), stack);
}

}  // namespace varigrad
