#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "varigrad/errors.hpp"

namespace varigrad {

using Index = Eigen::Index;

template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One row per edge, columns = (tail, head) vertex indices. Directed as
/// stored, undirected in meaning.
using EdgeList = Eigen::Matrix<Index, Eigen::Dynamic, 2>;

/// Vertices in 3-space joined by straight edges, possibly branching or
/// disconnected, with an optional class id.
template <typename Scalar>
struct ShapeGraphT {
  Points<Scalar> vertices;
  EdgeList edges;
  std::optional<int> label;
};

using ShapeGraph = ShapeGraphT<double>;

/// Diagonal of the axis-aligned bounding box of the vertices.
template <typename Scalar>
Scalar bounding_diameter(const ShapeGraphT<Scalar>& g) {
  if (g.vertices.rows() == 0) return Scalar(0);
  return (g.vertices.colwise().maxCoeff() - g.vertices.colwise().minCoeff()).norm();
}

/// Shortest admissible edge length: 1e-9 of the bounding diameter with an
/// absolute floor so the threshold never collapses to zero.
template <typename Scalar>
Scalar default_eps_len(const ShapeGraphT<Scalar>& g) {
  return std::max(Scalar(1e-300), Scalar(1e-9) * bounding_diameter(g));
}

template <typename Scalar>
std::vector<Index> vertex_degrees(const ShapeGraphT<Scalar>& g) {
  std::vector<Index> deg(static_cast<std::size_t>(g.vertices.rows()), 0);
  for (Index e = 0; e < g.edges.rows(); ++e) {
    ++deg[static_cast<std::size_t>(g.edges(e, 0))];
    ++deg[static_cast<std::size_t>(g.edges(e, 1))];
  }
  return deg;
}

/// Checks every structural invariant and returns the input untouched.
/// Throws EmptyShapeError, IndexOutOfRangeError, DuplicateEdgeError or
/// DegenerateEdgeError.
template <typename Scalar>
const ShapeGraphT<Scalar>& validate(const ShapeGraphT<Scalar>& g, Scalar eps_len) {
  const Index nv = g.vertices.rows();
  const Index ne = g.edges.rows();
  if (nv < 2) throw EmptyShapeError("shape graph needs at least 2 vertices, has " + std::to_string(nv));
  if (ne < 1) throw EmptyShapeError("shape graph needs at least 1 edge");

  std::vector<std::pair<Index, Index>> seen;
  seen.reserve(static_cast<std::size_t>(ne));
  for (Index e = 0; e < ne; ++e) {
    const Index i = g.edges(e, 0);
    const Index j = g.edges(e, 1);
    if (i < 0 || i >= nv || j < 0 || j >= nv)
      throw IndexOutOfRangeError("edge " + std::to_string(e) + " references vertex out of [0," +
                                 std::to_string(nv) + ")");
    if (i == j) throw IndexOutOfRangeError("edge " + std::to_string(e) + " is a self-loop at vertex " + std::to_string(i));
    seen.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
    throw DuplicateEdgeError("duplicate undirected edge in shape graph");

  for (Index e = 0; e < ne; ++e) {
    const Scalar len = (g.vertices.row(g.edges(e, 1)) - g.vertices.row(g.edges(e, 0))).norm();
    if (!(len > eps_len))
      throw DegenerateEdgeError("edge " + std::to_string(e) + " has length " + std::to_string(double(len)) +
                                " <= eps " + std::to_string(double(eps_len)));
  }
  return g;
}

template <typename Scalar>
const ShapeGraphT<Scalar>& validate(const ShapeGraphT<Scalar>& g) {
  return validate(g, default_eps_len(g));
}

/// Connects consecutive points and closes the loop. Needs >= 3 points.
template <typename Derived>
ShapeGraphT<typename Derived::Scalar> closed_polyline(const Eigen::MatrixBase<Derived>& points,
                                                      std::optional<int> label = std::nullopt) {
  using Scalar = typename Derived::Scalar;
  const Index n = points.rows();
  if (n < 3) throw TooFewPointsError("closed polyline needs at least 3 points, got " + std::to_string(n));
  ShapeGraphT<Scalar> g;
  g.vertices = points;
  g.edges.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    g.edges(i, 0) = i;
    g.edges(i, 1) = (i + 1) % n;
  }
  g.label = label;
  validate(g);
  return g;
}

template <typename Scalar>
Scalar total_edge_length(const ShapeGraphT<Scalar>& g) {
  Scalar total = 0;
  for (Index e = 0; e < g.edges.rows(); ++e)
    total += (g.vertices.row(g.edges(e, 1)) - g.vertices.row(g.edges(e, 0))).norm();
  return total;
}

}  // namespace varigrad
