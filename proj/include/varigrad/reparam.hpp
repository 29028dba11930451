#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "varigrad/rng.hpp"
#include "varigrad/shape_graph.hpp"

namespace varigrad {

/// A discrete re-description of a shape graph that preserves the underlying
/// geometry: relabeled vertices, reversed edges, resampled chains.
struct ReparamSpec {
  bool permute_vertices = false;
  bool flip_edges = false;
  double resample_factor = 1.0;  // in [0.5, 2.0]; 1.0 keeps the sampling as-is
  std::uint64_t rng_seed = 0;
};

namespace detail {

// Maximal run of degree-2 vertices between anchors (vertices of degree != 2),
// or a full cycle. `verts` is the walk order; cycles do not repeat the first
// vertex at the end.
struct Chain {
  std::vector<Index> verts;
  bool closed = false;
};

template <typename Scalar>
std::vector<Chain> decompose_chains(const ShapeGraphT<Scalar>& g) {
  const Index nv = g.vertices.rows();
  const Index ne = g.edges.rows();
  std::vector<std::vector<std::pair<Index, Index>>> adj(static_cast<std::size_t>(nv));  // (neighbor, edge)
  for (Index e = 0; e < ne; ++e) {
    adj[static_cast<std::size_t>(g.edges(e, 0))].emplace_back(g.edges(e, 1), e);
    adj[static_cast<std::size_t>(g.edges(e, 1))].emplace_back(g.edges(e, 0), e);
  }
  const std::vector<Index> deg = vertex_degrees(g);
  std::vector<bool> used(static_cast<std::size_t>(ne), false);
  std::vector<Chain> chains;

  auto step = [&](Index at, Index via_edge) {
    const auto& nbrs = adj[static_cast<std::size_t>(at)];
    return nbrs[0].second == via_edge ? nbrs[1] : nbrs[0];
  };

  // Open chains: walk from every anchor along each unused incident edge.
  for (Index v = 0; v < nv; ++v) {
    if (deg[static_cast<std::size_t>(v)] == 2) continue;
    for (const auto& [nbr, e0] : adj[static_cast<std::size_t>(v)]) {
      if (used[static_cast<std::size_t>(e0)]) continue;
      Chain c;
      c.verts.push_back(v);
      Index cur = nbr;
      Index via = e0;
      used[static_cast<std::size_t>(e0)] = true;
      while (deg[static_cast<std::size_t>(cur)] == 2) {
        c.verts.push_back(cur);
        const auto [nxt, e] = step(cur, via);
        used[static_cast<std::size_t>(e)] = true;
        cur = nxt;
        via = e;
      }
      c.verts.push_back(cur);
      chains.push_back(std::move(c));
    }
  }

  // Whatever is left is 2-regular: pure cycles.
  for (Index e = 0; e < ne; ++e) {
    if (used[static_cast<std::size_t>(e)]) continue;
    Chain c;
    c.closed = true;
    const Index start = g.edges(e, 0);
    c.verts.push_back(start);
    used[static_cast<std::size_t>(e)] = true;
    Index cur = g.edges(e, 1);
    Index via = e;
    while (cur != start) {
      c.verts.push_back(cur);
      const auto [nxt, ee] = step(cur, via);
      used[static_cast<std::size_t>(ee)] = true;
      cur = nxt;
      via = ee;
    }
    chains.push_back(std::move(c));
  }
  return chains;
}

// Piecewise-linear point at arc position t along pts (open polyline).
template <typename Scalar>
Eigen::Matrix<Scalar, 1, 3> point_at_arc(const std::vector<Eigen::Matrix<Scalar, 1, 3>>& pts,
                                         const std::vector<Scalar>& cum, Scalar t) {
  const std::size_t m = pts.size();
  if (t <= 0) return pts.front();
  if (t >= cum.back()) return pts.back();
  std::size_t lo = 0, hi = m - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (cum[mid] <= t)
      lo = mid;
    else
      hi = mid;
  }
  const Scalar seg = cum[hi] - cum[lo];
  const Scalar alpha = seg > 0 ? (t - cum[lo]) / seg : Scalar(0);
  return pts[lo] + alpha * (pts[hi] - pts[lo]);
}

}  // namespace detail

/// Re-describes `g` without moving its underlying polylines. Resampling
/// replaces each maximal degree-<=2 chain by an arc-length-uniform sampling
/// with round(factor * old vertex count) vertices; anchors (junctions and
/// endpoints) are kept exactly. Vertex permutation relabels indices and
/// shuffles the edge-list order; flipping reverses every stored edge.
template <typename Scalar>
ShapeGraphT<Scalar> apply_reparam(const ShapeGraphT<Scalar>& g, const ReparamSpec& spec) {
  if (!(spec.resample_factor >= 0.5 && spec.resample_factor <= 2.0))
    throw ConfigError("resample_factor must lie in [0.5, 2.0]");
  validate(g);

  using Row = Eigen::Matrix<Scalar, 1, 3>;
  ShapeGraphT<Scalar> out;
  out.label = g.label;

  if (spec.resample_factor == 1.0) {
    out.vertices = g.vertices;
    out.edges = g.edges;
  } else {
    const auto chains = detail::decompose_chains(g);
    const std::vector<Index> deg = vertex_degrees(g);

    std::vector<Row> verts;
    std::vector<std::pair<Index, Index>> edges;
    std::vector<Index> anchor_id(static_cast<std::size_t>(g.vertices.rows()), -1);
    for (Index v = 0; v < g.vertices.rows(); ++v) {
      if (deg[static_cast<std::size_t>(v)] != 2) {
        anchor_id[static_cast<std::size_t>(v)] = static_cast<Index>(verts.size());
        verts.push_back(g.vertices.row(v));
      }
    }

    for (const auto& chain : chains) {
      std::vector<Row> pts;
      pts.reserve(chain.verts.size() + 1);
      for (Index v : chain.verts) pts.push_back(g.vertices.row(v));
      if (chain.closed) pts.push_back(pts.front());
      std::vector<Scalar> cum(pts.size(), Scalar(0));
      for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
      const Scalar len = cum.back();

      const auto old_count = static_cast<Index>(chain.verts.size());
      if (chain.closed) {
        Index n_new = std::max<Index>(3, static_cast<Index>(std::llround(spec.resample_factor * double(old_count))));
        const Index base = static_cast<Index>(verts.size());
        for (Index i = 0; i < n_new; ++i)
          verts.push_back(detail::point_at_arc(pts, cum, len * Scalar(i) / Scalar(n_new)));
        for (Index i = 0; i < n_new; ++i) edges.emplace_back(base + i, base + (i + 1) % n_new);
      } else {
        const bool loop = chain.verts.front() == chain.verts.back();
        Index n_new = std::max<Index>(2, static_cast<Index>(std::llround(spec.resample_factor * double(old_count))));
        if (loop) n_new = std::max<Index>(4, n_new);
        const Index a = anchor_id[static_cast<std::size_t>(chain.verts.front())];
        const Index b = anchor_id[static_cast<std::size_t>(chain.verts.back())];
        Index prev = a;
        for (Index i = 1; i + 1 < n_new; ++i) {
          const Index id = static_cast<Index>(verts.size());
          verts.push_back(detail::point_at_arc(pts, cum, len * Scalar(i) / Scalar(n_new - 1)));
          edges.emplace_back(prev, id);
          prev = id;
        }
        edges.emplace_back(prev, b);
      }
    }

    out.vertices.resize(static_cast<Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) out.vertices.row(static_cast<Index>(i)) = verts[i];
    out.edges.resize(static_cast<Index>(edges.size()), 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      out.edges(static_cast<Index>(i), 0) = edges[i].first;
      out.edges(static_cast<Index>(i), 1) = edges[i].second;
    }
  }

  if (spec.permute_vertices) {
    Rng rng(spec.rng_seed);
    const Index nv = out.vertices.rows();
    const auto perm = rng.permutation(nv);  // old index i -> new index perm[i]
    Points<Scalar> pv(nv, 3);
    for (Index i = 0; i < nv; ++i) pv.row(perm[static_cast<std::size_t>(i)]) = out.vertices.row(i);
    EdgeList pe(out.edges.rows(), 2);
    for (Index e = 0; e < out.edges.rows(); ++e) {
      pe(e, 0) = perm[static_cast<std::size_t>(out.edges(e, 0))];
      pe(e, 1) = perm[static_cast<std::size_t>(out.edges(e, 1))];
    }
    const auto eord = rng.permutation(out.edges.rows());
    EdgeList se(out.edges.rows(), 2);
    for (Index e = 0; e < out.edges.rows(); ++e) se.row(e) = pe.row(eord[static_cast<std::size_t>(e)]);
    out.vertices = std::move(pv);
    out.edges = std::move(se);
  }

  if (spec.flip_edges) {
    for (Index e = 0; e < out.edges.rows(); ++e) std::swap(out.edges(e, 0), out.edges(e, 1));
  }

  validate(out);
  return out;
}

}  // namespace varigrad
