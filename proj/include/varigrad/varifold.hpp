#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "varigrad/errors.hpp"
#include "varigrad/shape_graph.hpp"

namespace varigrad {

/// Measure-style representation of a shape graph: one weighted atom per
/// edge, living in position x direction space. Atom i comes from edge i.
template <typename Scalar>
struct DiscreteVarifoldT {
  Points<Scalar> centroids;
  Points<Scalar> tangents;  // unit rows; all-zero row for a mass-clamped atom
  VectorX<Scalar> masses;   // edge lengths, strictly positive

  Index size() const { return centroids.rows(); }
};

using DiscreteVarifold = DiscreteVarifoldT<double>;

/// Spatial kernel coefficient `a` in exp(-a * |x1 - x2|^2), units 1/length^2.
template <typename Scalar>
struct KernelConfigT {
  Scalar a = Scalar(1);
};

using KernelConfig = KernelConfigT<double>;

/// Maps edges to atoms: centroid, unit tangent and length of each edge.
template <typename Scalar>
DiscreteVarifoldT<Scalar> lift(const ShapeGraphT<Scalar>& g) {
  const Scalar eps = default_eps_len(g);
  const Index ne = g.edges.rows();
  DiscreteVarifoldT<Scalar> mu;
  mu.centroids.resize(ne, 3);
  mu.tangents.resize(ne, 3);
  mu.masses.resize(ne);
  for (Index e = 0; e < ne; ++e) {
    const auto p = g.vertices.row(g.edges(e, 0));
    const auto q = g.vertices.row(g.edges(e, 1));
    const Eigen::Matrix<Scalar, 1, 3> t = q - p;
    const Scalar len = t.norm();
    if (!(len > eps))
      throw DegenerateEdgeError("cannot lift edge " + std::to_string(e) + " of length " + std::to_string(double(len)));
    mu.centroids.row(e) = (p + q) / Scalar(2);
    mu.tangents.row(e) = t / len;
    mu.masses(e) = len;
  }
  return mu;
}

/// Lift that tolerates degenerate edges: an edge shorter than `mass_floor`
/// becomes an inert atom (mass = floor, tangent = 0) that contributes zero
/// to every kernel term and zero gradient. Used for decoder outputs during
/// training, which may transiently collapse.
template <typename Scalar>
DiscreteVarifoldT<Scalar> lift_clamped(const Points<Scalar>& vertices, const EdgeList& edges,
                                       Scalar mass_floor = Scalar(1e-12)) {
  const Index ne = edges.rows();
  DiscreteVarifoldT<Scalar> mu;
  mu.centroids.resize(ne, 3);
  mu.tangents.resize(ne, 3);
  mu.masses.resize(ne);
  for (Index e = 0; e < ne; ++e) {
    const auto p = vertices.row(edges(e, 0));
    const auto q = vertices.row(edges(e, 1));
    const Eigen::Matrix<Scalar, 1, 3> t = q - p;
    const Scalar len = t.norm();
    mu.centroids.row(e) = (p + q) / Scalar(2);
    if (len < mass_floor) {
      mu.tangents.row(e).setZero();
      mu.masses(e) = mass_floor;
    } else {
      mu.tangents.row(e) = t / len;
      mu.masses(e) = len;
    }
  }
  return mu;
}

/// Kernel inner product: sum_i sum_j exp(-a|ci-cj|^2) <ui,uj>^2 li lj.
/// The Gaussian factor acts on centroids, the squared cosine on tangents,
/// so orientation and ordering of edges are irrelevant.
template <typename Scalar>
Scalar inner(const DiscreteVarifoldT<Scalar>& mu, const DiscreteVarifoldT<Scalar>& nu,
             const KernelConfigT<Scalar>& k) {
  if (mu.size() == 0 || nu.size() == 0) throw EmptyShapeError("inner product of an empty varifold");
  Scalar total = 0;
  for (Index i = 0; i < mu.size(); ++i) {
    const VectorX<Scalar> d2 = (nu.centroids.rowwise() - mu.centroids.row(i)).rowwise().squaredNorm();
    const VectorX<Scalar> dots = nu.tangents * mu.tangents.row(i).transpose();
    total += mu.masses(i) *
             ((-k.a * d2.array()).exp() * dots.array().square() * nu.masses.array()).sum();
  }
  return total;
}

/// Squared kernel distance |mu - nu|^2, clamped at zero against round-off.
template <typename Scalar>
Scalar dist_sq(const DiscreteVarifoldT<Scalar>& mu, const DiscreteVarifoldT<Scalar>& nu,
               const KernelConfigT<Scalar>& k) {
  const Scalar d = inner(mu, mu, k) + inner(nu, nu, k) - Scalar(2) * inner(mu, nu, k);
  return std::max(Scalar(0), d);
}

template <typename Scalar>
Scalar dist_sq(const ShapeGraphT<Scalar>& g1, const ShapeGraphT<Scalar>& g2, const KernelConfigT<Scalar>& k) {
  return dist_sq(lift(g1), lift(g2), k);
}

/// Partial derivatives of a kernel double sum with respect to the atoms of
/// its first argument.
template <typename Scalar>
struct AtomCotangentsT {
  Points<Scalar> centroid;  // d/dc_i
  Points<Scalar> tangent;   // d/du_i
  VectorX<Scalar> mass;     // d/dl_i
};

/// d <mu, nu> / d (atoms of mu). `nu` is held fixed; when called with
/// nu = mu this is the one-sided derivative, half of d<mu,mu>/datoms.
template <typename Scalar>
AtomCotangentsT<Scalar> inner_grad_wrt_first(const DiscreteVarifoldT<Scalar>& mu,
                                             const DiscreteVarifoldT<Scalar>& nu,
                                             const KernelConfigT<Scalar>& k) {
  AtomCotangentsT<Scalar> ct;
  const Index n = mu.size();
  ct.centroid.setZero(n, 3);
  ct.tangent.setZero(n, 3);
  ct.mass.setZero(n);
  for (Index i = 0; i < n; ++i) {
    const Points<Scalar> diff = (-(nu.centroids.rowwise() - mu.centroids.row(i)));  // c_i - c_j per row
    const VectorX<Scalar> gauss = (-k.a * diff.rowwise().squaredNorm().array()).exp();
    const VectorX<Scalar> dots = nu.tangents * mu.tangents.row(i).transpose();
    const VectorX<Scalar> base = gauss.array() * nu.masses.array();
    const VectorX<Scalar> wsq = base.array() * dots.array().square();
    ct.mass(i) = wsq.sum();
    ct.centroid.row(i) = (Scalar(-2) * k.a * mu.masses(i)) * (diff.transpose() * wsq).transpose();
    ct.tangent.row(i) =
        (Scalar(2) * mu.masses(i)) * (nu.tangents.transpose() * (base.array() * dots.array()).matrix()).transpose();
  }
  return ct;
}

/// Chain rule from atom cotangents to the vertices that built the atoms.
/// For edge (p,q): c = (vp+vq)/2, l = |vq-vp|, u = (vq-vp)/l, so
///   dc/dvp = I/2, dl/dvp = -u, du/dvp = -(I - u u^T)/l   (signs flip for q).
template <typename Scalar>
Points<Scalar> cotangents_to_vertex_grad(Index n_vertices, const EdgeList& edges,
                                         const DiscreteVarifoldT<Scalar>& mu,
                                         const AtomCotangentsT<Scalar>& ct) {
  Points<Scalar> grad = Points<Scalar>::Zero(n_vertices, 3);
  for (Index e = 0; e < edges.rows(); ++e) {
    const Eigen::Matrix<Scalar, 1, 3> u = mu.tangents.row(e);
    const Scalar l = mu.masses(e);
    const Eigen::Matrix<Scalar, 1, 3> gc = ct.centroid.row(e);
    const Eigen::Matrix<Scalar, 1, 3> gu = ct.tangent.row(e);
    const Scalar gl = ct.mass(e);
    const Eigen::Matrix<Scalar, 1, 3> through_u = (gu - gu.dot(u) * u) / l;
    grad.row(edges(e, 0)) += Scalar(0.5) * gc - gl * u - through_u;
    grad.row(edges(e, 1)) += Scalar(0.5) * gc + gl * u + through_u;
  }
  return grad;
}

/// Analytic gradient of dist_sq(target, other) with respect to the vertices
/// of `target`, one 3-vector per vertex.
template <typename Scalar>
Points<Scalar> grad_dist_sq(const ShapeGraphT<Scalar>& target, const ShapeGraphT<Scalar>& other,
                            const KernelConfigT<Scalar>& k) {
  const DiscreteVarifoldT<Scalar> mu = lift(target);
  const DiscreteVarifoldT<Scalar> nu = lift(other);
  const AtomCotangentsT<Scalar> self = inner_grad_wrt_first(mu, mu, k);
  const AtomCotangentsT<Scalar> cross = inner_grad_wrt_first(mu, nu, k);
  AtomCotangentsT<Scalar> ct;
  ct.centroid = Scalar(2) * (self.centroid - cross.centroid);
  ct.tangent = Scalar(2) * (self.tangent - cross.tangent);
  ct.mass = Scalar(2) * (self.mass - cross.mass);
  return cotangents_to_vertex_grad(target.vertices.rows(), target.edges, mu, ct);
}

/// Central-difference verification of grad_dist_sq. Relative error per
/// component uses max(|fd|, abs_floor) in the denominator.
template <typename Scalar>
struct GradCheckReport {
  Scalar max_rel_err = 0;
  Scalar mean_rel_err = 0;
  Index worst_vertex = -1;
  int worst_axis = -1;
  Scalar worst_analytic = 0;
  Scalar worst_fd = 0;
  Scalar tol = 0;
  bool passed = false;
};

template <typename Scalar>
GradCheckReport<Scalar> check_grad(const ShapeGraphT<Scalar>& g1, const ShapeGraphT<Scalar>& g2,
                                   const KernelConfigT<Scalar>& k, Scalar h, Scalar tol,
                                   Scalar abs_floor = Scalar(1e-8)) {
  const Points<Scalar> analytic = grad_dist_sq(g1, g2, k);
  GradCheckReport<Scalar> report;
  report.tol = tol;
  Scalar sum_rel = 0;
  ShapeGraphT<Scalar> probe = g1;
  for (Index v = 0; v < g1.vertices.rows(); ++v) {
    for (int ax = 0; ax < 3; ++ax) {
      const Scalar orig = probe.vertices(v, ax);
      probe.vertices(v, ax) = orig + h;
      const Scalar fp = dist_sq(probe, g2, k);
      probe.vertices(v, ax) = orig - h;
      const Scalar fm = dist_sq(probe, g2, k);
      probe.vertices(v, ax) = orig;
      const Scalar fd = (fp - fm) / (Scalar(2) * h);
      const Scalar rel = std::abs(analytic(v, ax) - fd) / std::max(std::abs(fd), abs_floor);
      sum_rel += rel;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_vertex = v;
        report.worst_axis = ax;
        report.worst_analytic = analytic(v, ax);
        report.worst_fd = fd;
      }
    }
  }
  report.mean_rel_err = sum_rel / Scalar(3 * g1.vertices.rows());
  report.passed = report.max_rel_err <= tol;
  return report;
}

/// Kernel width tied to the template size: sigma = ratio * bounding
/// diameter, a = 1/(2 sigma^2). Scale-free by construction.
template <typename Scalar>
KernelConfigT<Scalar> default_kernel(const ShapeGraphT<Scalar>& tmpl, Scalar sigma_ratio) {
  if (!(sigma_ratio > 0)) throw ConfigError("sigma_ratio must be positive");
  const Scalar sigma = sigma_ratio * bounding_diameter(tmpl);
  if (!(sigma > 0)) throw ConfigError("shape has zero bounding diameter");
  return KernelConfigT<Scalar>{Scalar(1) / (Scalar(2) * sigma * sigma)};
}

}  // namespace varigrad
