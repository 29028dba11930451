#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "varigrad/reparam.hpp"
#include "varigrad/varifold.hpp"

using namespace varigrad;
using testsupport::naive_inner;
using testsupport::rel_diff;
using testsupport::unit_square;

namespace {

DiscreteVarifold single_atom(const Eigen::RowVector3d& c, const Eigen::RowVector3d& u, double mass) {
  DiscreteVarifold mu;
  mu.centroids.resize(1, 3);
  mu.centroids.row(0) = c;
  mu.tangents.resize(1, 3);
  mu.tangents.row(0) = u;
  mu.masses.resize(1);
  mu.masses(0) = mass;
  return mu;
}

}  // namespace

TEST_CASE("lift of a segment gives centroid, unit tangent and length") {
  const auto g = testsupport::segment({0, 0, 0}, {2, 0, 0});
  const auto mu = lift(g);
  REQUIRE(mu.size() == 1);
  CHECK(mu.centroids.row(0) == Eigen::RowVector3d(1, 0, 0));
  CHECK(mu.tangents.row(0) == Eigen::RowVector3d(1, 0, 0));
  CHECK(mu.masses(0) == 2.0);

  auto flipped = g;
  std::swap(flipped.edges(0, 0), flipped.edges(0, 1));
  const auto nu = lift(flipped);
  CHECK(nu.tangents.row(0) == Eigen::RowVector3d(-1, 0, 0));
  CHECK(nu.centroids.row(0) == mu.centroids.row(0));
  CHECK(nu.masses(0) == mu.masses(0));
  const KernelConfig k{1.7};
  CHECK(inner(mu, mu, k) == inner(nu, nu, k));  // squared cosine kills the sign
}

TEST_CASE("lift of the unit square") {
  const auto mu = lift(unit_square());
  REQUIRE(mu.size() == 4);
  for (Index e = 0; e < 4; ++e) {
    CHECK(mu.masses(e) == doctest::Approx(1.0));
    CHECK(std::abs(mu.tangents.row(e).norm() - 1.0) <= 1e-12);
    // axis-aligned tangents
    CHECK(std::abs(mu.tangents.row(e).cwiseAbs().maxCoeff() - 1.0) <= 1e-12);
  }
}

TEST_CASE("unit-norm tangents for every lifted shape") {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const auto mu = lift(data::random_open_curve(rng, 10, 30));
    for (Index i = 0; i < mu.size(); ++i) {
      CHECK(std::abs(mu.tangents.row(i).norm() - 1.0) <= 1e-12);
      CHECK(mu.masses(i) > 0.0);
    }
  }
}

TEST_CASE("inner product closed forms") {
  const KernelConfig k{2.5};
  const auto a = single_atom({0, 0, 0}, {1, 0, 0}, 1.0);
  CHECK(inner(a, a, k) == doctest::Approx(1.0));

  const double d = 0.37;
  const auto b = single_atom({0, d, 0}, {1, 0, 0}, 1.0);
  CHECK(inner(a, b, k) == doctest::Approx(std::exp(-k.a * d * d)).epsilon(1e-14));

  const auto c = single_atom({0.4, -0.2, 1.0}, {0, 1, 0}, 3.0);
  CHECK(inner(a, c, k) == 0.0);  // orthogonal tangents
}

TEST_CASE("inner is bilinear in the masses") {
  Rng rng(17);
  const auto g1 = data::random_open_curve(rng, 10, 20);
  const auto g2 = data::random_open_curve(rng, 10, 20);
  const KernelConfig k = default_kernel(g1, 0.2);
  auto mu = lift(g1);
  const auto nu = lift(g2);
  const double base = inner(mu, nu, k);
  mu.masses *= 2.0;
  CHECK(rel_diff(inner(mu, nu, k), 2.0 * base) <= 1e-15);
}

TEST_CASE("inner rejects empty varifolds") {
  DiscreteVarifold empty;
  empty.centroids.resize(0, 3);
  empty.tangents.resize(0, 3);
  empty.masses.resize(0);
  const auto a = single_atom({0, 0, 0}, {1, 0, 0}, 1.0);
  CHECK_THROWS_AS(inner(a, empty, KernelConfig{1.0}), EmptyShapeError);
}

TEST_CASE("inner equals the naive four-loop reference") {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const auto g1 = data::random_open_curve(rng, 10, 40);
    const auto g2 = data::random_open_curve(rng, 10, 40);
    const KernelConfig k = default_kernel(g1, 0.25);
    const auto mu = lift(g1);
    const auto nu = lift(g2);
    CHECK(rel_diff(inner(mu, nu, k), naive_inner(mu, nu, k.a)) <= 1e-12);
    CHECK(rel_diff(inner(mu, mu, k), naive_inner(mu, mu, k.a)) <= 1e-12);
  }
}

TEST_CASE("dist_sq vanishes on identical shapes and their re-descriptions") {
  Rng rng(31);
  for (int t = 0; t < 6; ++t) {
    const auto g = data::random_open_curve(rng, 12, 30);
    const KernelConfig k = default_kernel(g, 0.2);
    CHECK(dist_sq(g, g, k) <= 1e-10);
    ReparamSpec spec;
    spec.permute_vertices = true;
    spec.flip_edges = true;
    spec.rng_seed = static_cast<std::uint64_t>(t);
    CHECK(dist_sq(g, apply_reparam(g, spec), k) <= 1e-10);
  }
}

TEST_CASE("two parallel unit segments: 2 - 2 exp(-a d^2)") {
  const double d = 0.3;
  const auto g1 = testsupport::segment({0, 0, 0}, {1, 0, 0});
  const auto g2 = testsupport::segment({0, d, 0}, {1, d, 0});
  const KernelConfig k{4.0};
  const double expected = 2.0 - 2.0 * std::exp(-k.a * d * d);
  CHECK(dist_sq(g1, g2, k) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("dist_sq is symmetric") {
  Rng rng(41);
  for (int t = 0; t < 10; ++t) {
    const auto g1 = data::random_open_curve(rng, 10, 30);
    const auto g2 = data::random_open_curve(rng, 10, 30);
    const KernelConfig k = default_kernel(g1, 0.2);
    CHECK(rel_diff(dist_sq(g1, g2, k), dist_sq(g2, g1, k)) <= 1e-12);
  }
}

TEST_CASE("dist_sq is invariant under a joint rigid motion") {
  Rng rng(43);
  for (int t = 0; t < 10; ++t) {
    const auto g1 = data::random_open_curve(rng, 10, 30);
    const auto g2 = data::random_open_curve(rng, 10, 30);
    const KernelConfig k = default_kernel(g1, 0.2);
    const double before = dist_sq(g1, g2, k);

    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    const Eigen::Matrix3d rot = q.toRotationMatrix();
    const Eigen::RowVector3d shift(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    auto move = [&](ShapeGraph g) {
      g.vertices = (g.vertices * rot.transpose()).rowwise() + shift;
      return g;
    };
    const double after = dist_sq(move(g1), move(g2), k);
    CHECK(rel_diff(before, after) <= 1e-10);
  }
}

TEST_CASE("analytic gradient vanishes at a perfect match") {
  Rng rng(53);
  const auto g = data::random_open_curve(rng, 10, 25);
  const KernelConfig k = default_kernel(g, 0.2);
  const auto grad = grad_dist_sq(g, g, k);
  CHECK(grad.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(59);
  for (int t = 0; t < 10; ++t) {
    const auto g1 = data::random_open_curve(rng, 10, 40);
    const auto g2 = data::random_open_curve(rng, 10, 40);
    const KernelConfig k = default_kernel(g1, 0.2);
    const auto report = check_grad(g1, g2, k, 1e-5, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("larger finite-difference steps lose accuracy") {
  Rng rng(61);
  const auto g1 = data::random_open_curve(rng, 12, 24);
  const auto g2 = data::random_open_curve(rng, 12, 24);
  const KernelConfig k = default_kernel(g1, 0.2);
  const auto fine = check_grad(g1, g2, k, 1e-5, 1e-4);
  const auto coarse = check_grad(g1, g2, k, 1e-2, 1e-4);
  CHECK(coarse.max_rel_err > fine.max_rel_err);
}

TEST_CASE("check_grad on identical shapes sees two near-zero gradients") {
  Rng rng(67);
  const auto g = data::random_open_curve(rng, 10, 20);
  const KernelConfig k = default_kernel(g, 0.2);
  const auto grad = grad_dist_sq(g, g, k);
  CHECK(grad.cwiseAbs().maxCoeff() <= 1e-12);
  // and the finite differences are noise-level too
  ShapeGraph probe = g;
  probe.vertices(0, 0) += 1e-5;
  const double fp = dist_sq(probe, g, k);
  probe.vertices(0, 0) -= 2e-5;
  const double fm = dist_sq(probe, g, k);
  CHECK(std::abs((fp - fm) / 2e-5) <= 1e-6);
}

TEST_CASE("negative gradient is a descent direction") {
  Rng rng(71);
  for (int t = 0; t < 5; ++t) {
    const auto g1 = data::random_open_curve(rng, 10, 25);
    const auto g2 = data::random_open_curve(rng, 10, 25);
    const KernelConfig k = default_kernel(g1, 0.2);
    const double before = dist_sq(g1, g2, k);
    const auto grad = grad_dist_sq(g1, g2, k);
    const double scale = grad.cwiseAbs().maxCoeff();
    REQUIRE(scale > 0.0);
    ShapeGraph stepped = g1;
    stepped.vertices -= (1e-4 / scale) * grad;
    CHECK(dist_sq(stepped, g2, k) < before);
  }
}

TEST_CASE("default kernel arithmetic and scale freedom") {
  const auto seg = testsupport::segment({0, 0, 0}, {1, 0, 0});  // diameter 1
  CHECK(default_kernel(seg, 0.2).a == doctest::Approx(12.5));
  CHECK(default_kernel(seg, 0.5).a == doctest::Approx(2.0));
  CHECK_THROWS_AS(default_kernel(seg, 0.0), ConfigError);

  Rng rng(73);
  const auto g = data::random_open_curve(rng, 10, 20);
  const double s = 37.5;
  ShapeGraph scaled = g;
  scaled.vertices *= s;
  CHECK(rel_diff(default_kernel(scaled, 0.2).a * s * s, default_kernel(g, 0.2).a) <= 1e-12);
}

TEST_CASE("clamped lift makes degenerate edges inert") {
  Points<double> verts(3, 3);
  verts << 0, 0, 0, 0, 0, 0, 1, 0, 0;  // first edge has zero length
  EdgeList edges(2, 2);
  edges << 0, 1, 1, 2;
  const auto mu = lift_clamped(verts, edges);
  CHECK(mu.masses(0) == 1e-12);
  CHECK(mu.tangents.row(0).norm() == 0.0);
  CHECK(mu.masses(1) == 1.0);

  const KernelConfig k{3.0};
  // the inert atom adds nothing: same inner as the surviving segment alone
  const auto seg = lift(testsupport::segment({0, 0, 0}, {1, 0, 0}));
  DiscreteVarifold shifted = seg;
  shifted.centroids.row(0) = mu.centroids.row(1);
  CHECK(inner(mu, mu, k) == doctest::Approx(inner(shifted, shifted, k)).epsilon(1e-14));

  const auto ct = inner_grad_wrt_first(mu, mu, k);
  const auto grad = cotangents_to_vertex_grad(3, edges, mu, ct);
  CHECK(grad.allFinite());
  CHECK(grad.row(0).norm() == 0.0);  // nothing flows through the inert atom
}
