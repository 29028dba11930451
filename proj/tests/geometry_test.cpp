#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "test_support.hpp"
#include "varigrad/reparam.hpp"
#include "varigrad/shape_graph.hpp"
#include "varigrad/shape_io.hpp"
#include "varigrad/varifold.hpp"

using namespace varigrad;
using testsupport::unit_square;

TEST_CASE("validate accepts a minimal segment") {
  const auto g = testsupport::segment({0, 0, 0}, {1, 0, 0});
  CHECK_NOTHROW(validate(g));
}

TEST_CASE("validate rejects structural defects") {
  ShapeGraph g = testsupport::segment({0, 0, 0}, {1, 0, 0});

  SUBCASE("self-loop") {
    g.edges << 0, 0;
    CHECK_THROWS_AS(validate(g), IndexOutOfRangeError);
  }
  SUBCASE("index out of range") {
    g.edges << 0, 99;
    CHECK_THROWS_AS(validate(g), IndexOutOfRangeError);
  }
  SUBCASE("duplicate undirected edge") {
    g.vertices.conservativeResize(3, 3);
    g.vertices.row(2) = Eigen::RowVector3d(0, 1, 0);
    g.edges.resize(3, 2);
    g.edges << 0, 1, 1, 2, 1, 0;  // (1,0) duplicates (0,1)
    CHECK_THROWS_AS(validate(g), DuplicateEdgeError);
  }
  SUBCASE("coincident vertices joined by an edge") {
    g.vertices.row(1) = g.vertices.row(0);
    CHECK_THROWS_AS(validate(g), DegenerateEdgeError);
  }
  SUBCASE("too few vertices") {
    g.vertices.conservativeResize(1, 3);
    CHECK_THROWS_AS(validate(g), EmptyShapeError);
  }
  SUBCASE("no edges") {
    g.edges.resize(0, 2);
    CHECK_THROWS_AS(validate(g), EmptyShapeError);
  }
}

TEST_CASE("eps_len scales with the bounding diameter") {
  ShapeGraph g;
  g.vertices.resize(3, 3);
  g.vertices << 0, 0, 0, 1e-10, 0, 0, 1, 0, 0;
  g.edges.resize(2, 2);
  g.edges << 0, 1, 1, 2;
  // diameter 1 so the default threshold is 1e-9, longer than the 1e-10 edge
  CHECK_THROWS_AS(validate(g), DegenerateEdgeError);
  CHECK_NOTHROW(validate(g, 1e-12));
}

TEST_CASE("closed_polyline builds the unit square") {
  const auto g = unit_square();
  CHECK(g.vertices.rows() == 4);
  CHECK(g.edges.rows() == 4);
  CHECK(total_edge_length(g) == doctest::Approx(4.0));
}

TEST_CASE("closed_polyline rejects fewer than 3 points") {
  Points<double> pts(2, 3);
  pts << 0, 0, 0, 1, 0, 0;
  CHECK_THROWS_AS(closed_polyline(pts), TooFewPointsError);
}

TEST_CASE("closed_polyline accepts collinear but distinct points") {
  Points<double> pts(3, 3);
  pts << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  CHECK_NOTHROW(closed_polyline(pts));
}

TEST_CASE("regular 64-gon perimeter matches the chord-sum oracle") {
  const Index n = 64;
  Points<double> pts(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double th = 2.0 * std::numbers::pi * double(i) / double(n);
    pts.row(i) = Eigen::RowVector3d(std::cos(th), std::sin(th), 0.0);
  }
  const auto g = closed_polyline(pts);
  const double oracle = double(n) * 2.0 * std::sin(std::numbers::pi / double(n));
  CHECK(total_edge_length(g) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(oracle == doctest::Approx(6.280662).epsilon(1e-6));
}

TEST_CASE("bounding_diameter on reference shapes") {
  CHECK(bounding_diameter(testsupport::segment({0, 0, 0}, {1, 0, 0})) == doctest::Approx(1.0));
  CHECK(bounding_diameter(unit_square()) == doctest::Approx(std::sqrt(2.0)));
  Rng rng(5);
  ShapeGraph cloud;
  cloud.vertices.resize(20, 3);
  for (Index i = 0; i < 20; ++i)
    cloud.vertices.row(i) = Eigen::RowVector3d(rng.uniform(), rng.uniform(), rng.uniform());
  cloud.edges.resize(1, 2);
  cloud.edges << 0, 1;
  const double d = bounding_diameter(cloud);
  CHECK(d > 0.0);
  CHECK(d <= std::sqrt(3.0));
}

TEST_CASE("identity reparam returns the input unchanged") {
  const auto g = unit_square();
  const auto out = apply_reparam(g, ReparamSpec{});
  CHECK(out.vertices == g.vertices);
  CHECK(out.edges == g.edges);
}

TEST_CASE("permute/flip reparam preserves the lifted atoms as a multiset") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const auto g = data::random_open_curve(rng, 8, 20);
    ReparamSpec spec;
    spec.permute_vertices = true;
    spec.flip_edges = trial % 2 == 0;
    spec.rng_seed = 100 + static_cast<std::uint64_t>(trial);
    const auto h = apply_reparam(g, spec);
    CHECK(testsupport::atoms_equal(lift(g), lift(h), 0.0));  // same bits, only reordered
  }
  const auto sf = data::gen_stickfigures({data::Kind::StickFigure, 2, 2, 32, 48, 0.005, 3});
  for (const auto& g : sf.shapes) {
    ReparamSpec spec;
    spec.permute_vertices = true;
    spec.flip_edges = true;
    spec.rng_seed = 9;
    CHECK(testsupport::atoms_equal(lift(g), lift(apply_reparam(g, spec)), 0.0));
  }
}

TEST_CASE("factor-2 resampling of the unit square splits each edge at its midpoint") {
  const auto g = unit_square();
  ReparamSpec spec;
  spec.resample_factor = 2.0;
  const auto out = apply_reparam(g, spec);
  CHECK(out.vertices.rows() == 8);
  CHECK(out.edges.rows() == 8);
  CHECK(std::abs(total_edge_length(out) - 4.0) <= 1e-12);
  // every original edge midpoint appears among the new vertices
  for (Index e = 0; e < g.edges.rows(); ++e) {
    const Eigen::RowVector3d mid = 0.5 * (g.vertices.row(g.edges(e, 0)) + g.vertices.row(g.edges(e, 1)));
    double best = 1e9;
    for (Index v = 0; v < out.vertices.rows(); ++v)
      best = std::min(best, (out.vertices.row(v) - mid).norm());
    CHECK(best <= 1e-12);
  }
}

TEST_CASE("resampling straight chains preserves total length") {
  // straight open polyline with irregular spacing
  Points<double> pts(6, 3);
  pts << 0, 0, 0, 0.13, 0, 0, 0.45, 0, 0, 0.5, 0, 0, 0.8, 0, 0, 1.3, 0, 0;
  ShapeGraph g;
  g.vertices = pts;
  g.edges.resize(5, 2);
  g.edges << 0, 1, 1, 2, 2, 3, 3, 4, 4, 5;
  for (double f : {0.5, 0.7, 1.3, 1.7, 2.0}) {
    ReparamSpec spec;
    spec.resample_factor = f;
    const auto out = apply_reparam(g, spec);
    CHECK(std::abs(total_edge_length(out) - 1.3) / 1.3 <= 1e-12);
  }
}

TEST_CASE("resampling keeps junction vertices exactly") {
  const auto sf = data::gen_stickfigures({data::Kind::StickFigure, 2, 1, 40, 60, 0.002, 21});
  const auto& g = sf.shapes.front();
  ReparamSpec spec;
  spec.resample_factor = 1.3;
  const auto out = apply_reparam(g, spec);

  auto junctions = [](const ShapeGraph& s) {
    std::vector<Eigen::RowVector3d> j;
    const auto deg = vertex_degrees(s);
    for (Index v = 0; v < s.vertices.rows(); ++v)
      if (deg[static_cast<std::size_t>(v)] >= 3) j.push_back(s.vertices.row(v));
    return j;
  };
  const auto ja = junctions(g);
  const auto jb = junctions(out);
  REQUIRE(ja.size() == 2);
  REQUIRE(jb.size() == 2);
  for (const auto& a : ja) {
    bool found = false;
    for (const auto& b : jb) found = found || a == b;
    CHECK(found);
  }
}

TEST_CASE("reparam factor outside [0.5, 2] is rejected") {
  ReparamSpec spec;
  spec.resample_factor = 3.0;
  CHECK_THROWS_AS(apply_reparam(unit_square(), spec), ConfigError);
}

TEST_CASE("shape json round trip is exact") {
  const std::string minimal = R"({"vertices":[[0,0,0],[1,0,0]],"edges":[[0,1]]})";
  const auto g = read_shape(minimal);
  CHECK(g.vertices.rows() == 2);
  CHECK(g.edges.rows() == 1);
  CHECK(!g.label.has_value());

  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = data::random_open_curve(rng, 8, 30);
    // stress the decimals: scale wildly and offset negatively
    r.vertices = r.vertices * rng.uniform(1e-7, 1e7);
    r.vertices.array() -= rng.uniform(0.0, 3.0);
    r.label = trial % 3;
    const std::string text = write_shape(r);
    const auto back = read_shape(text);
    CHECK(back.vertices == r.vertices);  // bit exact
    CHECK(back.edges == r.edges);
    CHECK(back.label == r.label);
    CHECK(write_shape(back) == text);  // byte stable
  }
}

TEST_CASE("shape json parse errors carry context") {
  CHECK_THROWS_AS(read_shape("not json"), ParseError);
  CHECK_THROWS_AS(read_shape(R"({"vertices":[[0,0,0]],"edges":[]})"), EmptyShapeError);
  CHECK_THROWS_AS(read_shape(R"({"vertices":[[0,0,0],[1,0,0],[2,0,0]],"edges":[[0,99]]})"),
                  IndexOutOfRangeError);
  CHECK_THROWS_AS(read_shape(R"({"vertices":[[0,0],[1,0,0]],"edges":[[0,1]]})"), ParseError);
  CHECK_THROWS_AS(read_shape(R"({"vertices":[[0,0,0],[1,0,0]],"edges":[[0,1]],"label":-2})"), ParseError);
}

TEST_CASE("jsonl dataset round trip") {
  const auto ds = data::gen_curves({data::Kind::Curve, 2, 3, 12, 20, 0.01, 5});
  std::ostringstream out;
  write_dataset_stream(out, ds.shapes);
  std::istringstream in(out.str());
  const auto back = read_dataset_stream(in);
  REQUIRE(back.size() == ds.shapes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].vertices == ds.shapes[i].vertices);
    CHECK(back[i].label == ds.shapes[i].label);
  }
  std::istringstream bad("{}\n");
  CHECK_THROWS_AS(read_dataset_stream(bad), ParseError);
}
