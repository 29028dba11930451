#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "varigrad/errors.hpp"
#include "varigrad/reparam.hpp"
#include "varigrad/rng.hpp"
#include "varigrad/shape_graph.hpp"

namespace varigrad::data {

enum class Kind { Curve, StickFigure };

/// Description of a synthetic labeled family. Generation is deterministic:
/// sample s of class k uses its own generator seeded rng_seed + global index,
/// so samples can be produced independently and in parallel.
struct SyntheticSpec {
  Kind kind = Kind::Curve;
  int class_count = 4;
  int samples_per_class = 100;
  Index min_vertices = 64;
  Index max_vertices = 96;
  double noise_scale = 0.01;
  std::uint64_t rng_seed = 0;
};

struct LabeledDataset {
  std::vector<ShapeGraph> shapes;
  std::string split_tag = "train";
};

inline void check_spec(const SyntheticSpec& spec) {
  if (spec.class_count < 2) throw SingleClassError("need at least 2 classes");
  if (spec.samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
  if (spec.min_vertices < 8 || spec.max_vertices > 512 || spec.min_vertices > spec.max_vertices)
    throw ConfigError("vertex range must satisfy 8 <= min <= max <= 512");
  if (spec.noise_scale < 0) throw ConfigError("noise_scale must be nonnegative");
}

/// Closed 3D curves; class k draws its radial profile from harmonic k+2 and
/// its height profile from harmonic k+1, with random phases per sample and
/// an irregular (jittered-stratified) angular sampling. Phases stay within a
/// quarter turn so intra-class spread remains well below the inter-class
/// distance in the varifold metric.
inline LabeledDataset gen_curves(const SyntheticSpec& spec) {
  check_spec(spec);
  LabeledDataset ds;
  ds.shapes.reserve(static_cast<std::size_t>(spec.class_count) * spec.samples_per_class);
  const double two_pi = 2.0 * std::numbers::pi;
  const double phase_range = std::numbers::pi / 4.0;
  for (int k = 0; k < spec.class_count; ++k) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      const auto sample_index = static_cast<std::uint64_t>(k) * spec.samples_per_class + s;
      Rng rng(spec.rng_seed + sample_index);
      const Index m = rng.uniform_int(spec.min_vertices, spec.max_vertices);
      const double phi = rng.uniform(0.0, phase_range);
      const double psi = rng.uniform(0.0, phase_range);
      Points<double> pts(m, 3);
      for (Index i = 0; i < m; ++i) {
        const double theta = two_pi * (double(i) + 0.9 * rng.uniform()) / double(m);
        const double r = 1.0 + 0.3 * std::cos((k + 2) * theta + phi);
        pts(i, 0) = r * std::cos(theta);
        pts(i, 1) = r * std::sin(theta);
        pts(i, 2) = 0.2 * std::sin((k + 1) * theta + psi);
      }
      for (Index i = 0; i < m; ++i)
        for (int c = 0; c < 3; ++c) pts(i, c) += spec.noise_scale * rng.normal();
      ds.shapes.push_back(closed_polyline(pts, k));
    }
  }
  return ds;
}

namespace detail {

// Straight limb from `from` along `dir`, `count` vertices beyond the joint.
inline void append_chain(std::vector<Eigen::RowVector3d>& verts,
                         std::vector<std::pair<Index, Index>>& edges, Index joint,
                         const Eigen::RowVector3d& from, const Eigen::RowVector3d& dir, double length,
                         Index count) {
  Index prev = joint;
  for (Index i = 1; i <= count; ++i) {
    const Index id = static_cast<Index>(verts.size());
    verts.push_back(from + (length * double(i) / double(count)) * dir);
    edges.emplace_back(prev, id);
    prev = id;
  }
}

}  // namespace detail

/// Branching pose figures: a torso between two degree-3 joints, two arms
/// from the upper joint, two legs from the lower one. Class k fixes the
/// interval the limb angles are drawn from, so the tangent distribution
/// separates the classes.
inline LabeledDataset gen_stickfigures(const SyntheticSpec& spec) {
  check_spec(spec);
  LabeledDataset ds;
  ds.shapes.reserve(static_cast<std::size_t>(spec.class_count) * spec.samples_per_class);
  const double deg = std::numbers::pi / 180.0;
  const int classes = spec.class_count;
  for (int k = 0; k < classes; ++k) {
    // Pose regime: arm elevation in [-65, 65] deg, leg spread in [8, 45] deg.
    const double f = classes > 1 ? double(k) / double(classes - 1) : 0.0;
    const double arm_center = (-65.0 + 130.0 * f) * deg;
    const double arm_width = 0.30 * (130.0 / double(classes - 1)) * deg;
    const double leg_center = (8.0 + 37.0 * f) * deg;
    const double leg_width = 0.30 * (37.0 / double(classes - 1)) * deg;
    for (int s = 0; s < spec.samples_per_class; ++s) {
      const auto sample_index = static_cast<std::uint64_t>(k) * spec.samples_per_class + s;
      Rng rng(spec.rng_seed + sample_index);

      const Index total = rng.uniform_int(spec.min_vertices, spec.max_vertices);
      // Distribute the non-joint vertices over torso + 4 limbs.
      std::array<double, 5> w;
      for (auto& x : w) x = rng.uniform(0.7, 1.3);
      const double wsum = w[0] + w[1] + w[2] + w[3] + w[4];
      const Index budget = total - 2;
      std::array<Index, 5> cnt;
      Index assigned = 0;
      for (int c = 0; c < 5; ++c) {
        cnt[c] = std::max<Index>(1, static_cast<Index>(std::floor(double(budget) * w[c] / wsum)));
        assigned += cnt[c];
      }
      for (int c = 0; assigned < budget; c = (c + 1) % 5) {
        ++cnt[c];
        ++assigned;
      }
      while (assigned > budget) {
        for (int c = 0; c < 5 && assigned > budget; ++c) {
          if (cnt[c] > 1) {
            --cnt[c];
            --assigned;
          }
        }
      }

      const double arm_r = rng.uniform(arm_center - arm_width / 2, arm_center + arm_width / 2);
      const double arm_l = rng.uniform(arm_center - arm_width / 2, arm_center + arm_width / 2);
      const double leg_r = rng.uniform(leg_center - leg_width / 2, leg_center + leg_width / 2);
      const double leg_l = rng.uniform(leg_center - leg_width / 2, leg_center + leg_width / 2);
      const double arm_len = 0.55 * rng.uniform(0.95, 1.05);
      const double leg_len = 0.75 * rng.uniform(0.95, 1.05);
      const double lean_x = rng.uniform(-0.08, 0.08);
      const double lean_y = rng.uniform(-0.08, 0.08);
      const double sway_ar = rng.uniform(-0.15, 0.15);
      const double sway_al = rng.uniform(-0.15, 0.15);
      const double sway_lr = rng.uniform(-0.12, 0.12);
      const double sway_ll = rng.uniform(-0.12, 0.12);

      std::vector<Eigen::RowVector3d> verts;
      std::vector<std::pair<Index, Index>> edges;
      const Eigen::RowVector3d pelvis(0.0, 0.0, 0.0);
      const Eigen::RowVector3d neck(lean_x, lean_y, 1.0);
      verts.push_back(pelvis);  // joint 0
      verts.push_back(neck);    // joint 1

      // Torso interior + closing edge to the neck joint.
      Index prev = 0;
      for (Index i = 1; i <= cnt[0]; ++i) {
        const Index id = static_cast<Index>(verts.size());
        verts.push_back(pelvis + (double(i) / double(cnt[0] + 1)) * (neck - pelvis));
        edges.emplace_back(prev, id);
        prev = id;
      }
      edges.emplace_back(prev, 1);

      const Eigen::RowVector3d arm_dir_r = Eigen::RowVector3d(std::cos(arm_r), sway_ar, std::sin(arm_r)).normalized();
      const Eigen::RowVector3d arm_dir_l = Eigen::RowVector3d(-std::cos(arm_l), sway_al, std::sin(arm_l)).normalized();
      const Eigen::RowVector3d leg_dir_r = Eigen::RowVector3d(std::sin(leg_r), sway_lr, -std::cos(leg_r)).normalized();
      const Eigen::RowVector3d leg_dir_l = Eigen::RowVector3d(-std::sin(leg_l), sway_ll, -std::cos(leg_l)).normalized();
      detail::append_chain(verts, edges, 1, neck, arm_dir_r, arm_len, cnt[1]);
      detail::append_chain(verts, edges, 1, neck, arm_dir_l, arm_len, cnt[2]);
      detail::append_chain(verts, edges, 0, pelvis, leg_dir_r, leg_len, cnt[3]);
      detail::append_chain(verts, edges, 0, pelvis, leg_dir_l, leg_len, cnt[4]);

      ShapeGraph g;
      g.vertices.resize(static_cast<Index>(verts.size()), 3);
      for (std::size_t i = 0; i < verts.size(); ++i) g.vertices.row(static_cast<Index>(i)) = verts[i];
      for (Index i = 0; i < g.vertices.rows(); ++i)
        for (int c = 0; c < 3; ++c) g.vertices(i, c) += spec.noise_scale * rng.normal();
      g.edges.resize(static_cast<Index>(edges.size()), 2);
      for (std::size_t i = 0; i < edges.size(); ++i) {
        g.edges(static_cast<Index>(i), 0) = edges[i].first;
        g.edges(static_cast<Index>(i), 1) = edges[i].second;
      }
      g.label = k;
      validate(g);
      ds.shapes.push_back(std::move(g));
    }
  }
  return ds;
}

inline LabeledDataset generate(const SyntheticSpec& spec) {
  return spec.kind == Kind::Curve ? gen_curves(spec) : gen_stickfigures(spec);
}

/// Stratified split: per class, a seeded shuffle and round(f * n) samples to
/// the test side, so both splits stay balanced.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double test_fraction,
                                                       std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  if (ds.shapes.empty()) throw EmptyDatasetError("cannot split an empty dataset");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < ds.shapes.size(); ++i) {
    if (!ds.shapes[i].label.has_value()) throw EmptyDatasetError("split needs labeled shapes");
    by_label[*ds.shapes[i].label].push_back(i);
  }
  Rng rng(seed);
  LabeledDataset train, test;
  train.split_tag = "train";
  test.split_tag = "test";
  for (auto& [label, idx] : by_label) {
    if (idx.size() < 2)
      throw EmptyDatasetError("class " + std::to_string(label) + " has fewer than 2 samples");
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_test ? test : train).shapes.push_back(ds.shapes[idx[i]]);
  }
  if (train.shapes.empty() || test.shapes.empty()) throw ConfigError("split produced an empty side");
  return {std::move(train), std::move(test)};
}

/// Random re-descriptions of every shape: vertex permutation and edge flips
/// by fair coin, resample factor uniform in [0.7, 1.4]. Labels are kept.
inline LabeledDataset make_reparam_set(const LabeledDataset& ds, int per_shape, std::uint64_t seed) {
  if (per_shape < 1) throw ConfigError("per_shape must be positive");
  Rng rng(seed);
  LabeledDataset out;
  out.split_tag = ds.split_tag + "-reparam";
  out.shapes.reserve(ds.shapes.size() * static_cast<std::size_t>(per_shape));
  for (const auto& g : ds.shapes) {
    for (int r = 0; r < per_shape; ++r) {
      ReparamSpec spec;
      spec.permute_vertices = rng.coin();
      spec.flip_edges = rng.coin();
      spec.resample_factor = rng.uniform(0.7, 1.4);
      spec.rng_seed = rng.bits();
      out.shapes.push_back(apply_reparam(g, spec));
    }
  }
  return out;
}

/// Smooth random open polyline with step lengths in [0.04, 0.09]; used by
/// numerical checks that want generic well-conditioned shapes.
inline ShapeGraph random_open_curve(Rng& rng, Index min_vertices, Index max_vertices) {
  const Index m = rng.uniform_int(min_vertices, max_vertices);
  Points<double> pts(m, 3);
  Eigen::RowVector3d p(rng.uniform(), rng.uniform(), rng.uniform());
  Eigen::RowVector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  for (Index i = 0; i < m; ++i) {
    pts.row(i) = p;
    p += rng.uniform(0.04, 0.09) * dir;
    dir += 0.35 * Eigen::RowVector3d(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
  }
  ShapeGraph g;
  g.vertices = pts;
  g.edges.resize(m - 1, 2);
  for (Index i = 0; i + 1 < m; ++i) {
    g.edges(i, 0) = i;
    g.edges(i, 1) = i + 1;
  }
  validate(g);
  return g;
}

}  // namespace varigrad::data
