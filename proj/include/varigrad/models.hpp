#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "varigrad/datasets.hpp"
#include "varigrad/nn.hpp"
#include "varigrad/parallel.hpp"
#include "varigrad/template_feature.hpp"
#include "varigrad/varifold.hpp"

namespace varigrad::nn {

/// Squared varifold distance between a decoder output and a target shape,
/// with the gradient taken at the output's vertices. The output is lifted
/// with mass clamping so transiently degenerate edges contribute nothing
/// instead of crashing; on non-degenerate shapes the value is the exact
/// distance.
struct ReconLoss {
  double loss = 0;
  Points<double> grad;  // w.r.t. output vertices
};

inline ReconLoss varifold_recon_loss_lifted(const Points<double>& out_vertices, const EdgeList& out_edges,
                                            const DiscreteVarifold& target, double target_self_inner,
                                            const KernelConfig& k) {
  const DiscreteVarifold mu = lift_clamped(out_vertices, out_edges);
  const double d = inner(mu, mu, k) + target_self_inner - 2.0 * inner(mu, target, k);
  const AtomCotangentsT<double> self = inner_grad_wrt_first(mu, mu, k);
  const AtomCotangentsT<double> cross = inner_grad_wrt_first(mu, target, k);
  AtomCotangentsT<double> ct;
  ct.centroid = 2.0 * (self.centroid - cross.centroid);
  ct.tangent = 2.0 * (self.tangent - cross.tangent);
  ct.mass = 2.0 * (self.mass - cross.mass);
  ReconLoss rl;
  rl.loss = std::max(0.0, d);
  rl.grad = cotangents_to_vertex_grad(out_vertices.rows(), out_edges, mu, ct);
  return rl;
}

inline ReconLoss varifold_recon_loss(const ShapeGraph& output, const ShapeGraph& target,
                                     const KernelConfig& k) {
  const DiscreteVarifold nu = lift(target);
  return varifold_recon_loss_lifted(output.vertices, output.edges, nu, inner(nu, nu, k), k);
}

/// Trainable graph-conv feature extractor on a fixed template. The gradient
/// field has no parameters and is treated as a constant input; only the conv
/// weights learn, so no gradient ever flows through the varifold kernel.
struct VariGradEncoder {
  Template tmpl;
  KernelConfig kernel{1.0};
  ConvStack stack;
  std::vector<Mat> dweight;
  std::vector<Mat> dbias;

  struct Cache {
    std::vector<Mat> ah;  // adjacency_norm * layer input
    std::vector<Mat> z;   // pre-activation
  };

  void init(const Template& t, const KernelConfig& k, const std::vector<Index>& channels, bool edge_pool,
            Rng& rng) {
    tmpl = t;
    kernel = k;
    stack.layers.clear();
    stack.activation = Activation::Rectifier;
    stack.edge_pool = edge_pool;
    dweight.clear();
    dbias.clear();
    for (std::size_t l = 0; l + 1 < channels.size(); ++l) {
      GraphConvLayerT<double> layer;
      layer.weight.resize(channels[l], channels[l + 1]);
      uniform_init(layer.weight, channels[l], rng);
      layer.bias = Mat::Zero(1, channels[l + 1]);
      stack.layers.push_back(std::move(layer));
      dweight.push_back(Mat::Zero(channels[l], channels[l + 1]));
      dbias.push_back(Mat::Zero(1, channels[l + 1]));
    }
    if (stack.edge_pool && conv_output_channels(stack) <= 0)
      throw ConfigError("edge pooling needs an even final channel count");
  }

  Index feature_dim() const { return varigrad::feature_dim(tmpl, stack); }

  GradientField field_of(const ShapeGraph& g) const { return raw_feature(tmpl, g, kernel); }

  /// Eval path; bit-identical to the free function conv_forward.
  Vec apply_field(const GradientField& field) const { return conv_forward(tmpl, field, stack); }

  Vec forward_from_field(const GradientField& field, Cache& cache) {
    cache.ah.clear();
    cache.z.clear();
    Mat h = field;
    for (const auto& layer : stack.layers) {
      cache.ah.push_back(tmpl.adjacency_norm * h);
      Mat z = (cache.ah.back() * layer.weight).rowwise() + layer.bias.row(0);
      cache.z.push_back(z);
      h = stack.activation == Activation::Rectifier ? z.cwiseMax(0.0).eval() : z;
    }
    if (stack.edge_pool) h = varigrad::detail::edge_pool(tmpl, h);
    return varigrad::detail::flatten_rows(h);
  }

  void backward(const Vec& dfeature, const Cache& cache) {
    const Index v = tmpl.shape.vertices.rows();
    Mat dh;
    if (stack.edge_pool) {
      const Index half = conv_output_channels(stack);
      const Mat dpooled = varigrad::detail::unflatten_rows<double>(dfeature, v, half);
      Mat dspatial(v, 2 * half);
      for (Index c = 0; c < half; ++c) {
        dspatial.col(2 * c) = dpooled.col(c) / 2.0;
        dspatial.col(2 * c + 1) = dpooled.col(c) / 2.0;
      }
      // adjoint of D^{-1}(A+I), i.e. D^{1/2} adjacency_norm D^{-1/2}
      const VectorX<double> dsqrt = tmpl.closed_degree.array().sqrt();
      const VectorX<double> dinv_sqrt = tmpl.closed_degree.array().rsqrt();
      dh = dsqrt.asDiagonal() * (tmpl.adjacency_norm * (dinv_sqrt.asDiagonal() * dspatial));
    } else {
      dh = varigrad::detail::unflatten_rows<double>(dfeature, v, conv_output_channels(stack));
    }
    for (std::size_t l = stack.layers.size(); l-- > 0;) {
      const Mat dz = stack.activation == Activation::Rectifier
                         ? dh.cwiseProduct((cache.z[l].array() > 0.0).cast<double>().matrix()).eval()
                         : dh;
      dweight[l] += cache.ah[l].transpose() * dz;
      dbias[l] += dz.colwise().sum();
      if (l > 0) dh = tmpl.adjacency_norm * (dz * stack.layers[l].weight.transpose());
    }
  }

  void collect(std::vector<ParamRef>& out) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      out.push_back({"conv" + std::to_string(l) + ".weight", &stack.layers[l].weight, &dweight[l], true});
      out.push_back({"conv" + std::to_string(l) + ".bias", &stack.layers[l].bias, &dbias[l], true});
    }
  }
};

/// Pointwise-MLP baseline: shared dense layers per vertex, then a
/// coordinate-wise max over vertices. Symmetric in the vertices, blind to
/// edges, and not invariant to resampling -- which is the point of keeping
/// it around for comparison.
struct PointNetEncoder {
  Dense mlp1;  // hidden x 3
  Dense mlp2;  // out x hidden

  struct Cache {
    Mat x;   // m x 3
    Mat a1;  // m x hidden, pre-activation
    Mat h1;  // m x hidden
    std::vector<Index> argmax;
  };

  void init(const std::vector<Index>& widths, Rng& rng) {
    mlp1.init(widths.at(0), 3, rng);
    mlp2.init(widths.at(1), widths.at(0), rng);
  }

  Index feature_dim() const { return mlp2.weight.rows(); }

  /// Row-by-row evaluation so each vertex's embedding is computed by the
  /// same instruction sequence regardless of its position; the max over
  /// vertices is then exactly permutation invariant.
  static Mat shared_dense(const Dense& d, const Mat& x) {
    Mat y(x.rows(), d.weight.rows());
    for (Index i = 0; i < x.rows(); ++i)
      y.row(i) = (d.weight * x.row(i).transpose() + d.bias.col(0)).transpose();
    return y;
  }

  Vec apply(const Mat& verts) const {
    const Mat a2 = shared_dense(mlp2, Relu::apply(shared_dense(mlp1, verts)));
    return a2.colwise().maxCoeff().transpose();
  }

  Vec forward(const Mat& verts, Cache& cache) const {
    cache.x = verts;
    cache.a1 = shared_dense(mlp1, verts);
    cache.h1 = Relu::apply(cache.a1);
    const Mat a2 = shared_dense(mlp2, cache.h1);
    const Index c = a2.cols();
    cache.argmax.assign(static_cast<std::size_t>(c), 0);
    Vec f(c);
    for (Index j = 0; j < c; ++j) {
      Index row;
      f(j) = a2.col(j).maxCoeff(&row);
      cache.argmax[static_cast<std::size_t>(j)] = row;
    }
    return f;
  }

  void backward(const Vec& dfeature, const Cache& cache) {
    Mat da2 = Mat::Zero(cache.x.rows(), dfeature.size());
    for (Index j = 0; j < dfeature.size(); ++j) da2(cache.argmax[static_cast<std::size_t>(j)], j) = dfeature(j);
    mlp2.dweight += da2.transpose() * cache.h1;
    mlp2.dbias.col(0) += da2.colwise().sum().transpose();
    const Mat dh1 = da2 * mlp2.weight;
    const Mat da1 = dh1.cwiseProduct((cache.a1.array() > 0.0).cast<double>().matrix());
    mlp1.dweight += da1.transpose() * cache.x;
    mlp1.dbias.col(0) += da1.colwise().sum().transpose();
  }

  void collect(std::vector<ParamRef>& out) {
    mlp1.collect("pointnet.mlp1", out);
    mlp2.collect("pointnet.mlp2", out);
  }
};

/// Classification head N -> h1 -> h2 -> C, ReLU + batch norm after the first
/// two layers, linear logits.
struct ClassifierHead {
  Dense fc1, fc2, fc3;
  Relu r1, r2;
  BatchNorm bn1, bn2;

  void init(Index in, Index h1, Index h2, Index classes, Rng& rng) {
    fc1.init(h1, in, rng);
    bn1.init(h1);
    fc2.init(h2, h1, rng);
    bn2.init(h2);
    fc3.init(classes, h2, rng);
  }

  Mat forward(const Mat& x, Mode mode) {
    Mat h = bn1.forward(r1.forward(fc1.forward(x)), mode);
    h = bn2.forward(r2.forward(fc2.forward(h)), mode);
    return fc3.forward(h);
  }

  Mat apply(const Mat& x) const {
    Mat h = bn1.apply(Relu::apply(fc1.apply(x)));
    h = bn2.apply(Relu::apply(fc2.apply(h)));
    return fc3.apply(h);
  }

  Mat backward(const Mat& dlogits) {
    Mat d = fc3.backward(dlogits);
    d = fc2.backward(r2.backward(bn2.backward(d)));
    return fc1.backward(r1.backward(bn1.backward(d)));
  }

  void collect(std::vector<ParamRef>& out) {
    fc1.collect("head.fc1", out);
    bn1.collect("head.bn1", out);
    fc2.collect("head.fc2", out);
    bn2.collect("head.bn2", out);
    fc3.collect("head.fc3", out);
  }
};

/// Feature -> latent -> vertex coordinates of the template. Hidden layers
/// use ReLU, latent and output are linear.
struct AutoencoderNet {
  Dense enc1, enc2, dec1, dec2;
  Relu re, rd;

  void init(Index in, Index enc_hidden, Index latent, Index dec_hidden, Index out_vertices, Rng& rng) {
    enc1.init(enc_hidden, in, rng);
    enc2.init(latent, enc_hidden, rng);
    dec1.init(dec_hidden, latent, rng);
    dec2.init(3 * out_vertices, dec_hidden, rng);
  }

  Mat forward(const Mat& x) {
    const Mat latent = enc2.forward(re.forward(enc1.forward(x)));
    return dec2.forward(rd.forward(dec1.forward(latent)));
  }

  Mat apply(const Mat& x) const {
    const Mat latent = enc2.apply(Relu::apply(enc1.apply(x)));
    return dec2.apply(Relu::apply(dec1.apply(latent)));
  }

  Mat backward(const Mat& dout) {
    Mat d = dec1.backward(rd.backward(dec2.backward(dout)));
    return enc1.backward(re.backward(enc2.backward(d)));
  }

  void collect(std::vector<ParamRef>& out) {
    enc1.collect("ae.enc1", out);
    enc2.collect("ae.enc2", out);
    dec1.collect("ae.dec1", out);
    dec2.collect("ae.dec2", out);
  }
};

enum class Task { Classifier, Autoencoder };
enum class EncoderKind { VariGrad, PointNet };

inline std::string to_string(Task t) { return t == Task::Classifier ? "classifier" : "autoencoder"; }
inline std::string to_string(EncoderKind e) { return e == EncoderKind::VariGrad ? "varigrad" : "pointnet"; }

inline Task task_from_string(const std::string& s) {
  if (s == "classifier") return Task::Classifier;
  if (s == "autoencoder") return Task::Autoencoder;
  throw ConfigError("unknown task: " + s);
}

inline EncoderKind encoder_from_string(const std::string& s) {
  if (s == "varigrad") return EncoderKind::VariGrad;
  if (s == "pointnet") return EncoderKind::PointNet;
  throw ConfigError("unknown encoder: " + s);
}

/// Everything needed to rebuild a model skeleton: architecture, kernel and
/// the template shape itself. Serialized into the model manifest.
struct ModelConfig {
  Task task = Task::Classifier;
  EncoderKind encoder = EncoderKind::VariGrad;
  int class_count = 0;
  int latent_dim = 64;
  std::vector<Index> conv_channels{3, 16, 32};
  std::vector<Index> head_widths{256, 128};
  Index ae_enc_hidden = 128;
  Index ae_dec_hidden = 256;
  std::vector<Index> pointnet_widths{64, 128};
  double sigma_ratio = 0.2;
  bool edge_pool = false;
  std::uint64_t init_seed = 0;
  ShapeGraph template_shape;
};

struct Model {
  ModelConfig config;
  VariGradEncoder varigrad;
  PointNetEncoder pointnet;
  ClassifierHead classifier;
  AutoencoderNet autoencoder;

  Index feature_dim() const {
    return config.encoder == EncoderKind::VariGrad ? varigrad.feature_dim() : pointnet.feature_dim();
  }

  /// Stable parameter order: encoder blocks, then head blocks.
  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    if (config.encoder == EncoderKind::VariGrad)
      varigrad.collect(out);
    else
      pointnet.collect(out);
    if (config.task == Task::Classifier)
      classifier.collect(out);
    else
      autoencoder.collect(out);
    return out;
  }

  /// Eval-mode feature of one shape.
  Vec encode(const ShapeGraph& g) const {
    if (config.encoder == EncoderKind::VariGrad) return varigrad.apply_field(varigrad.field_of(g));
    return pointnet.apply(g.vertices);
  }

  const KernelConfig& kernel() const { return varigrad.kernel; }
  const Template& tmpl() const { return varigrad.tmpl; }
};

inline Model build_model(const ModelConfig& config) {
  if (config.task == Task::Classifier && config.class_count < 2)
    throw ConfigError("classifier needs class_count >= 2");
  Model m;
  m.config = config;
  Rng rng(config.init_seed);
  const Template t = make_template(config.template_shape);
  const KernelConfig k = default_kernel(config.template_shape, config.sigma_ratio);
  // The template and kernel ride on the varigrad encoder even for pointnet
  // models: the reconstruction loss and evaluation metrics need them.
  if (config.encoder == EncoderKind::VariGrad) {
    m.varigrad.init(t, k, config.conv_channels, config.edge_pool, rng);
  } else {
    m.varigrad.tmpl = t;
    m.varigrad.kernel = k;
    m.pointnet.init(config.pointnet_widths, rng);
  }
  const Index n = m.feature_dim();
  if (config.task == Task::Classifier) {
    m.classifier.init(n, config.head_widths.at(0), config.head_widths.at(1), config.class_count, rng);
  } else {
    m.autoencoder.init(n, config.ae_enc_hidden, config.latent_dim, config.ae_dec_hidden,
                       t.shape.vertices.rows(), rng);
  }
  return m;
}

/// Decoder output row -> shape with template connectivity. Not validated:
/// early in training the vertices may be degenerate.
inline ShapeGraph decode_row(const Model& m, const Mat& out, Index row) {
  const Index v = m.tmpl().shape.vertices.rows();
  ShapeGraph g;
  g.vertices.resize(v, 3);
  for (Index i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c) g.vertices(i, c) = out(row, i * 3 + c);
  g.edges = m.tmpl().shape.edges;
  return g;
}

/// Eval-mode reconstruction of one shape (label carried over).
inline ShapeGraph reconstruct(const Model& m, const ShapeGraph& g) {
  if (m.config.task != Task::Autoencoder) throw ConfigError("reconstruct needs an autoencoder model");
  const Vec f = m.encode(g);
  const Mat out = m.autoencoder.apply(f.transpose());
  ShapeGraph r = decode_row(m, out, 0);
  r.label = g.label;
  return r;
}

/// Eval-mode features for a whole dataset; the per-sample work may fan out
/// over threads, results are slot-written and independent of scheduling.
inline Mat encode_all(const Model& m, const std::vector<ShapeGraph>& shapes, int threads) {
  Mat features(static_cast<Index>(shapes.size()), m.feature_dim());
  parallel_for(static_cast<Index>(shapes.size()), threads,
               [&](Index i) { features.row(i) = m.encode(shapes[static_cast<std::size_t>(i)]).transpose(); });
  return features;
}

struct EvalResult {
  double loss = 0;
  double metric = 0;  // accuracy for classifiers, mean varifold error for autoencoders
};

inline EvalResult evaluate_classifier(const Model& m, const data::LabeledDataset& ds, int threads = 1) {
  if (ds.shapes.empty()) throw EmptyDatasetError("cannot evaluate on an empty dataset");
  const Mat features = encode_all(m, ds.shapes, threads);
  const Mat logits = m.classifier.apply(features);
  std::vector<int> labels;
  labels.reserve(ds.shapes.size());
  for (const auto& g : ds.shapes) {
    if (!g.label) throw EmptyDatasetError("classifier evaluation needs labels");
    labels.push_back(*g.label);
  }
  const LossGrad lg = softmax_cross_entropy(logits, labels);
  Index correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index pred;
    logits.row(r).maxCoeff(&pred);
    if (static_cast<int>(pred) == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return {lg.loss, double(correct) / double(logits.rows())};
}

inline EvalResult evaluate_autoencoder(const Model& m, const data::LabeledDataset& ds, int threads = 1) {
  if (ds.shapes.empty()) throw EmptyDatasetError("cannot evaluate on an empty dataset");
  const Mat features = encode_all(m, ds.shapes, threads);
  const Mat out = m.autoencoder.apply(features);
  const KernelConfig& k = m.kernel();
  std::vector<double> errs(ds.shapes.size(), 0.0);
  parallel_for(static_cast<Index>(ds.shapes.size()), threads, [&](Index i) {
    const ShapeGraph recon = decode_row(m, out, i);
    const DiscreteVarifold nu = lift(ds.shapes[static_cast<std::size_t>(i)]);
    const DiscreteVarifold mu = lift_clamped(recon.vertices, recon.edges);
    errs[static_cast<std::size_t>(i)] = std::max(0.0, inner(mu, mu, k) + inner(nu, nu, k) - 2.0 * inner(mu, nu, k));
  });
  double total = 0;
  for (double e : errs) total += e;
  const double mean = total / double(ds.shapes.size());
  return {mean, mean};
}

inline EvalResult evaluate(const Model& m, const data::LabeledDataset& ds, int threads = 1) {
  return m.config.task == Task::Classifier ? evaluate_classifier(m, ds, threads)
                                           : evaluate_autoencoder(m, ds, threads);
}

struct EpochRow {
  int epoch = 0;
  std::string split;
  double loss = 0;
  double metric = 0;  // accuracy or mean varifold error
  double sec_per_batch = 0;
};

struct TrainLog {
  std::vector<EpochRow> rows;
  double median_sec_per_batch = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void check_labeled(const data::LabeledDataset& ds, int class_count) {
  if (ds.shapes.empty()) throw EmptyDatasetError("training set is empty");
  int distinct = 0;
  std::vector<bool> seen(static_cast<std::size_t>(class_count), false);
  for (const auto& g : ds.shapes) {
    if (!g.label) throw EmptyDatasetError("training needs labeled shapes");
    if (*g.label < 0 || *g.label >= class_count)
      throw IndexOutOfRangeError("label " + std::to_string(*g.label) + " outside [0," +
                                 std::to_string(class_count) + ")");
    if (!seen[static_cast<std::size_t>(*g.label)]) {
      seen[static_cast<std::size_t>(*g.label)] = true;
      ++distinct;
    }
  }
  if (distinct < 2) throw SingleClassError("training set has a single class");
}

/// Precomputed per-sample encoder inputs: gradient fields are fixed
/// functions of (template, kernel, shape), so they are computed once.
struct EncodedInputs {
  std::vector<GradientField> fields;  // varigrad
  const std::vector<ShapeGraph>* shapes = nullptr;
};

inline EncodedInputs precompute_inputs(const Model& m, const std::vector<ShapeGraph>& shapes, int threads) {
  EncodedInputs in;
  in.shapes = &shapes;
  if (m.config.encoder == EncoderKind::VariGrad) {
    in.fields.resize(shapes.size());
    parallel_for(static_cast<Index>(shapes.size()), threads, [&](Index i) {
      in.fields[static_cast<std::size_t>(i)] = m.varigrad.field_of(shapes[static_cast<std::size_t>(i)]);
    });
  }
  return in;
}

struct BatchCaches {
  std::vector<VariGradEncoder::Cache> vg;
  std::vector<PointNetEncoder::Cache> pn;
};

inline Mat encoder_forward_batch(Model& m, const EncodedInputs& in, const std::vector<std::size_t>& batch,
                                 BatchCaches& caches) {
  const Index b = static_cast<Index>(batch.size());
  Mat features(b, m.feature_dim());
  if (m.config.encoder == EncoderKind::VariGrad) {
    caches.vg.assign(batch.size(), {});
    for (Index i = 0; i < b; ++i)
      features.row(i) =
          m.varigrad.forward_from_field(in.fields[batch[static_cast<std::size_t>(i)]], caches.vg[static_cast<std::size_t>(i)])
              .transpose();
  } else {
    caches.pn.assign(batch.size(), {});
    for (Index i = 0; i < b; ++i)
      features.row(i) = m.pointnet
                            .forward((*in.shapes)[batch[static_cast<std::size_t>(i)]].vertices,
                                     caches.pn[static_cast<std::size_t>(i)])
                            .transpose();
  }
  return features;
}

inline void encoder_backward_batch(Model& m, const Mat& dfeatures, BatchCaches& caches) {
  for (Index i = 0; i < dfeatures.rows(); ++i) {
    if (m.config.encoder == EncoderKind::VariGrad)
      m.varigrad.backward(dfeatures.row(i).transpose(), caches.vg[static_cast<std::size_t>(i)]);
    else
      m.pointnet.backward(dfeatures.row(i).transpose(), caches.pn[static_cast<std::size_t>(i)]);
  }
}

}  // namespace detail

/// Minibatch Adam over featurized inputs. Deterministic given
/// config.rng_seed; featurization may run on `threads` workers without
/// changing any result.
inline TrainLog train_classifier(Model& m, const data::LabeledDataset& train, const data::LabeledDataset& test,
                                 const TrainConfig& config, int threads = 1) {
  if (m.config.task != Task::Classifier) throw ConfigError("model is not a classifier");
  detail::check_labeled(train, m.config.class_count);
  const auto inputs = detail::precompute_inputs(m, train.shapes, threads);

  auto params = m.params();
  Adam adam;
  adam.lr = config.learning_rate;
  adam.reset(params);
  Rng shuffle_rng(config.rng_seed);

  std::vector<std::size_t> order(train.shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  std::vector<double> epoch_batch_secs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    Index correct = 0, seen = 0;
    std::vector<double> batch_secs;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      detail::BatchCaches caches;
      const Mat features = detail::encoder_forward_batch(m, inputs, batch, caches);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (const auto idx : batch) labels.push_back(*train.shapes[idx].label);
      const Mat logits = m.classifier.forward(features, Mode::Train);
      const LossGrad lg = softmax_cross_entropy(logits, labels);
      zero_grads(params);
      const Mat dfeatures = m.classifier.backward(lg.dlogits);
      detail::encoder_backward_batch(m, dfeatures, caches);
      adam.step(params);

      loss_sum += lg.loss * double(batch.size());
      for (Index r = 0; r < logits.rows(); ++r) {
        Index pred;
        logits.row(r).maxCoeff(&pred);
        if (static_cast<int>(pred) == labels[static_cast<std::size_t>(r)]) ++correct;
      }
      seen += static_cast<Index>(batch.size());
      batch_secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    const double sec = detail::median(batch_secs);
    epoch_batch_secs.push_back(sec);
    log.rows.push_back({epoch, "train", loss_sum / double(seen), double(correct) / double(seen), sec});
    if (!test.shapes.empty()) {
      const EvalResult ev = evaluate_classifier(m, test, threads);
      log.rows.push_back({epoch, "test", ev.loss, ev.metric, sec});
    }
  }
  log.median_sec_per_batch = detail::median(epoch_batch_secs);
  return log;
}

/// Minibatch Adam on the mean varifold reconstruction loss. Gradients flow
/// decoder <- loss and encoder <- decoder; features of the varigrad branch
/// stop at the gradient field.
inline TrainLog train_autoencoder(Model& m, const data::LabeledDataset& train, const data::LabeledDataset& test,
                                  const TrainConfig& config, int threads = 1) {
  if (m.config.task != Task::Autoencoder) throw ConfigError("model is not an autoencoder");
  if (train.shapes.empty()) throw EmptyDatasetError("training set is empty");
  const auto inputs = detail::precompute_inputs(m, train.shapes, threads);
  const KernelConfig& k = m.kernel();

  // Targets are fixed: lift them and cache their self inner products once.
  std::vector<DiscreteVarifold> targets(train.shapes.size());
  std::vector<double> target_self(train.shapes.size());
  parallel_for(static_cast<Index>(train.shapes.size()), threads, [&](Index i) {
    targets[static_cast<std::size_t>(i)] = lift(train.shapes[static_cast<std::size_t>(i)]);
    target_self[static_cast<std::size_t>(i)] = inner(targets[static_cast<std::size_t>(i)], targets[static_cast<std::size_t>(i)], k);
  });

  auto params = m.params();
  Adam adam;
  adam.lr = config.learning_rate;
  adam.reset(params);
  Rng shuffle_rng(config.rng_seed);

  std::vector<std::size_t> order(train.shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  std::vector<double> epoch_batch_secs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    Index seen = 0;
    std::vector<double> batch_secs;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      detail::BatchCaches caches;
      const Mat features = detail::encoder_forward_batch(m, inputs, batch, caches);
      const Mat out = m.autoencoder.forward(features);

      const Index b = static_cast<Index>(batch.size());
      Mat dout = Mat::Zero(out.rows(), out.cols());
      std::vector<double> losses(batch.size(), 0.0);
      std::vector<Points<double>> grads(batch.size());
      parallel_for(b, threads, [&](Index i) {
        const ShapeGraph recon = decode_row(m, out, i);
        const auto idx = batch[static_cast<std::size_t>(i)];
        const ReconLoss rl = varifold_recon_loss_lifted(recon.vertices, recon.edges, targets[idx],
                                                        target_self[idx], k);
        losses[static_cast<std::size_t>(i)] = rl.loss;
        grads[static_cast<std::size_t>(i)] = rl.grad;
      });
      for (Index i = 0; i < b; ++i) {
        loss_sum += losses[static_cast<std::size_t>(i)];
        const auto& gr = grads[static_cast<std::size_t>(i)];
        for (Index vtx = 0; vtx < gr.rows(); ++vtx)
          for (int c = 0; c < 3; ++c) dout(i, vtx * 3 + c) = gr(vtx, c) / double(b);
      }
      zero_grads(params);
      const Mat dfeatures = m.autoencoder.backward(dout);
      detail::encoder_backward_batch(m, dfeatures, caches);
      adam.step(params);

      seen += b;
      batch_secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    const double sec = detail::median(batch_secs);
    epoch_batch_secs.push_back(sec);
    log.rows.push_back({epoch, "train", loss_sum / double(seen), loss_sum / double(seen), sec});
    if (!test.shapes.empty()) {
      const EvalResult ev = evaluate_autoencoder(m, test, threads);
      log.rows.push_back({epoch, "test", ev.loss, ev.metric, sec});
    }
  }
  log.median_sec_per_batch = detail::median(epoch_batch_secs);
  return log;
}

}  // namespace varigrad::nn
