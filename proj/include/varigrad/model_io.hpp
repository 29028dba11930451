#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "varigrad/models.hpp"
#include "varigrad/shape_io.hpp"

namespace varigrad::nn {

/// Model file = one JSON manifest line (architecture, template, block table)
/// followed by a flat little-endian binary blob of 8-byte floats: every
/// parameter block in manifest order (column-major within a block), then,
/// when optimizer state is saved, the Adam m and v moments per trainable
/// block in the same order. Round-trips are bit exact.

namespace detail {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["encoder"] = to_string(c.encoder);
  j["class_count"] = c.class_count;
  j["latent_dim"] = c.latent_dim;
  j["conv_channels"] = c.conv_channels;
  j["head_widths"] = c.head_widths;
  j["ae_enc_hidden"] = c.ae_enc_hidden;
  j["ae_dec_hidden"] = c.ae_dec_hidden;
  j["pointnet_widths"] = c.pointnet_widths;
  j["sigma_ratio"] = c.sigma_ratio;
  j["edge_pool"] = c.edge_pool;
  j["init_seed"] = c.init_seed;
  j["template"] = shape_to_json(c.template_shape);
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.task = task_from_string(j.at("task").get<std::string>());
  c.encoder = encoder_from_string(j.at("encoder").get<std::string>());
  c.class_count = j.at("class_count").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.conv_channels = j.at("conv_channels").get<std::vector<Index>>();
  c.head_widths = j.at("head_widths").get<std::vector<Index>>();
  c.ae_enc_hidden = j.at("ae_enc_hidden").get<Index>();
  c.ae_dec_hidden = j.at("ae_dec_hidden").get<Index>();
  c.pointnet_widths = j.at("pointnet_widths").get<std::vector<Index>>();
  c.sigma_ratio = j.at("sigma_ratio").get<double>();
  c.edge_pool = j.at("edge_pool").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.template_shape = shape_from_json(j.at("template"), "model template");
  return c;
}

inline void append_block(std::vector<double>& blob, const Mat& m) {
  blob.insert(blob.end(), m.data(), m.data() + m.size());
}

}  // namespace detail

inline void save_model(const std::string& path, Model& model, const Adam* adam = nullptr) {
  auto params = model.params();
  nlohmann::json manifest;
  manifest["format"] = "varigrad-model";
  manifest["version"] = 1;
  manifest["byte_order"] = "little";
  manifest["config"] = detail::config_to_json(model.config);
  auto blocks = nlohmann::json::array();
  std::vector<double> blob;
  for (const auto& p : params) {
    blocks.push_back({{"name", p.name},
                      {"rows", p.value->rows()},
                      {"cols", p.value->cols()},
                      {"trainable", p.trainable}});
    detail::append_block(blob, *p.value);
  }
  manifest["params"] = std::move(blocks);
  if (adam != nullptr) {
    manifest["optimizer"] = {{"algo", "adam"},
                             {"step", adam->step_count},
                             {"lr", adam->lr},
                             {"beta1", adam->beta1},
                             {"beta2", adam->beta2},
                             {"eps", adam->eps}};
    for (std::size_t k = 0; k < adam->m.size(); ++k) {
      detail::append_block(blob, adam->m[k]);
      detail::append_block(blob, adam->v[k]);
    }
  }
  manifest["blob_doubles"] = blob.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << manifest.dump() << "\n";
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!out) throw Error("failed writing model blob: " + path);
}

struct LoadedModel {
  Model model;
  Adam adam;
  bool has_optimizer = false;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("model file is empty: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "varigrad-model") throw ParseError("not a model file: " + path);

  LoadedModel loaded;
  loaded.model = build_model(detail::config_from_json(manifest.at("config")));
  auto params = loaded.model.params();

  const auto expected = manifest.at("blob_doubles").get<std::size_t>();
  std::vector<double> blob(expected);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(expected * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(double))
    throw ParseError("model blob truncated: " + path);

  const auto& blocks = manifest.at("params");
  if (blocks.size() != params.size()) throw ParseError("model manifest lists a different parameter set");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& b = blocks[i];
    if (b.at("name").get<std::string>() != params[i].name)
      throw ParseError("parameter order mismatch at " + params[i].name);
    const Index rows = b.at("rows").get<Index>();
    const Index cols = b.at("cols").get<Index>();
    if (rows != params[i].value->rows() || cols != params[i].value->cols())
      throw ParseError("parameter shape mismatch at " + params[i].name);
    std::memcpy(params[i].value->data(), blob.data() + offset,
                static_cast<std::size_t>(rows * cols) * sizeof(double));
    offset += static_cast<std::size_t>(rows * cols);
  }

  if (manifest.contains("optimizer")) {
    loaded.has_optimizer = true;
    const auto& opt = manifest.at("optimizer");
    loaded.adam.step_count = opt.at("step").get<long long>();
    loaded.adam.lr = opt.at("lr").get<double>();
    loaded.adam.beta1 = opt.at("beta1").get<double>();
    loaded.adam.beta2 = opt.at("beta2").get<double>();
    loaded.adam.eps = opt.at("eps").get<double>();
    for (const auto& p : params) {
      if (!p.trainable) continue;
      Mat m(p.value->rows(), p.value->cols());
      std::memcpy(m.data(), blob.data() + offset, static_cast<std::size_t>(m.size()) * sizeof(double));
      offset += static_cast<std::size_t>(m.size());
      Mat v(p.value->rows(), p.value->cols());
      std::memcpy(v.data(), blob.data() + offset, static_cast<std::size_t>(v.size()) * sizeof(double));
      offset += static_cast<std::size_t>(v.size());
      loaded.adam.m.push_back(std::move(m));
      loaded.adam.v.push_back(std::move(v));
    }
  }
  if (offset != blob.size()) throw ParseError("model blob size mismatch: " + path);
  return loaded;
}

}  // namespace varigrad::nn
