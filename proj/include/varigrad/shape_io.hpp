#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "varigrad/errors.hpp"
#include "varigrad/shape_graph.hpp"

namespace varigrad {

/// File format: UTF-8 JSON object
///   {"vertices": [[x,y,z],...], "edges": [[i,j],...], "label": int|absent}
/// Datasets are JSON Lines, one shape object per line. Doubles are written
/// in their shortest round-trip decimal form, so read(write(g)) == g exactly
/// and write is byte-stable.

inline nlohmann::json shape_to_json(const ShapeGraph& g) {
  nlohmann::json j;
  auto verts = nlohmann::json::array();
  for (Index v = 0; v < g.vertices.rows(); ++v)
    verts.push_back({g.vertices(v, 0), g.vertices(v, 1), g.vertices(v, 2)});
  auto edges = nlohmann::json::array();
  for (Index e = 0; e < g.edges.rows(); ++e)
    edges.push_back({g.edges(e, 0), g.edges(e, 1)});
  j["vertices"] = std::move(verts);
  j["edges"] = std::move(edges);
  if (g.label.has_value()) j["label"] = *g.label;
  return j;
}

inline ShapeGraph shape_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
  if (!j.contains("vertices") || !j["vertices"].is_array())
    throw ParseError(where + ": missing or non-array field 'vertices'");
  if (!j.contains("edges") || !j["edges"].is_array())
    throw ParseError(where + ": missing or non-array field 'edges'");

  const auto& jv = j["vertices"];
  const auto& je = j["edges"];
  ShapeGraph g;
  g.vertices.resize(static_cast<Index>(jv.size()), 3);
  for (std::size_t i = 0; i < jv.size(); ++i) {
    const auto& row = jv[i];
    if (!row.is_array() || row.size() != 3 || !row[0].is_number() || !row[1].is_number() || !row[2].is_number())
      throw ParseError(where + ": vertices[" + std::to_string(i) + "]: expected 3 numbers");
    for (int c = 0; c < 3; ++c) g.vertices(static_cast<Index>(i), c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  g.edges.resize(static_cast<Index>(je.size()), 2);
  for (std::size_t i = 0; i < je.size(); ++i) {
    const auto& row = je[i];
    if (!row.is_array() || row.size() != 2 || !row[0].is_number_integer() || !row[1].is_number_integer())
      throw ParseError(where + ": edges[" + std::to_string(i) + "]: expected 2 integer indices");
    g.edges(static_cast<Index>(i), 0) = row[0].get<Index>();
    g.edges(static_cast<Index>(i), 1) = row[1].get<Index>();
  }
  if (j.contains("label")) {
    if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0)
      throw ParseError(where + ": label must be a nonnegative integer");
    g.label = j["label"].get<int>();
  }
  validate(g);
  return g;
}

/// Canonical single-line serialization (sorted keys, shortest decimals).
inline std::string write_shape(const ShapeGraph& g) { return shape_to_json(g).dump() + "\n"; }

inline ShapeGraph read_shape(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("shape: ") + e.what());
  }
  return shape_from_json(j, "shape");
}

inline void write_shape_file(const std::string& path, const ShapeGraph& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << write_shape(g);
}

inline ShapeGraph read_shape_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_shape(ss.str());
}

inline void write_dataset_stream(std::ostream& out, const std::vector<ShapeGraph>& shapes) {
  for (const auto& g : shapes) out << shape_to_json(g).dump() << "\n";
}

inline void write_dataset_file(const std::string& path, const std::vector<ShapeGraph>& shapes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_dataset_stream(out, shapes);
}

inline std::vector<ShapeGraph> read_dataset_stream(std::istream& in) {
  std::vector<ShapeGraph> shapes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    shapes.push_back(shape_from_json(j, "line " + std::to_string(lineno)));
  }
  return shapes;
}

inline std::vector<ShapeGraph> read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  return read_dataset_stream(in);
}

}  // namespace varigrad
