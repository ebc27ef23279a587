#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "flowrl/nn.hpp"

namespace flowrl {

// Parameter checkpoints: a flat JSON container mapping dotted parameter
// names to shape + row-major values. Layout (stable, version-checked):
//   { "format": "flowrl.checkpoint", "version": 1,
//     "params": { "<dotted.name>": { "shape": [..], "data": [..] }, ... } }
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const NamedParams& params) {
  nlohmann::json root;
  root["format"] = "flowrl.checkpoint";
  root["version"] = kCheckpointVersion;
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    nlohmann::json entry;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.data().begin(), t.data().end());
    p[name] = std::move(entry);
  }
  root["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << root.dump();
}

// Fills the given parameter tensors in place; every name must be present
// with a matching shape.
inline void load_checkpoint(const std::string& path, NamedParams& params) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  nlohmann::json root = nlohmann::json::parse(in);
  if (root.value("format", "") != "flowrl.checkpoint")
    throw std::runtime_error("load_checkpoint: " + path + " is not a flowrl checkpoint");
  if (root.value("version", -1) != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version in " + path);
  const auto& p = root.at("params");
  for (auto& [name, t] : params) {
    if (!p.contains(name))
      throw std::runtime_error("load_checkpoint: missing parameter '" + name + "' in " + path);
    const auto& entry = p.at(name);
    Shape shape = entry.at("shape").get<Shape>();
    if (shape != t.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(shape) + " vs model " + shape_str(t.shape()));
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.size())
      throw std::runtime_error("load_checkpoint: bad value count for '" + name + "'");
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
}

}  // namespace flowrl
