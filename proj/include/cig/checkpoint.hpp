#pragma once
// Directory checkpoints: one text file per named tensor plus a manifest
// with shapes and content hashes. The hash manifest is what the
// "only these tensors changed" assertions diff.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cig/tensor.hpp"

namespace cig {

constexpr int kCheckpointFormatVersion = 1;

struct TensorInfo {
  std::vector<int> shape;
  std::string hash;
};

inline std::string tensor_filename(const std::string& name) {
  return name + ".tensor";
}

// Layout per tensor file: first line is the shape (space-separated dims),
// then one decimal value per line, round-trip exact.
inline void write_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tensor file: " + path);
  for (size_t d = 0; d < t.shape.size(); ++d)
    out << (d ? " " : "") << t.shape[d];
  out << "\n";
  for (double v : t.data) out << format_double(v) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline Tensor read_tensor_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tensor file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty tensor file: " + path);
  std::vector<int> shape;
  {
    std::istringstream is(line);
    int d;
    while (is >> d) shape.push_back(d);
  }
  Tensor t(shape);
  for (size_t i = 0; i < t.data.size(); ++i) {
    if (!std::getline(in, line))
      throw CheckpointError("tensor file truncated: " + path);
    t.data[i] = parse_double(line);
  }
  return t;
}

// Writes to a temp sibling then renames over the target.
inline void save_checkpoint(const std::string& dir, const TensorMap& params,
                            const nlohmann::ordered_json& meta) {
  namespace fs = std::filesystem;
  fs::path target(dir);
  fs::path tmp(dir + ".partial");
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::ordered_json::object();
  for (const auto& [name, t] : params) {
    write_tensor_file((tmp / tensor_filename(name)).string(), t);
    nlohmann::ordered_json tj;
    tj["shape"] = t.shape;
    tj["dtype"] = "f64";
    tj["hash"] = hash_hex(tensor_hash(t));
    manifest["tensors"][name] = std::move(tj);
  }
  {
    std::ofstream out(tmp / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::remove_all(target);
  fs::rename(tmp, target);
}

inline nlohmann::json load_manifest(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) throw CheckpointError("missing manifest in checkpoint: " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw CheckpointError("unreadable manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion)
    throw CheckpointError("unsupported checkpoint format in " + dir);
  return manifest;
}

struct LoadedCheckpoint {
  TensorMap params;
  nlohmann::json meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json manifest = load_manifest(dir);
  LoadedCheckpoint out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& [name, tj] : manifest.at("tensors").items()) {
    Tensor t = read_tensor_file((fs::path(dir) / tensor_filename(name)).string());
    auto shape = tj.at("shape").get<std::vector<int>>();
    if (t.shape != shape)
      throw CheckpointError("shape mismatch for tensor " + name + " in " + dir);
    if (hash_hex(tensor_hash(t)) != tj.at("hash").get<std::string>())
      throw CheckpointError("content hash mismatch for tensor " + name + " in " +
                            dir);
    out.params.emplace(name, std::move(t));
  }
  return out;
}

inline std::map<std::string, TensorInfo> checkpoint_tensor_info(
    const std::string& dir) {
  nlohmann::json manifest = load_manifest(dir);
  std::map<std::string, TensorInfo> out;
  for (const auto& [name, tj] : manifest.at("tensors").items())
    out[name] = TensorInfo{tj.at("shape").get<std::vector<int>>(),
                           tj.at("hash").get<std::string>()};
  return out;
}

// Names whose content differs between two checkpoints, including tensors
// present on only one side.
inline std::set<std::string> checkpoint_diff(const std::string& dir_a,
                                             const std::string& dir_b) {
  auto a = checkpoint_tensor_info(dir_a);
  auto b = checkpoint_tensor_info(dir_b);
  std::set<std::string> changed;
  for (const auto& [name, info] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.hash != info.hash ||
        it->second.shape != info.shape)
      changed.insert(name);
  }
  for (const auto& [name, info] : b)
    if (!a.count(name)) changed.insert(name);
  return changed;
}

}  // namespace cig
