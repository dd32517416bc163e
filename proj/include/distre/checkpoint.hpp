// Copyright 2026 The DistRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "distre/error.hpp"
#include "distre/model.hpp"

namespace distre {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kWeightsFile = "weights.bin";

// A checkpoint is a directory holding:
//   manifest.txt  "key = value" lines: format version, every ModelConfig
//                 field, optional "meta.<key>" entries, then one
//                 "tensor.<name> = <rows>x<cols> @ <offset>" line per tensor
//                 (byte offset into weights.bin)
//   weights.bin   all tensors as little-endian float32, in manifest order
namespace internal {

inline void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline std::string format_double(double v) {
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

}  // namespace internal

inline std::vector<std::pair<std::string, std::string>> model_config_fields(const ModelConfig& c) {
  return {
      {"layers", std::to_string(c.layers)},
      {"heads", std::to_string(c.heads)},
      {"width", std::to_string(c.width)},
      {"ff_width", std::to_string(c.ff_width)},
      {"context", std::to_string(c.context)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"relations", std::to_string(c.relations)},
      {"dropout_residual", internal::format_double(c.dropout_residual)},
      {"dropout_attention", internal::format_double(c.dropout_attention)},
      {"dropout_classifier", internal::format_double(c.dropout_classifier)},
  };
}

inline void set_model_config_field(ModelConfig& c, const std::string& key, const std::string& value) {
  auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
  if (key == "layers") c.layers = as_size();
  else if (key == "heads") c.heads = as_size();
  else if (key == "width") c.width = as_size();
  else if (key == "ff_width") c.ff_width = as_size();
  else if (key == "context") c.context = as_size();
  else if (key == "vocab_size") c.vocab_size = as_size();
  else if (key == "relations") c.relations = as_size();
  else if (key == "dropout_residual") c.dropout_residual = std::stod(value);
  else if (key == "dropout_attention") c.dropout_attention = std::stod(value);
  else if (key == "dropout_classifier") c.dropout_classifier = std::stod(value);
  else throw DataError(detail::concat("unknown model config field ", key));
}

template <std::floating_point Real>
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config,
                     const Parameters<Real>& params,
                     const std::map<std::string, std::string>& meta = {}) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kManifestFile, std::ios::binary);
  std::ofstream weights(dir / kWeightsFile, std::ios::binary);
  if (!manifest || !weights) {
    throw DataError(detail::concat("cannot write checkpoint in ", dir.string()));
  }
  manifest << "format = distre-checkpoint\n";
  manifest << "version = " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : model_config_fields(config)) manifest << "config." << k << " = " << v << '\n';
  for (const auto& [k, v] : meta) manifest << "meta." << k << " = " << v << '\n';
  std::size_t offset = 0;
  params.for_each([&](const std::string& name, const Tensor<Real>& t) {
    manifest << "tensor." << name << " = " << t.rows() << 'x' << t.cols() << " @ " << offset << '\n';
    for (Real v : t.values()) internal::write_f32_le(weights, static_cast<float>(v));
    offset += 4 * t.size();
  });
  if (!manifest || !weights) {
    throw DataError(detail::concat("failed writing checkpoint in ", dir.string()));
  }
}

template <std::floating_point Real>
struct Checkpoint {
  ModelConfig config;
  Parameters<Real> params;
  std::map<std::string, std::string> meta;
};

template <std::floating_point Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kManifestFile, std::ios::binary);
  if (!manifest) {
    throw DataError(detail::concat("cannot open checkpoint manifest in ", dir.string()));
  }
  std::map<std::string, std::string> entries;
  std::vector<std::string> tensor_order;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError(detail::concat("checkpoint manifest: bad line '", line, "'"));
    const std::string key = line.substr(0, eq);
    entries[key] = line.substr(eq + 3);
    if (key.rfind("tensor.", 0) == 0) tensor_order.push_back(key.substr(7));
  }
  if (entries["format"] != "distre-checkpoint" ||
      entries["version"] != std::to_string(kCheckpointVersion)) {
    throw DataError(detail::concat("checkpoint in ", dir.string(), ": unsupported format/version"));
  }
  Checkpoint<Real> ck;
  for (const auto& [k, v] : entries) {
    if (k.rfind("config.", 0) == 0) set_model_config_field(ck.config, k.substr(7), v);
    if (k.rfind("meta.", 0) == 0) ck.meta[k.substr(5)] = v;
  }
  ck.config.validate();
  ck.params = Parameters<Real>::zeros(ck.config);

  std::ifstream weights(dir / kWeightsFile, std::ios::binary);
  if (!weights) throw DataError(detail::concat("cannot open checkpoint weights in ", dir.string()));
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(weights)),
                                  std::istreambuf_iterator<char>());
  std::size_t index = 0;
  ck.params.for_each([&](const std::string& name, Tensor<Real>& t) {
    if (index >= tensor_order.size() || tensor_order[index] != name) {
      throw DataError(detail::concat("checkpoint manifest: expected tensor ", name, " at position ", index));
    }
    ++index;
    const std::string& desc = entries["tensor." + name];
    std::size_t rows = 0, cols = 0, offset = 0;
    char x = 0, at = 0;
    std::istringstream ds(desc);
    if (!(ds >> rows >> x >> cols >> at >> offset) || x != 'x' || at != '@') {
      throw DataError(detail::concat("checkpoint manifest: bad tensor entry for ", name));
    }
    if (rows != t.rows() || cols != t.cols()) {
      throw DataError(detail::concat("checkpoint tensor ", name, ": expected ", t.rows(), "x",
                                     t.cols(), ", got ", rows, "x", cols));
    }
    if (offset + 4 * t.size() > blob.size()) {
      throw DataError(detail::concat("checkpoint tensor ", name, " extends past end of weights"));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<Real>(internal::read_f32_le(blob.data() + offset + 4 * i));
    }
  });
  if (index != tensor_order.size()) throw DataError("checkpoint manifest: unexpected extra tensors");
  return ck;
}

}  // namespace distre
