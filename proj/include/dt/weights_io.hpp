#pragma once

// Weight file: one line of JSON header, '\n', then flat little-endian float32
// payload in header order. The header carries the full NetworkSpec, tensor
// shapes, byte order, value count, a CRC-32 of the payload and free-form
// string metadata.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>
#include <zlib.h>

#include "dt/nnet.hpp"

namespace dt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// NetworkSpec <-> JSON

inline json spec_to_json(const NetworkSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    json j{{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::conv) {
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["pad"] = l.pad;
      j["in"] = l.in_channels;
      j["out"] = l.out_channels;
      j["bias"] = l.has_bias;
    } else if (l.kind == LayerKind::maxpool) {
      j["window"] = l.kernel;
      j["stride"] = l.stride;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", s.name},
          {"input", {s.input.height, s.input.width, s.input.channels}},
          {"layers", std::move(layers)},
          {"taps", {{"low", s.taps[0]}, {"middle", s.taps[1]}, {"high", s.taps[2]}}}};
}

inline NetworkSpec spec_from_json(const json& j) {
  try {
    NetworkSpec s;
    s.name = j.value("name", std::string("unnamed"));
    const auto& in = j.at("input");
    s.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    for (const auto& lj : j.at("layers")) {
      const auto kind = lj.at("kind").get<std::string>();
      if (kind == "conv")
        s.layers.push_back(LayerSpec::conv(lj.at("kernel"), lj.value("stride", 1), lj.value("pad", 0), lj.at("in"),
                                           lj.at("out"), lj.value("bias", false)));
      else if (kind == "relu")
        s.layers.push_back(LayerSpec::relu());
      else if (kind == "maxpool")
        s.layers.push_back(LayerSpec::maxpool(lj.at("window"), lj.value("stride", lj.at("window").get<int>())));
      else
        throw Error("spec: unknown layer kind '" + kind + "' at layer " + std::to_string(s.layers.size()));
    }
    const auto& t = j.at("taps");
    s.taps = {t.at("low").get<int>(), t.at("middle").get<int>(), t.at("high").get<int>()};
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(std::string("spec: malformed JSON: ") + e.what());
  }
}

inline NetworkSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open spec file " + path.string());
  try {
    return spec_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("spec file " + path.string() + ": " + e.what());
  }
}

inline void save_spec(const std::filesystem::path& path, const NetworkSpec& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write spec file " + path.string());
  out << spec_to_json(s).dump(2) << '\n';
}

/// Names the first layer where two specs disagree, or "" when equal.
inline std::string spec_difference(const NetworkSpec& expected, const NetworkSpec& got) {
  if (expected.input != got.input) return "input dims differ";
  const std::size_t n = std::min(expected.layers.size(), got.layers.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!(expected.layers[i] == got.layers[i])) return "layer " + std::to_string(i) + " differs";
  if (expected.layers.size() != got.layers.size())
    return "layer count " + std::to_string(got.layers.size()) + " != expected " +
           std::to_string(expected.layers.size()) + " (first unmatched layer " + std::to_string(n) + ")";
  if (expected.taps != got.taps) return "taps differ";
  return {};
}

// ---------------------------------------------------------------------------
// Weight files

struct WeightFile {
  NetworkSpec spec;
  NetworkWeights weights;
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline void put_f32_le(std::string& buf, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline double get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace detail

/// Values are written as float32; snapshots produced by this library are
/// already float32-exact, so save/load is bit-identical for them.
inline void save_weights(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkWeights& w,
                         const std::map<std::string, std::string>& metadata = {}) {
  check_weights(spec, w);
  json tensors = json::array();
  std::string payload;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::conv) continue;
    tensors.push_back({{"name", "layer" + std::to_string(i) + ".kernel"},
                       {"shape", {l.out_channels, l.in_channels, l.kernel, l.kernel}}});
    for (double v : w.layers[i].kernel) detail::put_f32_le(payload, v);
    if (l.has_bias) {
      tensors.push_back({{"name", "layer" + std::to_string(i) + ".bias"}, {"shape", {l.out_channels}}});
      for (double v : w.layers[i].bias) detail::put_f32_le(payload, v);
    }
  }
  for (int t = 0; t < 3; ++t) {
    const auto& a = w.adapters[t];
    if (!a) continue;
    tensors.push_back({{"name", std::string("adapter.") + to_string(kLevels[t])},
                       {"shape", {a->out_channels, a->in_channels, 1, 1}}});
    for (double v : a->weight) detail::put_f32_le(payload, v);
  }
  json header{{"format", "dt-weights"},
              {"version", 1},
              {"byte_order", "little"},
              {"dtype", "float32"},
              {"spec", spec_to_json(spec)},
              {"tensors", std::move(tensors)},
              {"count", payload.size() / 4},
              {"crc32", detail::crc32_of(payload)},
              {"meta", metadata}};
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write weight file " + path.string());
    out << header.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Loads a weight file, verifying checksum and tensor shapes. When `expected`
/// is given the embedded spec must match it.
inline WeightFile load_weights(const std::filesystem::path& path, const std::optional<NetworkSpec>& expected = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw Error(path.string() + ": missing header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != "dt-weights") throw Error(path.string() + ": not a dt-weights file");
  if (header.value("byte_order", "") != "little" || header.value("dtype", "") != "float32")
    throw Error(path.string() + ": unsupported byte order or dtype");

  WeightFile wf;
  wf.spec = spec_from_json(header.at("spec"));
  if (expected) {
    const auto diff = spec_difference(*expected, wf.spec);
    if (!diff.empty()) throw Error(path.string() + ": spec mismatch: " + diff);
  }
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto count = header.at("count").get<std::size_t>();
  if (payload.size() != count * 4)
    throw Error(path.string() + ": payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                std::to_string(count * 4) + " (truncated?)");
  if (detail::crc32_of(payload) != header.at("crc32").get<std::uint32_t>())
    throw Error(path.string() + ": checksum mismatch");

  const auto& spec = wf.spec;
  wf.weights.layers.resize(spec.layers.size());
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& dst, std::size_t n) {
    if (pos + n > count) throw Error(path.string() + ": payload shorter than declared tensors");
    dst.resize(n);
    for (std::size_t k = 0; k < n; ++k) dst[k] = detail::get_f32_le(payload.data() + 4 * (pos + k));
    pos += n;
  };
  const auto& tensors = header.at("tensors");
  std::size_t ti = 0;
  auto expect_tensor = [&](const std::string& name, std::vector<int> shape) {
    if (ti >= tensors.size()) throw Error(path.string() + ": missing tensor " + name);
    const auto& t = tensors[ti++];
    if (t.at("name").get<std::string>() != name || t.at("shape").get<std::vector<int>>() != shape)
      throw Error(path.string() + ": tensor " + std::to_string(ti - 1) + " does not match " + name);
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::conv) continue;
    const std::string base = "layer" + std::to_string(i);
    expect_tensor(base + ".kernel", {l.out_channels, l.in_channels, l.kernel, l.kernel});
    take(wf.weights.layers[i].kernel, static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel);
    if (l.has_bias) {
      expect_tensor(base + ".bias", {l.out_channels});
      take(wf.weights.layers[i].bias, l.out_channels);
    }
  }
  for (; ti < tensors.size();) {
    const auto name = tensors[ti].at("name").get<std::string>();
    const auto shape = tensors[ti].at("shape").get<std::vector<int>>();
    int level = -1;
    for (int t = 0; t < 3; ++t)
      if (name == std::string("adapter.") + to_string(kLevels[t])) level = t;
    if (level < 0 || shape.size() != 4) throw Error(path.string() + ": unexpected tensor " + name);
    ++ti;
    Adapter1x1 a{shape[1], shape[0], {}};
    take(a.weight, static_cast<std::size_t>(shape[0]) * shape[1]);
    wf.weights.adapters[level] = std::move(a);
  }
  if (pos != count) throw Error(path.string() + ": trailing payload values");
  if (header.contains("meta"))
    for (auto it = header["meta"].begin(); it != header["meta"].end(); ++it)
      wf.metadata[it.key()] = it.value().get<std::string>();
  check_weights(spec, wf.weights);
  return wf;
}

}  // namespace dt
