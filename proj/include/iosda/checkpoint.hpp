#pragma once

// ParamSet checkpoint files:
//   "IOSDPARM" | version u32 | repeated { name_len u32 | name | rows u32 | cols u32 | f64 payload }
// Tensors run to end of file. All integers and reals are little-endian.
//
// Manifests are flat key=value text files, one entry per line, sorted by key.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "iosda/binio.hpp"
#include "iosda/errors.hpp"
#include "iosda/matrix.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

inline constexpr char kParamMagic[9] = "IOSDPARM";
inline constexpr std::uint32_t kParamVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, RealMatrix>>;

inline void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, kParamMagic);
  binio::put_uint<std::uint32_t>(os, kParamVersion);
  for (const auto& [name, m] : tensors) {
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) binio::put_f64(os, v);
  }
  if (!os) throw DataError("write failed: " + path.string());
}

inline NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string p = path.string();
  binio::expect_magic(is, kParamMagic, p);
  const auto version = binio::get_uint<std::uint32_t>(is, "version");
  if (version != kParamVersion) throw DataError(p + ": unsupported version " + std::to_string(version));
  NamedTensors out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = binio::get_uint<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError(p + ": truncated tensor name");
    const auto rows = binio::get_uint<std::uint32_t>(is, "rows");
    const auto cols = binio::get_uint<std::uint32_t>(is, "cols");
    RealMatrix m(rows, cols);
    for (double& v : m.data()) v = binio::get_f64(is, "tensor payload");
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

inline NamedTensors to_named(const ParamSet& ps, const std::string& prefix = "") {
  NamedTensors out;
  ps.for_each_named([&](const std::string& n, const RealMatrix& m) { out.emplace_back(prefix + n, m); });
  return out;
}

/// Rebuilds a ParamSet from tensors named "<prefix>L<i>.<field>".
inline ParamSet from_named(const NamedTensors& tensors, const std::string& prefix = "") {
  ParamSet ps;
  for (const auto& [full, m] : tensors) {
    if (full.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string name = full.substr(prefix.size());
    if (name.size() < 3 || name[0] != 'L') continue;
    const auto dot = name.find('.');
    if (dot == std::string::npos) throw DataError("bad tensor name: " + full);
    const std::size_t idx = std::stoul(name.substr(1, dot - 1));
    const std::string field = name.substr(dot + 1);
    if (ps.layers.size() <= idx) ps.layers.resize(idx + 1);
    auto& l = ps.layers[idx];
    if (field == "weight") l.weight = m;
    else if (field == "bias") l.bias = m;
    else if (field == "bn_gamma") l.bn_gamma = m;
    else if (field == "bn_beta") l.bn_beta = m;
    else if (field == "bn_mean") l.bn_mean = m;
    else if (field == "bn_var") l.bn_var = m;
    else throw DataError("unknown tensor field: " + full);
  }
  return ps;
}

inline void save_params(const std::filesystem::path& path, const ParamSet& ps) {
  save_tensors(path, to_named(ps));
}
inline ParamSet load_params(const std::filesystem::path& path) { return from_named(load_tensors(path)); }

inline NamedTensors to_named(const AdamState& st) {
  NamedTensors out;
  auto scalar = [](double v) { return RealMatrix(1, 1, v); };
  out.emplace_back("adam.step", scalar(static_cast<double>(st.step_count)));
  out.emplace_back("adam.lr", scalar(st.config.learning_rate));
  out.emplace_back("adam.beta1", scalar(st.config.beta1));
  out.emplace_back("adam.beta2", scalar(st.config.beta2));
  out.emplace_back("adam.eps", scalar(st.config.epsilon));
  for (auto& t : to_named(st.m, "m.")) out.push_back(std::move(t));
  for (auto& t : to_named(st.v, "v.")) out.push_back(std::move(t));
  return out;
}

inline AdamState adam_from_named(const NamedTensors& tensors) {
  AdamState st;
  auto find = [&](const std::string& n) -> double {
    for (const auto& [name, m] : tensors)
      if (name == n && m.size() == 1) return m.data()[0];
    throw DataError("missing optimizer field " + n);
  };
  st.step_count = static_cast<std::uint64_t>(find("adam.step"));
  st.config.learning_rate = find("adam.lr");
  st.config.beta1 = find("adam.beta1");
  st.config.beta2 = find("adam.beta2");
  st.config.epsilon = find("adam.eps");
  st.m = from_named(tensors, "m.");
  st.v = from_named(tensors, "v.");
  return st;
}

inline void save_adam(const std::filesystem::path& path, const AdamState& st) { save_tensors(path, to_named(st)); }
inline AdamState load_adam(const std::filesystem::path& path) { return adam_from_named(load_tensors(path)); }

using Manifest = std::map<std::string, std::string>;

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path.string() + ": malformed line '" + line + "'");
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

inline const std::string& manifest_get(const Manifest& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw DataError("manifest missing key " + key);
  return it->second;
}

}  // namespace iosda
