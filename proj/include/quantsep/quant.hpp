// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Symmetric low-bit weight quantization with one shared table per weight
// cluster: codes in [-(2^(n-1)-1), 2^(n-1)-1] scaled by a full-precision
// alpha, bit-packed serialization and model-size accounting.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/sepnet.hpp"

namespace quantsep::quant {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;

inline void check_bits(int bits) {
  if (bits < kMinBits) throw ConfigError(cat("quant: ", bits, "-bit precision is below the 2-bit minimum"));
  if (bits > kMaxBits) throw ConfigError(cat("quant: ", bits, "-bit precision exceeds the 16-bit maximum"));
}

inline std::int32_t max_code(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

// {0, +-alpha, ..., +-alpha (2^(n-1)-1)} in ascending order.
inline std::vector<double> build_table(int bits, double alpha) {
  check_bits(bits);
  if (!(alpha > 0.0)) throw ConfigError(cat("quant: scale must be positive, got ", alpha));
  const std::int32_t top = max_code(bits);
  std::vector<double> table;
  table.reserve(2 * static_cast<std::size_t>(top) + 1);
  for (std::int32_t c = -top; c <= top; ++c) table.push_back(alpha * c);
  return table;
}

// Nearest table entry; midpoints go to the smaller magnitude, values past
// the table range clamp to the extreme codes.
inline std::int32_t quantize_value(double theta, int bits, double alpha) {
  const std::int32_t top = max_code(bits);
  const double q = theta / alpha;
  if (q >= top) return top;
  if (q <= -top) return -top;
  const double inner = std::trunc(q);
  const double outer = inner + (q >= 0.0 ? 1.0 : -1.0);
  const double d_inner = std::abs(theta - inner * alpha), d_outer = std::abs(theta - outer * alpha);
  const double chosen = d_outer < d_inner ? outer : inner;
  return static_cast<std::int32_t>(std::clamp<double>(chosen, -top, top));
}

inline std::vector<std::int32_t> quantize_cluster(std::span<const float> weights, int bits, double alpha) {
  check_bits(bits);
  if (!(alpha > 0.0)) throw ConfigError(cat("quant: scale must be positive, got ", alpha));
  std::vector<std::int32_t> codes(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) codes[i] = quantize_value(weights[i], bits, alpha);
  return codes;
}

inline std::vector<float> dequantize_codes(std::span<const std::int32_t> codes, double alpha) {
  std::vector<float> out(codes.size());
  const float a = static_cast<float>(alpha);
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<float>(codes[i]) * a;
  return out;
}

// Sum of squared reconstruction errors at (bits, alpha), in double.
inline double reconstruction_error(std::span<const float> weights, int bits, double alpha) {
  const float a = static_cast<float>(alpha);
  double err = 0.0;
  for (float w : weights) {
    const double d = static_cast<double>(w) - static_cast<float>(quantize_value(w, bits, alpha)) * a;
    err += d * d;
  }
  return err;
}

enum class ScaleMethod { Mse, Absmax };

inline double absmax_scale(std::span<const float> weights, int bits) {
  double peak = 0.0;
  for (float w : weights) peak = std::max(peak, static_cast<double>(std::abs(w)));
  return peak / max_code(bits);
}

// Scale for a cluster. Mse: golden-section search of the squared error over
// alpha = s * absmax/(2^(n-1)-1), s in [0.3, 1.5], 200 iterations; the absmax
// scale is kept when it is at least as good. All-zero clusters get alpha = 1.
inline double fit_scale(std::span<const float> weights, int bits, ScaleMethod method = ScaleMethod::Mse) {
  check_bits(bits);
  if (weights.empty()) throw ShapeError("fit_scale: empty cluster");
  const double base = absmax_scale(weights, bits);
  if (base == 0.0) return 1.0;
  if (method == ScaleMethod::Absmax) return base;
  auto objective = [&](double s) { return reconstruction_error(weights, bits, s * base); };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.3, hi = 1.5;
  double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  for (int it = 0; it < 200; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = objective(x2);
    }
  }
  const double s_best = f1 <= f2 ? x1 : x2;
  const double f_best = std::min(f1, f2);
  return objective(1.0) <= f_best ? base : s_best * base;
}

// --- bit packing ----------------------------------------------------------

// n-bit two's complement codes packed LSB-first, zero-padded to a byte.
inline std::string pack_codes(std::span<const std::int32_t> codes, int bits) {
  if (bits < 1 || bits > 32) throw ShapeError(cat("pack: unsupported width ", bits));
  std::string out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, '\0');
  const std::uint64_t mask = (bits == 32) ? 0xFFFFFFFFULL : ((std::uint64_t{1} << bits) - 1);
  std::size_t bit = 0;
  for (std::int32_t code : codes) {
    std::uint64_t v = static_cast<std::uint64_t>(static_cast<std::uint32_t>(code)) & mask;
    for (int b = 0; b < bits; ++b, ++bit)
      if ((v >> b) & 1U) out[bit / 8] = static_cast<char>(static_cast<unsigned char>(out[bit / 8]) | (1U << (bit % 8)));
  }
  return out;
}

inline std::vector<std::int32_t> unpack_codes(std::string_view bytes, int bits, std::size_t count) {
  if (bits < 1 || bits > 32) throw ShapeError(cat("unpack: unsupported width ", bits));
  if (bytes.size() * 8 < count * static_cast<std::size_t>(bits)) throw ConfigError("unpack: code stream truncated");
  std::vector<std::int32_t> codes(count);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t v = 0;
    for (int b = 0; b < bits; ++b, ++bit)
      if ((static_cast<unsigned char>(bytes[bit / 8]) >> (bit % 8)) & 1U) v |= std::uint64_t{1} << b;
    if (bits < 32 && ((v >> (bits - 1)) & 1U)) v |= ~((std::uint64_t{1} << bits) - 1);
    codes[i] = static_cast<std::int32_t>(static_cast<std::int64_t>(v));
  }
  return codes;
}

// --- schemes over a model ----------------------------------------------------

struct ClusterScheme {
  std::string id;
  int bits = 8;
  double alpha = 1.0;
};

using BitAssignment = std::map<std::string, int>;

struct QuantScheme {
  std::vector<ClusterScheme> clusters;

  const ClusterScheme& at(const std::string& id) const {
    for (const auto& c : clusters)
      if (c.id == id) return c;
    throw ConfigError(cat("quant: scheme has no cluster '", id, "'"));
  }
};

// Concatenated weights of a cluster in parameter order.
inline std::vector<float> gather(const sepnet::SepModel& model, const sepnet::CensusEntry& entry) {
  std::vector<float> out;
  out.reserve(entry.count);
  for (std::size_t idx : entry.params) {
    const auto d = model.params()[idx].data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

inline void scatter(sepnet::SepModel& model, const sepnet::CensusEntry& entry, std::span<const float> values) {
  std::size_t off = 0;
  for (std::size_t idx : entry.params) {
    auto d = model.params()[idx].mutable_data();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + d.size()), d.begin());
    off += d.size();
  }
}

inline BitAssignment uniform_assignment(const std::vector<sepnet::CensusEntry>& census, int bits) {
  BitAssignment a;
  for (const auto& e : census)
    if (e.quantized) a[e.id] = bits;
  return a;
}

// Fits a scale for every quantized cluster at its assigned width.
inline QuantScheme make_scheme(const sepnet::SepModel& model, const std::vector<sepnet::CensusEntry>& census,
                               const BitAssignment& bits, ScaleMethod method = ScaleMethod::Mse) {
  QuantScheme scheme;
  for (const auto& e : census) {
    if (!e.quantized) continue;
    const auto it = bits.find(e.id);
    if (it == bits.end()) throw ConfigError(cat("quant: assignment misses cluster '", e.id, "'"));
    check_bits(it->second);
    // Scales are stored as 32-bit floats in packed files; round here so
    // in-memory and file round-trips agree bit for bit.
    const double alpha = static_cast<float>(fit_scale(gather(model, e), it->second, method));
    scheme.clusters.push_back({e.id, it->second, alpha});
  }
  return scheme;
}

// Model copy whose clustered weights are replaced by their reconstructions.
inline sepnet::SepModel apply_scheme(const sepnet::SepModel& model, const std::vector<sepnet::CensusEntry>& census,
                                     const QuantScheme& scheme) {
  sepnet::SepModel out = model.clone();
  for (const auto& e : census) {
    if (!e.quantized) continue;
    const auto& cs = scheme.at(e.id);
    const auto w = gather(model, e);
    scatter(out, e, dequantize_codes(quantize_cluster(w, cs.bits, cs.alpha), cs.alpha));
  }
  return out;
}

// --- size accounting ---------------------------------------------------------

struct SizeReport {
  std::size_t total_params = 0;
  std::size_t quantized_params = 0;
  std::size_t clusters = 0;
  std::uint64_t quantized_bits = 0;
  std::uint64_t code_bytes = 0;   // per-cluster byte padding
  std::uint64_t scale_bytes = 0;  // one 32-bit alpha per cluster
  std::uint64_t float_bytes = 0;  // unquantized parameters at 32 bits
  std::uint64_t total_bytes = 0;
  std::uint64_t full_precision_bytes = 0;
  double average_bits = 0.0;             // over quantized parameters
  double quantized_fraction_ratio = 0.0;  // 32 / average_bits
  double end_to_end_ratio = 0.0;          // full_precision_bytes / total_bytes

  json to_json() const {
    return {{"total_params", total_params},
            {"quantized_params", quantized_params},
            {"clusters", clusters},
            {"quantized_bits", quantized_bits},
            {"code_bytes", code_bytes},
            {"scale_bytes", scale_bytes},
            {"float_bytes", float_bytes},
            {"total_bytes", total_bytes},
            {"full_precision_bytes", full_precision_bytes},
            {"average_bits", average_bits},
            {"quantized_fraction_ratio", quantized_fraction_ratio},
            {"end_to_end_ratio", end_to_end_ratio}};
  }
};

// Payload size; container overhead (magic, manifest) is reported by the file
// writer separately.
inline SizeReport model_size(const std::vector<sepnet::CensusEntry>& census, const BitAssignment& bits) {
  SizeReport r;
  for (const auto& e : census) {
    r.total_params += e.count;
    if (!e.quantized) {
      r.float_bytes += 4ULL * e.count;
      continue;
    }
    const auto it = bits.find(e.id);
    if (it == bits.end()) throw ConfigError(cat("model_size: assignment misses cluster '", e.id, "'"));
    const std::uint64_t b = static_cast<std::uint64_t>(e.count) * static_cast<std::uint64_t>(it->second);
    r.quantized_params += e.count;
    r.quantized_bits += b;
    r.code_bytes += (b + 7) / 8;
    r.scale_bytes += 4;
    ++r.clusters;
  }
  r.total_bytes = r.code_bytes + r.scale_bytes + r.float_bytes;
  r.full_precision_bytes = 4ULL * r.total_params;
  r.average_bits = r.quantized_params ? static_cast<double>(r.quantized_bits) / static_cast<double>(r.quantized_params) : 32.0;
  r.quantized_fraction_ratio = 32.0 / r.average_bits;
  r.end_to_end_ratio = r.total_bytes ? static_cast<double>(r.full_precision_bytes) / static_cast<double>(r.total_bytes) : 0.0;
  return r;
}

// --- packed model file -----------------------------------------------------

inline constexpr std::uint16_t kPackedVersion = 1;

struct PackedModel {
  json manifest;
  std::string blob;
};

inline PackedModel pack_model(const sepnet::SepModel& model, const std::vector<sepnet::CensusEntry>& census,
                              const QuantScheme& scheme, const sepnet::CensusOptions& opts) {
  PackedModel pm;
  json clusters = json::array(), floats = json::array();
  std::vector<std::string> streams;
  std::size_t offset_bits = 0;
  for (const auto& e : census) {
    if (!e.quantized) continue;
    const auto& cs = scheme.at(e.id);
    const float alpha = static_cast<float>(cs.alpha);
    const auto codes = quantize_cluster(gather(model, e), cs.bits, alpha);
    std::string bytes = pack_codes(codes, cs.bits);
    json params = json::array();
    for (std::size_t idx : e.params) params.push_back(model.info()[idx].id);
    clusters.push_back({{"id", e.id},
                        {"bits", cs.bits},
                        {"alpha", alpha},
                        {"count", e.count},
                        {"offset_bits", offset_bits},
                        {"params", params}});
    offset_bits += bytes.size() * 8;
    pm.blob += bytes;
  }
  std::size_t offset_bytes = pm.blob.size();
  for (const auto& e : census) {
    if (e.quantized) continue;
    for (std::size_t idx : e.params) {
      const auto& p = model.params()[idx];
      floats.push_back({{"id", model.info()[idx].id}, {"offset_bytes", offset_bytes}, {"count", p.numel()}});
      const std::string bytes = floats_to_bytes(p.values());
      pm.blob += bytes;
      offset_bytes += bytes.size();
    }
  }
  pm.manifest = {{"format_version", kPackedVersion},
                 {"architecture", model.arch().to_json()},
                 {"granularity", opts.granularity == sepnet::Granularity::Block ? "block" : "sublayer"},
                 {"quantize_io", opts.quantize_io},
                 {"clusters", clusters},
                 {"float_params", floats},
                 {"blob_bytes", pm.blob.size()},
                 {"blob_sha256", sha256_hex(pm.blob)}};
  return pm;
}

inline sepnet::CensusOptions packed_census_options(const PackedModel& pm) {
  sepnet::CensusOptions o;
  o.granularity = pm.manifest.at("granularity").get<std::string>() == "block" ? sepnet::Granularity::Block
                                                                              : sepnet::Granularity::Sublayer;
  o.quantize_io = pm.manifest.at("quantize_io").get<bool>();
  return o;
}

// "QSEP" | u16 version | u32 manifest length | manifest JSON | blob.
inline std::string encode_packed(const PackedModel& pm) {
  const std::string manifest = pm.manifest.dump();
  std::string out = "QSEP";
  put_le<std::uint16_t>(out, kPackedVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;
  out += pm.blob;
  return out;
}

inline PackedModel decode_packed(std::string_view bytes) {
  if (bytes.size() < 10 || bytes.substr(0, 4) != "QSEP") throw ConfigError("packed model: bad magic");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kPackedVersion) throw ConfigError(cat("packed model: unsupported version ", version));
  const auto length = get_le<std::uint32_t>(bytes, 6);
  if (10 + static_cast<std::size_t>(length) > bytes.size()) throw ConfigError("packed model: truncated manifest");
  PackedModel pm;
  try {
    pm.manifest = json::parse(bytes.substr(10, length));
  } catch (const json::exception& e) {
    throw ConfigError(cat("packed model: malformed manifest: ", e.what()));
  }
  pm.blob = std::string(bytes.substr(10 + length));
  if (pm.blob.size() != pm.manifest.at("blob_bytes").get<std::size_t>())
    throw ConfigError("packed model: blob length does not match the manifest");
  if (sha256_hex(pm.blob) != pm.manifest.at("blob_sha256").get<std::string>())
    throw ConfigError("packed model: blob SHA-256 does not match the manifest");
  return pm;
}

// Manifest bytes: everything in the file that is not payload.
inline std::size_t container_overhead(const PackedModel& pm) { return encode_packed(pm).size() - pm.blob.size(); }

inline BitAssignment packed_bits(const PackedModel& pm) {
  BitAssignment bits;
  for (const auto& c : pm.manifest.at("clusters")) bits[c.at("id").get<std::string>()] = c.at("bits").get<int>();
  return bits;
}

// Rebuilds the network; every cluster must agree with the census the
// architecture implies (same ids, order, counts and member tensors).
inline sepnet::SepModel dequantize(const PackedModel& pm) {
  sepnet::SepModel model(sepnet::ArchConfig::from_json(pm.manifest.at("architecture")));
  const auto census = sepnet::census(model, packed_census_options(pm));
  const auto expected = sepnet::quantized_clusters(census);
  const auto& clusters = pm.manifest.at("clusters");
  for (std::size_t i = 0; i < std::max(expected.size(), clusters.size()); ++i) {
    if (i >= clusters.size()) throw ConfigError(cat("dequantize: census mismatch at cluster '", expected[i].id, "'"));
    const auto& c = clusters[i];
    const auto id = c.at("id").get<std::string>();
    if (i >= expected.size() || expected[i].id != id || expected[i].count != c.at("count").get<std::size_t>())
      throw ConfigError(cat("dequantize: census mismatch at cluster '", id, "'"));
    const auto& members = c.at("params");
    if (members.size() != expected[i].params.size())
      throw ConfigError(cat("dequantize: census mismatch at cluster '", id, "'"));
    for (std::size_t k = 0; k < members.size(); ++k)
      if (members[k].get<std::string>() != model.info()[expected[i].params[k]].id)
        throw ConfigError(cat("dequantize: census mismatch at cluster '", id, "'"));
    const int bits = c.at("bits").get<int>();
    check_bits(bits);
    const double alpha = c.at("alpha").get<double>();
    const std::size_t start = c.at("offset_bits").get<std::size_t>() / 8;
    const std::size_t nbytes = (expected[i].count * static_cast<std::size_t>(bits) + 7) / 8;
    if (start + nbytes > pm.blob.size()) throw ConfigError(cat("dequantize: codes of '", id, "' exceed the blob"));
    const auto codes = unpack_codes(std::string_view(pm.blob).substr(start, nbytes), bits, expected[i].count);
    scatter(model, expected[i], dequantize_codes(codes, static_cast<float>(alpha)));
  }
  std::size_t float_total = 0;
  for (const auto& e : census)
    if (!e.quantized) float_total += e.params.size();
  const auto& floats = pm.manifest.at("float_params");
  if (floats.size() != float_total) throw ConfigError("dequantize: full-precision parameter list mismatch");
  for (const auto& f : floats) {
    const auto id = f.at("id").get<std::string>();
    const std::size_t idx = model.index_of(id);
    auto values = model.params()[idx].mutable_data();
    const std::size_t off = f.at("offset_bytes").get<std::size_t>();
    if (f.at("count").get<std::size_t>() != values.size() || off + 4 * values.size() > pm.blob.size())
      throw ConfigError(cat("dequantize: bad extent for '", id, "'"));
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = get_le<float>(pm.blob, off + 4 * k);
  }
  return model;
}

inline void save_packed(const std::string& path, const PackedModel& pm) { write_file(path, encode_packed(pm)); }
inline PackedModel load_packed(const std::string& path) { return decode_packed(read_file(path)); }

}  // namespace quantsep::quant
