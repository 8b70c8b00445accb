// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sensitivity.hpp"
#include "quantsep/sepnet.hpp"

namespace quantsep::alloc {

// Minimize sum_l omega[l][k_l] subject to sum_l counts[l] * candidates[k_l]
// <= capacity_bits. Ties: fewer total bits, then the lexicographically
// smallest bit vector in cluster order.
struct Problem {
  std::vector<std::uint64_t> counts;
  std::vector<int> candidates;
  std::vector<std::vector<double>> omega;
  std::uint64_t capacity_bits = 0;

  std::uint64_t total_count() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

  void validate() const {
    if (counts.empty()) throw ConfigError("allocation: no clusters");
    if (candidates.empty()) throw ConfigError("allocation: empty candidate set");
    if (omega.size() != counts.size()) throw ConfigError("allocation: sensitivity table does not match the census");
    for (int n : candidates)
      if (n < quant::kMinBits) throw ConfigError(cat("allocation: candidate ", n, " below the 2-bit floor"));
    for (std::size_t i = 1; i < candidates.size(); ++i)
      if (candidates[i] <= candidates[i - 1]) throw ConfigError("allocation: candidates must be strictly increasing");
    for (const auto& row : omega) {
      if (row.size() != candidates.size()) throw ConfigError("allocation: sensitivity row has wrong width");
      for (double v : row)
        if (!std::isfinite(v)) throw ConfigError("allocation: non-finite sensitivity value");
    }
  }

  std::uint64_t min_bits() const {
    std::uint64_t b = 0;
    for (auto c : counts) b += c * static_cast<std::uint64_t>(candidates.front());
    return b;
  }

  void require_feasible() const {
    if (min_bits() > capacity_bits)
      throw ConfigError(cat("allocation: budget infeasible; ", static_cast<double>(capacity_bits) / total_count(),
                            " average bits requested, minimum achievable is ", candidates.front(), " (all clusters at ",
                            candidates.front(), " bits)"));
  }
};

struct Solution {
  std::vector<int> bits;
  double objective = 0.0;
  std::uint64_t total_bits = 0;
};

// Right fold, the order the solvers accumulate in.
inline double objective_of(const Problem& p, const std::vector<std::size_t>& choice) {
  double s = 0.0;
  for (std::size_t l = choice.size(); l-- > 0;) s = p.omega[l][choice[l]] + s;
  return s;
}

inline Solution solve(const Problem& p) {
  p.validate();
  p.require_feasible();
  const std::size_t L = p.counts.size(), K = p.candidates.size();
  std::uint64_t unit = 0;
  for (auto c : p.counts)
    for (int n : p.candidates) unit = std::gcd(unit, c * static_cast<std::uint64_t>(n));
  if (unit == 0) unit = 1;
  const std::uint64_t max_bits = [&] {
    std::uint64_t b = 0;
    for (auto c : p.counts) b += c * static_cast<std::uint64_t>(p.candidates.back());
    return b;
  }();
  const std::size_t cap = static_cast<std::size_t>(std::min(p.capacity_bits, max_bits) / unit);
  std::vector<std::vector<std::size_t>> cost(L, std::vector<std::size_t>(K));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t k = 0; k < K; ++k)
      cost[l][k] = static_cast<std::size_t>(p.counts[l] * static_cast<std::uint64_t>(p.candidates[k]) / unit);

  constexpr double inf = std::numeric_limits<double>::infinity();
  // best[l][w]: optimum over clusters l..L-1 using exactly w units.
  std::vector<std::vector<double>> best(L + 1, std::vector<double>(cap + 1, inf));
  best[L][0] = 0.0;
  for (std::size_t l = L; l-- > 0;) {
    auto& row = best[l];
    const auto& next = best[l + 1];
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t c = cost[l][k];
      const double om = p.omega[l][k];
      for (std::size_t w = c; w <= cap; ++w) {
        const double v = om + next[w - c];
        if (v < row[w]) row[w] = v;
      }
    }
  }
  std::size_t w_best = 0;
  for (std::size_t w = 1; w <= cap; ++w)
    if (best[0][w] < best[0][w_best]) w_best = w;
  if (!std::isfinite(best[0][w_best])) throw ConfigError("allocation: no feasible assignment");

  Solution sol;
  std::vector<std::size_t> choice(L);
  std::size_t w = w_best;
  for (std::size_t l = 0; l < L; ++l) {
    bool found = false;
    for (std::size_t k = 0; k < K && !found; ++k) {
      if (cost[l][k] > w) continue;
      if (p.omega[l][k] + best[l + 1][w - cost[l][k]] == best[l][w]) {
        choice[l] = k;
        w -= cost[l][k];
        found = true;
      }
    }
    if (!found) throw NumericalError("allocation: reconstruction failed");
  }
  for (std::size_t l = 0; l < L; ++l) {
    sol.bits.push_back(p.candidates[choice[l]]);
    sol.total_bits += p.counts[l] * static_cast<std::uint64_t>(sol.bits.back());
  }
  sol.objective = objective_of(p, choice);
  return sol;
}

inline constexpr std::size_t kBruteForceMaxClusters = 12;

inline Solution brute_force(const Problem& p) {
  p.validate();
  if (p.counts.size() > kBruteForceMaxClusters)
    throw ConfigError(cat("brute-force allocation: ", p.counts.size(), " clusters exceeds the limit of ",
                          kBruteForceMaxClusters));
  p.require_feasible();
  const std::size_t L = p.counts.size(), K = p.candidates.size();
  std::vector<std::size_t> choice(L, 0), best_choice;
  double best_obj = std::numeric_limits<double>::infinity();
  std::uint64_t best_bits = 0;
  // Enumerate in lexicographic order, so the first of any tie is kept.
  while (true) {
    std::uint64_t bits = 0;
    for (std::size_t l = 0; l < L; ++l) bits += p.counts[l] * static_cast<std::uint64_t>(p.candidates[choice[l]]);
    if (bits <= p.capacity_bits) {
      const double obj = objective_of(p, choice);
      if (best_choice.empty() || obj < best_obj || (obj == best_obj && bits < best_bits)) {
        best_choice = choice;
        best_obj = obj;
        best_bits = bits;
      }
    }
    std::size_t l = L;
    while (l-- > 0) {
      if (++choice[l] < K) break;
      choice[l] = 0;
    }
    if (l == static_cast<std::size_t>(-1)) break;
  }
  Solution sol;
  for (std::size_t l = 0; l < L; ++l) sol.bits.push_back(p.candidates[best_choice[l]]);
  sol.objective = best_obj;
  sol.total_bits = best_bits;
  return sol;
}

// --- profile + census front end ---------------------------------------------

struct Budget {
  enum class Kind { AverageBits, Bytes } kind = Kind::AverageBits;
  double value = 4.0;

  json to_json() const { return {{kind == Kind::AverageBits ? "average_bits" : "bytes", value}}; }
};

// Bit capacity of the quantized clusters. A byte budget first pays for scales
// and full-precision parameters, then payload rounding is ignored.
inline std::uint64_t capacity_bits(const std::vector<sepnet::CensusEntry>& census, const Budget& budget) {
  std::uint64_t quantized = 0, fixed_bytes = 0;
  for (const auto& e : census) {
    if (e.quantized) {
      quantized += e.count;
      fixed_bytes += 4;
    } else {
      fixed_bytes += 4 * e.count;
    }
  }
  if (budget.kind == Budget::Kind::AverageBits) {
    if (!(budget.value >= quant::kMinBits))
      throw ConfigError(cat("allocation: average-bit budget ", budget.value, " is infeasible; minimum achievable is ",
                            quant::kMinBits));
    return static_cast<std::uint64_t>(std::floor(budget.value * static_cast<double>(quantized) + 1e-9));
  }
  const double spare = budget.value - static_cast<double>(fixed_bytes);
  if (spare < static_cast<double>(quantized) * quant::kMinBits / 8.0)
    throw ConfigError(cat("allocation: byte budget ", budget.value, " is infeasible; minimum achievable is ",
                          static_cast<double>(fixed_bytes) + static_cast<double>(quantized) * quant::kMinBits / 8.0,
                          " bytes (all clusters at 2 bits)"));
  return static_cast<std::uint64_t>(std::floor(spare * 8.0));
}

struct PrecisionAssignment {
  std::string metric;
  quant::BitAssignment bits;
  std::vector<std::string> order;
  double average_bits = 0.0;
  std::size_t size_bytes = 0;
  double objective = 0.0;
  std::string profile_hash;
  json budget = json::object();
  json rounds = json::array();  // NAS only

  json to_json() const {
    json b = json::object();
    for (const auto& id : order) b[id] = bits.at(id);
    json j = {{"metric", metric},       {"bits", b},
              {"average_bits", average_bits}, {"size_bytes", size_bytes},
              {"objective", objective}, {"budget", budget},
              {"profile_hash", profile_hash}};
    if (!rounds.empty()) j["rounds"] = rounds;
    return j;
  }

  static PrecisionAssignment from_json(const json& j) {
    PrecisionAssignment a;
    a.metric = j.at("metric").get<std::string>();
    for (const auto& [id, n] : j.at("bits").items()) {
      a.order.push_back(id);
      a.bits[id] = n.get<int>();
      quant::check_bits(a.bits[id]);
    }
    a.average_bits = j.at("average_bits").get<double>();
    a.size_bytes = j.at("size_bytes").get<std::size_t>();
    a.objective = j.at("objective").get<double>();
    a.profile_hash = j.value("profile_hash", std::string{});
    a.budget = j.value("budget", json::object());
    a.rounds = j.value("rounds", json::array());
    return a;
  }
};

inline double average_bits(const std::vector<sepnet::CensusEntry>& census, const quant::BitAssignment& bits) {
  std::uint64_t num = 0, den = 0;
  for (const auto& e : census) {
    if (!e.quantized) continue;
    num += e.count * static_cast<std::uint64_t>(bits.at(e.id));
    den += e.count;
  }
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline PrecisionAssignment finish(const std::string& metric, const std::vector<sepnet::CensusEntry>& census,
                                  const quant::BitAssignment& bits, double objective) {
  PrecisionAssignment a;
  a.metric = metric;
  a.bits = bits;
  for (const auto& e : census)
    if (e.quantized) a.order.push_back(e.id);
  a.average_bits = average_bits(census, bits);
  a.size_bytes = quant::model_size(census, bits).total_bytes;
  a.objective = objective;
  return a;
}

inline Problem make_problem(const sensitivity::SensitivityProfile& prof, const std::vector<sepnet::CensusEntry>& census,
                            const Budget& budget) {
  const auto clusters = sepnet::quantized_clusters(census);
  if (clusters.size() != prof.clusters.size())
    throw ConfigError(cat("allocation: profile has ", prof.clusters.size(), " clusters, census has ", clusters.size()));
  Problem p;
  for (std::size_t l = 0; l < clusters.size(); ++l) {
    if (clusters[l].id != prof.clusters[l] || clusters[l].count != prof.counts[l])
      throw ConfigError(cat("allocation: profile cluster '", prof.clusters[l], "' does not match census entry '",
                            clusters[l].id, "'"));
    p.counts.push_back(clusters[l].count);
  }
  p.candidates = prof.candidates;
  p.omega = prof.omega;
  p.capacity_bits = capacity_bits(census, budget);
  return p;
}

inline PrecisionAssignment assignment_from(const sensitivity::SensitivityProfile& prof,
                                           const std::vector<sepnet::CensusEntry>& census, const Budget& budget,
                                           const Solution& sol) {
  quant::BitAssignment bits;
  for (std::size_t l = 0; l < prof.clusters.size(); ++l) bits[prof.clusters[l]] = sol.bits[l];
  auto a = finish(prof.metric, census, bits, sol.objective);
  a.budget = budget.to_json();
  a.profile_hash = sha256_hex(prof.to_json().dump());
  return a;
}

inline PrecisionAssignment allocate(const sensitivity::SensitivityProfile& prof,
                                    const std::vector<sepnet::CensusEntry>& census, const Budget& budget) {
  return assignment_from(prof, census, budget, solve(make_problem(prof, census, budget)));
}

inline PrecisionAssignment brute_force_allocate(const sensitivity::SensitivityProfile& prof,
                                                const std::vector<sepnet::CensusEntry>& census, const Budget& budget) {
  return assignment_from(prof, census, budget, brute_force(make_problem(prof, census, budget)));
}

}  // namespace quantsep::alloc
