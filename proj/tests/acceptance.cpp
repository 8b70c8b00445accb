// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "quantsep/alloc.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sensitivity.hpp"

namespace {

using namespace quantsep;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// --- A1 -------------------------------------------------------------------

Outcome quantizer_exactness() {
  const auto t0 = Clock::now();
  Outcome out;
  std::size_t checked = 0;
  for (int n : {2, 4, 8, 16}) {
    Rng rng(static_cast<std::uint64_t>(1000 + n));
    std::vector<float> w(100000);
    for (auto& x : w) x = static_cast<float>(0.05 * rng.normal());
    const double alpha = quant::fit_scale(w, n);
    const std::int64_t top = (std::int64_t{1} << (n - 1)) - 1;
    const auto codes = quant::quantize_cluster(w, n, alpha);
    const auto values = quant::dequantize_codes(codes, alpha);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::int64_t c = codes[i];
      const bool in_table = c >= -top && c <= top && values[i] == static_cast<float>(c) * static_cast<float>(alpha);
      const bool in_range = std::abs(w[i]) <= alpha * static_cast<double>(top);
      const double err = std::abs(static_cast<double>(w[i]) - static_cast<double>(c) * alpha);
      if (!in_table || (in_range && err > alpha / 2.0 * (1.0 + 1e-12))) {
        out.pass = false;
        out.detail = cat("n=", n, " weight ", w[i], " code ", c, in_table ? "" : " (not in table)", " error ", err,
                         " alpha ", alpha);
        return out;
      }
      ++checked;
    }
    if (quant::unpack_codes(quant::pack_codes(codes, n), n, codes.size()) != codes) {
      out.pass = false;
      out.detail = cat("pack/unpack mismatch at n=", n);
      return out;
    }
  }
  const double dt = seconds_since(t0);
  out.pass = dt < 10.0;
  out.detail = cat(checked, " values over n in {2,4,8,16}; ", fixed(dt, 2), " s (limit 10 s)");
  return out;
}

// --- A2 -------------------------------------------------------------------

Outcome hutchinson_correctness() {
  using namespace qs_oracle;
  const auto t0 = Clock::now();
  std::vector<std::string> notes;
  bool pass = true;

  const Matrix d{{1.5, 0, 0, 0}, {0, -2.0, 0, 0}, {0, 0, 3.25, 0}, {0, 0, 0, 0.5}};
  const sensitivity::MatVec dop = [&](const std::vector<double>& z) { return matvec(d, z); };
  for (std::size_t m : {1u, 3u, 17u}) pass &= sensitivity::hutchinson_trace(dop, 4, m, m) == trace(d);
  notes.push_back(pass ? "diagonal exact" : "diagonal inexact");

  double worst = 0.0;
  for (std::size_t dim : {4u, 9u, 12u}) {
    const auto a = random_symmetric(dim, 50 + dim, -3.0, 3.0);
    const sensitivity::MatVec op = [&](const std::vector<double>& z) { return matvec(a, z); };
    worst = std::max(worst, std::abs(sensitivity::trace_over_probes(op, all_sign_patterns(dim)) - trace(a)));
  }
  pass &= worst <= 1e-8;
  notes.push_back(cat("exhaustive max error ", worst));

  const auto a = random_symmetric(50, 2026, 0.0, 4.0);
  const sensitivity::MatVec op = [&](const std::vector<double>& z) { return matvec(a, z); };
  const double rel = std::abs(sensitivity::hutchinson_trace(op, 50, 1000, 11) - trace(a)) / std::abs(trace(a));
  pass &= rel < 0.05;
  notes.push_back(cat("50x50 m=1000 relative error ", fixed(rel, 4)));

  const double dt = seconds_since(t0);
  pass &= dt < 30.0;
  return {pass, cat(notes[0], "; ", notes[1], "; ", notes[2], "; ", fixed(dt, 2), " s")};
}

// --- A3 -------------------------------------------------------------------

Outcome hvp_correctness() {
  const auto t0 = Clock::now();
  const qs_oracle::ToyMlp mlp;
  const auto theta = qs_oracle::uniform_values(qs_oracle::ToyMlp::dim, 77);
  const sensitivity::GradFn tape = [&](std::span<const double> p, std::span<double> g) { return mlp.tape_grad(p, g); };
  const std::size_t dim = qs_oracle::ToyMlp::dim;
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    std::vector<double> plus(theta), minus(theta), gp(dim), gm(dim), e(dim, 0.0);
    plus[k] += h;
    minus[k] -= h;
    mlp.oracle_grad(plus, gp);
    mlp.oracle_grad(minus, gm);
    e[k] = 1.0;
    const auto col = sensitivity::hvp(tape, theta, e);
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double exact = (gp[i] - gm[i]) / (2.0 * h);
      err += (col[i] - exact) * (col[i] - exact);
      ref += exact * exact;
    }
    worst = std::max(worst, std::sqrt(err) / std::max(std::sqrt(ref), 1e-300));
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-3 && dt < 30.0,
          cat(dim, " parameters, worst column relative error ", worst, "; ", fixed(dt, 2), " s")};
}

// --- A4 -------------------------------------------------------------------

Outcome allocator_optimality() {
  const auto t0 = Clock::now();
  Rng rng(4004);
  std::size_t mismatches = 0, monotone_violations = 0, scale_violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto p = qs_oracle::random_problem(rng);
    const auto dp = alloc::solve(p);
    const auto oracle = qs_oracle::exhaustive_optimum(p);
    if (dp.bits != oracle.bits || dp.objective != oracle.objective) ++mismatches;

    for (double c : {0.25, 7.0, 1e3}) {
      auto q = p;
      for (auto& row : q.omega)
        for (auto& v : row) v *= c;
      if (alloc::solve(q).bits != dp.bits) ++scale_violations;
    }
    double prev = INFINITY;
    const std::uint64_t total = p.total_count();
    for (std::uint64_t avg : {2u, 3u, 4u, 6u, 8u, 16u}) {
      p.capacity_bits = avg * total;
      const double obj = alloc::solve(p).objective;
      if (obj > prev) ++monotone_violations;
      prev = obj;
    }
  }
  const double dt = seconds_since(t0);
  return {mismatches == 0 && monotone_violations == 0 && scale_violations == 0 && dt < 60.0,
          cat("500 instances: ", mismatches, " oracle mismatches, ", monotone_violations, " monotonicity and ",
              scale_violations, " scale-invariance violations; ", fixed(dt, 2), " s")};
}

// --- A8 -------------------------------------------------------------------

Outcome size_accounting() {
  Rng rng(8008);
  std::size_t bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<sepnet::CensusEntry> census;
    quant::BitAssignment bits;
    const std::size_t clusters = 1 + rng.below(12);
    std::uint64_t qbits = 0, qcount = 0, code_bytes = 0;
    for (std::size_t l = 0; l < clusters; ++l) {
      const std::size_t count = 1 + rng.below(20000);
      const int n = std::array{2, 4, 8, 16}[rng.below(4)];
      census.push_back({cat("w", l), "conv", count, true, {}, 1, l});
      bits[cat("w", l)] = n;
      qbits += count * static_cast<std::uint64_t>(n);
      qcount += count;
      code_bytes += (count * static_cast<std::uint64_t>(n) + 7) / 8;
    }
    const std::size_t floats = rng.below(5000);
    census.push_back({"float", "bias", floats, false, {}, 0, 0});
    const auto r = quant::model_size(census, bits);
    const std::uint64_t total = code_bytes + 4 * clusters + 4 * floats;
    if (r.quantized_bits != qbits || r.code_bytes != code_bytes || r.total_bytes != total ||
        r.average_bits != static_cast<double>(qbits) / static_cast<double>(qcount))
      ++bad;
    for (int n : {2, 4, 8, 16})
      if (quant::model_size(census, quant::uniform_assignment(census, n)).quantized_fraction_ratio != 32.0 / n) ++bad;
  }
  return {bad == 0, cat("20 random censuses, ", bad, " mismatches against hand accounting and 32/n ratios")};
}

// --- A9 -------------------------------------------------------------------

Outcome dsp_identities() {
  const dsp::Stft stft;
  const auto x = qs_oracle::uniform_values(16000, 909);
  const std::vector<float> xf(x.begin(), x.end());
  const auto y = stft.inverse(stft.forward(xf));
  double round_trip = 0.0;
  for (std::size_t i = 0; i < xf.size(); ++i) round_trip = std::max(round_trip, double(std::abs(y[i] - xf[i])));

  const auto s = qs_oracle::uniform_values(8000, 910), e = qs_oracle::uniform_values(8000, 911);
  std::vector<float> target(s.begin(), s.end()), est(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) est[i] = std::round((s[i] + 0.3 * e[i]) * 4096.0) / 4096.0;
  const double base = dsp::si_snr(est, target);
  double scale_dev = 0.0;
  for (float a : {0.0078125f, 0.75f, 3.0f, 96.0f, -1.0f, -0.15625f}) {
    auto scaled = est;
    for (float& v : scaled) v *= a;
    scale_dev = std::max(scale_dev, std::abs(dsp::si_snr(scaled, target) - base));
  }

  double ipd = 0.0;
  for (double theta : {0.2, 0.7, 1.4, 2.1, 2.9}) {
    const auto scene =
        mixgen::simulate(mixgen::SceneConfig{}, 990, {.fixed_doa = true, .doa = {theta, 0.0}, .single_source = true});
    ipd = std::max(ipd, qs_oracle::ipd_ramp_rms(scene, stft));
  }
  return {round_trip < 1e-6 && scale_dev < 1e-6 && ipd < 0.05,
          cat("STFT round trip ", round_trip, "; SI-SNR rescale deviation ", scale_dev, " dB; IPD ramp RMS ",
              fixed(ipd, 4), " rad (worst of 5 angles)")};
}

// --- pipeline-driven criteria ----------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = cat("'", QUANTSEP_CLI, "' ", args, " > '", log.string(), "' 2>&1");
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct DeskRun {
  int exit_code = -1;
  double wall_seconds = 0.0;
  double train_seconds = 0.0;
  std::map<std::string, json> systems;
};

DeskRun desk_run(const fs::path& config, const fs::path& out, std::uint64_t seed) {
  DeskRun r;
  const auto t0 = Clock::now();
  r.exit_code = run_cli(cat("pipeline --config '", config.string(), "' --seed ", seed, " --jobs 1 --out '",
                            out.string(), "'"),
                        out.string() + ".log");
  r.wall_seconds = seconds_since(t0);
  if (r.exit_code != 0) return r;
  const json run = read_json((out / "run.json").string());
  for (const auto& s : run.at("stages"))
    if (s.at("stage") == "train") r.train_seconds = s.at("seconds").get<double>();
  const json summary = read_json((out / "reports" / "summary.json").string());
  for (const auto& s : summary.at("systems")) r.systems[s.at("system").get<std::string>()] = s;
  return r;
}

double mean_si_snr(const DeskRun& r, const std::string& system) {
  return r.systems.at(system).at("mean").at("si_snr").get<double>();
}

double mean_improvement(const DeskRun& r, const std::string& system) {
  return r.systems.at(system).at("mean").at("improvement").get<double>();
}

std::string report_bytes(const fs::path& out) {
  std::string all;
  for (const char* f : {"summary.json", "summary.csv", "precision_profile.csv"})
    all += read_file((out / "reports" / f).string());
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantsep acceptance runner"};
  std::string work = (fs::temp_directory_path() / "quantsep_acceptance").string();
  std::string config_dir = QUANTSEP_SOURCE_DIR "/configs";
  std::vector<std::string> only;
  std::size_t seeds = 3;
  app.add_option("--work", work, "Scratch directory for pipeline runs (wiped at start)");
  app.add_option("--configs", config_dir, "Directory holding desk.json and smoke.json");
  app.add_option("--only", only, "Run only these criteria, e.g. --only A1 A4");
  app.add_option("--seeds", seeds, "Training seeds for the end-to-end criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> wanted(only.begin(), only.end());
  auto want = [&](const std::string& id) { return wanted.empty() || wanted.count(id) > 0; };
  std::map<std::string, Outcome> results;
  auto record = [&](const std::string& id, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, cat("exception: ", e.what())};
    }
    results[id] = o;
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };

  record("A1", quantizer_exactness);
  record("A2", hutchinson_correctness);
  record("A3", hvp_correctness);
  record("A4", allocator_optimality);

  const fs::path root(work);
  const bool need_desk = want("A5") || want("A6") || want("A7");
  std::vector<DeskRun> desk;
  if (need_desk || want("A10")) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  if (need_desk) {
    const std::size_t n = want("A7") ? seeds : 1;
    for (std::size_t s = 0; s < n; ++s) {
      desk.push_back(desk_run(fs::path(config_dir) / "desk.json", root / cat("desk-seed", s), s));
      std::cout << "   desk seed " << s << ": exit " << desk.back().exit_code << ", " << fixed(desk.back().wall_seconds, 1)
                << " s" << std::endl;
    }
  }
  auto desk_ok = [&](std::size_t s) -> std::optional<Outcome> {
    if (desk.at(s).exit_code != 0)
      return Outcome{false, cat("desk pipeline for seed ", s, " exited with ", desk[s].exit_code, "; see ",
                                (root / cat("desk-seed", s)).string(), ".log")};
    return std::nullopt;
  };

  record("A5", [&]() -> Outcome {
    if (auto bad = desk_ok(0)) return *bad;
    const double imp = mean_improvement(desk[0], "fp32");
    return {imp >= 5.0 && desk[0].train_seconds < 1800.0,
            cat("held-out SI-SNR improvement ", fixed(imp), " dB over ", desk[0].systems.at("fp32").at("scenes"),
                " test scenes (need >= 5); training ", fixed(desk[0].train_seconds / 60.0, 1),
                " min single-threaded (limit 30)")};
  });

  record("A6", [&]() -> Outcome {
    if (auto bad = desk_ok(0)) return *bad;
    const double fp = mean_si_snr(desk[0], "fp32");
    const double d16 = std::abs(mean_si_snr(desk[0], "uniform-16") - fp);
    const double d8 = std::abs(mean_si_snr(desk[0], "uniform-8") - fp);
    return {d16 < 0.1 && d8 < 0.3, cat("|16-bit - fp32| = ", fixed(d16, 4), " dB (< 0.1); |8-bit - fp32| = ",
                                       fixed(d8, 4), " dB (< 0.3)")};
  });

  record("A7", [&]() -> Outcome {
    std::size_t kl = 0, hes = 0, nas = 0;
    double wall = 0.0;
    std::ostringstream per_seed;
    for (std::size_t s = 0; s < desk.size(); ++s) {
      if (auto bad = desk_ok(s)) return *bad;
      wall += desk[s].wall_seconds;
      const double u4 = mean_si_snr(desk[s], "uniform-4");
      const double k = mean_si_snr(desk[s], "kl-avg4"), h = mean_si_snr(desk[s], "hes-avg4"),
                   a = mean_si_snr(desk[s], "nas-avg4");
      kl += k >= u4;
      hes += h >= u4;
      nas += a >= u4;
      per_seed << " [seed " << s << ": uniform-4 " << fixed(u4, 2) << ", KL " << fixed(k, 2) << ", Hes " << fixed(h, 2)
               << ", NAS " << fixed(a, 2) << "]";
    }
    const std::size_t n = desk.size();
    const std::size_t need_mixed = (2 * n + 2) / 3, need_nas = (n + 2) / 3;
    return {kl >= need_mixed && hes >= need_mixed && nas >= need_nas && wall < 7200.0,
            cat("KL ", kl, "/", n, ", Hes ", hes, "/", n, " (need ", need_mixed, "), NAS ", nas, "/", n, " (need ",
                need_nas, ") at or above uniform-4; ", fixed(wall / 60.0, 1), " min total (limit 120);",
                per_seed.str())};
  });

  record("A8", size_accounting);
  record("A9", dsp_identities);

  record("A10", [&]() -> Outcome {
    const fs::path cfg = fs::path(config_dir) / "smoke.json";
    const fs::path a = root / "repeat-a", b = root / "repeat-b";
    for (const auto& dir : {a, b}) {
      const int rc = run_cli(cat("pipeline --config '", cfg.string(), "' --out '", dir.string(), "'"),
                             dir.string() + ".log");
      if (rc != 0) return {false, cat("smoke pipeline exited with ", rc)};
    }
    const bool fresh = report_bytes(a) == report_bytes(b);
    bool cached = true;
    if (!desk.empty() && desk[0].exit_code == 0) {
      const fs::path d = root / "desk-seed0";
      const std::string before = report_bytes(d);
      const int rc = run_cli(cat("pipeline --config '", (fs::path(config_dir) / "desk.json").string(),
                                 "' --seed 0 --jobs 1 --out '", d.string(), "'"),
                             d.string() + ".rerun.log");
      cached = rc == 0 && report_bytes(d) == before;
    }
    return {fresh && cached, cat("two fresh smoke pipelines ", fresh ? "byte-identical" : "DIFFER",
                                 desk.empty() ? "" : cat("; desk rerun ", cached ? "byte-identical" : "DIFFERS"))};
  });

  std::size_t failed = 0;
  for (const auto& [id, o] : results) failed += !o.pass;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
