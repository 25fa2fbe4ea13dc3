// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include "reference.hpp"

#include "qgeomem/harness.hpp"
#include "qgeomem/serialization.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace qgeomem;
using M = Matrix<double>;
using R = RowVector<double>;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kSoftmaxTol = 1e-6;
constexpr double kPoolMeanTol = 1e-9;
constexpr double kScoreTol = 1e-9;
constexpr double kAblationTol = 1e-6;
constexpr double kInvariantBudget = 30.0;
constexpr double kOracleBudget = 60.0;
constexpr double kTrendBudget = 120.0;
constexpr std::size_t kSeeds = 20;

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::vector<std::uint64_t> seed_range(std::size_t n) {
  std::vector<std::uint64_t> s;
  for (std::uint64_t i = 1; i <= n; ++i) s.push_back(i);
  return s;
}

/// Stored keys and values exactly as each bank's read assembles them.
struct BankKv {
  M keys, values;
};

BankKv fgcb_kv(const FgcbState<double>& s, const R& camera, const FgcbParams<double>& p, bool modulate) {
  Eigen::Index total = 0;
  for (const auto& e : s.entries) total += e.feature.rows();
  BankKv kv{M(total, p.proj_k.cols()), M(total, p.proj_v.cols())};
  Eigen::Index at = 0;
  for (const auto& e : s.entries) {
    const auto n = e.feature.rows();
    double b = 0, a = 1;
    if (modulate) {
      const auto sig = camera_delta_signals(camera, e, p);
      b = sig.key_bias;
      a = sig.value_gate;
    }
    kv.keys.middleRows(at, n) = (e.feature * p.proj_k).array() + b;
    kv.values.middleRows(at, n) = (e.feature * p.proj_v) * a;
    at += n;
  }
  return kv;
}

BankKv sgeb_kv(const SgebState<double>& s, const SgebParams<double>& p, bool scored) {
  Eigen::Index total = 0;
  for (const auto& e : s.entries) total += e.pooled.rows();
  BankKv kv{M(total, p.proj_k.cols()), M(total, p.proj_v.cols())};
  Eigen::Index at = 0;
  for (const auto& e : s.entries) {
    const auto n = e.pooled.rows();
    const double w = scored ? e.score : 1.0;
    kv.keys.middleRows(at, n) = (e.pooled * p.proj_k).array() + w;
    kv.values.middleRows(at, n) = (e.pooled * p.proj_v) * w;
    at += n;
  }
  return kv;
}

bool inside_hull(const M& out, const M& values) {
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double lo = values.col(c).minCoeff(), hi = values.col(c).maxCoeff();
    const double slack = 1e-9 * (1 + std::max(std::abs(lo), std::abs(hi)));
    if (out.col(c).minCoeff() < lo - slack || out.col(c).maxCoeff() > hi + slack) return false;
  }
  return true;
}

double softmax_row_error(const M& queries, const M& keys) {
  const M s = softmax_rows(M(queries * keys.transpose() / std::sqrt(double(queries.cols()))));
  return (s.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

// 1. Invariants along long random streams.
Outcome invariants() {
  Outcome o;
  const auto t0 = Clock::now();
  std::size_t checked = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig c = compact_config();
    c.seed = seed;
    c.scenario.length = 1000;
    const Policy policy = seed == 2 ? Policy::fifo : Policy::sgeb_full;
    c.policy = policy;
    StreamRunner runner(c, synth::gen_scenario(seed, c.resolved_scenario()));
    const auto& p = runner.params();
    while (!runner.done()) {
      const auto prior = runner.state();
      const auto in = runner.frame_inputs(prior.step + 1);
      runner.advance(1);
      const auto& after = runner.state();

      const auto gate = geometry_bias_gate(in.geometry, in.camera, p.cggf);
      o.require(gate.reliability.minCoeff() > 0 && gate.reliability.maxCoeff() < 1,
                "geometry reliability outside (0, 1)");
      const M f = fuse_geometry(in, p.cggf).feature;
      o.require(softmax_row_error(M(f * p.cggf.proj_q), M(in.geometry * p.cggf.proj_k + gate.bias)) <= kSoftmaxTol,
                "softmax row sum off in geometry attention");

      const M rf = fgcb_read(prior.fgcb, f, in.camera, p.fgcb);
      const M rs = sgeb_read(prior.sgeb, f, p.sgeb, runner.options().sgeb_read);
      if (!prior.fgcb.entries.empty()) {
        for (const auto& e : prior.fgcb.entries) {
          const double a = camera_delta_signals(in.camera, e, p.fgcb).value_gate;
          o.require(a > 0 && a < 1, "window value gate outside (0, 1)");
        }
        const auto kv = fgcb_kv(prior.fgcb, in.camera, p.fgcb, true);
        o.require(softmax_row_error(M(f * p.fgcb.proj_q), kv.keys) <= kSoftmaxTol, "softmax row sum off in window read");
        o.require(inside_hull(rf, kv.values), "window readout outside the value hull");
      }
      if (!prior.sgeb.entries.empty()) {
        const auto kv = sgeb_kv(prior.sgeb, p.sgeb, runner.options().sgeb_read == ReadModulation::scored);
        o.require(softmax_row_error(M(f * p.sgeb.proj_q), kv.keys) <= kSoftmaxTol, "softmax row sum off in bank read");
        o.require(inside_hull(rs, kv.values), "bank readout outside the value hull");
      }
      const auto fusion = adaptive_fuse(f, rf, rs, p.fusion);
      o.require(fusion.gate_fgcb.minCoeff() > 0 && fusion.gate_fgcb.maxCoeff() < 1 &&
                    fusion.gate_sgeb.minCoeff() > 0 && fusion.gate_sgeb.maxCoeff() < 1,
                "fusion gate outside (0, 1)");

      const M pooled = grid_pool(f, c.dims.grid_h, c.dims.grid_w, c.pool_h, c.pool_w);
      o.require((mean_pool_tokens(pooled) - mean_pool_tokens(f)).cwiseAbs().maxCoeff() <= kPoolMeanTol,
                "pooling changed the token mean");
      o.require(after.fgcb.entries.size() <= c.tau, "window above tau");
      o.require(after.sgeb.entries.size() <= c.capacity, "bank above capacity");
      ++checked;
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kInvariantBudget, "runtime over budget");
  o.notes.push_back(std::to_string(checked) + " steps over three 1000-step streams, " + fmt("%.1f s", elapsed));
  return o;
}

// 2. Every refresh and write against the brute-force oracle.
Outcome eviction_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  VerifyConfig cfg;
  cfg.base = verify_config();
  cfg.seeds = seed_range(kSeeds);
  cfg.steps = 200;
  cfg.check_snapshot = false;
  const auto report = verify_streams(cfg);
  const double elapsed = seconds_since(t0);
  o.require(cfg.base.capacity == 8, "bank capacity is not 8");
  o.require(report.passed(), report.passed() ? "" : "divergence at seed " + std::to_string(report.divergences[0].seed) +
                                                       " step " + std::to_string(report.divergences[0].step) +
                                                       " [" + report.divergences[0].check + "]");
  o.require(report.streams == kSeeds && report.steps_checked == kSeeds * 200, "not every step was checked");
  o.require(elapsed < kOracleBudget, "runtime over budget");
  o.notes.push_back(std::to_string(report.writes_checked) + " writes, " + std::to_string(report.evictions_checked) +
                    " evictions, " + std::to_string(report.ties_seen) + " tied minima, score tolerance " +
                    fmt("%.0e", kScoreTol) + ", " + fmt("%.1f s", elapsed));

  cfg.seeds = {1};
  cfg.corrupt_tie_break = true;
  const auto control = verify_streams(cfg);
  o.require(!control.passed(), "corrupted tie-break went unnoticed");
  if (!control.passed()) {
    o.notes.push_back("negative control diverges at step " + std::to_string(control.divergences[0].step));
  }
  return o;
}

// 3. Degenerate modulation equals plain attention; a closed camera gate is a passthrough.
Outcome ablations() {
  Outcome o;
  double worst_window = 0, worst_bank = 0;
  std::size_t passthrough_frames = 0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    RunConfig c = compact_config();
    c.seed = seed;
    c.scenario.length = 200;
    StreamRunner runner(c, synth::gen_scenario(seed, c.resolved_scenario()));
    const auto& p = runner.params();
    auto closed = p.cggf;
    closed.proj_camera_gate.setZero();
    while (!runner.done()) {
      const auto prior = runner.state();
      const auto in = runner.frame_inputs(prior.step + 1);
      const M f = fuse_geometry(in, p.cggf).feature;
      const auto q_window = ref::matmul(ref::from(f), ref::from(p.fgcb.proj_q));
      const auto q_bank = ref::matmul(ref::from(f), ref::from(p.sgeb.proj_q));
      if (!prior.fgcb.entries.empty()) {
        ref::Mat k, v;
        for (const auto& e : prior.fgcb.entries) {
          for (auto& row : ref::matmul(ref::from(e.feature), ref::from(p.fgcb.proj_k))) k.push_back(row);
          for (auto& row : ref::matmul(ref::from(e.feature), ref::from(p.fgcb.proj_v))) v.push_back(row);
        }
        worst_window = std::max(worst_window, ref::max_abs_diff(fgcb_read(prior.fgcb, f, in.camera, p.fgcb, false),
                                                                ref::attention(q_window, k, v)));
      }
      if (!prior.sgeb.entries.empty()) {
        ref::Mat k, v;
        for (const auto& e : prior.sgeb.entries) {
          for (auto& row : ref::matmul(ref::from(e.pooled), ref::from(p.sgeb.proj_k))) k.push_back(row);
          for (auto& row : ref::matmul(ref::from(e.pooled), ref::from(p.sgeb.proj_v))) v.push_back(row);
        }
        worst_bank = std::max(worst_bank, ref::max_abs_diff(sgeb_read(prior.sgeb, f, p.sgeb, ReadModulation::uniform),
                                                            ref::attention(q_bank, k, v)));
      }
      o.require(fuse_geometry(in, closed).feature == in.visual, "closed camera gate changed the visual tokens");
      ++passthrough_frames;
      runner.advance(1);
    }
  }
  o.require(worst_window <= kAblationTol, "camera-delta-off read differs from plain attention");
  o.require(worst_bank <= kAblationTol, "unit-score read differs from plain attention");
  o.notes.push_back("(a) max error " + fmt("%.2e", worst_window) + ", (b) max error " + fmt("%.2e", worst_bank) +
                    ", (c) exact passthrough on " + std::to_string(passthrough_frames) + " frames");
  return o;
}

CompareConfig family(std::vector<Policy> policies) {
  CompareConfig cfg;
  cfg.base = compact_config();
  cfg.base.relevant_per_capacity = 1.5;
  cfg.seeds = seed_range(kSeeds);
  cfg.lengths = {64, 256, 1024};
  cfg.policies = std::move(policies);
  return cfg;
}

const std::vector<std::size_t> kBuckets{64, 256, 1024};

// 4. The bank beats FIFO in every length bucket, by more at the longest.
Outcome length_trend(CompareReport& out) {
  Outcome o;
  const auto t0 = Clock::now();
  out = compare_policies(family({Policy::sgeb_full, Policy::fifo}));
  const double elapsed = seconds_since(t0);
  std::ostringstream line;
  for (std::size_t len : kBuckets) {
    const double full = out.cell(Policy::sgeb_full, len).recall_mean;
    const double fifo = out.cell(Policy::fifo, len).recall_mean;
    o.require(full > fifo, "sgeb_full not above fifo at length " + std::to_string(len));
    line << "len " << len << ": " << fmt("%.3f", full) << " vs " << fmt("%.3f", fifo) << "; ";
  }
  const double gap_short = out.cell(Policy::sgeb_full, 64).recall_mean - out.cell(Policy::fifo, 64).recall_mean;
  const double gap_long = out.cell(Policy::sgeb_full, 1024).recall_mean - out.cell(Policy::fifo, 1024).recall_mean;
  o.require(gap_long >= gap_short, "gap at 1024 below gap at 64");
  o.require(elapsed < kTrendBudget, "runtime over budget");
  line << "gap " << fmt("%.3f", gap_short) << " -> " << fmt("%.3f", gap_long) << ", " << fmt("%.1f s", elapsed);
  o.notes.push_back(line.str());
  return o;
}

// 5. Product score ≥ best single term ≥ no score.
Outcome score_ablation(const CompareReport& base) {
  Outcome o;
  const auto rest = compare_policies(family({Policy::relevance_only, Policy::novelty_only, Policy::no_bias}));
  double pooled[4] = {0, 0, 0, 0};
  for (std::size_t len : kBuckets) {
    const double full = base.cell(Policy::sgeb_full, len).recall_mean;
    const double rel = rest.cell(Policy::relevance_only, len).recall_mean;
    const double nov = rest.cell(Policy::novelty_only, len).recall_mean;
    const double none = rest.cell(Policy::no_bias, len).recall_mean;
    o.require(full >= std::max(rel, nov), "product below a single term at length " + std::to_string(len));
    o.require(std::max(rel, nov) >= none, "single term below no_bias at length " + std::to_string(len));
    pooled[0] += full / 3;
    pooled[1] += rel / 3;
    pooled[2] += nov / 3;
    pooled[3] += none / 3;
    o.notes.push_back("len " + std::to_string(len) + ": sgeb_full " + fmt("%.3f", full) + ", relevance_only " +
                      fmt("%.3f", rel) + ", novelty_only " + fmt("%.3f", nov) + ", no_bias " + fmt("%.3f", none));
  }
  o.require(pooled[0] >= std::max(pooled[1], pooled[2]) && std::max(pooled[1], pooled[2]) >= pooled[3],
            "pooled ordering violated");
  o.notes.push_back("pooled: sgeb_full " + fmt("%.3f", pooled[0]) + ", relevance_only " + fmt("%.3f", pooled[1]) +
                    ", novelty_only " + fmt("%.3f", pooled[2]) + ", no_bias " + fmt("%.3f", pooled[3]));
  return o;
}

// 6. Planted, mutually novel relevant frames are retained exactly.
Outcome planted() {
  Outcome o;
  std::size_t runs = 0;
  double worst_fifo = 0;
  for (std::size_t capacity : {8, 32}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const std::size_t length = capacity * 8;
      RunConfig c = compact_config();
      c.capacity = capacity;
      c.seed = seed;
      const auto s = synth::planted_scenario(seed, length, capacity);
      const auto full = run_stream(c, s, Policy::sgeb_full);
      const auto fifo = run_stream(c, s, Policy::fifo);
      o.require(full.retained_sgeb_indices == s.relevant_indices,
                "retained set differs from the planted set (K=" + std::to_string(capacity) + ", seed " +
                    std::to_string(seed) + ")");
      o.require(full.recall == 1.0, "planted recall below 1");
      o.require(fifo.recall <= double(capacity) / double(length), "fifo recall above K/length");
      worst_fifo = std::max(worst_fifo, fifo.recall);
      ++runs;
    }
  }
  o.notes.push_back(std::to_string(runs) + " planted streams, recall 1.0, max fifo recall " + fmt("%.3f", worst_fifo));
  return o;
}

// 7. Byte-identical reports and bit-identical resume.
Outcome determinism() {
  Outcome o;
  RunConfig c;
  c.seed = 7;
  c.scenario.length = 64;
  const auto s = synth::gen_scenario(c.seed, c.resolved_scenario());
  const auto a = io::canonical_dump(io::to_json(run_stream(c, s, Policy::sgeb_full)));
  const auto b = io::canonical_dump(io::to_json(run_stream(c, s, Policy::sgeb_full)));
  o.require(a == b, "repeated runs differ");

  RunConfig v = compact_config();
  v.verbose = true;
  v.scenario.length = 80;
  const auto sv = synth::gen_scenario(v.seed, v.resolved_scenario());
  StreamRunner whole(v, sv);
  whole.advance(50);
  const auto bytes = io::canonical_dump(io::snapshot_to_json(v, whole.state()));
  auto snap = io::snapshot_from_json(io::parse(bytes, "snapshot"));
  o.require(io::canonical_dump(io::snapshot_to_json(snap.config, snap.state)) == bytes, "snapshot not canonical");
  StreamRunner resumed(snap.config, sv, std::move(snap.state));
  resumed.advance(10);
  whole.advance(10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& x = whole.records()[50 + i];
    const auto& y = resumed.records()[i];
    o.require(x.fused_feature == y.fused_feature && x.geo_feature == y.geo_feature &&
                  io::to_json(x).dump() == io::to_json(y).dump(),
              "resumed step " + std::to_string(51 + i) + " differs");
  }
  o.notes.push_back("report " + std::to_string(a.size()) + " bytes, 10 resumed steps bit-identical");
  return o;
}

// 8. Cold start and read ordering.
Outcome ordering() {
  Outcome o;
  std::size_t steps = 0;
  for (Policy policy : {Policy::sgeb_full, Policy::fifo, Policy::relevance_only, Policy::novelty_only, Policy::no_bias}) {
    for (std::uint64_t seed : {1, 2}) {
      RunConfig c = compact_config();
      c.seed = seed;
      c.policy = policy;
      c.scenario.length = 256;
      StreamRunner runner(c, synth::gen_scenario(seed, c.resolved_scenario()));
      const auto first = runner.frame_inputs(1);
      const auto r = step(runner.state(), first, runner.params(), runner.options());
      o.require(r.fused == fuse_geometry(first, runner.params().cggf).feature, "first fused frame differs from fusion output");
      runner.advance(c.scenario.length);
      for (const auto& rec : runner.records()) {
        for (auto u : rec.fgcb_observed) o.require(u < rec.frame_index, "window read saw a current or future frame");
        for (auto u : rec.sgeb_observed) o.require(u < rec.frame_index, "bank read saw a current or future frame");
        ++steps;
      }
    }
  }
  o.notes.push_back(std::to_string(steps) + " steps over all policies");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  CompareReport trend;
  const std::vector<Criterion> criteria{
      {1, "invariant suite", invariants},
      {2, "eviction oracle equivalence", eviction_oracle},
      {3, "ablation equivalences", ablations},
      {4, "bank vs FIFO length trend", [&] { return length_trend(trend); }},
      {5, "score ablation ordering", [&] { return score_ablation(trend); }},
      {6, "planted scenario exactness", planted},
      {7, "determinism and persistence", determinism},
      {8, "cold start and read ordering", ordering},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %d %s: %s%s%s\n", c.id, o.pass ? "PASS" : "FAIL", c.name,
                o.pass ? "" : " -- ", o.pass ? "" : o.detail.c_str());
    for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
