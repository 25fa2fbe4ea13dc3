#include "qgeomem/harness.hpp"

#include "qgeomem/oracle.hpp"
#include "qgeomem/serialization.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace qgeomem {

void RunConfig::validate() const {
  dims.validate();
  synth::require_pose_width(dims);
  if (tau == 0) throw std::invalid_argument("config: tau must be positive");
  if (capacity == 0) throw std::invalid_argument("config: capacity must be positive");
  if (pool_h == 0 || pool_w == 0 || pool_h > dims.grid_h || pool_w > dims.grid_w) {
    throw std::invalid_argument("config: pool grid must be nonempty and fit the visual grid");
  }
  if (head_count == 0 || dims.width % head_count != 0) {
    throw std::invalid_argument("config: head_count must divide the feature width");
  }
  if (!(lambda_r > 0.0) || !(lambda_nu > 0.0)) {
    throw std::invalid_argument("config: lambda_r and lambda_nu must be positive");
  }
  if (relevant_per_capacity < 0.0) {
    throw std::invalid_argument("config: relevant_per_capacity must be non-negative");
  }
}

synth::ModelShape RunConfig::model_shape() const {
  return {dims, pool_h, pool_w, head_count};
}

synth::ScenarioOptions RunConfig::resolved_scenario() const {
  synth::ScenarioOptions o = scenario;
  o.n_labels = synth::resolved_label_count(o);
  if (relevant_per_capacity > 0.0) {
    o.relevant_fraction =
        std::min(1.0, relevant_per_capacity * static_cast<double>(capacity) /
                          static_cast<double>(o.n_labels));
  }
  return o;
}

RunConfig compact_config() {
  RunConfig c;
  c.dims.grid_h = 4;
  c.dims.grid_w = 4;
  c.dims.geometry_tokens = 8;
  c.dims.width = 64;
  c.dims.geometry_width = 16;
  c.pool_h = 2;
  c.pool_w = 2;
  return c;
}

double recall_at_capacity(const std::vector<std::size_t>& retained,
                          const synth::Scenario& scenario) {
  auto label_of = [&](std::size_t frame) {
    if (frame == 0 || frame > scenario.frames.size()) {
      throw std::invalid_argument("recall: frame index " + std::to_string(frame) +
                                  " outside the scenario");
    }
    return scenario.frames[frame - 1].content_label;
  };
  std::set<std::uint32_t> relevant;
  for (std::size_t f : scenario.relevant_indices) relevant.insert(label_of(f));
  if (relevant.empty()) return 1.0;
  std::set<std::uint32_t> covered;
  for (std::size_t f : retained) {
    const auto label = label_of(f);
    if (relevant.count(label)) covered.insert(label);
  }
  return static_cast<double>(covered.size()) / static_cast<double>(relevant.size());
}

double redundancy(const std::vector<Matrix<double>>& entries) {
  if (entries.size() < 2) return 0.0;
  std::vector<RowVector<double>> means;
  for (const auto& e : entries) means.push_back(mean_pool_tokens(e));
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      total += normalized_similarity(means[i], means[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

PipelineState<double> initial_state(const RunConfig& config, const synth::World& world) {
  const auto settings = policy_settings(config.policy);
  SgebPolicy policy;
  policy.score = settings.score;
  policy.eviction = settings.eviction;
  policy.similarity = config.similarity;
  return make_pipeline_state<double>(config.tau, config.capacity, config.lambda_r,
                                     config.lambda_nu, policy, world.question());
}

namespace {

PipelineOptions options_for(const RunConfig& config) {
  PipelineOptions o;
  o.toggles = config.toggles;
  o.sgeb_read = policy_settings(config.policy).read;
  o.verbose = config.verbose;
  return o;
}

synth::World world_for(const RunConfig& config, const synth::Scenario& scenario) {
  return synth::World(scenario.seed, config.dims, scenario.n_labels, scenario.question_label);
}

}  // namespace

StreamRunner::StreamRunner(RunConfig config, synth::Scenario scenario)
    : config_(std::move(config)),
      scenario_(std::move(scenario)),
      world_(world_for(config_, scenario_)),
      params_(synth::init_params(config_.seed, config_.model_shape())),
      options_(options_for(config_)),
      state_(initial_state(config_, world_)) {
  config_.validate();
}

StreamRunner::StreamRunner(RunConfig config, synth::Scenario scenario,
                           PipelineState<double> resume_from)
    : config_(std::move(config)),
      scenario_(std::move(scenario)),
      world_(world_for(config_, scenario_)),
      params_(synth::init_params(config_.seed, config_.model_shape())),
      options_(options_for(config_)),
      state_(std::move(resume_from)) {
  config_.validate();
  if (state_.step > scenario_.length) {
    throw std::invalid_argument("resume: state is past the end of the scenario");
  }
}

FrameInputs<double> StreamRunner::frame_inputs(std::size_t frame_index) const {
  if (frame_index == 0 || frame_index > scenario_.length) {
    throw std::invalid_argument("frame " + std::to_string(frame_index) + " outside the scenario");
  }
  return world_.embed_frame(scenario_.frames[frame_index - 1], frame_index);
}

void StreamRunner::advance(std::size_t frames) {
  for (std::size_t i = 0; i < frames && !done(); ++i) {
    auto result = step(std::move(state_), frame_inputs(state_.step + 1), params_, options_);
    state_ = std::move(result.state);
    records_.push_back(std::move(result.record));
  }
}

RunReport StreamRunner::report() const {
  RunReport r;
  r.config = config_;
  r.scenario_checksum = io::scenario_checksum(scenario_);
  r.steps = records_;
  r.retained_sgeb_indices = state_.sgeb.frame_indices();
  r.recall = recall_at_capacity(r.retained_sgeb_indices, scenario_);
  std::vector<Matrix<double>> pooled;
  for (const auto& e : state_.sgeb.entries) pooled.push_back(e.pooled);
  r.redundancy = redundancy(pooled);
  return r;
}

RunReport run_stream(RunConfig config, const synth::Scenario& scenario, Policy policy) {
  if (scenario.length == 0) throw std::invalid_argument("run_stream: empty scenario");
  config.policy = policy;
  StreamRunner runner(std::move(config), scenario);
  runner.advance(scenario.length);
  return runner.report();
}

const CompareCell& CompareReport::cell(Policy policy, std::size_t length) const {
  for (const auto& c : cells) {
    if (c.policy == policy && c.length == length) return c;
  }
  throw std::out_of_range("compare: no cell for policy " + std::string(to_string(policy)) +
                          " at length " + std::to_string(length));
}

CompareReport compare_policies(const CompareConfig& config) {
  if (config.seeds.empty()) throw std::invalid_argument("compare: need at least one seed");
  if (config.lengths.empty()) throw std::invalid_argument("compare: need at least one length");
  if (config.policies.size() < 2) throw std::invalid_argument("need ≥2 policies to compare");
  config.base.validate();

  const std::size_t n_len = config.lengths.size();
  const std::size_t n_seed = config.seeds.size();
  const std::size_t n_pol = config.policies.size();
  struct Outcome {
    double recall = 0;
    double redundancy = 0;
  };
  // results[(l * n_seed + s) * n_pol + p]
  std::vector<Outcome> results(n_len * n_seed * n_pol);
  std::vector<std::uint64_t> checksums(n_len * n_seed);

  auto run_cell = [&](std::size_t job) {
    const std::size_t l = job / n_seed;
    const std::size_t s = job % n_seed;
    RunConfig cfg = config.base;
    cfg.seed = config.seeds[s];
    cfg.scenario.length = config.lengths[l];
    cfg.verbose = false;
    const synth::Scenario scenario = synth::gen_scenario(cfg.seed, cfg.resolved_scenario());
    checksums[job] = io::scenario_checksum(scenario);
    for (std::size_t p = 0; p < n_pol; ++p) {
      const RunReport r = run_stream(cfg, scenario, config.policies[p]);
      results[job * n_pol + p] = {r.recall, r.redundancy};
    }
  };

  const std::size_t jobs = n_len * n_seed;
  std::size_t workers = config.threads ? config.threads : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, jobs);
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs; ++j) run_cell(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = next++; j < jobs; j = next++) run_cell(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  CompareReport report;
  report.config = config;
  for (std::size_t p = 0; p < n_pol; ++p) {
    for (std::size_t l = 0; l < n_len; ++l) {
      CompareCell cell{config.policies[p], config.lengths[l], 0, 0, 0, {}};
      for (std::size_t s = 0; s < n_seed; ++s) {
        const auto& o = results[(l * n_seed + s) * n_pol + p];
        cell.recalls.push_back(o.recall);
        cell.recall_mean += o.recall;
        cell.redundancy_mean += o.redundancy;
      }
      cell.recall_mean /= static_cast<double>(n_seed);
      cell.redundancy_mean /= static_cast<double>(n_seed);
      if (n_seed > 1) {
        double ss = 0;
        for (double x : cell.recalls) ss += (x - cell.recall_mean) * (x - cell.recall_mean);
        cell.recall_sd = std::sqrt(ss / static_cast<double>(n_seed - 1));
      }
      report.cells.push_back(std::move(cell));
    }
  }
  report.scenario_checksums.resize(n_len);
  for (std::size_t l = 0; l < n_len; ++l) {
    report.scenario_checksums[l].assign(checksums.begin() + static_cast<std::ptrdiff_t>(l * n_seed),
                                        checksums.begin() + static_cast<std::ptrdiff_t>((l + 1) * n_seed));
  }
  return report;
}

std::string format_compare_table(const CompareReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "policy";
  for (std::size_t len : report.config.lengths) {
    out << std::right << std::setw(18) << ("len " + std::to_string(len));
  }
  out << "\n";
  for (Policy p : report.config.policies) {
    out << std::left << std::setw(16) << to_string(p);
    for (std::size_t len : report.config.lengths) {
      const auto& c = report.cell(p, len);
      char buf[48];
      std::snprintf(buf, sizeof buf, "%.3f ± %.3f", c.recall_mean, c.recall_sd);
      out << std::right << std::setw(19) << buf;
    }
    out << "\n";
  }
  return out.str();
}

RunConfig verify_config() {
  RunConfig c = compact_config();
  c.capacity = 8;
  c.scenario.length = 200;
  c.scenario.revisit_rate = 0.4;
  c.scenario.noise_scale = 0.0;
  c.scenario.relevant_fraction = 0.5;
  c.verbose = true;
  return c;
}

namespace {

std::string describe(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

std::string describe(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double max_abs_diff(const Matrix<double>& a, const oracle::Tokens& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    }
  }
  return worst;
}

std::vector<double> row_values(const RowVector<double>& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

constexpr double kScoreTolerance = 1e-9;
constexpr double kReadTolerance = 1e-6;

class StreamVerifier {
 public:
  StreamVerifier(const VerifyConfig& cfg, std::uint64_t seed, VerifyReport& report)
      : seed_(seed), report_(report) {
    config_ = cfg.base;
    config_.seed = seed;
    config_.scenario.length = cfg.steps;
    config_.policy = Policy::sgeb_full;
    config_.similarity = SimilarityMode::token_mean;
    config_.verbose = true;
    scenario_ = synth::gen_scenario(seed, config_.resolved_scenario());
    corrupt_ = cfg.corrupt_tie_break;
  }

  /// Returns the first divergence, if any.
  std::optional<Divergence> run() {
    synth::World world(scenario_.seed, config_.dims, scenario_.n_labels,
                       scenario_.question_label);
    PipelineState<double> start = initial_state(config_, world);
    if (corrupt_) start.sgeb.policy.tie_break = TieBreak::newest;
    StreamRunner runner(config_, scenario_, std::move(start));

    while (!runner.done()) {
      const PipelineState<double> before = runner.state();
      const std::size_t t = before.step + 1;
      const FrameInputs<double> in = runner.frame_inputs(t);
      runner.advance(1);
      report_.steps_checked += 1;
      if (auto d = check_step(runner, before, in, runner.records().back(), runner.state())) {
        return d;
      }
    }
    return std::nullopt;
  }

  std::optional<Divergence> check_snapshot(std::size_t at, std::size_t extra) {
    StreamRunner reference(config_, scenario_);
    reference.advance(at + extra);

    StreamRunner head(config_, scenario_);
    head.advance(at);
    const std::string saved = io::canonical_dump(io::snapshot_to_json(config_, head.state()));
    io::Snapshot snap = io::snapshot_from_json(io::parse(saved, "snapshot"));
    if (io::canonical_dump(io::snapshot_to_json(snap.config, snap.state)) != saved) {
      return Divergence{seed_, at, "snapshot_canonical", "identical bytes after reload",
                        "bytes differ"};
    }
    StreamRunner tail(snap.config, scenario_, std::move(snap.state));
    tail.advance(extra);
    for (std::size_t i = 0; i < tail.records().size(); ++i) {
      const auto expected = io::to_json(reference.records()[at + i]).dump();
      const auto actual = io::to_json(tail.records()[i]).dump();
      if (expected != actual) {
        return Divergence{seed_, at + i + 1, "snapshot_resume", expected, actual};
      }
    }
    return std::nullopt;
  }

 private:
  Divergence diverge(std::size_t step, std::string check, std::string expected,
                     std::string actual) const {
    return {seed_, step, std::move(check), std::move(expected), std::move(actual)};
  }

  std::optional<Divergence> check_step(const StreamRunner& runner,
                                       const PipelineState<double>& before,
                                       const FrameInputs<double>& in, const StepRecord& rec,
                                       const PipelineState<double>& after) {
    const std::size_t t = in.frame_index;
    for (std::size_t u : rec.fgcb_observed) {
      if (u >= t) return diverge(t, "fgcb_read_order", "frames < " + std::to_string(t), std::to_string(u));
    }
    for (std::size_t u : rec.sgeb_observed) {
      if (u >= t) return diverge(t, "sgeb_read_order", "frames < " + std::to_string(t), std::to_string(u));
    }
    if (!rec.sgeb) return diverge(t, "sgeb_admission", "admission record", "none");

    const auto& dims = config_.dims;
    const double lambda_r = config_.lambda_r;
    const double lambda_nu = config_.lambda_nu;
    const oracle::Tokens geo = oracle::to_tokens(rec.geo_feature, dims.visual_tokens(), dims.width);
    const oracle::Tokens cand_pooled =
        oracle::pool_grid(geo, dims.grid_h, dims.grid_w, config_.pool_h, config_.pool_w);

    std::vector<oracle::BankItem> bank;
    for (const auto& e : before.sgeb.entries) {
      bank.push_back({e.frame_index, oracle::to_tokens(e.pooled), e.relevance, e.novelty, e.score});
    }
    oracle::BankItem cand;
    cand.frame_index = t;
    cand.pooled = cand_pooled;
    cand.relevance = oracle::relevance(row_values(in.semantic), row_values(before.question), lambda_r);
    cand.novelty = oracle::novelty(cand_pooled, bank, lambda_nu);
    cand.score = cand.relevance * cand.novelty;

    const auto& adm = *rec.sgeb;
    if (std::abs(adm.relevance - cand.relevance) > kScoreTolerance ||
        std::abs(adm.novelty - cand.novelty) > kScoreTolerance ||
        std::abs(adm.score - cand.score) > kScoreTolerance) {
      return diverge(t, "candidate_score",
                     "r=" + describe(cand.relevance) + " nu=" + describe(cand.novelty),
                     "r=" + describe(adm.relevance) + " nu=" + describe(adm.novelty));
    }

    // refresh_novelty on the candidate set, against the pairwise oracle.
    {
      std::vector<SgebEntry<double>> impl = before.sgeb.entries;
      const Matrix<double> geo_matrix = Eigen::Map<const Matrix<double>>(
          rec.geo_feature.data(), static_cast<Eigen::Index>(dims.visual_tokens()),
          static_cast<Eigen::Index>(dims.width));
      impl.push_back({grid_pool(geo_matrix, dims.grid_h, dims.grid_w, config_.pool_h, config_.pool_w),
                      adm.relevance, adm.novelty, adm.score, t});
      impl = refresh_novelty(std::move(impl), lambda_nu);
      std::vector<oracle::BankItem> members = bank;
      members.push_back(cand);
      members = oracle::refresh(std::move(members), lambda_nu);
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (impl[i].frame_index != members[i].frame_index ||
            std::abs(impl[i].novelty - members[i].novelty) > kScoreTolerance ||
            std::abs(impl[i].score - members[i].score) > kScoreTolerance) {
          return diverge(t, "refresh_novelty",
                         std::to_string(members[i].frame_index) + ":" + describe(members[i].novelty),
                         std::to_string(impl[i].frame_index) + ":" + describe(impl[i].novelty));
        }
      }
    }

    const oracle::WriteDecision want =
        oracle::expected_write(bank, cand, config_.capacity, lambda_nu);
    report_.writes_checked += 1;
    if (want.removed) report_.evictions_checked += 1;
    if (want.tied_minimum > 1) report_.ties_seen += 1;

    std::vector<std::size_t> want_ids;
    for (const auto& item : want.bank) want_ids.push_back(item.frame_index);
    const std::vector<std::size_t> got_ids = after.sgeb.frame_indices();
    const auto& outcome = adm.outcome;
    const bool got_rejected = outcome.kind == WriteOutcome::Kind::candidate_rejected;
    const std::optional<std::size_t> got_removed =
        got_rejected ? std::optional<std::size_t>(t) : outcome.evicted_frame_index;
    if (want_ids != got_ids || want.rejected != got_rejected || want.removed != got_removed) {
      auto removed = [](const std::optional<std::size_t>& r) {
        return r ? std::to_string(*r) : std::string("none");
      };
      return diverge(t, "sgeb_write",
                     "retain " + describe(want_ids) + " remove " + removed(want.removed),
                     "retain " + describe(got_ids) + " remove " + removed(got_removed));
    }
    for (std::size_t i = 0; i < want.bank.size(); ++i) {
      const auto& e = after.sgeb.entries[i];
      if (std::abs(e.novelty - want.bank[i].novelty) > kScoreTolerance ||
          std::abs(e.score - want.bank[i].score) > kScoreTolerance ||
          e.score != e.relevance * e.novelty) {
        return diverge(t, "refreshed_score", describe(want.bank[i].score), describe(e.score));
      }
    }

    // Ablation equivalences on the pre-write banks.
    const Matrix<double> geo_feature = Eigen::Map<const Matrix<double>>(
        rec.geo_feature.data(), static_cast<Eigen::Index>(dims.visual_tokens()),
        static_cast<Eigen::Index>(dims.width));
    const auto& params = runner.params();
    if (!before.fgcb.entries.empty()) {
      oracle::Tokens keys, values;
      for (const auto& e : before.fgcb.entries) {
        const auto x = oracle::to_tokens(e.feature);
        for (auto& row : oracle::matmul(x, oracle::to_tokens(params.fgcb.proj_k))) keys.push_back(row);
        for (auto& row : oracle::matmul(x, oracle::to_tokens(params.fgcb.proj_v))) values.push_back(row);
      }
      const auto q = oracle::matmul(geo, oracle::to_tokens(params.fgcb.proj_q));
      const auto want_read = oracle::attention(q, keys, values);
      const auto got_read = fgcb_read(before.fgcb, geo_feature, in.camera, params.fgcb, false);
      const double err = max_abs_diff(got_read, want_read);
      if (err > kReadTolerance) {
        return diverge(t, "camera_delta_off_read", "max error <= 1e-6", describe(err));
      }
    }
    if (!before.sgeb.entries.empty()) {
      oracle::Tokens keys, values;
      for (const auto& e : before.sgeb.entries) {
        const auto x = oracle::to_tokens(e.pooled);
        for (auto& row : oracle::matmul(x, oracle::to_tokens(params.sgeb.proj_k))) keys.push_back(row);
        for (auto& row : oracle::matmul(x, oracle::to_tokens(params.sgeb.proj_v))) values.push_back(row);
      }
      const auto q = oracle::matmul(geo, oracle::to_tokens(params.sgeb.proj_q));
      const auto want_read = oracle::attention(q, keys, values);
      const auto got_read = sgeb_read(before.sgeb, geo_feature, params.sgeb, ReadModulation::uniform);
      const double err = max_abs_diff(got_read, want_read);
      if (err > kReadTolerance) {
        return diverge(t, "unit_score_read", "max error <= 1e-6", describe(err));
      }
    }
    return std::nullopt;
  }

  std::uint64_t seed_;
  VerifyReport& report_;
  RunConfig config_;
  synth::Scenario scenario_;
  bool corrupt_ = false;
};

}  // namespace

VerifyReport verify_streams(const VerifyConfig& config) {
  if (config.seeds.empty()) throw std::invalid_argument("verify: need at least one seed");
  if (config.steps == 0) throw std::invalid_argument("verify: need at least one step");
  config.base.validate();
  VerifyReport report;
  for (std::uint64_t seed : config.seeds) {
    StreamVerifier verifier(config, seed, report);
    report.streams += 1;
    if (auto d = verifier.run()) {
      report.divergences.push_back(*d);
      continue;
    }
    if (config.check_snapshot && config.steps > 1) {
      const std::size_t at = config.steps / 2;
      const std::size_t extra = std::min<std::size_t>(10, config.steps - at);
      if (auto d = verifier.check_snapshot(at, extra)) report.divergences.push_back(*d);
    }
  }
  return report;
}

}  // namespace qgeomem
