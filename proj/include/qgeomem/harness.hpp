#pragma once

// Stream driver, policy comparison, brute-force verification and metrics.

#include "qgeomem/pipeline.hpp"
#include "qgeomem/synth.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qgeomem {

inline constexpr int kFormatVersion = 1;

struct RunConfig {
  synth::Dims dims;
  std::size_t tau = 4;
  std::size_t capacity = 32;
  std::size_t pool_h = 7;
  std::size_t pool_w = 7;
  std::size_t head_count = 1;
  double lambda_r = 1.0;
  double lambda_nu = 1.0;
  Policy policy = Policy::sgeb_full;
  ComponentToggles toggles;
  SimilarityMode similarity = SimilarityMode::token_mean;
  std::uint64_t seed = 7;
  synth::ScenarioOptions scenario;
  // When positive, relevant_fraction is derived so that about this many
  // multiples of the bank capacity of labels are relevant.
  double relevant_per_capacity = 0.0;
  bool verbose = false;

  void validate() const;
  synth::ModelShape model_shape() const;
  /// Scenario options with label count and relevant fraction resolved.
  synth::ScenarioOptions resolved_scenario() const;
};

/// Small-token profile used by the test suites: 4x4 visual grid pooled to
/// 2x2, d = 64. Bank sizes keep their defaults.
RunConfig compact_config();

struct RunReport {
  int format_version = kFormatVersion;
  RunConfig config;
  std::uint64_t scenario_checksum = 0;
  std::vector<StepRecord> steps;
  std::vector<std::size_t> retained_sgeb_indices;
  double recall = 0;
  double redundancy = 0;
  std::optional<double> wall_time_seconds;
};

/// Fraction of the scenario's relevant content labels that have at least one
/// frame in `retained`; 1 when the scenario has no relevant label.
double recall_at_capacity(const std::vector<std::size_t>& retained,
                          const synth::Scenario& scenario);

/// Mean normalized token-mean similarity over all unordered pairs; 0 for
/// fewer than two entries.
double redundancy(const std::vector<Matrix<double>>& entries);

/// Drives one scenario through the pipeline step by step.
class StreamRunner {
 public:
  StreamRunner(RunConfig config, synth::Scenario scenario);
  StreamRunner(RunConfig config, synth::Scenario scenario, PipelineState<double> resume_from);

  bool done() const { return state_.step >= scenario_.length; }
  std::size_t position() const { return state_.step; }

  /// Process up to `frames` further frames.
  void advance(std::size_t frames = 1);

  const RunConfig& config() const { return config_; }
  const synth::Scenario& scenario() const { return scenario_; }
  const synth::World& world() const { return world_; }
  const ParamBundle<double>& params() const { return params_; }
  const PipelineOptions& options() const { return options_; }
  const PipelineState<double>& state() const { return state_; }
  const std::vector<StepRecord>& records() const { return records_; }

  FrameInputs<double> frame_inputs(std::size_t frame_index) const;

  RunReport report() const;

 private:
  RunConfig config_;
  synth::Scenario scenario_;
  synth::World world_;
  ParamBundle<double> params_;
  PipelineOptions options_;
  PipelineState<double> state_;
  std::vector<StepRecord> records_;
};

PipelineState<double> initial_state(const RunConfig& config, const synth::World& world);

RunReport run_stream(RunConfig config, const synth::Scenario& scenario, Policy policy);

struct CompareConfig {
  RunConfig base;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> lengths;
  std::vector<Policy> policies;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct CompareCell {
  Policy policy;
  std::size_t length;
  double recall_mean;
  double recall_sd;
  double redundancy_mean;
  std::vector<double> recalls;  // one per seed, in seed order
};

struct CompareReport {
  int format_version = kFormatVersion;
  CompareConfig config;
  std::vector<CompareCell> cells;  // policy-major, then length
  // Scenario checksum per (length, seed): every policy in a cell saw it.
  std::vector<std::vector<std::uint64_t>> scenario_checksums;

  const CompareCell& cell(Policy policy, std::size_t length) const;
};

CompareReport compare_policies(const CompareConfig& config);

std::string format_compare_table(const CompareReport& report);

struct Divergence {
  std::uint64_t seed;
  std::size_t step;
  std::string check;
  std::string expected;
  std::string actual;
};

struct VerifyConfig {
  RunConfig base;
  std::vector<std::uint64_t> seeds;
  std::size_t steps = 200;
  bool corrupt_tie_break = false;  // negative control
  bool check_snapshot = true;
};

struct VerifyReport {
  std::size_t streams = 0;
  std::size_t steps_checked = 0;
  std::size_t writes_checked = 0;
  std::size_t evictions_checked = 0;
  std::size_t ties_seen = 0;
  std::vector<Divergence> divergences;  // first divergence per seed

  bool passed() const { return divergences.empty(); }
};

/// Default verification stream: K = 8, noise-free revisits and zero-relevance
/// distractors so that exact score ties occur.
RunConfig verify_config();

VerifyReport verify_streams(const VerifyConfig& config);

}  // namespace qgeomem
