#pragma once

// Adaptive fusion of the two memory readouts and the per-frame contract:
// fuse geometry, read both banks, fuse, then write both banks.

#include "qgeomem/cggf.hpp"
#include "qgeomem/fgcb.hpp"
#include "qgeomem/numerics.hpp"
#include "qgeomem/sgeb.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qgeomem {

template <typename Scalar>
struct FusionParams {
  Mlp<Scalar> gate_fgcb;  // 3d -> d, sigmoid output
  Mlp<Scalar> gate_sgeb;  // 3d -> d, sigmoid output

  void validate(Eigen::Index d) const {
    gate_fgcb.validate();
    gate_sgeb.validate();
    for (const auto* mlp : {&gate_fgcb, &gate_sgeb}) {
      if (mlp->in_dim() != 3 * d || mlp->out_dim() != d ||
          mlp->layers.back().activation != Activation::sigmoid) {
        throw std::invalid_argument("fusion params: gates must map 3d -> d with sigmoid output");
      }
    }
  }
};

template <typename Scalar>
struct FusionResult {
  Matrix<Scalar> fused;
  RowVector<Scalar> gate_fgcb;
  RowVector<Scalar> gate_sgeb;
};

/// f + g_F ⊙ R_F + g_S ⊙ R_S with channel gates computed from the token-mean
/// summaries [f̄; R̄_F; R̄_S].
template <typename Scalar>
FusionResult<Scalar> adaptive_fuse(const Matrix<Scalar>& feature,
                                   const Matrix<Scalar>& fgcb_readout,
                                   const Matrix<Scalar>& sgeb_readout,
                                   const FusionParams<Scalar>& p) {
  if (feature.rows() != fgcb_readout.rows() || feature.cols() != fgcb_readout.cols() ||
      feature.rows() != sgeb_readout.rows() || feature.cols() != sgeb_readout.cols()) {
    throw std::invalid_argument("adaptive_fuse: shape mismatch");
  }
  const Eigen::Index d = feature.cols();
  Matrix<Scalar> summary(1, 3 * d);
  summary.leftCols(d) = mean_pool_tokens(feature);
  summary.middleCols(d, d) = mean_pool_tokens(fgcb_readout);
  summary.rightCols(d) = mean_pool_tokens(sgeb_readout);

  FusionResult<Scalar> out;
  out.gate_fgcb = mlp_forward(p.gate_fgcb, summary).row(0);
  out.gate_sgeb = mlp_forward(p.gate_sgeb, summary).row(0);
  out.fused = feature;
  out.fused.array() += fgcb_readout.array().rowwise() * out.gate_fgcb.array();
  out.fused.array() += sgeb_readout.array().rowwise() * out.gate_sgeb.array();
  return out;
}

template <typename Scalar>
struct ParamBundle {
  CggfParams<Scalar> cggf;
  FgcbParams<Scalar> fgcb;
  SgebParams<Scalar> sgeb;
  FusionParams<Scalar> fusion;

  void validate() const {
    cggf.validate();
    fgcb.validate();
    sgeb.validate();
    fusion.validate(cggf.width());
  }
};

/// Evidence-bank policies compared by the harness.
enum class Policy { sgeb_full, fifo, relevance_only, novelty_only, no_bias };

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::sgeb_full:
      return "sgeb_full";
    case Policy::fifo:
      return "fifo";
    case Policy::relevance_only:
      return "relevance_only";
    case Policy::novelty_only:
      return "novelty_only";
    case Policy::no_bias:
      return "no_bias";
  }
  return "unknown";
}

inline Policy parse_policy(std::string_view name) {
  for (Policy p : {Policy::sgeb_full, Policy::fifo, Policy::relevance_only, Policy::novelty_only,
                   Policy::no_bias}) {
    if (to_string(p) == name) return p;
  }
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

struct PolicySettings {
  ScoreMode score;
  EvictionMode eviction;
  ReadModulation read;
};

/// fifo and no_bias retain the same frames (uniform scores tie, and ties
/// evict the oldest); they differ only in how the replacement is decided.
inline PolicySettings policy_settings(Policy p) {
  switch (p) {
    case Policy::sgeb_full:
      return {ScoreMode::full, EvictionMode::min_score, ReadModulation::scored};
    case Policy::fifo:
      return {ScoreMode::uniform, EvictionMode::chronological, ReadModulation::uniform};
    case Policy::relevance_only:
      return {ScoreMode::relevance_only, EvictionMode::min_score, ReadModulation::scored};
    case Policy::novelty_only:
      return {ScoreMode::novelty_only, EvictionMode::min_score, ReadModulation::scored};
    case Policy::no_bias:
      return {ScoreMode::uniform, EvictionMode::min_score, ReadModulation::uniform};
  }
  throw std::invalid_argument("unknown policy");
}

struct ComponentToggles {
  bool cggf = true;
  bool fgcb = true;
  bool sgeb = true;
  bool camera_delta = true;
};

struct PipelineOptions {
  ComponentToggles toggles;
  ReadModulation sgeb_read = ReadModulation::scored;
  bool verbose = false;
};

template <typename Scalar>
struct PipelineState {
  FgcbState<Scalar> fgcb;
  SgebState<Scalar> sgeb;
  std::size_t step = 0;
  RowVector<Scalar> question;  // pooled question feature q̄
};

template <typename Scalar>
PipelineState<Scalar> make_pipeline_state(std::size_t tau, std::size_t capacity,
                                          Scalar lambda_r, Scalar lambda_nu, SgebPolicy policy,
                                          RowVector<Scalar> question) {
  if (tau == 0 || capacity == 0) {
    throw std::invalid_argument("pipeline: window and bank capacity must be positive");
  }
  if (!(lambda_r > 0) || !(lambda_nu > 0)) {
    throw std::invalid_argument("pipeline: lambda_r and lambda_nu must be positive");
  }
  PipelineState<Scalar> s;
  s.fgcb.capacity = tau;
  s.sgeb.capacity = capacity;
  s.sgeb.lambda_r = lambda_r;
  s.sgeb.lambda_nu = lambda_nu;
  s.sgeb.policy = policy;
  s.question = std::move(question);
  return s;
}

struct SgebAdmission {
  double relevance;
  double novelty;
  double score;
  WriteOutcome outcome;
};

struct StepRecord {
  std::size_t frame_index = 0;
  std::optional<SgebAdmission> sgeb;  // absent when the bank is switched off
  double gate_fgcb_mean = 0;
  double gate_sgeb_mean = 0;
  double fused_checksum = 0;
  // Frames visible to each read at this step.
  std::vector<std::size_t> fgcb_observed;
  std::vector<std::size_t> sgeb_observed;
  // Filled only in verbose mode.
  std::vector<double> geo_feature;
  std::vector<double> fused_feature;
};

template <typename Scalar>
struct StepResult {
  PipelineState<Scalar> state;
  Matrix<Scalar> fused;
  Matrix<Scalar> geo_feature;
  StepRecord record;
};

namespace detail {
template <typename Scalar>
std::vector<double> flatten(const Matrix<Scalar>& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = m.data()[i];
  return out;
}
}  // namespace detail

template <typename Scalar>
StepResult<Scalar> step(PipelineState<Scalar> state, const FrameInputs<Scalar>& in,
                        const ParamBundle<Scalar>& params, const PipelineOptions& options) {
  if (in.frame_index != state.step + 1) {
    throw std::invalid_argument("step: expected frame " + std::to_string(state.step + 1) +
                                ", got " + std::to_string(in.frame_index));
  }
  const auto& toggles = options.toggles;

  GeoAwareFeature<Scalar> geo =
      toggles.cggf ? fuse_geometry(in, params.cggf) : passthrough_geometry(in);
  const Matrix<Scalar>& f = geo.feature;

  StepRecord record;
  record.frame_index = in.frame_index;
  record.fgcb_observed = state.fgcb.frame_indices();
  record.sgeb_observed = state.sgeb.frame_indices();

  // Both banks are read before either is written.
  const Matrix<Scalar> zero = Matrix<Scalar>::Zero(f.rows(), f.cols());
  const Matrix<Scalar> fgcb_readout =
      toggles.fgcb ? fgcb_read(state.fgcb, f, geo.camera, params.fgcb, toggles.camera_delta)
                   : zero;
  const Matrix<Scalar> sgeb_readout =
      toggles.sgeb ? sgeb_read(state.sgeb, f, params.sgeb, options.sgeb_read) : zero;
  if (!toggles.fgcb) record.fgcb_observed.clear();
  if (!toggles.sgeb) record.sgeb_observed.clear();

  auto fusion = adaptive_fuse(f, fgcb_readout, sgeb_readout, params.fusion);
  record.gate_fgcb_mean = static_cast<double>(fusion.gate_fgcb.mean());
  record.gate_sgeb_mean = static_cast<double>(fusion.gate_sgeb.mean());
  record.fused_checksum = static_cast<double>(fusion.fused.sum());

  state.fgcb = fgcb_write(std::move(state.fgcb), f, geo.camera, geo.frame_index);

  if (toggles.sgeb) {
    auto candidate = make_candidate(state.sgeb, pool_entry(f, geo.grid_h, geo.grid_w, params.sgeb),
                                    in.semantic, state.question, geo.frame_index);
    SgebAdmission admission{static_cast<double>(candidate.relevance),
                            static_cast<double>(candidate.novelty),
                            static_cast<double>(candidate.score),
                            {}};
    auto written = sgeb_write(std::move(state.sgeb), std::move(candidate));
    state.sgeb = std::move(written.state);
    admission.outcome = std::move(written.outcome);
    record.sgeb = std::move(admission);
  }

  if (options.verbose) {
    record.geo_feature = detail::flatten(f);
    record.fused_feature = detail::flatten(fusion.fused);
  }
  state.step += 1;
  return {std::move(state), std::move(fusion.fused), std::move(geo.feature), std::move(record)};
}

}  // namespace qgeomem
