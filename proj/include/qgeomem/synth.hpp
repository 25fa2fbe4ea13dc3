#pragma once

// Deterministic stand-ins for the frame encoders and the question encoder,
// plus scenario generation with planted question-relevant content.

#include "qgeomem/cggf.hpp"
#include "qgeomem/numerics.hpp"
#include "qgeomem/pipeline.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qgeomem::synth {

struct Dims {
  std::size_t grid_h = 14;
  std::size_t grid_w = 14;
  std::size_t geometry_tokens = 16;
  std::size_t width = 64;           // d
  std::size_t geometry_width = 16;  // d_g

  std::size_t visual_tokens() const { return grid_h * grid_w; }
  void validate() const;
};

inline constexpr std::size_t kPoseWidth = 5;  // x, y, z, cos(heading), sin(heading)
inline constexpr double kMaxNoiseScale = 1.0;

/// The synthetic world encodes camera poses into the geometry width.
void require_pose_width(const Dims& dims);

struct CameraPose {
  std::array<double, 3> position{};
  double heading = 0;
};

struct FrameSpec {
  std::uint32_t content_label = 0;
  double relevance_strength = 0;  // in [0, 1]
  CameraPose pose;
  double noise_scale = 0;
};

struct Scenario {
  std::size_t length = 0;
  std::vector<FrameSpec> frames;
  std::string question_label;
  std::vector<std::size_t> relevant_indices;  // 1-based, ascending
  std::uint64_t seed = 0;
  std::size_t n_labels = 0;
};

struct ScenarioOptions {
  std::size_t length = 256;
  std::size_t n_labels = 0;  // 0: ⌈(1 - revisit_rate) · length⌉
  double relevant_fraction = 0.3;
  double revisit_rate = 0.4;
  double noise_scale = 0.05;
  double relevant_strength = 1.0;
  double distractor_strength = 0.0;
};

std::size_t resolved_label_count(const ScenarioOptions& options);

/// Label sequence where each frame revisits an earlier label with probability
/// `revisit_rate` (always, once every label is in use), camera poses from a
/// bounded random walk, and ⌈relevant_fraction · n_labels⌉ relevant labels.
Scenario gen_scenario(std::uint64_t seed, const ScenarioOptions& options);

/// Exactly `planted` relevant labels, each shown once and spread over the
/// stream ahead of its final `planted` frames; every other frame is a
/// distinct distractor with zero relevance. Noise-free.
Scenario planted_scenario(std::uint64_t seed, std::size_t length, std::size_t planted);

/// Label anchors, the question anchor, and the camera basis for one scenario.
class World {
 public:
  World(std::uint64_t seed, const Dims& dims, std::size_t n_labels,
        const std::string& question_label);

  const Dims& dims() const { return dims_; }
  std::size_t label_count() const { return label_means_.size(); }

  FrameInputs<double> embed_frame(const FrameSpec& spec, std::size_t frame_index) const;

  /// Semantic vector whose (cos + 1)/2 similarity to the question equals the
  /// frame's relevance strength.
  RowVector<double> qformer_stub(const FrameSpec& spec) const;

  const RowVector<double>& question() const { return question_; }

  RowVector<double> encode_camera(const CameraPose& pose) const;
  CameraPose decode_camera(const RowVector<double>& camera) const;

  /// Base visual tokens of a label (before per-frame noise).
  Matrix<double> label_visual(std::uint32_t label) const;
  const RowVector<double>& label_mean(std::uint32_t label) const;

 private:
  void check_label(std::uint32_t label) const;

  Dims dims_;
  std::uint64_t seed_;
  std::vector<RowVector<double>> label_means_;
  Matrix<double> camera_basis_;  // kPoseWidth x d_g, orthonormal rows
  RowVector<double> question_;
  std::vector<RowVector<double>> distractor_dirs_;  // unit, orthogonal to question
};

/// Anchor directions in `width` dimensions with pairwise cosine below 0.3.
std::vector<RowVector<double>> label_anchor_table(std::uint64_t seed, std::size_t width,
                                                  std::size_t count);

struct ModelShape {
  Dims dims;
  std::size_t pool_h = 7;
  std::size_t pool_w = 7;
  std::size_t head_count = 1;
};

ParamBundle<double> init_params(std::uint64_t seed, const ModelShape& shape);

}  // namespace qgeomem::synth
