#include "qgeomem/synth.hpp"

#include "qgeomem/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

namespace qgeomem::synth {
namespace {

// Sub-stream identifiers under a scenario or parameter seed.
enum Stream : std::uint64_t {
  kLabels = 1,
  kRelevant = 2,
  kPoses = 3,
  kAnchors = 4,
  kPatterns = 5,
  kGeometry = 6,
  kCamera = 7,
  kQuestion = 8,
  kDistractors = 9,
  kNoise = 10,
  kParams = 11,
};

constexpr double kAnchorCosineBound = 0.3;
constexpr double kPatternScale = 0.5;
constexpr double kGeometryScale = 0.5;
constexpr double kPositionStep = 0.1;
constexpr double kHeadingStep = 0.2;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix<double> gaussian(CounterRng rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

/// rows x cols matrix with orthonormal rows (rows <= cols).
Matrix<double> orthonormal_rows(CounterRng rng, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::MatrixXd g = gaussian(rng, cols, rows, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(cols, rows);
  return q.transpose();
}

// Extended binary BCH code of length 64, dimension 16, minimum distance 24.
// Any two distinct codewords mapped to ±1 have cosine at most 1 - 2·24/64.
class Bch64 {
 public:
  Bch64() {
    // GF(64) from the primitive polynomial x^6 + x + 1.
    int x = 1;
    for (int i = 0; i < 63; ++i) {
      exp_[i] = x;
      log_[x] = i;
      x <<= 1;
      if (x & 0x40) x ^= 0x43;
    }
    std::uint64_t g = 1;
    std::set<int> covered;
    for (int s = 1; s <= 22; ++s) {
      if (covered.count(s)) continue;
      std::vector<int> coset;
      for (int j = s; !covered.count(j); j = (2 * j) % 63) {
        covered.insert(j);
        coset.push_back(j);
      }
      g = clmul(g, minimal_polynomial(coset));
    }
    generator_ = g;
  }

  std::uint64_t encode(std::uint16_t message) const {
    const std::uint64_t c = clmul(message, generator_);
    const std::uint64_t parity = static_cast<std::uint64_t>(std::popcount(c) & 1);
    return c | (parity << 63);
  }

 private:
  int mul(int a, int b) const {
    if (a == 0 || b == 0) return 0;
    return exp_[(log_[a] + log_[b]) % 63];
  }

  // Product of (x + α^j) over the coset; coefficients land in GF(2).
  std::uint64_t minimal_polynomial(const std::vector<int>& coset) const {
    std::vector<int> poly{1};
    for (int j : coset) {
      std::vector<int> next(poly.size() + 1, 0);
      for (std::size_t i = 0; i < poly.size(); ++i) {
        next[i + 1] ^= poly[i];
        next[i] ^= mul(poly[i], exp_[j]);
      }
      poly = std::move(next);
    }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      if (poly[i] > 1) throw std::logic_error("bch: minimal polynomial not binary");
      bits |= static_cast<std::uint64_t>(poly[i]) << i;
    }
    return bits;
  }

  static std::uint64_t clmul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r = 0;
    for (int i = 0; i < 64 && (a >> i); ++i) {
      if ((a >> i) & 1) r ^= b << i;
    }
    return r;
  }

  int exp_[63]{};
  int log_[64]{};
  std::uint64_t generator_ = 0;
};

std::vector<RowVector<double>> code_anchors(CounterRng rng, std::size_t width,
                                            std::size_t count) {
  static const Bch64 code;
  if (count > 65535) {
    throw std::invalid_argument("label anchors: at most 65535 labels supported");
  }
  CounterRng message_rng = rng.split(0);
  std::set<std::uint16_t> used;
  std::vector<std::uint16_t> messages;
  while (messages.size() < count) {
    const auto m = static_cast<std::uint16_t>(1 + message_rng.below(65535));
    if (used.insert(m).second) messages.push_back(m);
  }
  CounterRng sign_rng = rng.split(1);
  RowVector<double> signs(64);
  for (Eigen::Index j = 0; j < 64; ++j) signs(j) = (sign_rng.next_u64() & 1) ? -1.0 : 1.0;

  const bool embed = width > 64;
  const Matrix<double> basis =
      embed ? orthonormal_rows(rng.split(2), 64, static_cast<Eigen::Index>(width))
            : Matrix<double>();
  const double scale = std::sqrt(static_cast<double>(width)) / 8.0;

  std::vector<RowVector<double>> out;
  out.reserve(count);
  for (std::uint16_t m : messages) {
    const std::uint64_t word = code.encode(m);
    RowVector<double> v(64);
    for (Eigen::Index j = 0; j < 64; ++j) v(j) = ((word >> j) & 1) ? -signs(j) : signs(j);
    out.push_back(embed ? RowVector<double>(scale * (v * basis)) : RowVector<double>(v));
  }
  return out;
}

std::vector<RowVector<double>> sampled_anchors(CounterRng rng, std::size_t width,
                                               std::size_t count) {
  constexpr int kAttempts = 2000;
  const double scale = std::sqrt(static_cast<double>(width));
  std::vector<RowVector<double>> out;
  out.reserve(count);
  std::uint64_t draw = 0;
  while (out.size() < count) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      RowVector<double> v = gaussian(rng.split(draw++), 1, static_cast<Eigen::Index>(width), 1.0);
      v *= scale / v.norm();
      placed = std::all_of(out.begin(), out.end(), [&](const RowVector<double>& u) {
        return cosine_similarity(u, v) < kAnchorCosineBound;
      });
      if (placed) out.push_back(std::move(v));
    }
    if (!placed) {
      throw std::invalid_argument("label anchors: cannot place " + std::to_string(count) +
                                  " anchors in " + std::to_string(width) +
                                  " dimensions; increase the feature width");
    }
  }
  return out;
}

CameraPose random_walk_step(CameraPose pose, CounterRng& rng) {
  for (double& p : pose.position) {
    p += kPositionStep * rng.normal();
    // Reflect into [-1, 1].
    while (p > 1.0 || p < -1.0) p = p > 1.0 ? 2.0 - p : -2.0 - p;
  }
  pose.heading = std::remainder(pose.heading + kHeadingStep * rng.normal(),
                                2.0 * std::numbers::pi);
  return pose;
}

void validate_options(const ScenarioOptions& o) {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (o.length == 0) throw std::invalid_argument("scenario: length must be at least 1");
  if (!in_unit(o.relevant_fraction)) {
    throw std::invalid_argument("scenario: relevant_fraction must lie in [0, 1]");
  }
  if (!in_unit(o.revisit_rate)) {
    throw std::invalid_argument("scenario: revisit_rate must lie in [0, 1]");
  }
  if (!in_unit(o.relevant_strength) || !in_unit(o.distractor_strength)) {
    throw std::invalid_argument("scenario: relevance strengths must lie in [0, 1]");
  }
  if (!(o.noise_scale >= 0.0) || o.noise_scale > kMaxNoiseScale) {
    throw std::invalid_argument("scenario: noise_scale must lie in [0, 1]");
  }
}

}  // namespace

void Dims::validate() const {
  if (grid_h == 0 || grid_w == 0 || geometry_tokens == 0 || width == 0) {
    throw std::invalid_argument("dims: token counts and width must be positive");
  }
  if (geometry_width == 0) throw std::invalid_argument("dims: geometry width must be positive");
}

void require_pose_width(const Dims& dims) {
  if (dims.geometry_width < kPoseWidth) {
    throw std::invalid_argument("dims: geometry width must be at least " +
                                std::to_string(kPoseWidth) + " to encode a camera pose");
  }
}

std::size_t resolved_label_count(const ScenarioOptions& options) {
  if (options.n_labels > 0) return options.n_labels;
  const double fresh = (1.0 - options.revisit_rate) * static_cast<double>(options.length);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fresh - 1e-9)));
}

Scenario gen_scenario(std::uint64_t seed, const ScenarioOptions& options) {
  validate_options(options);
  const std::size_t n_labels = resolved_label_count(options);
  if (options.revisit_rate == 0.0 && n_labels < options.length) {
    throw std::invalid_argument("scenario: revisit_rate 0 needs at least one label per frame");
  }
  const CounterRng root(seed);

  Scenario s;
  s.length = options.length;
  s.seed = seed;
  s.n_labels = n_labels;
  s.question_label = "q0";

  // Relevant labels: a seeded prefix of a Fisher-Yates shuffle.
  const auto relevant_count = static_cast<std::size_t>(
      std::ceil(options.relevant_fraction * static_cast<double>(n_labels) - 1e-9));
  std::vector<std::uint32_t> order(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) order[i] = static_cast<std::uint32_t>(i);
  CounterRng shuffle = root.split(kRelevant);
  for (std::size_t i = n_labels; i > 1; --i) {
    std::swap(order[i - 1], order[shuffle.below(i)]);
  }
  std::vector<bool> relevant(n_labels, false);
  for (std::size_t i = 0; i < relevant_count; ++i) relevant[order[i]] = true;

  CounterRng labels = root.split(kLabels);
  CounterRng poses = root.split(kPoses);
  CameraPose pose;
  std::uint32_t next_new = 0;
  s.frames.reserve(options.length);
  for (std::size_t t = 1; t <= options.length; ++t) {
    const bool exhausted = next_new == n_labels;
    const bool revisit = next_new > 0 && (exhausted || labels.uniform() < options.revisit_rate);
    const std::uint32_t label = revisit ? static_cast<std::uint32_t>(labels.below(next_new))
                                        : next_new++;
    pose = random_walk_step(pose, poses);
    FrameSpec f;
    f.content_label = label;
    f.relevance_strength =
        relevant[label] ? options.relevant_strength : options.distractor_strength;
    f.pose = pose;
    f.noise_scale = options.noise_scale;
    s.frames.push_back(f);
    if (relevant[label]) s.relevant_indices.push_back(t);
  }
  return s;
}

Scenario planted_scenario(std::uint64_t seed, std::size_t length, std::size_t planted) {
  if (planted == 0 || length < 2 * planted) {
    throw std::invalid_argument("planted scenario: need length >= 2 * planted and planted >= 1");
  }
  const CounterRng root(seed);
  Scenario s;
  s.length = length;
  s.seed = seed;
  s.n_labels = length;
  s.question_label = "q0";

  std::vector<bool> is_planted(length + 1, false);
  const std::size_t span = length - planted;
  for (std::size_t i = 0; i < planted; ++i) is_planted[1 + i * span / planted] = true;

  CounterRng poses = root.split(kPoses);
  CameraPose pose;
  for (std::size_t t = 1; t <= length; ++t) {
    pose = random_walk_step(pose, poses);
    FrameSpec f;
    f.content_label = static_cast<std::uint32_t>(t - 1);
    f.relevance_strength = is_planted[t] ? 1.0 : 0.0;
    f.pose = pose;
    f.noise_scale = 0.0;
    s.frames.push_back(f);
    if (is_planted[t]) s.relevant_indices.push_back(t);
  }
  return s;
}

std::vector<RowVector<double>> label_anchor_table(std::uint64_t seed, std::size_t width,
                                                  std::size_t count) {
  const CounterRng rng = CounterRng(seed).split(kAnchors);
  return width >= 64 ? code_anchors(rng, width, count) : sampled_anchors(rng, width, count);
}

World::World(std::uint64_t seed, const Dims& dims, std::size_t n_labels,
             const std::string& question_label)
    : dims_(dims), seed_(seed) {
  dims_.validate();
  require_pose_width(dims_);
  if (n_labels == 0) throw std::invalid_argument("world: need at least one label");
  const CounterRng root(seed);
  const auto d = static_cast<Eigen::Index>(dims.width);
  label_means_ = label_anchor_table(seed, dims.width, n_labels);
  camera_basis_ = orthonormal_rows(root.split(kCamera), static_cast<Eigen::Index>(kPoseWidth),
                                   static_cast<Eigen::Index>(dims.geometry_width));

  question_ = gaussian(root.split(kQuestion).split(fnv1a(question_label)), 1, d, 1.0);
  question_ /= question_.norm();

  const CounterRng distractors = root.split(kDistractors);
  distractor_dirs_.reserve(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) {
    RowVector<double> u = gaussian(distractors.split(i), 1, d, 1.0);
    u -= u.dot(question_) * question_;
    u /= u.norm();
    distractor_dirs_.push_back(std::move(u));
  }
}

void World::check_label(std::uint32_t label) const {
  if (label >= label_means_.size()) {
    throw std::invalid_argument("world: label " + std::to_string(label) + " out of range");
  }
}

const RowVector<double>& World::label_mean(std::uint32_t label) const {
  check_label(label);
  return label_means_[label];
}

Matrix<double> World::label_visual(std::uint32_t label) const {
  check_label(label);
  const auto n = static_cast<Eigen::Index>(dims_.visual_tokens());
  const auto d = static_cast<Eigen::Index>(dims_.width);
  Matrix<double> pattern =
      gaussian(CounterRng(seed_).split(kPatterns).split(label), n, d, kPatternScale);
  // Zero column mean, so the token mean is exactly the anchor.
  const RowVector<double> offset = pattern.colwise().mean();
  pattern.rowwise() -= offset;
  pattern.rowwise() += label_means_[label];
  return pattern;
}

RowVector<double> World::encode_camera(const CameraPose& pose) const {
  RowVector<double> p(static_cast<Eigen::Index>(kPoseWidth));
  p << pose.position[0], pose.position[1], pose.position[2], std::cos(pose.heading),
      std::sin(pose.heading);
  return p * camera_basis_;
}

CameraPose World::decode_camera(const RowVector<double>& camera) const {
  const RowVector<double> p = camera * camera_basis_.transpose();
  CameraPose pose;
  pose.position = {p(0), p(1), p(2)};
  pose.heading = std::atan2(p(4), p(3));
  return pose;
}

RowVector<double> World::qformer_stub(const FrameSpec& spec) const {
  check_label(spec.content_label);
  const double c = std::clamp(2.0 * spec.relevance_strength - 1.0, -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  return c * question_ + s * distractor_dirs_[spec.content_label];
}

FrameInputs<double> World::embed_frame(const FrameSpec& spec, std::size_t frame_index) const {
  check_label(spec.content_label);
  const auto ng = static_cast<Eigen::Index>(dims_.geometry_tokens);
  const auto dg = static_cast<Eigen::Index>(dims_.geometry_width);
  const CounterRng root(seed_);

  FrameInputs<double> in;
  in.grid_h = dims_.grid_h;
  in.grid_w = dims_.grid_w;
  in.frame_index = frame_index;
  in.camera = encode_camera(spec.pose);
  in.semantic = qformer_stub(spec);
  in.visual = label_visual(spec.content_label);
  in.geometry = gaussian(root.split(kGeometry).split(spec.content_label), ng, dg, kGeometryScale);
  in.geometry.rowwise() += in.camera;

  if (spec.noise_scale > 0.0) {
    const CounterRng noise = root.split(kNoise).split(frame_index);
    in.visual += gaussian(noise.split(0), in.visual.rows(), in.visual.cols(), spec.noise_scale);
    in.geometry += gaussian(noise.split(1), ng, dg, spec.noise_scale);
  }
  return in;
}

ParamBundle<double> init_params(std::uint64_t seed, const ModelShape& shape) {
  shape.dims.validate();
  const auto d = static_cast<Eigen::Index>(shape.dims.width);
  const auto dg = static_cast<Eigen::Index>(shape.dims.geometry_width);
  const CounterRng root = CounterRng(seed).split(kParams);
  const CounterRng cggf = root.split(1);
  const CounterRng fgcb = root.split(2);
  const CounterRng sgeb = root.split(3);
  const CounterRng fusion = root.split(4);

  ParamBundle<double> p;
  p.cggf.proj_geometry = uniform_weights<double>(cggf.split(1), dg, d);
  p.cggf.proj_camera = uniform_weights<double>(cggf.split(2), dg, d);
  p.cggf.mlp_bias = two_layer_mlp<double>(cggf.split(3), 2 * d, d, Activation::none);
  p.cggf.mlp_reliability = two_layer_mlp<double>(cggf.split(4), d, 1, Activation::sigmoid);
  p.cggf.proj_q = uniform_weights<double>(cggf.split(5), d, d);
  p.cggf.proj_k = uniform_weights<double>(cggf.split(6), dg, d);
  p.cggf.proj_v = uniform_weights<double>(cggf.split(7), dg, d);
  p.cggf.proj_o = uniform_weights<double>(cggf.split(8), d, d);
  p.cggf.proj_camera_gate = uniform_weights<double>(cggf.split(9), dg, 2 * d);
  p.cggf.head_count = shape.head_count;

  p.fgcb.mlp_bias = two_layer_mlp<double>(fgcb.split(1), dg, 1, Activation::none);
  p.fgcb.mlp_gate = two_layer_mlp<double>(fgcb.split(2), dg, 1, Activation::sigmoid);
  p.fgcb.proj_q = uniform_weights<double>(fgcb.split(3), d, d);
  p.fgcb.proj_k = uniform_weights<double>(fgcb.split(4), d, d);
  p.fgcb.proj_v = uniform_weights<double>(fgcb.split(5), d, d);
  p.fgcb.head_count = shape.head_count;

  p.sgeb.proj_q = uniform_weights<double>(sgeb.split(1), d, d);
  p.sgeb.proj_k = uniform_weights<double>(sgeb.split(2), d, d);
  p.sgeb.proj_v = uniform_weights<double>(sgeb.split(3), d, d);
  p.sgeb.head_count = shape.head_count;
  p.sgeb.pool_h = shape.pool_h;
  p.sgeb.pool_w = shape.pool_w;

  p.fusion.gate_fgcb = two_layer_mlp<double>(fusion.split(1), 3 * d, d, Activation::sigmoid);
  p.fusion.gate_sgeb = two_layer_mlp<double>(fusion.split(2), 3 * d, d, Activation::sigmoid);

  p.validate();
  return p;
}

}  // namespace qgeomem::synth
