#pragma once

// Camera-guided geometry fusion: visual tokens attend to camera-conditioned
// geometry tokens and receive a gated residual.

#include "qgeomem/numerics.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qgeomem {

template <typename Scalar>
struct FrameInputs {
  Matrix<Scalar> visual;     // N_v x d
  Matrix<Scalar> geometry;   // N_g x d_g
  RowVector<Scalar> camera;  // 1 x d_g
  // Question-agnostic semantic embedding of the raw visual tokens (the
  // relevance encoder never sees the geometry-calibrated feature).
  RowVector<Scalar> semantic;  // 1 x d
  std::size_t frame_index = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  void validate() const {
    if (visual.rows() == 0 || geometry.rows() == 0) {
      throw std::invalid_argument("frame inputs: empty visual or geometry tokens");
    }
    if (static_cast<std::size_t>(visual.rows()) != grid_h * grid_w) {
      throw std::invalid_argument("frame inputs: grid " + std::to_string(grid_h) + "x" +
                                  std::to_string(grid_w) + " does not cover " +
                                  std::to_string(visual.rows()) + " visual tokens");
    }
    if (camera.cols() != geometry.cols()) {
      throw std::invalid_argument("frame inputs: camera width differs from geometry width");
    }
    if (!all_finite(visual) || !all_finite(geometry) || !all_finite(camera) ||
        !all_finite(semantic)) {
      throw std::invalid_argument("frame inputs: non-finite value");
    }
  }
};

/// Fused frame feature shared by both memory banks.
template <typename Scalar>
struct GeoAwareFeature {
  Matrix<Scalar> feature;    // N_v x d
  RowVector<Scalar> camera;  // 1 x d_g
  std::size_t frame_index = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

template <typename Scalar>
struct CggfParams {
  Matrix<Scalar> proj_geometry;  // d_g x d
  Matrix<Scalar> proj_camera;    // d_g x d
  Mlp<Scalar> mlp_bias;          // 2d -> d
  Mlp<Scalar> mlp_reliability;   // d -> 1, sigmoid output
  Matrix<Scalar> proj_q;         // d x d
  Matrix<Scalar> proj_k;         // d_g x d
  Matrix<Scalar> proj_v;         // d_g x d
  Matrix<Scalar> proj_o;         // d x d
  Matrix<Scalar> proj_camera_gate;  // d_g x 2d
  std::size_t head_count = 1;

  Eigen::Index width() const { return proj_q.cols(); }
  Eigen::Index geometry_width() const { return proj_geometry.rows(); }

  void validate() const {
    const Eigen::Index d = proj_q.cols();
    const Eigen::Index dg = proj_geometry.rows();
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("cggf params: ") + what);
    };
    require(proj_q.rows() == d, "proj_q must be d x d");
    require(proj_geometry.cols() == d, "proj_geometry must map d_g -> d");
    require(proj_camera.rows() == dg && proj_camera.cols() == d, "proj_camera must map d_g -> d");
    require(proj_k.rows() == dg && proj_k.cols() == d, "proj_k must map d_g -> d");
    require(proj_v.rows() == dg && proj_v.cols() == d, "proj_v must map d_g -> d");
    require(proj_o.rows() == d && proj_o.cols() == d, "proj_o must be d x d");
    require(proj_camera_gate.rows() == dg, "proj_camera_gate must read d_g");
    require(proj_camera_gate.cols() % 2 == 0, "proj_camera_gate output width must be even");
    require(proj_camera_gate.cols() == 2 * d, "proj_camera_gate must map d_g -> 2d");
    mlp_bias.validate();
    mlp_reliability.validate();
    require(mlp_bias.in_dim() == 2 * d && mlp_bias.out_dim() == d, "mlp_bias must map 2d -> d");
    require(mlp_reliability.in_dim() == d && mlp_reliability.out_dim() == 1,
            "mlp_reliability must map d -> 1");
    require(mlp_reliability.layers.back().activation == Activation::sigmoid,
            "mlp_reliability needs a sigmoid output");
    require(head_count >= 1 && d % static_cast<Eigen::Index>(head_count) == 0,
            "head_count must divide d");
  }
};

template <typename Scalar>
struct GeometryBiasGate {
  Matrix<Scalar> bias;         // N_g x d
  Matrix<Scalar> reliability;  // N_g x 1, in (0, 1)
};

template <typename Scalar>
GeometryBiasGate<Scalar> geometry_bias_gate(const Matrix<Scalar>& geometry,
                                            const RowVector<Scalar>& camera,
                                            const CggfParams<Scalar>& p) {
  if (geometry.cols() != p.proj_geometry.rows() || camera.cols() != p.proj_camera.rows()) {
    throw std::invalid_argument("geometry_bias_gate: dimension mismatch");
  }
  const Eigen::Index d = p.width();
  const Matrix<Scalar> projected = geometry * p.proj_geometry;
  const RowVector<Scalar> cam = camera * p.proj_camera;

  // Channel concatenation with the camera row replicated along N_g.
  Matrix<Scalar> joint(geometry.rows(), 2 * d);
  joint.leftCols(d) = projected;
  joint.rightCols(d) = cam.replicate(geometry.rows(), 1);

  return {mlp_forward(p.mlp_bias, joint), mlp_forward(p.mlp_reliability, projected)};
}

template <typename Scalar>
Matrix<Scalar> geometry_residual(const Matrix<Scalar>& visual, const Matrix<Scalar>& geometry,
                                 const GeometryBiasGate<Scalar>& gate,
                                 const CggfParams<Scalar>& p) {
  if (geometry.rows() == 0) {
    throw std::invalid_argument("geometry_residual: no geometry tokens");
  }
  if (gate.bias.rows() != geometry.rows() || gate.reliability.rows() != geometry.rows() ||
      gate.reliability.cols() != 1) {
    throw std::invalid_argument("geometry_residual: gate shape does not match geometry tokens");
  }
  const Matrix<Scalar> q = visual * p.proj_q;
  const Matrix<Scalar> k = geometry * p.proj_k + gate.bias;
  // The per-token reliability multiplies every channel of that token's value.
  const Matrix<Scalar> v =
      (geometry * p.proj_v + gate.bias).array().colwise() * gate.reliability.col(0).array();
  return scaled_dot_attention(q, k, v, p.head_count);
}

/// a ⊙ SiLU(b) where [a; b] = camera · W_cv.
template <typename Scalar>
RowVector<Scalar> swiglu_camera_gate(const RowVector<Scalar>& camera,
                                     const CggfParams<Scalar>& p) {
  if (camera.cols() != p.proj_camera_gate.rows()) {
    throw std::invalid_argument("swiglu_camera_gate: dimension mismatch");
  }
  const RowVector<Scalar> h = camera * p.proj_camera_gate;
  const Eigen::Index d = h.cols() / 2;
  const RowVector<Scalar> act = h.rightCols(d).unaryExpr([](Scalar x) { return silu(x); });
  return h.leftCols(d).cwiseProduct(act);
}

template <typename Scalar>
GeoAwareFeature<Scalar> fuse_geometry(const FrameInputs<Scalar>& in, const CggfParams<Scalar>& p) {
  in.validate();
  if (in.visual.cols() != p.width()) {
    throw std::invalid_argument("fuse_geometry: visual width does not match params");
  }
  const auto gate = geometry_bias_gate(in.geometry, in.camera, p);
  const Matrix<Scalar> residual = geometry_residual(in.visual, in.geometry, gate, p);
  const RowVector<Scalar> channel_gate = swiglu_camera_gate(in.camera, p);

  Matrix<Scalar> injected = residual * p.proj_o;
  injected.array().rowwise() *= channel_gate.array();
  return {in.visual + injected, in.camera, in.frame_index, in.grid_h, in.grid_w};
}

/// Geometry fusion switched off: the visual tokens pass through unchanged.
template <typename Scalar>
GeoAwareFeature<Scalar> passthrough_geometry(const FrameInputs<Scalar>& in) {
  in.validate();
  return {in.visual, in.camera, in.frame_index, in.grid_h, in.grid_w};
}

}  // namespace qgeomem
