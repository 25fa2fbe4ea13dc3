#pragma once

// Fine-grained context bank: a sliding window of the last τ fused frame
// features, read through attention whose keys and values are modulated by
// the camera difference between the current frame and each stored frame.

#include "qgeomem/numerics.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qgeomem {

template <typename Scalar>
struct FgcbEntry {
  Matrix<Scalar> feature;    // N_v x d
  RowVector<Scalar> camera;  // 1 x d_g
  std::size_t frame_index = 0;
};

template <typename Scalar>
struct FgcbState {
  std::vector<FgcbEntry<Scalar>> entries;  // oldest first
  std::size_t capacity = 4;

  std::vector<std::size_t> frame_indices() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.frame_index);
    return out;
  }
};

template <typename Scalar>
struct FgcbParams {
  Mlp<Scalar> mlp_bias;  // d_g -> 1
  Mlp<Scalar> mlp_gate;  // d_g -> 1, sigmoid output
  Matrix<Scalar> proj_q;
  Matrix<Scalar> proj_k;
  Matrix<Scalar> proj_v;
  std::size_t head_count = 1;

  void validate() const {
    mlp_bias.validate();
    mlp_gate.validate();
    const Eigen::Index d = proj_q.rows();
    if (proj_q.cols() != d || proj_k.rows() != d || proj_k.cols() != d || proj_v.rows() != d ||
        proj_v.cols() != d) {
      throw std::invalid_argument("fgcb params: projections must be d x d");
    }
    if (mlp_bias.out_dim() != 1 || mlp_gate.out_dim() != 1 ||
        mlp_bias.in_dim() != mlp_gate.in_dim()) {
      throw std::invalid_argument("fgcb params: camera-delta MLPs must map d_g -> 1");
    }
    if (mlp_gate.layers.back().activation != Activation::sigmoid) {
      throw std::invalid_argument("fgcb params: gate MLP needs a sigmoid output");
    }
  }
};

template <typename Scalar>
struct CameraDelta {
  Scalar key_bias;    // unbounded
  Scalar value_gate;  // in (0, 1)
};

template <typename Scalar>
CameraDelta<Scalar> camera_delta_signals(const RowVector<Scalar>& camera_now,
                                         const FgcbEntry<Scalar>& entry,
                                         const FgcbParams<Scalar>& p) {
  if (camera_now.cols() != entry.camera.cols() || camera_now.cols() != p.mlp_bias.in_dim()) {
    throw std::invalid_argument("camera_delta_signals: dimension mismatch");
  }
  const Matrix<Scalar> delta = camera_now - entry.camera;
  return {mlp_forward(p.mlp_bias, delta)(0, 0), mlp_forward(p.mlp_gate, delta)(0, 0)};
}

/// Attention over the concatenated window, oldest entry first. Every key
/// token of entry u is shifted by its scalar bias b_u and every value token
/// scaled by its gate a_u. With `camera_delta = false` the modulation
/// degenerates to b_u = 0, a_u = 1. An empty window reads as zeros.
template <typename Scalar>
Matrix<Scalar> fgcb_read(const FgcbState<Scalar>& state, const Matrix<Scalar>& feature,
                         const RowVector<Scalar>& camera_now, const FgcbParams<Scalar>& p,
                         bool camera_delta = true) {
  if (feature.cols() != p.proj_q.rows()) {
    throw std::invalid_argument("fgcb_read: feature width does not match params");
  }
  if (state.entries.empty()) {
    return Matrix<Scalar>::Zero(feature.rows(), feature.cols());
  }
  Eigen::Index total = 0;
  for (const auto& e : state.entries) {
    if (e.feature.cols() != feature.cols()) {
      throw std::invalid_argument("fgcb_read: stored feature width mismatch");
    }
    total += e.feature.rows();
  }

  Matrix<Scalar> keys(total, feature.cols());
  Matrix<Scalar> values(total, feature.cols());
  Eigen::Index offset = 0;
  for (const auto& e : state.entries) {
    const Eigen::Index n = e.feature.rows();
    auto k = keys.middleRows(offset, n);
    auto v = values.middleRows(offset, n);
    k.noalias() = e.feature * p.proj_k;
    v.noalias() = e.feature * p.proj_v;
    if (camera_delta) {
      const auto signals = camera_delta_signals(camera_now, e, p);
      k.array() += signals.key_bias;
      v *= signals.value_gate;
    }
    offset += n;
  }
  return scaled_dot_attention<Scalar>(feature * p.proj_q, keys, values, p.head_count);
}

/// Append the newest frame, dropping the oldest once the window exceeds τ.
template <typename Scalar>
FgcbState<Scalar> fgcb_write(FgcbState<Scalar> state, Matrix<Scalar> feature,
                             RowVector<Scalar> camera, std::size_t frame_index) {
  if (state.capacity == 0) {
    throw std::invalid_argument("fgcb_write: capacity must be positive");
  }
  if (!state.entries.empty() && frame_index <= state.entries.back().frame_index) {
    throw std::invalid_argument("fgcb_write: frame index " + std::to_string(frame_index) +
                                " is not after " +
                                std::to_string(state.entries.back().frame_index));
  }
  state.entries.push_back({std::move(feature), std::move(camera), frame_index});
  while (state.entries.size() > state.capacity) {
    state.entries.erase(state.entries.begin());
  }
  return state;
}

}  // namespace qgeomem
