#pragma once

// Dense kernels shared by every block of the memory pipeline. Token sets are
// row-major matrices with one token per row.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace qgeomem {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Split on sign so exp never overflows.
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar silu(Scalar x) {
  return x * sigmoid(x);
}

template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("softmax_rows: empty input");
  }
  Matrix<Scalar> out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

/// Single-call scaled dot-product attention, softmax(q kᵀ / √d_h) v per head.
///
/// With `heads > 1` the channel dimension is split into equal contiguous
/// slices; each slice attends independently and the results are
/// concatenated back in channel order.
template <typename Scalar>
Matrix<Scalar> scaled_dot_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                    const Matrix<Scalar>& v, std::size_t heads = 1) {
  if (k.rows() == 0) {
    throw std::invalid_argument("scaled_dot_attention: empty key set");
  }
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("scaled_dot_attention: query/key width mismatch");
  }
  if (k.rows() != v.rows()) {
    throw std::invalid_argument("scaled_dot_attention: key/value count mismatch");
  }
  const auto h = static_cast<Eigen::Index>(heads);
  if (h == 0 || q.cols() % h != 0 || v.cols() % h != 0) {
    throw std::invalid_argument("scaled_dot_attention: head count must divide widths");
  }
  const Eigen::Index qk_width = q.cols() / h;
  const Eigen::Index v_width = v.cols() / h;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(qk_width));

  Matrix<Scalar> out(q.rows(), v.cols());
  for (Eigen::Index head = 0; head < h; ++head) {
    const Matrix<Scalar> logits = (q.middleCols(head * qk_width, qk_width) *
                                   k.middleCols(head * qk_width, qk_width).transpose()) *
                                  scale;
    out.middleCols(head * v_width, v_width).noalias() =
        softmax_rows(logits) * v.middleCols(head * v_width, v_width);
  }
  return out;
}

enum class Activation { none, silu, sigmoid };

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // in x out
  RowVector<Scalar> bias;  // 1 x out
  Activation activation = Activation::none;
};

/// Stack of affine layers; the last layer's activation is the output activation.
template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  void validate() const {
    if (layers.empty()) {
      throw std::invalid_argument("mlp: no layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& layer = layers[i];
      if (layer.bias.cols() != layer.weight.cols()) {
        throw std::invalid_argument("mlp: layer " + std::to_string(i) +
                                    " bias width does not match weight");
      }
      if (i > 0 && layers[i - 1].weight.cols() != layer.weight.rows()) {
        throw std::invalid_argument("mlp: layer " + std::to_string(i) +
                                    " input width does not chain from previous layer");
      }
    }
  }
};

template <typename Scalar>
void apply_activation(Matrix<Scalar>& m, Activation activation) {
  switch (activation) {
    case Activation::none:
      return;
    case Activation::silu:
      m = m.unaryExpr([](Scalar x) { return silu(x); });
      return;
    case Activation::sigmoid:
      m = m.unaryExpr([](Scalar x) { return sigmoid(x); });
      return;
  }
}

template <typename Scalar>
Matrix<Scalar> mlp_forward(const Mlp<Scalar>& mlp, const Matrix<Scalar>& x) {
  if (mlp.layers.empty()) {
    throw std::invalid_argument("mlp_forward: no layers");
  }
  Matrix<Scalar> h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& layer = mlp.layers[i];
    if (h.cols() != layer.weight.rows() || layer.bias.cols() != layer.weight.cols()) {
      throw std::invalid_argument("mlp_forward: dimension mismatch at layer " + std::to_string(i));
    }
    Matrix<Scalar> next = h * layer.weight;
    next.rowwise() += layer.bias;
    apply_activation(next, layer.activation);
    h = std::move(next);
  }
  return h;
}

/// Cosine of the angle between two vectors; 0 when either has norm below 1e-12.
///
/// The denominator is sqrt(|a|²|b|²) so that a vector compared with itself
/// yields exactly 1.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch");
  }
  const auto av = a.reshaped();
  const auto bv = b.reshaped();
  const Scalar aa = av.dot(av);
  const Scalar bb = bv.dot(bv);
  constexpr Scalar kMinNormSq = Scalar(1e-24);
  if (aa < kMinNormSq || bb < kMinNormSq) {
    return Scalar(0);
  }
  const Scalar cos = av.dot(bv) / std::sqrt(aa * bb);
  return std::clamp(cos, Scalar(-1), Scalar(1));
}

/// Cosine mapped affinely onto [0, 1].
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar normalized_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                                const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  return (cosine_similarity(a, b) + Scalar(1)) / Scalar(2);
}

template <typename Derived>
RowVector<typename Derived::Scalar> mean_pool_tokens(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() == 0) {
    throw std::invalid_argument("mean_pool_tokens: empty token set");
  }
  return x.colwise().mean();
}

/// Adaptive average pooling of an H x W token grid down to out_h x out_w.
///
/// Output cell (i, j) averages input rows [⌊iH/out_h⌋, ⌊(i+1)H/out_h⌋) and
/// columns [⌊jW/out_w⌋, ⌊(j+1)W/out_w⌋); the blocks partition the grid.
template <typename Scalar>
Matrix<Scalar> grid_pool(const Matrix<Scalar>& x, std::size_t grid_h, std::size_t grid_w,
                         std::size_t out_h, std::size_t out_w) {
  if (static_cast<std::size_t>(x.rows()) != grid_h * grid_w) {
    throw std::invalid_argument("grid_pool: token count " + std::to_string(x.rows()) +
                                " does not match grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w));
  }
  if (out_h == 0 || out_w == 0 || out_h > grid_h || out_w > grid_w) {
    throw std::invalid_argument("grid_pool: output grid must be nonempty and no larger than input");
  }
  Matrix<Scalar> out(static_cast<Eigen::Index>(out_h * out_w), x.cols());
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t r0 = i * grid_h / out_h;
    const std::size_t r1 = (i + 1) * grid_h / out_h;
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t c0 = j * grid_w / out_w;
      const std::size_t c1 = (j + 1) * grid_w / out_w;
      RowVector<Scalar> acc = RowVector<Scalar>::Zero(x.cols());
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          acc += x.row(static_cast<Eigen::Index>(r * grid_w + c));
        }
      }
      out.row(static_cast<Eigen::Index>(i * out_w + j)) =
          acc / static_cast<Scalar>((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

}  // namespace qgeomem
