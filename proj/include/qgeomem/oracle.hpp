#pragma once

// Brute-force reference computations for the evidence bank and for plain
// attention. Written with nested loops over std::vector, sharing no code
// with the Eigen kernels they check.

#include "qgeomem/numerics.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace qgeomem::oracle {

using Tokens = std::vector<std::vector<double>>;  // one token per row

Tokens to_tokens(const Matrix<double>& m);
Tokens to_tokens(const std::vector<double>& flat, std::size_t rows, std::size_t cols);
Tokens matmul(const Tokens& a, const Tokens& b);

double cosine(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> token_mean(const Tokens& x);
/// (cos of token means + 1) / 2.
double entry_similarity(const Tokens& a, const Tokens& b);

Tokens pool_grid(const Tokens& x, std::size_t grid_h, std::size_t grid_w, std::size_t out_h,
                 std::size_t out_w);

/// softmax(q kᵀ/√d) v, one head, no modulation.
Tokens attention(const Tokens& q, const Tokens& k, const Tokens& v);

struct BankItem {
  std::size_t frame_index = 0;
  Tokens pooled;
  double relevance = 0;
  double novelty = 0;
  double score = 0;
};

double relevance(const std::vector<double>& semantic, const std::vector<double>& question,
                 double lambda_r);
double novelty(const Tokens& candidate, const std::vector<BankItem>& bank, double lambda_nu);

/// Leave-one-out novelty for every item, recomputed pair by pair.
std::vector<BankItem> refresh(std::vector<BankItem> items, double lambda_nu);

struct WriteDecision {
  std::vector<BankItem> bank;          // ascending frame index
  std::optional<std::size_t> removed;  // frame index that left C_t, if any
  bool rejected = false;
  std::size_t tied_minimum = 0;  // members sharing the minimum score
};

/// Minimum-score replacement with oldest-first tie resolution.
WriteDecision expected_write(std::vector<BankItem> bank, BankItem candidate,
                             std::size_t capacity, double lambda_nu);

}  // namespace qgeomem::oracle
