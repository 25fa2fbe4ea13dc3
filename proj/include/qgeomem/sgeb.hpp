#pragma once

// Semantic-geometric evidence bank: a fixed-capacity set of pooled frame
// entries, each scored by question relevance times novelty. The score
// modulates reads and decides which member leaves when the bank overflows.

#include "qgeomem/numerics.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qgeomem {

/// Which evidence terms are live. Disabled terms are pinned to their lambda.
enum class ScoreMode { full, relevance_only, novelty_only, uniform };

enum class EvictionMode { min_score, chronological };

/// `uniform` reads with w_u = 1 for every entry.
enum class ReadModulation { scored, uniform };

/// How two pooled entries are compared: cosine of their token means, or the
/// mean of row-wise cosines. Both are mapped to [0, 1].
enum class SimilarityMode { token_mean, per_token_mean };

/// Resolution of equal scores in min-score eviction. `newest` exists only as
/// a negative control for the brute-force verifier.
enum class TieBreak { oldest, newest };

struct SgebPolicy {
  ScoreMode score = ScoreMode::full;
  EvictionMode eviction = EvictionMode::min_score;
  SimilarityMode similarity = SimilarityMode::token_mean;
  TieBreak tie_break = TieBreak::oldest;

  bool uses_relevance() const {
    return score == ScoreMode::full || score == ScoreMode::relevance_only;
  }
  bool uses_novelty() const {
    return score == ScoreMode::full || score == ScoreMode::novelty_only;
  }
};

template <typename Scalar>
struct SgebEntry {
  Matrix<Scalar> pooled;  // M x d
  Scalar relevance = 0;
  Scalar novelty = 0;
  Scalar score = 0;  // relevance * novelty
  std::size_t frame_index = 0;
};

template <typename Scalar>
struct SgebState {
  std::vector<SgebEntry<Scalar>> entries;  // ascending frame index
  std::size_t capacity = 32;
  Scalar lambda_r = 1;
  Scalar lambda_nu = 1;
  SgebPolicy policy;

  std::vector<std::size_t> frame_indices() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.frame_index);
    return out;
  }
};

template <typename Scalar>
struct SgebParams {
  Matrix<Scalar> proj_q;
  Matrix<Scalar> proj_k;
  Matrix<Scalar> proj_v;
  std::size_t head_count = 1;
  std::size_t pool_h = 7;
  std::size_t pool_w = 7;

  void validate() const {
    const Eigen::Index d = proj_q.rows();
    if (proj_q.cols() != d || proj_k.rows() != d || proj_k.cols() != d || proj_v.rows() != d ||
        proj_v.cols() != d) {
      throw std::invalid_argument("sgeb params: projections must be d x d");
    }
    if (pool_h == 0 || pool_w == 0) {
      throw std::invalid_argument("sgeb params: pool grid must be nonempty");
    }
  }
};

struct RefreshedScore {
  std::size_t frame_index;
  double novelty;
  double score;
};

struct WriteOutcome {
  enum class Kind { inserted_below_capacity, inserted_with_eviction, candidate_rejected };
  Kind kind = Kind::inserted_below_capacity;
  std::optional<std::size_t> evicted_frame_index;
  std::vector<RefreshedScore> refreshed;
};

inline const char* to_string(WriteOutcome::Kind kind) {
  switch (kind) {
    case WriteOutcome::Kind::inserted_below_capacity:
      return "inserted_below_capacity";
    case WriteOutcome::Kind::inserted_with_eviction:
      return "inserted_with_eviction";
    case WriteOutcome::Kind::candidate_rejected:
      return "candidate_rejected";
  }
  return "unknown";
}

template <typename Scalar>
struct SgebWriteResult {
  SgebState<Scalar> state;
  WriteOutcome outcome;
};

template <typename Scalar>
Matrix<Scalar> pool_entry(const Matrix<Scalar>& feature, std::size_t grid_h, std::size_t grid_w,
                          const SgebParams<Scalar>& p) {
  return grid_pool(feature, grid_h, grid_w, p.pool_h, p.pool_w);
}

/// λ_r · (cos(semantic, q̄) + 1) / 2, or 0 when either vector is (near) zero.
template <typename Scalar>
Scalar relevance_score(const RowVector<Scalar>& semantic, const RowVector<Scalar>& question,
                       Scalar lambda_r) {
  if (semantic.cols() != question.cols()) {
    throw std::invalid_argument("relevance_score: length mismatch");
  }
  if (semantic.norm() < Scalar(1e-12) || question.norm() < Scalar(1e-12)) {
    return Scalar(0);
  }
  return lambda_r * normalized_similarity(semantic, question);
}

template <typename Scalar>
Scalar entry_similarity(const Matrix<Scalar>& a, const Matrix<Scalar>& b, SimilarityMode mode) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("entry_similarity: entry shapes differ");
  }
  if (mode == SimilarityMode::token_mean) {
    return normalized_similarity(mean_pool_tokens(a), mean_pool_tokens(b));
  }
  Scalar total = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    total += normalized_similarity(a.row(i), b.row(i));
  }
  return total / static_cast<Scalar>(a.rows());
}

template <typename Scalar>
Scalar novelty_score(const Matrix<Scalar>& candidate, std::span<const Matrix<Scalar>> others,
                     Scalar lambda_nu, SimilarityMode mode = SimilarityMode::token_mean) {
  if (others.empty()) {
    return lambda_nu;
  }
  Scalar best = 0;
  for (const auto& other : others) {
    best = std::max(best, entry_similarity(candidate, other, mode));
  }
  return lambda_nu * (Scalar(1) - best);
}

template <typename Scalar>
Scalar evidence_score(Scalar relevance, Scalar novelty) {
  return relevance * novelty;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> pairwise_similarity(const std::vector<SgebEntry<Scalar>>& entries,
                                   SimilarityMode mode) {
  const auto n = static_cast<Eigen::Index>(entries.size());
  Matrix<Scalar> sim = Matrix<Scalar>::Zero(n, n);
  if (mode == SimilarityMode::token_mean) {
    std::vector<RowVector<Scalar>> means;
    means.reserve(entries.size());
    for (const auto& e : entries) means.push_back(mean_pool_tokens(e.pooled));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        sim(i, j) = sim(j, i) = normalized_similarity(means[i], means[j]);
      }
    }
    return sim;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      sim(i, j) = sim(j, i) = entry_similarity(entries[i].pooled, entries[j].pooled, mode);
    }
  }
  return sim;
}

}  // namespace detail

/// Recompute every entry's novelty leave-one-out against the rest of the
/// list and reset its score to relevance · novelty.
template <typename Scalar>
std::vector<SgebEntry<Scalar>> refresh_novelty(std::vector<SgebEntry<Scalar>> entries,
                                               Scalar lambda_nu,
                                               SimilarityMode mode = SimilarityMode::token_mean) {
  if (entries.size() == 1) {
    entries[0].novelty = lambda_nu;
    entries[0].score = evidence_score(entries[0].relevance, entries[0].novelty);
    return entries;
  }
  const Matrix<Scalar> sim = detail::pairwise_similarity(entries, mode);
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    Scalar best = 0;
    for (Eigen::Index j = 0; j < sim.cols(); ++j) {
      if (j != i) best = std::max(best, sim(i, j));
    }
    auto& e = entries[static_cast<std::size_t>(i)];
    e.novelty = lambda_nu * (Scalar(1) - best);
    e.score = evidence_score(e.relevance, e.novelty);
  }
  return entries;
}

/// Refresh honoring the bank's score mode: disabled novelty stays at λ_ν.
template <typename Scalar>
std::vector<SgebEntry<Scalar>> rescore(std::vector<SgebEntry<Scalar>> entries,
                                       const SgebState<Scalar>& bank) {
  if (entries.empty()) {
    return entries;
  }
  if (bank.policy.uses_novelty()) {
    return refresh_novelty(std::move(entries), bank.lambda_nu, bank.policy.similarity);
  }
  for (auto& e : entries) {
    e.novelty = bank.lambda_nu;
    e.score = evidence_score(e.relevance, e.novelty);
  }
  return entries;
}

/// Score a new pooled entry against the bank as it stands before the write.
template <typename Scalar>
SgebEntry<Scalar> make_candidate(const SgebState<Scalar>& bank, Matrix<Scalar> pooled,
                                 const RowVector<Scalar>& semantic,
                                 const RowVector<Scalar>& question, std::size_t frame_index) {
  SgebEntry<Scalar> c;
  c.frame_index = frame_index;
  c.relevance = bank.policy.uses_relevance() ? relevance_score(semantic, question, bank.lambda_r)
                                             : bank.lambda_r;
  if (bank.policy.uses_novelty()) {
    std::vector<Matrix<Scalar>> stored;
    stored.reserve(bank.entries.size());
    for (const auto& e : bank.entries) stored.push_back(e.pooled);
    c.novelty = novelty_score<Scalar>(pooled, stored, bank.lambda_nu, bank.policy.similarity);
  } else {
    c.novelty = bank.lambda_nu;
  }
  c.score = evidence_score(c.relevance, c.novelty);
  c.pooled = std::move(pooled);
  return c;
}

/// Attention over the concatenated pooled entries. Each entry's score w_u is
/// added to every channel of its keys and multiplies every channel of its
/// values. An empty bank reads as zeros.
template <typename Scalar>
Matrix<Scalar> sgeb_read(const SgebState<Scalar>& state, const Matrix<Scalar>& feature,
                         const SgebParams<Scalar>& p,
                         ReadModulation modulation = ReadModulation::scored) {
  if (feature.cols() != p.proj_q.rows()) {
    throw std::invalid_argument("sgeb_read: feature width does not match params");
  }
  if (state.entries.empty()) {
    return Matrix<Scalar>::Zero(feature.rows(), feature.cols());
  }
  Eigen::Index total = 0;
  for (const auto& e : state.entries) {
    if (e.pooled.cols() != feature.cols()) {
      throw std::invalid_argument("sgeb_read: stored entry width mismatch");
    }
    total += e.pooled.rows();
  }
  Matrix<Scalar> keys(total, feature.cols());
  Matrix<Scalar> values(total, feature.cols());
  Eigen::Index offset = 0;
  for (const auto& e : state.entries) {
    const Eigen::Index n = e.pooled.rows();
    const Scalar w = modulation == ReadModulation::scored ? e.score : Scalar(1);
    keys.middleRows(offset, n) = (e.pooled * p.proj_k).array() + w;
    values.middleRows(offset, n) = (e.pooled * p.proj_v) * w;
    offset += n;
  }
  return scaled_dot_attention<Scalar>(feature * p.proj_q, keys, values, p.head_count);
}

template <typename Scalar>
SgebWriteResult<Scalar> sgeb_write(SgebState<Scalar> state, SgebEntry<Scalar> candidate) {
  if (state.capacity == 0) {
    throw std::invalid_argument("sgeb_write: capacity must be positive");
  }
  for (const auto& e : state.entries) {
    if (e.frame_index >= candidate.frame_index) {
      throw std::invalid_argument("sgeb_write: frame index " +
                                  std::to_string(candidate.frame_index) +
                                  " is not newer than stored frame " +
                                  std::to_string(e.frame_index));
    }
  }

  WriteOutcome outcome;
  if (state.entries.size() < state.capacity) {
    state.entries.push_back(std::move(candidate));
    state.entries = rescore(std::move(state.entries), state);
    outcome.kind = WriteOutcome::Kind::inserted_below_capacity;
  } else if (state.policy.eviction == EvictionMode::chronological) {
    outcome.kind = WriteOutcome::Kind::inserted_with_eviction;
    outcome.evicted_frame_index = state.entries.front().frame_index;
    state.entries.erase(state.entries.begin());
    state.entries.push_back(std::move(candidate));
    state.entries = rescore(std::move(state.entries), state);
  } else {
    const std::size_t candidate_index = candidate.frame_index;
    std::vector<SgebEntry<Scalar>> pool = std::move(state.entries);
    pool.push_back(std::move(candidate));
    pool = rescore(std::move(pool), state);

    // Entries are in ascending frame order, so a strict comparison keeps the
    // oldest of equal scores and a non-strict one the newest.
    std::size_t victim = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      const bool better = state.policy.tie_break == TieBreak::oldest
                              ? pool[i].score < pool[victim].score
                              : pool[i].score <= pool[victim].score;
      if (better) victim = i;
    }
    outcome.evicted_frame_index = pool[victim].frame_index;
    outcome.kind = pool[victim].frame_index == candidate_index
                       ? WriteOutcome::Kind::candidate_rejected
                       : WriteOutcome::Kind::inserted_with_eviction;
    if (outcome.kind == WriteOutcome::Kind::candidate_rejected) {
      outcome.evicted_frame_index.reset();
    }
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(victim));
    state.entries = rescore(std::move(pool), state);
  }

  outcome.refreshed.reserve(state.entries.size());
  for (const auto& e : state.entries) {
    outcome.refreshed.push_back({e.frame_index, static_cast<double>(e.novelty),
                                 static_cast<double>(e.score)});
  }
  return {std::move(state), std::move(outcome)};
}

}  // namespace qgeomem
