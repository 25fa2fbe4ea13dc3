#include "reference.hpp"

#include "qgeomem/random.hpp"
#include "qgeomem/sgeb.hpp"
#include "qgeomem/synth.hpp"

#include <doctest.h>

#include <algorithm>

using namespace qgeomem;
using M = Matrix<double>;
using R = RowVector<double>;
using Entry = SgebEntry<double>;

namespace {

M random_matrix(CounterRng rng, Eigen::Index rows, Eigen::Index cols) {
  M m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

/// A 1-token entry whose token mean is exactly `mean`.
Entry make_entry(std::initializer_list<double> mean, double relevance, std::size_t index) {
  Entry e;
  e.pooled = M(1, static_cast<Eigen::Index>(mean.size()));
  Eigen::Index j = 0;
  for (double v : mean) e.pooled(0, j++) = v;
  e.relevance = relevance;
  e.frame_index = index;
  return e;
}

SgebState<double> bank_with(std::size_t capacity) {
  SgebState<double> s;
  s.capacity = capacity;
  return s;
}

/// Insert through the public path: candidate scored against the bank, then written.
SgebWriteResult<double> admit(SgebState<double> s, Entry e) {
  e.novelty = novelty_score<double>(e.pooled, [&] {
    std::vector<M> stored;
    for (const auto& x : s.entries) stored.push_back(x.pooled);
    return stored;
  }(), s.lambda_nu);
  e.score = e.relevance * e.novelty;
  return sgeb_write(std::move(s), std::move(e));
}

struct Item {
  std::size_t index;
  ref::Vec mean;
  double relevance;
  double novelty = 0;
  double score = 0;
};

std::vector<Item> refreshed(std::vector<Item> items, double lambda_nu) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    double best = 0;
    bool any = false;
    for (std::size_t j = 0; j < items.size(); ++j) {
      if (i == j) continue;
      any = true;
      best = std::max(best, (ref::cosine(items[i].mean, items[j].mean) + 1) / 2);
    }
    items[i].novelty = any ? lambda_nu * (1 - best) : lambda_nu;
    items[i].score = items[i].relevance * items[i].novelty;
  }
  return items;
}

}  // namespace

TEST_CASE("pooled entries") {
  SgebParams<double> p;
  CHECK(p.pool_h == 7);
  CHECK(p.pool_w == 7);
  p.proj_q = p.proj_k = p.proj_v = M::Identity(3, 3);
  const M x = random_matrix(CounterRng(1), 14 * 14, 3);
  const M pooled = pool_entry(x, 14, 14, p);
  REQUIRE(pooled.rows() == 49);
  for (int bi = 0; bi < 7; ++bi)
    for (int bj = 0; bj < 7; ++bj) {
      R block = R::Zero(3);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) block += x.row((2 * bi + r) * 14 + 2 * bj + c);
      CHECK((pooled.row(bi * 7 + bj) - block / 4).cwiseAbs().maxCoeff() < 1e-14);
    }
  p.pool_h = p.pool_w = 2;
  const M small = random_matrix(CounterRng(2), 4, 3);
  CHECK(pool_entry(small, 2, 2, p) == small);
  const M constant = M::Constant(36, 3, -1.25);
  p.pool_h = 3;
  CHECK((pool_entry(constant, 6, 6, p).array() == -1.25).all());
}

TEST_CASE("relevance score") {
  const R q = (R(3) << 1, -2, 0.5).finished();
  CHECK(relevance_score(q, q, 2.0) == 2.0);
  CHECK(relevance_score(R(-q), q, 2.0) == 0.0);
  CHECK(relevance_score((R(2) << 1, 0).finished(), (R(2) << 0, 3).finished(), 1.0) == 0.5);
  CHECK(relevance_score(R(R::Zero(3)), q, 1.0) == 0.0);
  CHECK_THROWS(relevance_score(R(R::Zero(2)), q, 1.0));
}

TEST_CASE("novelty score") {
  const M a = (M(2, 2) << 1, 0, 1, 0).finished();
  const M b = (M(2, 2) << 0, 2, 0, 1).finished();
  CHECK(novelty_score<double>(a, {}, 0.7) == 0.7);
  const std::vector<M> same{a};
  CHECK(novelty_score<double>(a, same, 1.0) == 0.0);
  const std::vector<M> orth{b};
  CHECK(novelty_score<double>(a, orth, 1.0) == 0.5);
  const std::vector<M> both{b, a};
  CHECK(novelty_score<double>(a, both, 1.0) == 0.0);
}

TEST_CASE("evidence score") {
  CHECK(evidence_score(0.0, 0.9) == 0.0);
  CHECK(evidence_score(1.5, 0.75) == 1.5 * 0.75);
  CHECK(evidence_score(0.8, 0.5) == doctest::Approx(0.4));
}

TEST_CASE("sgeb_read") {
  CounterRng rng(4);
  SgebParams<double> p;
  p.proj_q = random_matrix(rng.split(0), 3, 3);
  p.proj_k = random_matrix(rng.split(1), 3, 3);
  p.proj_v = random_matrix(rng.split(2), 3, 3);
  const M f = random_matrix(rng.split(3), 5, 3);

  SUBCASE("empty bank") {
    CHECK(sgeb_read(SgebState<double>{}, f, p).isZero(0.0));
  }
  SUBCASE("single entry with unit score") {
    SgebState<double> s;
    Entry e;
    e.pooled = random_matrix(rng.split(4), 4, 3);
    e.score = 1.0;
    s.entries.push_back(e);
    // A constant key shift cancels in the softmax.
    const auto expected = ref::attention(ref::matmul(ref::from(f), ref::from(p.proj_q)),
                                         ref::matmul(ref::from(e.pooled), ref::from(p.proj_k)),
                                         ref::matmul(ref::from(e.pooled), ref::from(p.proj_v)));
    CHECK(ref::max_abs_diff(sgeb_read(s, f, p), expected) < 1e-12);
    s.entries[0].score = 0.3;
    CHECK(ref::max_abs_diff(sgeb_read(s, f, p, ReadModulation::uniform), expected) < 1e-12);
  }
  SUBCASE("scores (1, 0) against materialized keys and values") {
    SgebState<double> s;
    for (int u = 0; u < 2; ++u) {
      Entry e;
      e.pooled = random_matrix(rng.split(10 + u), 4, 3);
      e.score = u == 0 ? 1.0 : 0.0;
      e.frame_index = u + 1;
      s.entries.push_back(e);
    }
    ref::Mat keys, values;
    for (const auto& e : s.entries) {
      for (auto row : ref::matmul(ref::from(e.pooled), ref::from(p.proj_k))) {
        for (double& x : row) x += e.score;
        keys.push_back(row);
      }
      for (auto row : ref::matmul(ref::from(e.pooled), ref::from(p.proj_v))) {
        for (double& x : row) x *= e.score;
        values.push_back(row);
      }
    }
    for (std::size_t i = 4; i < 8; ++i) CHECK(std::all_of(values[i].begin(), values[i].end(), [](double x) { return x == 0.0; }));
    const auto expected = ref::attention(ref::matmul(ref::from(f), ref::from(p.proj_q)), keys, values);
    CHECK(ref::max_abs_diff(sgeb_read(s, f, p), expected) < 1e-12);
  }
}

TEST_CASE("refresh_novelty") {
  SUBCASE("single entry gets lambda") {
    auto out = refresh_novelty<double>({make_entry({1, 2}, 0.5, 1)}, 0.8);
    CHECK(out[0].novelty == 0.8);
    CHECK(out[0].score == 0.5 * 0.8);
  }
  SUBCASE("mutual duplicates") {
    auto out = refresh_novelty<double>({make_entry({1, 2}, 1, 1), make_entry({1, 2}, 1, 2)}, 1.0);
    CHECK(out[0].novelty == 0.0);
    CHECK(out[1].novelty == 0.0);
    CHECK(out[0].score == 0.0);
  }
  SUBCASE("pairwise cosines 1, 0, 0") {
    std::vector<Entry> entries{make_entry({1, 0, 0}, 1, 1), make_entry({2, 0, 0}, 0.5, 2),
                               make_entry({0, 1, 0}, 1, 3)};
    std::vector<Item> items{{1, {1, 0, 0}, 1}, {2, {2, 0, 0}, 0.5}, {3, {0, 1, 0}, 1}};
    const auto out = refresh_novelty(entries, 1.0);
    const auto want = refreshed(items, 1.0);
    for (int i = 0; i < 3; ++i) {
      CHECK(out[i].novelty == doctest::Approx(want[i].novelty).epsilon(1e-14));
      CHECK(out[i].score == doctest::Approx(want[i].score).epsilon(1e-14));
    }
    CHECK(out[0].novelty == 0.0);
    CHECK(out[2].novelty == 0.5);
  }
}

TEST_CASE("duplicate candidate evicts the oldest of the tied zero scores") {
  auto s = bank_with(2);
  const auto a = make_entry({1, 0, 0}, 1, 1);
  const auto b = make_entry({0, 1, 0}, 1, 2);
  s = admit(std::move(s), a).state;
  s = admit(std::move(s), b).state;
  const auto c = make_entry({1, 0, 0}, 1, 3);
  const auto result = admit(std::move(s), c);
  CHECK(result.outcome.kind == WriteOutcome::Kind::inserted_with_eviction);
  REQUIRE(result.outcome.evicted_frame_index.has_value());
  CHECK(*result.outcome.evicted_frame_index == 1);
  CHECK(result.state.frame_indices() == std::vector<std::size_t>{2, 3});
  // B and C are orthogonal, so both refresh to novelty 0.5.
  CHECK(result.state.entries[0].novelty == 0.5);
  CHECK(result.state.entries[1].novelty == 0.5);
  REQUIRE(result.outcome.refreshed.size() == 2);
  CHECK(result.outcome.refreshed[1].frame_index == 3);
  CHECK(result.outcome.refreshed[1].score == 0.5);
}

TEST_CASE("zero-relevance candidate is rejected by a full bank") {
  auto s = bank_with(3);
  s = admit(std::move(s), make_entry({1, 0, 0, 0}, 1, 1)).state;
  s = admit(std::move(s), make_entry({0, 1, 0, 0}, 0.5, 2)).state;
  s = admit(std::move(s), make_entry({0, 0, 1, 0}, 0.7, 3)).state;
  const auto result = admit(s, make_entry({0, 0, 0, 1}, 0.0, 4));
  CHECK(result.outcome.kind == WriteOutcome::Kind::candidate_rejected);
  CHECK_FALSE(result.outcome.evicted_frame_index.has_value());
  CHECK(result.state.frame_indices() == std::vector<std::size_t>{1, 2, 3});
  CHECK(std::string(to_string(result.outcome.kind)) == "candidate_rejected");
}

TEST_CASE("default capacity") {
  CHECK(SgebState<double>{}.capacity == 32);
}

TEST_CASE("newest tie-break control keeps the older duplicate") {
  auto s = bank_with(2);
  s.policy.tie_break = TieBreak::newest;
  s = admit(std::move(s), make_entry({1, 0}, 1, 1)).state;
  s = admit(std::move(s), make_entry({0, 1}, 1, 2)).state;
  const auto result = admit(std::move(s), make_entry({1, 0}, 1, 3));
  CHECK(result.outcome.kind == WriteOutcome::Kind::candidate_rejected);
  CHECK(result.state.frame_indices() == std::vector<std::size_t>{1, 2});
}

TEST_CASE("chronological eviction ignores scores") {
  auto s = bank_with(3);
  s.policy.score = ScoreMode::uniform;
  s.policy.eviction = EvictionMode::chronological;
  for (std::size_t t = 1; t <= 7; ++t) {
    auto e = make_entry({double(t), 1.0}, t == 5 ? 0.0 : 1.0, t);
    e = make_candidate(s, e.pooled, R(R::Ones(2)), R(R::Ones(2)), t);
    s = sgeb_write(std::move(s), e).state;
  }
  CHECK(s.frame_indices() == std::vector<std::size_t>{5, 6, 7});
  for (const auto& e : s.entries) CHECK(e.score == 1.0);
}

TEST_CASE("score modes pin the disabled term to its lambda") {
  SgebState<double> s;
  s.lambda_r = 0.9;
  s.lambda_nu = 0.6;
  s.entries.push_back(make_entry({1, 0}, 1, 1));
  const M dup = s.entries[0].pooled;
  const R semantic = (R(2) << -1, 0).finished();
  const R question = (R(2) << 1, 0).finished();

  s.policy.score = ScoreMode::full;
  auto c = make_candidate(s, dup, semantic, question, 2);
  CHECK(c.relevance == 0.0);
  CHECK(c.novelty == 0.0);

  s.policy.score = ScoreMode::relevance_only;
  c = make_candidate(s, dup, semantic, question, 2);
  CHECK(c.novelty == 0.6);
  CHECK(c.relevance == 0.0);

  s.policy.score = ScoreMode::novelty_only;
  c = make_candidate(s, dup, semantic, question, 2);
  CHECK(c.relevance == 0.9);
  CHECK(c.novelty == 0.0);

  s.policy.score = ScoreMode::uniform;
  c = make_candidate(s, dup, semantic, question, 2);
  CHECK(c.score == doctest::Approx(0.54));
  auto written = sgeb_write(s, c).state;
  for (const auto& e : written.entries) CHECK(e.novelty == 0.6);
}

TEST_CASE("per-token similarity mode averages row cosines") {
  const M a = (M(2, 2) << 1, 0, 0, 1).finished();
  const M b = (M(2, 2) << 1, 0, 1, 0).finished();
  CHECK(entry_similarity(a, b, SimilarityMode::per_token_mean) == doctest::Approx((1.0 + 0.5) / 2));
  CHECK(entry_similarity(a, b, SimilarityMode::token_mean) == doctest::Approx((1 / std::sqrt(2.0) + 1) / 2));
  CHECK_THROWS(entry_similarity(a, M(M::Zero(3, 2)), SimilarityMode::token_mean));
}

TEST_CASE("writes must carry a newer frame index") {
  auto s = bank_with(2);
  s = admit(std::move(s), make_entry({1, 0}, 1, 4)).state;
  CHECK_THROWS_WITH(admit(s, make_entry({0, 1}, 1, 4)), doctest::Contains("not newer"));
}

TEST_CASE("random streams agree with a pairwise recomputation") {
  CounterRng rng(2024);
  for (int stream = 0; stream < 10; ++stream) {
    auto r = rng.split(stream);
    const std::size_t capacity = 2 + stream % 6;
    auto s = bank_with(capacity);
    std::vector<Item> expected;
    // A small palette of directions makes duplicates and exact ties common.
    std::vector<ref::Vec> palette;
    for (int k = 0; k < 6; ++k) {
      auto pr = r.split(1000 + k);
      palette.push_back({pr.normal(), pr.normal(), pr.normal(), pr.normal()});
    }
    for (std::size_t t = 1; t <= 1000; ++t) {
      const auto& mean = palette[r.below(palette.size())];
      const double relevance = r.below(4) == 0 ? 0.0 : r.uniform();
      Entry e;
      e.pooled = ref::to_matrix({mean});
      e.relevance = relevance;
      e.frame_index = t;
      const auto result = admit(s, e);
      s = result.state;

      expected.push_back({t, mean, relevance});
      expected = refreshed(std::move(expected), 1.0);
      if (expected.size() > capacity) {
        std::size_t victim = 0;
        for (std::size_t i = 1; i < expected.size(); ++i) {
          if (expected[i].score < expected[victim].score) victim = i;
        }
        expected.erase(expected.begin() + static_cast<std::ptrdiff_t>(victim));
        expected = refreshed(std::move(expected), 1.0);
      }
      REQUIRE(s.entries.size() == expected.size());
      CHECK(s.entries.size() <= capacity);
      for (std::size_t i = 0; i < expected.size(); ++i) {
        REQUIRE(s.entries[i].frame_index == expected[i].index);
        CHECK(std::abs(s.entries[i].score - expected[i].score) <= 1e-9);
        if (i > 0) CHECK(s.entries[i - 1].frame_index < s.entries[i].frame_index);
      }
    }
  }
}
