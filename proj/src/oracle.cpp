#include "qgeomem/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qgeomem::oracle {

Tokens to_tokens(const Matrix<double>& m) {
  Tokens out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
  }
  return out;
}

Tokens to_tokens(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  if (flat.size() != rows * cols) throw std::invalid_argument("oracle: flat size mismatch");
  Tokens out(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i][j] = flat[i * cols + j];
  }
  return out;
}

Tokens matmul(const Tokens& a, const Tokens& b) {
  const std::size_t inner = b.size();
  const std::size_t cols = inner == 0 ? 0 : b[0].size();
  Tokens out(a.size(), std::vector<double>(cols, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != inner) throw std::invalid_argument("oracle: matmul shape mismatch");
    for (std::size_t k = 0; k < inner; ++k) {
      for (std::size_t j = 0; j < cols; ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (std::sqrt(aa) < 1e-12 || std::sqrt(bb) < 1e-12) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

std::vector<double> token_mean(const Tokens& x) {
  std::vector<double> m(x.at(0).size(), 0.0);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += row[j];
  }
  for (double& v : m) v /= static_cast<double>(x.size());
  return m;
}

double entry_similarity(const Tokens& a, const Tokens& b) {
  return (cosine(token_mean(a), token_mean(b)) + 1.0) / 2.0;
}

Tokens pool_grid(const Tokens& x, std::size_t grid_h, std::size_t grid_w, std::size_t out_h,
                 std::size_t out_w) {
  const std::size_t d = x.at(0).size();
  Tokens out(out_h * out_w, std::vector<double>(d, 0.0));
  // Assign every input cell to its block, then divide by block populations.
  std::vector<double> counts(out_h * out_w, 0.0);
  for (std::size_t r = 0; r < grid_h; ++r) {
    std::size_t bi = 0;
    while ((bi + 1) * grid_h / out_h <= r) ++bi;
    for (std::size_t c = 0; c < grid_w; ++c) {
      std::size_t bj = 0;
      while ((bj + 1) * grid_w / out_w <= c) ++bj;
      const std::size_t cell = bi * out_w + bj;
      counts[cell] += 1.0;
      for (std::size_t j = 0; j < d; ++j) out[cell][j] += x[r * grid_w + c][j];
    }
  }
  for (std::size_t cell = 0; cell < out.size(); ++cell) {
    for (double& v : out[cell]) v /= counts[cell];
  }
  return out;
}

Tokens attention(const Tokens& q, const Tokens& k, const Tokens& v) {
  const std::size_t d = q.at(0).size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tokens out(q.size(), std::vector<double>(v.at(0).size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits(k.size());
    double top = -INFINITY;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
      logits[j] = s * scale;
      top = std::max(top, logits[j]);
    }
    double total = 0;
    for (double& l : logits) {
      l = std::exp(l - top);
      total += l;
    }
    for (std::size_t j = 0; j < k.size(); ++j) {
      for (std::size_t c = 0; c < out[i].size(); ++c) out[i][c] += logits[j] / total * v[j][c];
    }
  }
  return out;
}

double relevance(const std::vector<double>& semantic, const std::vector<double>& question,
                 double lambda_r) {
  double ss = 0, qq = 0;
  for (double x : semantic) ss += x * x;
  for (double x : question) qq += x * x;
  if (std::sqrt(ss) < 1e-12 || std::sqrt(qq) < 1e-12) return 0.0;
  return lambda_r * (cosine(semantic, question) + 1.0) / 2.0;
}

double novelty(const Tokens& candidate, const std::vector<BankItem>& bank, double lambda_nu) {
  if (bank.empty()) return lambda_nu;
  double best = 0;
  for (const auto& item : bank) best = std::max(best, entry_similarity(candidate, item.pooled));
  return lambda_nu * (1.0 - best);
}

std::vector<BankItem> refresh(std::vector<BankItem> items, double lambda_nu) {
  std::vector<double> fresh(items.size(), lambda_nu);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items.size() == 1) break;
    double best = 0;
    for (std::size_t j = 0; j < items.size(); ++j) {
      if (i != j) best = std::max(best, entry_similarity(items[i].pooled, items[j].pooled));
    }
    fresh[i] = lambda_nu * (1.0 - best);
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].novelty = fresh[i];
    items[i].score = items[i].relevance * fresh[i];
  }
  return items;
}

WriteDecision expected_write(std::vector<BankItem> bank, BankItem candidate,
                             std::size_t capacity, double lambda_nu) {
  WriteDecision out;
  const std::size_t candidate_frame = candidate.frame_index;
  bank.push_back(std::move(candidate));
  bank = refresh(std::move(bank), lambda_nu);
  if (bank.size() <= capacity) {
    out.bank = std::move(bank);
    return out;
  }
  double lowest = INFINITY;
  for (const auto& item : bank) lowest = std::min(lowest, item.score);
  std::size_t victim = bank.size();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (bank[i].score == lowest) {
      ++out.tied_minimum;
      if (victim == bank.size() || bank[i].frame_index < bank[victim].frame_index) victim = i;
    }
  }
  out.removed = bank[victim].frame_index;
  out.rejected = *out.removed == candidate_frame;
  bank.erase(bank.begin() + static_cast<std::ptrdiff_t>(victim));
  out.bank = refresh(std::move(bank), lambda_nu);
  return out;
}

}  // namespace qgeomem::oracle
