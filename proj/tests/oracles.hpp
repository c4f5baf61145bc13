#ifndef HABIT_TESTS_ORACLES_HPP
#define HABIT_TESTS_ORACLES_HPP

// Brute-force reference implementations over std::vector. They share no code
// with the library and favour the most literal reading of each formula.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat from_eigen(const Eigen::MatrixXd& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Vec from_eigen(const Eigen::VectorXd& v) { return Vec(v.data(), v.data() + v.size()); }

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Eigen::MatrixXd random_tokens(Eigen::Index q, Eigen::Index d, std::mt19937_64& rng) {
  Eigen::MatrixXd m = random_matrix(q, d, rng);
  for (Eigen::Index i = 0; i < q; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

inline Eigen::MatrixXd random_similarity(Eigen::Index b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd s(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) s(i, j) = u(rng);
  return s;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Mat normalize_rows(const Mat& m) {
  Mat out = m;
  for (auto& row : out) {
    const double n = std::sqrt(dot(row, row));
    for (double& x : row) x /= n;
  }
  return out;
}

inline Vec pool(const Mat& f) {
  Vec mean(f[0].size(), 0.0);
  for (const auto& row : f)
    for (std::size_t k = 0; k < row.size(); ++k) mean[k] += row[k] / static_cast<double>(f.size());
  const double n = std::sqrt(dot(mean, mean));
  for (double& x : mean) x /= n;
  return mean;
}

inline Mat similarity(const Mat& q, const Mat& t) {
  Mat s(q.size(), Vec(t.size()));
  for (std::size_t b = 0; b < q.size(); ++b)
    for (std::size_t j = 0; j < t.size(); ++j) s[b][j] = dot(q[b], t[j]);
  return s;
}

inline Mat joint(const Mat& fc, const Mat& ft, double tau_mk) {
  Mat p(fc.size(), Vec(ft.size()));
  double z = 0;
  for (std::size_t i = 0; i < fc.size(); ++i)
    for (std::size_t j = 0; j < ft.size(); ++j) {
      p[i][j] = std::exp(dot(fc[i], ft[j]) / tau_mk);
      z += p[i][j];
    }
  for (auto& row : p)
    for (double& x : row) x /= z;
  return p;
}

inline double mutual_information(const Mat& p) {
  Vec r(p.size(), 0.0), c(p[0].size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      r[i] += p[i][j];
      c[j] += p[i][j];
    }
  double mi = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j)
      if (p[i][j] > 0) mi += p[i][j] * std::log(p[i][j] / (r[i] * c[j]));
  return mi;
}

inline double mutual_knowledge(const Mat& fc, const Mat& ft, double tau_mk) {
  return std::max(0.0, mutual_information(joint(fc, ft, tau_mk)));
}

inline Vec softmax(const Vec& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double z = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) z += (p[k] = std::exp(logits[k] - mx));
  for (double& x : p) x /= z;
  return p;
}

inline Vec scaled(const Vec& v, double tau) {
  Vec out = v;
  for (double& x : out) x /= tau;
  return out;
}

inline std::size_t select_standard(const Mat& s, double tau) {
  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < s.size(); ++b) {
    const double loss = -std::log(softmax(scaled(s[b], tau))[b]);
    if (loss < best_loss) {
      best_loss = loss;
      best = b;
    }
  }
  return best;
}

inline double transition_rate(double mk_std, double mk) {
  return std::fabs(mk_std - mk) / std::max(mk_std, 1e-8);
}

inline double cleanliness(const Mat& fc, const Mat& ft, const Mat& fcs, const Mat& fts,
                          double tau_mk) {
  const double s = mutual_knowledge(fcs, fts, tau_mk);
  const double ct = transition_rate(s, mutual_knowledge(fc, ft, tau_mk));
  const double cts = transition_rate(s, mutual_knowledge(fc, fts, tau_mk));
  const double tcs = transition_rate(s, mutual_knowledge(fcs, ft, tau_mk));
  return 1.0 / (1.0 + ct + std::fabs(cts - tcs));
}

// Textbook DBSCAN: label cores, then flood clusters from every core through
// core-to-any eps links; whatever is never reached is noise.
inline std::set<long> dbscan(const Vec& x, double eps, int min_pts) {
  const std::size_t n = x.size();
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    int count = 0;
    for (std::size_t j = 0; j < n; ++j) count += std::fabs(x[i] - x[j]) <= eps;
    core[i] = count >= min_pts;
  }
  std::vector<bool> reached(n, false);
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || reached[seed]) continue;
    std::vector<std::size_t> stack{seed};
    reached[seed] = true;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      if (!core[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!reached[j] && std::fabs(x[i] - x[j]) <= eps) {
          reached[j] = true;
          stack.push_back(j);
        }
      }
    }
  }
  std::set<long> noise;
  for (std::size_t i = 0; i < n; ++i)
    if (!reached[i]) noise.insert(static_cast<long>(i));
  return noise;
}

inline double kl(const Mat& now, const Mat& prev, const std::vector<int>& m_now,
                 const std::vector<int>& m_prev, double tau) {
  double total = 0;
  int kept = 0;
  for (std::size_t b = 0; b < now.size(); ++b) {
    if (!m_now[b] || !m_prev[b]) continue;
    const Vec p = softmax(scaled(now[b], tau));
    const Vec q = softmax(scaled(prev[b], tau));
    for (std::size_t j = 0; j < p.size(); ++j) total += p[j] * std::log(p[j] / q[j]);
    ++kept;
  }
  return kept ? total / kept : 0.0;
}

inline double margin(double e, double m) { return m * (std::pow(10.0, e) - 1.0) / 9.0; }

inline double soft_margin(const Mat& s, const Vec& e, const std::vector<int>& mask, double m) {
  const std::size_t n = s.size();
  if (n < 2) return 0;
  double total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (!mask[b]) continue;
    double worst = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != b) worst = std::max(worst, margin(e[b], m) + s[b][j] - s[b][b]);
    total += worst;
  }
  return total / static_cast<double>(n);
}

inline double rank(const Mat& s, const std::vector<int>& mask, double tau) {
  const std::size_t n = s.size();
  double total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (!mask[b]) continue;
    // Extended precision keeps log(1 - p) accurate when p is close to 1.
    std::vector<long double> e(n);
    long double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += e[j] = std::exp(static_cast<long double>(s[b][j]) / tau);
    long double row = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != b) row -= std::log((z - e[j]) / z);
    total += static_cast<double>(row / static_cast<long double>(n - 1));
  }
  return total / static_cast<double>(n);
}

inline double total(double rank, double kl, double soft, double kappa, double gamma) {
  return rank + kappa * kl + gamma * soft;
}

inline std::vector<int> random_mask(std::size_t n, std::mt19937_64& rng, double p_zero = 0.3) {
  std::bernoulli_distribution zero(p_zero);
  std::vector<int> m(n);
  for (int& x : m) x = zero(rng) ? 0 : 1;
  return m;
}

inline Eigen::VectorXi to_eigen(const std::vector<int>& m) {
  Eigen::VectorXi v(static_cast<Eigen::Index>(m.size()));
  for (std::size_t k = 0; k < m.size(); ++k) v(static_cast<Eigen::Index>(k)) = m[k];
  return v;
}

}  // namespace oracle

#endif  // HABIT_TESTS_ORACLES_HPP
