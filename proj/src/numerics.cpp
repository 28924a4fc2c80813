#include "ft/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ft {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

Vec matvec(const Matrix& m, const Vec& x) {
  if (x.size() != m.cols)
    throw std::invalid_argument("matvec: vector length " +
                                std::to_string(x.size()) +
                                " != matrix cols " + std::to_string(m.cols));
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

Vec matvec_transposed(const Matrix& m, const Vec& x) {
  if (x.size() != m.rows)
    throw std::invalid_argument("matvec_transposed: vector length " +
                                std::to_string(x.size()) +
                                " != matrix rows " + std::to_string(m.rows));
  Vec out(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * xr;
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  // 53 high bits give a uniform dyadic rational in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("uniform: lo > hi");
  return lo + (hi - lo) * uniform();
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection sampling removes modulo bias while staying deterministic.
  const std::uint64_t nn = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % nn;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return static_cast<std::size_t>(r % nn);
}

double Rng::normal() {
  // Box-Muller; 1 - uniform() keeps the argument of log strictly positive.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

Rng Rng::child(std::uint64_t stream) const {
  // Derive the child seed by running the parent seed and the stream id
  // through the same finalizer; children never consume parent draws.
  std::uint64_t s = seed_ ^ (0x517cc1b727220a95ULL * (stream + 1));
  return Rng(splitmix64(s));
}

Vec softmax(const Vec& scores) {
  if (scores.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx))
    throw std::invalid_argument("softmax: non-finite input");
  Vec out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double log_sum_exp(const Vec& scores) {
  if (scores.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx))
    throw std::invalid_argument("log_sum_exp: non-finite input");
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  return mx + std::log(sum);
}

double cross_entropy(const Vec& scores, std::size_t label) {
  if (label >= scores.size())
    throw std::invalid_argument("cross_entropy: label " +
                                std::to_string(label) + " out of range");
  return std::max(0.0, log_sum_exp(scores) - scores[label]);
}

Vec cross_entropy_grad(const Vec& scores, std::size_t label) {
  if (label >= scores.size())
    throw std::invalid_argument("cross_entropy_grad: label out of range");
  Vec g = softmax(scores);
  g[label] -= 1.0;
  return g;
}

double l2_penalty(const std::vector<std::span<const double>>& groups,
                  double lambda) {
  double sum = 0.0;
  for (const auto& g : groups)
    for (double v : g) sum += v * v;
  return lambda * sum;
}

Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("xavier_init: zero dimension");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return m;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& fn, Vec point,
                     double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps <= 0");
  Vec grad(point.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double hi = fn(point);
    point[i] = saved - eps;
    const double lo = fn(point);
    point[i] = saved;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw std::runtime_error(
          "finite_diff_grad: non-finite function value at coordinate " +
          std::to_string(i));
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

GradCheckResult check_gradient(const std::string& name,
                               const std::function<double(const Vec&)>& fn,
                               const Vec& point, const Vec& analytic,
                               double eps, double tol) {
  GradCheckResult res;
  res.name = name;
  const Vec fd = finite_diff_grad(fn, point, eps);
  if (fd.size() != analytic.size())
    throw std::invalid_argument("check_gradient: gradient size mismatch");
  double na = 0.0, nf = 0.0, nd = 0.0;
  double worst = -1.0;
  std::size_t worst_i = 0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    na += analytic[i] * analytic[i];
    nf += fd[i] * fd[i];
    const double d = analytic[i] - fd[i];
    nd += d * d;
    if (std::abs(d) > worst) {
      worst = std::abs(d);
      worst_i = i;
    }
  }
  na = std::sqrt(na);
  nf = std::sqrt(nf);
  nd = std::sqrt(nd);
  if (na < 1e-10 && nf < 1e-10) {
    res.rel_err = 0.0;  // both gradients vanish
    res.pass = true;
    return res;
  }
  res.rel_err = nd / std::max(na, nf);
  res.pass = res.rel_err < tol;
  if (!res.pass && !fd.empty())
    res.detail = "worst coordinate " + std::to_string(worst_i) +
                 ": analytic=" + std::to_string(analytic[worst_i]) +
                 " fd=" + std::to_string(fd[worst_i]);
  return res;
}

}  // namespace ft
