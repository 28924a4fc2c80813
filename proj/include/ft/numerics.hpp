#pragma once

// Dense numeric kernels shared by every other module: a small row-major
// matrix type, a deterministic PRNG, stable softmax / cross-entropy,
// Xavier initialization and a finite-difference gradient checker.
//
// All training arithmetic is IEEE double; 32-bit floats appear only in the
// serialization layer.  Kernels either succeed with finite outputs or throw.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ft {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix identity(std::size_t n);
  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

// m * x  (x has length m.cols, result length m.rows)
Vec matvec(const Matrix& m, const Vec& x);
// m^T * x  (x has length m.rows, result length m.cols)
Vec matvec_transposed(const Matrix& m, const Vec& x);

// Deterministic 64-bit PRNG.
//
// Core generator is splitmix64 (Steele, Lea & Flood's SplittableRandom
// finalizer), chosen because its output sequence is a pure function of the
// 64-bit seed and a handful of integer operations, so streams are
// bit-reproducible across compilers and platforms.  Real-valued draws are
// derived in-house for the same reason: the standard <random> distributions
// are not required to produce identical sequences across library
// implementations.
//
//   uniform()  takes the top 53 bits of the next word -> [0, 1)
//   normal()   Box-Muller transform on two uniform draws
//   child(s)   an independent stream keyed by (seed, s); children depend
//              only on the construction seed, never on draw position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64();
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  std::size_t uniform_index(std::size_t n);  // unbiased draw from [0, n)
  double normal();                           // standard normal
  double normal(double mean, double stddev);
  Rng child(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

// Numerically stable softmax: subtracts the max score before
// exponentiating, so inputs with magnitude ~1e3 stay in range.
Vec softmax(const Vec& scores);

// log(sum_i exp(scores[i])), max-shifted for stability.
double log_sum_exp(const Vec& scores);

// Multiclass cross-entropy of raw scores against an integer label:
//   -log softmax(scores)[label]  ==  log_sum_exp(scores) - scores[label]
// Always >= 0; equals log(n) exactly when all scores are equal.
double cross_entropy(const Vec& scores, std::size_t label);

// d cross_entropy / d scores  ==  softmax(scores) - onehot(label)
Vec cross_entropy_grad(const Vec& scores, std::size_t label);

// lambda * sum of squared entries over every parameter group.
double l2_penalty(const std::vector<std::span<const double>>& groups,
                  double lambda);

// Uniform Xavier/Glorot init: entries ~ U(-b, b), b = sqrt(6/(rows+cols)).
Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

// Central-difference gradient of a scalar function at `point`:
//   g[i] = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
// Throws if any function evaluation is non-finite, naming the coordinate.
Vec finite_diff_grad(const std::function<double(const Vec&)>& fn, Vec point,
                     double eps = 1e-5);

// Outcome of comparing an analytic gradient against finite differences.
struct GradCheckResult {
  std::string name;        // which objective / tensor was checked
  double rel_err = 0.0;    // ||analytic - fd||_2 / max(||a||_2, ||fd||_2)
  bool pass = false;
  std::string detail;      // worst coordinate on failure
};

// Runs finite_diff_grad at `point` and compares against `analytic`.
// Gradients whose norms are both below 1e-10 compare equal (degenerate
// zero-gradient cases such as a single-frame softmax).
GradCheckResult check_gradient(const std::string& name,
                               const std::function<double(const Vec&)>& fn,
                               const Vec& point, const Vec& analytic,
                               double eps = 1e-5, double tol = 1e-4);

}  // namespace ft
