#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "drio/tensor.hpp"

namespace drio {

/// Weighted finite set of atoms in R^dim; each atom is a flattened (D, T)
/// trajectory in row-major (feature-major, then time) order.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> coords;   // size() * dim
  std::vector<double> weights;  // nonnegative, at least one positive

  std::size_t size() const { return weights.size(); }
  std::span<const double> atom(std::size_t i) const {
    return std::span<const double>(coords).subspan(i * dim, dim);
  }
  std::span<double> atom(std::size_t i) { return std::span<double>(coords).subspan(i * dim, dim); }
  double mass() const;

  /// Throws ValidationError on empty clouds, non-finite atoms, or bad weights.
  void validate() const;

  /// Uniform weights 1/n over atoms given as consecutive blocks of `dim`.
  static PointCloud uniform(std::size_t dim, std::vector<double> coords);
  /// One atom per sample of `samples`, weights 1/N.
  static PointCloud from_samples(const RealTensor& samples);
};

enum class EpsilonMode { kFixed, kAdaptive };

struct SinkhornParams {
  /// Marker for the balanced (hard-marginal) problem.
  static constexpr double kBalanced = std::numeric_limits<double>::infinity();

  double epsilon = 0.1;
  double tau = 10.0;
  int max_iter = 500;
  double tol = 1e-6;
  EpsilonMode epsilon_mode = EpsilonMode::kAdaptive;

  bool balanced() const { return tau == kBalanced; }
  void validate() const;
};

inline constexpr double kEpsilonFloor = 1e-4;
inline constexpr double kEpsilonFallback = 1e-2;

/// Squared Frobenius distance between two equally shaped trajectories.
double ground_cost(std::span<const double> x, std::span<const double> z);

/// 0.05 * median of the nonzero pairwise squared distances (over pairs
/// i < j), floored at kEpsilonFloor. Returns kEpsilonFallback when all atoms
/// coincide or the cloud has a single atom.
double adaptive_epsilon(const PointCloud& cloud);

struct DualPotentials {
  std::vector<double> f, g;
  bool converged = false;
  int iterations = 0;
};

struct TransportPlan {
  std::size_t rows = 0, cols = 0;
  std::vector<double> pi;  // rows * cols, row-major
  std::vector<double> row_marginal, col_marginal;

  double operator()(std::size_t i, std::size_t j) const { return pi[i * cols + j]; }
};

struct TransportResult {
  double value = 0.0;
  DualPotentials potentials;
  TransportPlan plan;
};

/// Entropic (un)balanced transport between mu and nu,
///
///   min_{pi >= 0} <C, pi> + eps KL(pi | mu x nu) + tau (KL(pi_1 | mu) + KL(pi_2 | nu))
///
/// with generalized KL(a|b) = sum a log(a/b) - a + b and C the squared
/// Euclidean ground cost. Balanced mode replaces the marginal penalties by
/// pi_1 = mu, pi_2 = nu. Solved by log-domain Sinkhorn iterations damped by
/// tau / (tau + eps); the value is the dual objective at the final potentials.
TransportResult solve_transport(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p);

/// W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2.
double sinkhorn_divergence(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p);

enum class CloudSide { kFirst, kSecond };

struct DivergenceWithGrad {
  double value = 0.0;
  std::vector<double> grad;  // gradient w.r.t. the chosen cloud's coords
  bool converged = true;
};

/// Divergence plus the exact gradient with respect to the atom positions of
/// one cloud, debiasing self-term included. Uses the envelope identity
/// dW/dx_i = sum_j pi_ij * 2 (x_i - y_j) at the optimal plan.
DivergenceWithGrad sinkhorn_divergence_grad(const PointCloud& mu, const PointCloud& nu,
                                            const SinkhornParams& p, CloudSide side);

/// Gradient only; same computation as sinkhorn_divergence_grad.
std::vector<double> grad_positions(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p,
                                   CloudSide side);

/// Divergence against a cloud whose self-transport value is known and held
/// fixed (e.g. the detached imputation during adversarial ascent). The
/// gradient is with respect to `moving`, which plays the first argument.
class FixedTargetDivergence {
 public:
  FixedTargetDivergence(PointCloud target, SinkhornParams params);

  DivergenceWithGrad evaluate(const PointCloud& moving, bool with_grad) const;
  const PointCloud& target() const { return target_; }
  double target_self_value() const { return target_self_; }

 private:
  PointCloud target_;
  SinkhornParams params_;
  double target_self_ = 0.0;
};

/// Direct minimization of the same primal over the plan matrix, used as an
/// independent oracle for solve_transport on tiny instances (n * m <= 9).
/// Damped Newton steps on the plan with a positivity-preserving line
/// search; balanced mode works in the null space of the marginal
/// constraints. Several feasible starting plans, best value returned.
double brute_force_primal(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p);

/// Primal objective of a given plan (helper for oracles and tests).
double transport_primal_objective(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p,
                                  std::span<const double> plan);

}  // namespace drio
