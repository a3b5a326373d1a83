#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "drio/error.hpp"
#include "drio/ot.hpp"

namespace drio {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPlanFloor = 1e-300;

// Generalized KL term a log(a / b) - a + b for one entry.
double kl_term(double a, double b) {
  if (a == 0.0) return b;
  if (b == 0.0) return kInf;
  return a * std::log(a / b) - a + b;
}

// The problem restricted to atoms of positive weight.
struct Instance {
  std::size_t n = 0, m = 0;
  Eigen::VectorXd mu, nu;
  Eigen::MatrixXd cost;
  double eps = 0.0, tau = 0.0;
  bool balanced = false;

  double objective(const Eigen::VectorXd& x) const {
    double f = 0.0;
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd cols = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double pij = x(static_cast<Eigen::Index>(i * m + j));
        if (pij < 0.0) return kInf;
        f += cost(i, j) * pij + eps * kl_term(pij, mu(i) * nu(j));
        rows(i) += pij;
        cols(j) += pij;
      }
    }
    if (!balanced) {
      for (std::size_t i = 0; i < n; ++i) f += tau * kl_term(rows(i), mu(i));
      for (std::size_t j = 0; j < m; ++j) f += tau * kl_term(cols(j), nu(j));
    }
    return f;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd cols = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        rows(i) += x(static_cast<Eigen::Index>(i * m + j));
        cols(j) += x(static_cast<Eigen::Index>(i * m + j));
      }
    }
    Eigen::VectorXd g(static_cast<Eigen::Index>(n * m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const auto k = static_cast<Eigen::Index>(i * m + j);
        double v = cost(i, j) + eps * std::log(x(k) / (mu(i) * nu(j)));
        if (!balanced) v += tau * (std::log(rows(i) / mu(i)) + std::log(cols(j) / nu(j)));
        g(k) = v;
      }
    }
    return g;
  }

  // Hessian scaled as S H S with S = diag(sqrt(x)).
  Eigen::MatrixXd scaled_hessian(const Eigen::VectorXd& x) const {
    const auto nm = static_cast<Eigen::Index>(n * m);
    Eigen::MatrixXd h = eps * Eigen::MatrixXd::Identity(nm, nm);
    if (balanced) return h;
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd cols = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        rows(i) += x(static_cast<Eigen::Index>(i * m + j));
        cols(j) += x(static_cast<Eigen::Index>(i * m + j));
      }
    }
    const Eigen::VectorXd s = x.cwiseSqrt();
    for (Eigen::Index a = 0; a < nm; ++a) {
      const std::size_t ia = static_cast<std::size_t>(a) / m, ja = static_cast<std::size_t>(a) % m;
      for (Eigen::Index b = 0; b < nm; ++b) {
        const std::size_t ib = static_cast<std::size_t>(b) / m, jb = static_cast<std::size_t>(b) % m;
        double v = 0.0;
        if (ia == ib) v += tau / rows(ia);
        if (ja == jb) v += tau / cols(ja);
        h(a, b) += s(a) * v * s(b);
      }
    }
    return h;
  }

  // Marginal-constraint matrix A with A x = [rows; cols].
  Eigen::MatrixXd constraints() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + m), static_cast<Eigen::Index>(n * m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i * m + j)) = 1.0;
        a(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(i * m + j)) = 1.0;
      }
    }
    return a;
  }
};

double newton_minimize(const Instance& inst, Eigen::VectorXd x) {
  const Eigen::MatrixXd a = inst.balanced ? inst.constraints() : Eigen::MatrixXd();
  double fx = inst.objective(x);
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd s = x.cwiseSqrt();
    const Eigen::VectorXd gs = s.cwiseProduct(inst.gradient(x));
    Eigen::VectorXd y;
    if (inst.balanced) {
      // Minimize eps/2 |y|^2 + gs.y subject to (A S) y = 0.
      const Eigen::MatrixXd bt = (a * s.asDiagonal()).transpose();
      const Eigen::VectorXd lambda = bt.completeOrthogonalDecomposition().solve(gs);
      y = -(gs - bt * lambda) / inst.eps;
    } else {
      y = inst.scaled_hessian(x).ldlt().solve(-gs);
    }
    const Eigen::VectorXd step = s.cwiseProduct(y);
    const double decrement = -gs.dot(y);
    if (!(decrement > 1e-18 * (1.0 + std::abs(fx)))) break;

    double t = 1.0;
    for (Eigen::Index k = 0; k < step.size(); ++k) {
      if (step(k) < 0.0) t = std::min(t, -0.99 * x(k) / step(k));
    }
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls) {
      Eigen::VectorXd trial = (x + t * step).cwiseMax(kPlanFloor);
      const double ft = inst.objective(trial);
      if (ft <= fx - 1e-4 * t * decrement) {
        x = std::move(trial);
        fx = ft;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  return fx;
}

// North-west corner vertex of the transport polytope for equal masses.
Eigen::VectorXd north_west_corner(const Instance& inst, bool reverse_columns) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(inst.n * inst.m));
  Eigen::VectorXd supply = inst.mu, demand = inst.nu;
  std::size_t i = 0, jj = 0;
  while (i < inst.n && jj < inst.m) {
    const std::size_t j = reverse_columns ? inst.m - 1 - jj : jj;
    const double q = std::min(supply(i), demand(j));
    x(static_cast<Eigen::Index>(i * inst.m + j)) += q;
    supply(i) -= q;
    demand(j) -= q;
    if (supply(i) <= demand(j)) {
      ++i;
    } else {
      ++jj;
    }
  }
  return x;
}

}  // namespace

double transport_primal_objective(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p,
                                  std::span<const double> plan) {
  if (plan.size() != mu.size() * nu.size()) throw ValidationError("primal objective: plan size mismatch");
  Instance inst;
  inst.n = mu.size();
  inst.m = nu.size();
  inst.mu = Eigen::Map<const Eigen::VectorXd>(mu.weights.data(), static_cast<Eigen::Index>(inst.n));
  inst.nu = Eigen::Map<const Eigen::VectorXd>(nu.weights.data(), static_cast<Eigen::Index>(inst.m));
  inst.cost.resize(static_cast<Eigen::Index>(inst.n), static_cast<Eigen::Index>(inst.m));
  for (std::size_t i = 0; i < inst.n; ++i) {
    for (std::size_t j = 0; j < inst.m; ++j) inst.cost(i, j) = ground_cost(mu.atom(i), nu.atom(j));
  }
  inst.eps = p.epsilon;
  inst.tau = p.tau;
  inst.balanced = p.balanced();
  return inst.objective(Eigen::Map<const Eigen::VectorXd>(plan.data(), static_cast<Eigen::Index>(plan.size())));
}

double brute_force_primal(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  mu.validate();
  nu.validate();
  p.validate();
  if (mu.dim != nu.dim) throw ValidationError("brute_force_primal: atom dimension mismatch");
  if (mu.size() * nu.size() > 9) throw ValidationError("brute_force_primal: size limit n * m <= 9 exceeded");

  Instance inst;
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu.weights[i] > 0.0) rows.push_back(i);
  }
  for (std::size_t j = 0; j < nu.size(); ++j) {
    if (nu.weights[j] > 0.0) cols.push_back(j);
  }
  inst.n = rows.size();
  inst.m = cols.size();
  inst.mu.resize(static_cast<Eigen::Index>(inst.n));
  inst.nu.resize(static_cast<Eigen::Index>(inst.m));
  inst.cost.resize(static_cast<Eigen::Index>(inst.n), static_cast<Eigen::Index>(inst.m));
  for (std::size_t a = 0; a < inst.n; ++a) inst.mu(a) = mu.weights[rows[a]];
  for (std::size_t b = 0; b < inst.m; ++b) inst.nu(b) = nu.weights[cols[b]];
  for (std::size_t a = 0; a < inst.n; ++a) {
    for (std::size_t b = 0; b < inst.m; ++b) inst.cost(a, b) = ground_cost(mu.atom(rows[a]), nu.atom(cols[b]));
  }
  inst.eps = p.epsilon;
  inst.tau = p.tau;
  inst.balanced = p.balanced();

  const double mass_mu = inst.mu.sum(), mass_nu = inst.nu.sum();
  const Eigen::VectorXd outer = [&] {
    Eigen::MatrixXd o = inst.mu * inst.nu.transpose();
    o.transposeInPlace();  // column-major storage -> row-major flattening
    return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(o.data(), o.size()));
  }();

  std::vector<Eigen::VectorXd> starts;
  if (inst.balanced) {
    if (std::abs(mass_mu - mass_nu) > 1e-12 * std::max(mass_mu, mass_nu)) {
      throw ValidationError("brute_force_primal: balanced transport needs equal masses");
    }
    const Eigen::VectorXd product = outer / mass_mu;
    for (bool reverse : {false, true}) {
      const Eigen::VectorXd vertex = north_west_corner(inst, reverse);
      for (double lam : {0.0, 0.5, 0.9}) starts.push_back(lam * vertex + (1.0 - lam) * product);
    }
  } else {
    for (double scale : {1.0, 0.3, 3.0}) starts.push_back(scale * outer);
    std::mt19937_64 rng(0xB007ULL);
    std::uniform_real_distribution<double> unit(0.05, 1.0);
    for (int r = 0; r < 2; ++r) {
      Eigen::VectorXd x(outer.size());
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = unit(rng) * std::max(mass_mu, mass_nu);
      starts.push_back(x);
    }
  }

  double best = kInf;
  for (auto& x0 : starts) best = std::min(best, newton_minimize(inst, x0.cwiseMax(kPlanFloor)));
  return best;
}

}  // namespace drio
