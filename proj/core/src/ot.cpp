#include "drio/ot.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "drio/error.hpp"

namespace drio {

double PointCloud::mass() const {
  double m = 0.0;
  for (double w : weights) m += w;
  return m;
}

void PointCloud::validate() const {
  if (weights.empty()) throw ValidationError("point cloud: no atoms");
  if (dim == 0) throw ValidationError("point cloud: zero-dimensional atoms");
  if (coords.size() != weights.size() * dim) throw ValidationError("point cloud: coords/weights size mismatch");
  bool any_positive = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("point cloud: weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ValidationError("point cloud: all weights are zero");
  for (double c : coords) {
    if (!std::isfinite(c)) throw ValidationError("point cloud: non-finite atom coordinate");
  }
}

PointCloud PointCloud::uniform(std::size_t dim, std::vector<double> coords) {
  if (dim == 0 || coords.size() % dim != 0) throw ValidationError("point cloud: coords not a multiple of dim");
  const std::size_t n = coords.size() / dim;
  return PointCloud{dim, std::move(coords), std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

PointCloud PointCloud::from_samples(const RealTensor& samples) {
  return uniform(samples.shape().sample_size(), samples.storage());
}

void SinkhornParams::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("sinkhorn: epsilon must be > 0");
  if (!(tau > 0.0)) throw ValidationError("sinkhorn: tau must be > 0 or balanced");
  if (max_iter < 1) throw ValidationError("sinkhorn: max_iter must be >= 1");
  if (!(tol > 0.0)) throw ValidationError("sinkhorn: tol must be > 0");
}

double ground_cost(std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size()) throw ValidationError("ground_cost: shape mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double diff = x[k] - z[k];
    s += diff * diff;
  }
  return s;
}

double adaptive_epsilon(const PointCloud& cloud) {
  std::vector<double> dists;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t j = i + 1; j < cloud.size(); ++j) {
      const double c = ground_cost(cloud.atom(i), cloud.atom(j));
      if (c > 0.0) dists.push_back(c);
    }
  }
  if (dists.empty()) return kEpsilonFallback;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return std::max(kEpsilonFloor, 0.05 * median);
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> cost_matrix(const PointCloud& mu, const PointCloud& nu) {
  std::vector<double> c(mu.size() * nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (std::size_t j = 0; j < nu.size(); ++j) {
      const double v = ground_cost(mu.atom(i), nu.atom(j));
      if (!std::isfinite(v)) throw Error("solve_transport: non-finite cost matrix entry");
      c[i * nu.size() + j] = v;
    }
  }
  return c;
}

std::vector<double> log_weights(const PointCloud& cloud) {
  std::vector<double> lw(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) lw[i] = cloud.weights[i] > 0.0 ? std::log(cloud.weights[i]) : kNegInf;
  return lw;
}

// log sum_k exp(terms[k]); terms has at least one finite entry.
double log_sum_exp(std::span<const double> terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (top == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : terms) s += std::exp(v - top);
  return top + std::log(s);
}

void check_pair(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  mu.validate();
  nu.validate();
  p.validate();
  if (mu.dim != nu.dim) throw ValidationError("solve_transport: atom dimension mismatch");
}


// Dual objective of the (un)balanced problem at potentials (f, g).
double dual_value(const std::vector<double>& f, const std::vector<double>& g, const std::vector<double>& scaled,
                  const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  const std::size_t n = f.size(), m = g.size();
  const double eps = p.epsilon;
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      value -= eps * mu.weights[i] * nu.weights[j] * std::expm1((f[i] + g[j]) / eps - scaled[i * m + j]);
    }
  }
  if (p.balanced()) {
    for (std::size_t i = 0; i < n; ++i) value += mu.weights[i] * f[i];
    for (std::size_t j = 0; j < m; ++j) value += nu.weights[j] * g[j];
  } else {
    for (std::size_t i = 0; i < n; ++i) value += -p.tau * mu.weights[i] * std::expm1(-f[i] / p.tau);
    for (std::size_t j = 0; j < m; ++j) value += -p.tau * nu.weights[j] * std::expm1(-g[j] / p.tau);
  }
  return value;
}

// Newton ascent on the concave dual, used when the fixed-point iteration
// stalls (small eps relative to the costs makes Sinkhorn contract slowly).
// In the balanced case the last g is pinned to remove the constant shift.
// Returns true once the dual gradient is below tol in every coordinate.
bool newton_polish(std::vector<double>& f, std::vector<double>& g, const std::vector<double>& scaled,
                   const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  const std::size_t n = f.size(), m = g.size();
  const double eps = p.epsilon;
  const bool balanced = p.balanced();
  const std::size_t vars = balanced ? n + m - 1 : n + m;
  double current = dual_value(f, g, scaled, mu, nu, p);
  for (int step = 0; step < 50; ++step) {
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + m), static_cast<Eigen::Index>(n + m));
    Eigen::VectorXd grad(static_cast<Eigen::Index>(n + m));
    for (std::size_t i = 0; i < n; ++i) grad(static_cast<Eigen::Index>(i)) = 0.0;
    for (std::size_t j = 0; j < m; ++j) grad(static_cast<Eigen::Index>(n + j)) = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double pij = mu.weights[i] * nu.weights[j] * std::exp((f[i] + g[j]) / eps - scaled[i * m + j]);
        const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(n + j);
        grad(a) -= pij;
        grad(b) -= pij;
        hess(a, a) += pij / eps;
        hess(b, b) += pij / eps;
        hess(a, b) += pij / eps;
        hess(b, a) += pij / eps;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<Eigen::Index>(i);
      if (balanced) {
        grad(a) += mu.weights[i];
      } else {
        const double e = mu.weights[i] * std::exp(-f[i] / p.tau);
        grad(a) += e;
        hess(a, a) += e / p.tau;
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      const auto b = static_cast<Eigen::Index>(n + j);
      if (balanced) {
        grad(b) += nu.weights[j];
      } else {
        const double e = nu.weights[j] * std::exp(-g[j] / p.tau);
        grad(b) += e;
        hess(b, b) += e / p.tau;
      }
    }
    const auto k = static_cast<Eigen::Index>(vars);
    const Eigen::VectorXd rhs = grad.head(k);
    if (rhs.lpNorm<Eigen::Infinity>() <= p.tol * std::max(1.0, mu.mass())) return true;
    const Eigen::VectorXd delta = hess.topLeftCorner(k, k).ldlt().solve(rhs);
    if (!delta.allFinite()) return false;
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      std::vector<double> f2 = f, g2 = g;
      for (std::size_t i = 0; i < n; ++i) f2[i] += t * delta(static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j < m && n + j < vars; ++j) g2[j] += t * delta(static_cast<Eigen::Index>(n + j));
      const double next = dual_value(f2, g2, scaled, mu, nu, p);
      if (std::isfinite(next) && next >= current) {
        f.swap(f2);
        g.swap(g2);
        current = next;
        moved = true;
        break;
      }
    }
    if (!moved) return false;
  }
  return false;
}

}  // namespace

TransportResult solve_transport(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  check_pair(mu, nu, p);
  const std::size_t n = mu.size(), m = nu.size();
  const double eps = p.epsilon;
  const bool balanced = p.balanced();
  const double damp = balanced ? 1.0 : p.tau / (p.tau + eps);

  std::vector<double> scaled = cost_matrix(mu, nu);  // C / eps
  for (double& c : scaled) c /= eps;
  const std::vector<double> la = log_weights(mu), lb = log_weights(nu);

  TransportResult res;
  auto& f = res.potentials.f;
  auto& g = res.potentials.g;
  f.assign(n, 0.0);
  g.assign(m, 0.0);
  std::vector<double> row(std::max(n, m));

  for (int it = 1; it <= p.max_iter; ++it) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) row[j] = lb[j] + g[j] / eps - scaled[i * m + j];
      const double fi = -damp * eps * log_sum_exp(std::span<const double>(row.data(), m));
      change = std::max(change, std::abs(fi - f[i]));
      f[i] = fi;
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) row[i] = la[i] + f[i] / eps - scaled[i * m + j];
      const double gj = -damp * eps * log_sum_exp(std::span<const double>(row.data(), n));
      change = std::max(change, std::abs(gj - g[j]));
      g[j] = gj;
    }
    res.potentials.iterations = it;
    if (!std::isfinite(change)) throw Error("solve_transport: potentials diverged");
    if (change < p.tol * eps) {
      res.potentials.converged = true;
      break;
    }
  }

  bool all_positive = true;
  for (double w : mu.weights) all_positive = all_positive && w > 0.0;
  for (double w : nu.weights) all_positive = all_positive && w > 0.0;
  if (!res.potentials.converged && all_positive) res.potentials.converged = newton_polish(f, g, scaled, mu, nu, p);

  // Plan and dual objective at the final potentials.
  auto& plan = res.plan;
  plan.rows = n;
  plan.cols = m;
  plan.pi.resize(n * m);
  plan.row_marginal.assign(n, 0.0);
  plan.col_marginal.assign(m, 0.0);
  double entropic = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double expo = (f[i] + g[j]) / eps - scaled[i * m + j];
      const double w = mu.weights[i] * nu.weights[j];
      const double pij = w > 0.0 ? std::exp(la[i] + lb[j] + expo) : 0.0;
      plan.pi[i * m + j] = pij;
      plan.row_marginal[i] += pij;
      plan.col_marginal[j] += pij;
      if (w > 0.0) entropic += w * std::expm1(expo);
    }
  }
  double value = -eps * entropic;
  if (balanced) {
    for (std::size_t i = 0; i < n; ++i) value += mu.weights[i] * f[i];
    for (std::size_t j = 0; j < m; ++j) value += nu.weights[j] * g[j];
  } else {
    for (std::size_t i = 0; i < n; ++i) value += -p.tau * mu.weights[i] * std::expm1(-f[i] / p.tau);
    for (std::size_t j = 0; j < m; ++j) value += -p.tau * nu.weights[j] * std::expm1(-g[j] / p.tau);
  }
  res.value = value;
  return res;
}

double sinkhorn_divergence(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p) {
  const double cross = solve_transport(mu, nu, p).value;
  const double self_mu = solve_transport(mu, mu, p).value;
  const double self_nu = solve_transport(nu, nu, p).value;
  return cross - 0.5 * (self_mu + self_nu);
}

namespace {

// Accumulates scale * sum_j pi_ij * 2 (x_i - y_j) into grad (rows of x).
void add_row_gradient(const TransportPlan& plan, const PointCloud& x, const PointCloud& y, double scale,
                      std::vector<double>& grad) {
  const std::size_t dim = x.dim;
  for (std::size_t i = 0; i < plan.rows; ++i) {
    auto xi = x.atom(i);
    double* gi = grad.data() + i * dim;
    for (std::size_t j = 0; j < plan.cols; ++j) {
      const double w = 2.0 * scale * plan(i, j);
      if (w == 0.0) continue;
      auto yj = y.atom(j);
      for (std::size_t k = 0; k < dim; ++k) gi[k] += w * (xi[k] - yj[k]);
    }
  }
}

// Same, for the column cloud: scale * sum_i pi_ij * 2 (y_j - x_i).
void add_col_gradient(const TransportPlan& plan, const PointCloud& x, const PointCloud& y, double scale,
                      std::vector<double>& grad) {
  const std::size_t dim = y.dim;
  for (std::size_t j = 0; j < plan.cols; ++j) {
    auto yj = y.atom(j);
    double* gj = grad.data() + j * dim;
    for (std::size_t i = 0; i < plan.rows; ++i) {
      const double w = 2.0 * scale * plan(i, j);
      if (w == 0.0) continue;
      auto xi = x.atom(i);
      for (std::size_t k = 0; k < dim; ++k) gj[k] += w * (yj[k] - xi[k]);
    }
  }
}

// Gradient of -W(x, x) / 2 with x on both sides.
void add_self_gradient(const TransportPlan& plan, const PointCloud& x, std::vector<double>& grad) {
  add_row_gradient(plan, x, x, -0.5, grad);
  add_col_gradient(plan, x, x, -0.5, grad);
}

}  // namespace

DivergenceWithGrad sinkhorn_divergence_grad(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p,
                                            CloudSide side) {
  const TransportResult cross = solve_transport(mu, nu, p);
  const TransportResult self_mu = solve_transport(mu, mu, p);
  const TransportResult self_nu = solve_transport(nu, nu, p);

  DivergenceWithGrad out;
  out.value = cross.value - 0.5 * (self_mu.value + self_nu.value);
  out.converged = cross.potentials.converged && self_mu.potentials.converged && self_nu.potentials.converged;
  if (side == CloudSide::kFirst) {
    out.grad.assign(mu.coords.size(), 0.0);
    add_row_gradient(cross.plan, mu, nu, 1.0, out.grad);
    add_self_gradient(self_mu.plan, mu, out.grad);
  } else {
    out.grad.assign(nu.coords.size(), 0.0);
    add_col_gradient(cross.plan, mu, nu, 1.0, out.grad);
    add_self_gradient(self_nu.plan, nu, out.grad);
  }
  return out;
}

std::vector<double> grad_positions(const PointCloud& mu, const PointCloud& nu, const SinkhornParams& p,
                                   CloudSide side) {
  return sinkhorn_divergence_grad(mu, nu, p, side).grad;
}

FixedTargetDivergence::FixedTargetDivergence(PointCloud target, SinkhornParams params)
    : target_(std::move(target)), params_(params) {
  target_self_ = solve_transport(target_, target_, params_).value;
}

DivergenceWithGrad FixedTargetDivergence::evaluate(const PointCloud& moving, bool with_grad) const {
  const TransportResult cross = solve_transport(moving, target_, params_);
  const TransportResult self = solve_transport(moving, moving, params_);
  DivergenceWithGrad out;
  out.value = cross.value - 0.5 * (self.value + target_self_);
  out.converged = cross.potentials.converged && self.potentials.converged;
  if (with_grad) {
    out.grad.assign(moving.coords.size(), 0.0);
    add_row_gradient(cross.plan, moving, target_, 1.0, out.grad);
    add_self_gradient(self.plan, moving, out.grad);
  }
  return out;
}

}  // namespace drio
