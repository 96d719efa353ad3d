#pragma once

// Gaussian algebra, Householder covariances and discrete information
// diagnostics. Everything here is a pure function of its arguments.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hhvg/errors.hpp"

namespace hhvg {

/// Ridge added to every covariance before inversion or log-determinant.
inline constexpr double kCovRidge = 1e-8;
/// Shortest Householder direction for which the reflection is defined.
inline constexpr double kMinReflectorNorm = 1e-8;

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
template <int N>
using Mat = Eigen::Matrix<double, N, N>;

template <int N>
struct BasicGaussian {
  Vec<N> mean;
  Mat<N> cov;

  Eigen::Index dim() const { return mean.size(); }
};

using Gaussian = BasicGaussian<Eigen::Dynamic>;
using Gaussian4 = BasicGaussian<4>;

template <int N>
struct BasicHouseholderCovParams {
  Vec<N> d;  // eigenvalue scales, all > 0
  Vec<N> v;  // reflection direction
};

using HouseholderCovParams = BasicHouseholderCovParams<Eigen::Dynamic>;
using HouseholderCovParams4 = BasicHouseholderCovParams<4>;

/// Partial derivatives of D_KL[p || q] with respect to both arguments.
template <int N>
struct KlGradient {
  Vec<N> mean_p;
  Mat<N> cov_p;
  Vec<N> mean_q;
  Mat<N> cov_q;
};

template <int N>
struct HouseholderGradient {
  Vec<N> d;
  Vec<N> v;
};

namespace detail {

template <int N>
Mat<N> ridged(const Mat<N>& cov) {
  Mat<N> out = cov;
  out.diagonal().array() += kCovRidge;
  return out;
}

template <int N>
Eigen::LLT<Mat<N>> checked_cholesky(const Mat<N>& cov, const char* name) {
  Eigen::LLT<Mat<N>> llt(cov);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    auto diag = llt.matrixLLT().diagonal();
    ok = diag.allFinite() && (diag.array() > 0.0).all();
  }
  if (!ok) {
    throw NumericalDomainError(std::string("covariance '") + name +
                               "' is not positive definite after ridge regularization");
  }
  return llt;
}

template <int N>
double log_det(const Eigen::LLT<Mat<N>>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Second argument of a KL divergence, factorized once so that many first
/// arguments can be scored against it.
template <int N>
class KlReference {
 public:
  explicit KlReference(const BasicGaussian<N>& q)
      : mean_(q.mean), llt_(detail::checked_cholesky<N>(detail::ridged<N>(q.cov), "q")) {
    const auto n = q.mean.size();
    inverse_ = llt_.solve(Mat<N>::Identity(n, n));
    log_det_ = detail::log_det<N>(llt_);
  }

  const Vec<N>& mean() const { return mean_; }
  const Mat<N>& inverse() const { return inverse_; }
  double log_det() const { return log_det_; }

  double divergence_from(const BasicGaussian<N>& p, KlGradient<N>* grad = nullptr) const {
    require(p.mean.size() == mean_.size() && p.cov.rows() == mean_.size() &&
                p.cov.cols() == mean_.size(),
            "gaussian_kl: dimension mismatch between p and q");
    const auto n = mean_.size();
    const Mat<N> cov_p = detail::ridged<N>(p.cov);
    const auto llt_p = detail::checked_cholesky<N>(cov_p, "p");
    const Vec<N> delta = mean_ - p.mean;
    const Vec<N> scaled = inverse_ * delta;
    const double trace = (inverse_.cwiseProduct(cov_p)).sum();
    const double kl = 0.5 * (trace + delta.dot(scaled) - static_cast<double>(n) + log_det_ -
                             detail::log_det<N>(llt_p));
    if (grad != nullptr) {
      grad->mean_p = -scaled;
      grad->mean_q = scaled;
      grad->cov_p = 0.5 * (inverse_ - llt_p.solve(Mat<N>::Identity(n, n)));
      const Mat<N> outer = cov_p + delta * delta.transpose();
      grad->cov_q = 0.5 * (inverse_ - inverse_ * outer * inverse_);
    }
    return kl;
  }

 private:
  Vec<N> mean_;
  Eigen::LLT<Mat<N>> llt_;
  Mat<N> inverse_;
  double log_det_ = 0.0;
};

/// Closed-form D_KL[p || q] for multivariate normals, natural log.
template <int N>
double gaussian_kl(const BasicGaussian<N>& p, const BasicGaussian<N>& q,
                   KlGradient<N>* grad = nullptr) {
  require(p.mean.size() == q.mean.size() && q.cov.rows() == q.mean.size() &&
              q.cov.cols() == q.mean.size(),
          "gaussian_kl: dimension mismatch between p and q");
  return KlReference<N>(q).divergence_from(p, grad);
}

/// Differential entropy 0.5 * log((2 pi e)^n det cov).
template <int N>
double gaussian_entropy(const BasicGaussian<N>& p) {
  require(p.cov.rows() == p.mean.size() && p.cov.cols() == p.mean.size(),
          "gaussian_entropy: mean and covariance dimensions disagree");
  const auto llt = detail::checked_cholesky<N>(detail::ridged<N>(p.cov), "p");
  const double n = static_cast<double>(p.mean.size());
  return 0.5 * (n * std::log(2.0 * std::numbers::pi * std::numbers::e) + detail::log_det<N>(llt));
}

template <int N>
double gaussian_log_density(const BasicGaussian<N>& p, const Vec<N>& x) {
  require(x.size() == p.mean.size(), "gaussian_log_density: dimension mismatch");
  const auto llt = detail::checked_cholesky<N>(detail::ridged<N>(p.cov), "p");
  const Vec<N> delta = x - p.mean;
  const double n = static_cast<double>(p.mean.size());
  return -0.5 * (delta.dot(llt.solve(delta)) + detail::log_det<N>(llt) +
                 n * std::log(2.0 * std::numbers::pi));
}

/// H = I - 2 v v^T / |v|^2.
template <int N>
Mat<N> householder_reflector(const Vec<N>& v) {
  const double norm2 = v.squaredNorm();
  if (!(std::sqrt(norm2) >= kMinReflectorNorm)) {
    throw DegenerateDirectionError("householder_cov: reflection direction norm below 1e-8");
  }
  const auto n = v.size();
  return Mat<N>::Identity(n, n) - (2.0 / norm2) * v * v.transpose();
}

template <int N>
void validate(const BasicHouseholderCovParams<N>& params) {
  require(params.d.size() == params.v.size(), "householder_cov: d and v lengths differ");
  require(params.d.size() > 0, "householder_cov: empty parameters");
  if (!(params.d.array() > 0.0).all()) {
    throw ContractViolation("householder_cov: every entry of d must be positive");
  }
}

/// Sigma' = H diag(d) H^T.
template <int N>
Mat<N> householder_cov(const BasicHouseholderCovParams<N>& params) {
  validate(params);
  const Mat<N> h = householder_reflector<N>(params.v);
  return h * params.d.asDiagonal() * h.transpose();
}

/// Pulls dL/dSigma' back onto (d, v). `cov_grad` need not be symmetric.
template <int N>
HouseholderGradient<N> householder_cov_backward(const BasicHouseholderCovParams<N>& params,
                                                const Mat<N>& cov_grad) {
  validate(params);
  const auto& v = params.v;
  const double norm2 = v.squaredNorm();
  const Mat<N> h = householder_reflector<N>(v);
  const Mat<N> sym = cov_grad + cov_grad.transpose();

  HouseholderGradient<N> out;
  out.d = (h.transpose() * cov_grad * h).diagonal();
  // dL/dH for Sigma = H D H^T
  const Mat<N> grad_h = sym * h * params.d.asDiagonal();
  out.v = (-2.0 / norm2) * (grad_h + grad_h.transpose()) * v +
          (4.0 * v.dot(grad_h * v) / (norm2 * norm2)) * v;
  return out;
}

// ---------------------------------------------------------------------------
// Discrete diagnostics

/// Tabulated joint over (state, action, next state) for exhaustive checks.
/// Tables are flattened row-major: transition[(s * A + a) * S' + s'],
/// policy[s * A + a], reference[s * S' + s'].
struct DiscreteJoint {
  int states = 0;
  int actions = 0;
  int next_states = 0;
  std::vector<double> transition;
  std::vector<double> policy;
  std::vector<double> reference;

  double p(int s, int a, int sn) const {
    return transition[(static_cast<std::size_t>(s) * actions + a) * next_states + sn];
  }
  double pi(int s, int a) const { return policy[static_cast<std::size_t>(s) * actions + a]; }
  double q(int s, int sn) const { return reference[static_cast<std::size_t>(s) * next_states + sn]; }

  /// Throws ContractViolation unless every table is a distribution (1e-12).
  void validate() const;
};

struct HeteroDecomposition {
  double lhs = 0.0;      // I(S':A|s) measured against the reference table
  double mi_term = 0.0;  // I(S':A|s) against the true marginal
  double kl_term = 0.0;  // D_KL[P(s'|s) || Q(s'|s)]
  bool infinite = false;
};

/// Splits the reference-relative information for state `s` into mutual
/// information plus the divergence of the true marginal from the reference.
/// A zero reference entry under positive marginal mass yields infinite
/// lhs/kl_term with `infinite` set.
HeteroDecomposition discrete_hetero_decomposition(const DiscreteJoint& joint, int s);

/// Same decomposition for every state of the table.
std::vector<HeteroDecomposition> discrete_hetero_decomposition(const DiscreteJoint& joint);

}  // namespace hhvg
