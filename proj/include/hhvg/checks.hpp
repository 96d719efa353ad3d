#pragma once

// Randomized invariant checks shared by the selftest command and the
// acceptance suite. Each check is deterministic for a given seed.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hhvg/mathcore.hpp"

namespace hhvg {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

using KlFn = std::function<double(const Gaussian4& p, const Gaussian4& q)>;

/// Closed-form KL with the log-determinant ratio negated; a mutation fixture.
double kl_with_logdet_sign_error(const Gaussian4& p, const Gaussian4& q);

/// E_p[log p(x) - log q(x)] over `samples` draws.
double monte_carlo_kl(const Gaussian4& p, const Gaussian4& q, int samples, std::uint64_t seed);

/// Non-negativity on 1000 random pairs and Monte-Carlo agreement within 1%
/// on `cases` pairs.
CheckResult check_kl_properties(const KlFn& kl, int cases = 20, int samples = 1'000'000,
                                std::uint64_t seed = 1);

/// max |H H^T - I| <= 1e-10 and the covariance eigenvalues equal d.
CheckResult check_householder_orthogonality(int cases = 1000, std::uint64_t seed = 2);

/// lhs = mutual information + marginal divergence within 1e-9.
CheckResult check_hetero_identity(int cases = 1000, std::uint64_t seed = 3);

/// Finite differences for the forward, meta, value and policy losses,
/// relative error <= 1e-4 on `instances` random instances each.
CheckResult check_loss_gradients(int instances = 20, std::uint64_t seed = 4);

/// One psi step at rate 1e-3 per batch: mean progress >= -1e-6 everywhere
/// and strictly positive in at least 95% of batches.
CheckResult check_devaluation_descent(int batches = 100, std::uint64_t seed = 5);

/// Exact p against brute-force enumeration (1e-12) for sizes up to 8, and
/// the normal approximation against exact at n = 8 (0.01).
CheckResult check_rank_sum(std::uint64_t seed = 6);

struct SelftestOptions {
  /// Swaps gaussian_kl for the sign-error fixture.
  bool mutate_kl_sign = false;
};

std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

}  // namespace hhvg
