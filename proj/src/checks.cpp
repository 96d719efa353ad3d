#include "hhvg/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "hhvg/diffnet.hpp"
#include "hhvg/harness.hpp"
#include "hhvg/models.hpp"

namespace hhvg {

namespace {

template <typename F>
CheckResult timed(const char* name, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r{name, false, "", 0.0};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

Gaussian4 random_gaussian(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> scale(0.3, 2.0);
  HouseholderCovParams4 params;
  for (int i = 0; i < 4; ++i) {
    params.d[i] = scale(rng);
    params.v[i] = n01(rng);
  }
  Gaussian4 g;
  for (int i = 0; i < 4; ++i) g.mean[i] = n01(rng);
  g.cov = householder_cov(params);
  return g;
}

std::vector<double> random_rows(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    double total = 0.0;
    for (int c = 0; c < cols; ++c) total += out[r * cols + c] = u(rng);
    for (int c = 0; c < cols; ++c) out[r * cols + c] /= total;
    double head = 0.0;
    for (int c = 0; c + 1 < cols; ++c) head += out[r * cols + c];
    out[r * cols + cols - 1] = 1.0 - head;
  }
  return out;
}

TransitionBatch random_batch(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(0.0, 1.0), vel(-0.5, 0.5), act(-2.0, 2.0);
  TransitionBatch b{Eigen::MatrixXd(4, n), Eigen::MatrixXd(2, n), Eigen::MatrixXd(4, n)};
  for (int i = 0; i < n; ++i) {
    b.states.col(i) << pos(rng), pos(rng), vel(rng), vel(rng);
    b.actions.col(i) << act(rng), act(rng);
    b.next.col(i) = b.states.col(i) + 0.05 * Eigen::Vector4d(vel(rng), vel(rng), vel(rng), vel(rng));
  }
  return b;
}

// Brute-force P(R_x <= observed) over all label assignments.
double enumerate_rank_sum(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::size_t n = pooled.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (double w : pooled) {
      below += w < pooled[i];
      equal += w == pooled[i];
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) observed += rank[i];
  std::uint64_t le = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != x.size()) continue;
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) r += rank[i];
    }
    ++total;
    le += r <= observed + 1e-9;
  }
  return static_cast<double>(le) / static_cast<double>(total);
}

}  // namespace

double kl_with_logdet_sign_error(const Gaussian4& p, const Gaussian4& q) {
  const Eigen::LLT<Eigen::Matrix4d> lp(p.cov), lq(q.cov);
  const Eigen::Matrix4d q_inv = lq.solve(Eigen::Matrix4d::Identity());
  const Eigen::Vector4d delta = q.mean - p.mean;
  const double log_det_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double log_det_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  return 0.5 * ((q_inv.cwiseProduct(p.cov)).sum() + delta.dot(q_inv * delta) - 4.0 - log_det_q +
                log_det_p);
}

double monte_carlo_kl(const Gaussian4& p, const Gaussian4& q, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const Eigen::LLT<Eigen::Matrix4d> lp(p.cov), lq(q.cov);
  const Eigen::Matrix4d chol_p = lp.matrixL();
  const double log_det_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double log_det_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  constexpr int kChunk = 65536;
  Eigen::Matrix<double, 4, Eigen::Dynamic> z(4, kChunk);
  double sum = 0.0;
  for (int done = 0; done < samples; done += kChunk) {
    const int n = std::min(kChunk, samples - done);
    for (int i = 0; i < 4 * n; ++i) z.data()[i] = n01(rng);
    const auto zc = z.leftCols(n);
    // log p(x) - log q(x) with x = mu_p + L_p z
    Eigen::Matrix<double, 4, Eigen::Dynamic> xq = (chol_p * zc).colwise() + (p.mean - q.mean);
    lq.matrixL().solveInPlace(xq);
    sum += 0.5 * (xq.colwise().squaredNorm().sum() - zc.colwise().squaredNorm().sum()) +
           0.5 * n * (log_det_q - log_det_p);
  }
  return sum / samples;
}

CheckResult check_kl_properties(const KlFn& kl, int cases, int samples, std::uint64_t seed) {
  return timed("gaussian_kl properties", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    int negative = 0;
    for (int i = 0; i < 1000; ++i) {
      const Gaussian4 p = random_gaussian(rng), q = random_gaussian(rng);
      if (kl(p, q) < 0.0) ++negative;
    }
    double worst = 0.0;
    for (int i = 0; i < cases; ++i) {
      const Gaussian4 p = random_gaussian(rng), q = random_gaussian(rng);
      const double mc = monte_carlo_kl(p, q, samples, seed * 1000 + static_cast<std::uint64_t>(i));
      worst = std::max(worst, std::abs(kl(p, q) - mc) / std::abs(mc));
    }
    r.passed = negative == 0 && worst <= 0.01;
    r.detail = std::to_string(negative) + "/1000 negative, worst Monte-Carlo relative gap " + fmt(worst) +
               " over " + std::to_string(cases) + " cases";
  });
}

CheckResult check_householder_orthogonality(int cases, std::uint64_t seed) {
  return timed("householder orthogonality", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> scale(0.01, 10.0);
    std::uniform_int_distribution<int> dim(1, 8);
    double worst_orth = 0.0, worst_eig = 0.0;
    for (int i = 0; i < cases; ++i) {
      const int n = dim(rng);
      HouseholderCovParams params{Eigen::VectorXd(n), Eigen::VectorXd(n)};
      for (int k = 0; k < n; ++k) {
        params.d[k] = scale(rng);
        params.v[k] = n01(rng);
      }
      const Eigen::MatrixXd h = householder_reflector<Eigen::Dynamic>(params.v);
      worst_orth = std::max(worst_orth,
                            (h * h.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff());
      const Eigen::MatrixXd cov = householder_cov(params);
      Eigen::VectorXd eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues();
      Eigen::VectorXd d = params.d;
      std::sort(d.data(), d.data() + n);
      worst_eig = std::max(worst_eig, ((eig - d).array().abs() / d.array()).maxCoeff());
    }
    r.passed = worst_orth <= 1e-10 && worst_eig <= 1e-10;
    r.detail = "max |HH^T - I| " + fmt(worst_orth) + ", max relative eigenvalue error " + fmt(worst_eig) +
               " over " + std::to_string(cases) + " cases";
  });
}

CheckResult check_hetero_identity(int cases, std::uint64_t seed) {
  return timed("heterostatic decomposition identity", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(1, 6);
    double worst = 0.0;
    for (int i = 0; i < cases; ++i) {
      DiscreteJoint j;
      j.states = size(rng);
      j.actions = size(rng);
      j.next_states = size(rng) + 1;
      j.transition = random_rows(rng, j.states * j.actions, j.next_states);
      j.policy = random_rows(rng, j.states, j.actions);
      j.reference = random_rows(rng, j.states, j.next_states);
      for (const auto& d : discrete_hetero_decomposition(j)) {
        worst = std::max(worst, d.infinite ? INFINITY : std::abs(d.lhs - (d.mi_term + d.kl_term)));
      }
    }
    r.passed = worst <= 1e-9;
    r.detail = "max |lhs - (MI + KL)| " + fmt(worst) + " over " + std::to_string(cases) + " tables";
  });
}

CheckResult check_loss_gradients(int instances, std::uint64_t seed) {
  return timed("loss gradients", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> pos_weight(0.5, 2.0);
    ModelConfig mc;
    mc.hidden = {8, 8};
    double worst_fm = 0.0, worst_mm = 0.0, worst_vf = 0.0, worst_ap = 0.0;
    for (int i = 0; i < instances; ++i) {
      const std::uint64_t base = seed * 100000 + static_cast<std::uint64_t>(i) * 10;
      const TransitionBatch b = random_batch(rng, 6);
      Eigen::VectorXd w(6), targets(6);
      for (int k = 0; k < 6; ++k) {
        w[k] = pos_weight(rng);
        targets[k] = n01(rng);
      }

      ForwardModel fm(mc, base + 1);
      worst_fm = std::max(worst_fm, grad_check([&](ParamSet&, bool g) { return fm_loss(fm, b, g); },
                                               fm.params).max_rel_error);

      MetaModel mm(mc, base + 2);
      worst_mm = std::max(
          worst_mm,
          grad_check([&](ParamSet&, bool g) { return devaluation_loss(fm, mm, b, w, g); }, mm.params)
              .max_rel_error);

      ValueNet vn(mc, base + 3);
      worst_vf = std::max(
          worst_vf,
          grad_check([&](ParamSet&, bool g) { return value_loss(vn, b.states, targets, w, g); }, vn.params)
              .max_rel_error);

      PolicyNet ap(mc, base + 4);
      Eigen::MatrixXd q(kActionCount, 6);
      for (Eigen::Index k = 0; k < q.size(); ++k) q.data()[k] = n01(rng);
      worst_ap = std::max(
          worst_ap,
          grad_check([&](ParamSet&, bool g) { return policy_loss(ap, b.states, q, w, g); }, ap.params)
              .max_rel_error);
    }
    r.passed = std::max({worst_fm, worst_mm, worst_vf, worst_ap}) <= 1e-4;
    r.detail = "max relative error fm " + fmt(worst_fm) + ", mm " + fmt(worst_mm) + ", vf " +
               fmt(worst_vf) + ", ap " + fmt(worst_ap) + " over " + std::to_string(instances) +
               " instances each";
  });
}

CheckResult check_devaluation_descent(int batches, std::uint64_t seed) {
  return timed("devaluation descent", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    ModelConfig mc;
    mc.hidden = {16, 16};
    int positive = 0;
    double lowest = INFINITY;
    for (int i = 0; i < batches; ++i) {
      const std::uint64_t base = seed * 100000 + static_cast<std::uint64_t>(i) * 10;
      const ForwardModel fm(mc, base + 1);
      MetaModel mm(mc, base + 2);
      const TransitionBatch b = random_batch(rng, 32);
      const MetaModel before = mm;
      Optimizer opt;
      mm_update_weighted(mm, fm, fm, b, 1e-3, opt);
      const double mean = devaluation_progress(fm, before, mm, b.states, b.actions).mean();
      lowest = std::min(lowest, mean);
      if (mean > 0.0) ++positive;
    }
    r.passed = lowest >= -1e-6 && positive * 100 >= 95 * batches;
    r.detail = std::to_string(positive) + "/" + std::to_string(batches) +
               " batches strictly positive, lowest batch mean " + fmt(lowest);
  });
}

CheckResult check_rank_sum(std::uint64_t seed) {
  return timed("rank-sum test", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(1, 8), level(0, 6);
    std::normal_distribution<double> n01;
    double worst_exact = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> x(static_cast<std::size_t>(size(rng))), y(static_cast<std::size_t>(size(rng)));
      const bool ties = trial % 2 == 0;
      for (auto& v : x) v = ties ? level(rng) : n01(rng);
      for (auto& v : y) v = ties ? level(rng) : n01(rng) + 0.3;
      if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) &&
          std::all_of(y.begin(), y.end(), [&](double v) { return v == x[0]; })) {
        continue;
      }
      worst_exact = std::max(worst_exact,
                             std::abs(mann_whitney_u(x, y, UMethod::exact).p - enumerate_rank_sum(x, y)));
    }
    double worst_normal = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> x(8), y(8);
      for (auto& v : x) v = n01(rng);
      for (auto& v : y) v = n01(rng) + 0.5;
      worst_normal = std::max(worst_normal, std::abs(mann_whitney_u(x, y, UMethod::exact).p -
                                                     mann_whitney_u(x, y, UMethod::normal).p));
    }
    r.passed = worst_exact <= 1e-12 && worst_normal <= 0.01;
    r.detail = "exact vs enumeration " + fmt(worst_exact) + ", normal vs exact at n = 8 " + fmt(worst_normal);
  });
}

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  const KlFn kl = options.mutate_kl_sign
                      ? KlFn(kl_with_logdet_sign_error)
                      : KlFn([](const Gaussian4& p, const Gaussian4& q) { return gaussian_kl(p, q); });
  std::vector<CheckResult> out;
  out.push_back(check_kl_properties(kl));
  out.push_back(check_householder_orthogonality());
  out.push_back(check_hetero_identity());
  out.push_back(check_loss_gradients());
  out.push_back(check_devaluation_descent());
  out.push_back(check_rank_sum());
  return out;
}

}  // namespace hhvg
