#include "hhvg/mathcore.hpp"

#include <limits>

namespace hhvg {

namespace {

void check_distribution(const std::vector<double>& table, std::size_t rows, std::size_t cols,
                        const char* name) {
  require(table.size() == rows * cols, std::string("DiscreteJoint: ") + name + " has wrong size");
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double value = table[r * cols + c];
      require(value >= 0.0, std::string("DiscreteJoint: negative entry in ") + name);
      total += value;
    }
    require(std::abs(total - 1.0) <= 1e-12,
            std::string("DiscreteJoint: a row of ") + name + " does not sum to 1");
  }
}

}  // namespace

void DiscreteJoint::validate() const {
  require(states > 0 && actions > 0 && next_states > 0, "DiscreteJoint: empty dimension");
  const auto s = static_cast<std::size_t>(states);
  const auto a = static_cast<std::size_t>(actions);
  const auto sn = static_cast<std::size_t>(next_states);
  check_distribution(transition, s * a, sn, "transition");
  check_distribution(policy, s, a, "policy");
  check_distribution(reference, s, sn, "reference");
}

HeteroDecomposition discrete_hetero_decomposition(const DiscreteJoint& joint, int s) {
  joint.validate();
  require(s >= 0 && s < joint.states, "discrete_hetero_decomposition: state out of range");

  std::vector<double> marginal(static_cast<std::size_t>(joint.next_states), 0.0);
  for (int a = 0; a < joint.actions; ++a) {
    for (int sn = 0; sn < joint.next_states; ++sn) {
      marginal[sn] += joint.p(s, a, sn) * joint.pi(s, a);
    }
  }

  HeteroDecomposition out;
  for (int sn = 0; sn < joint.next_states; ++sn) {
    if (marginal[sn] > 0.0 && joint.q(s, sn) == 0.0) out.infinite = true;
  }

  for (int a = 0; a < joint.actions; ++a) {
    const double weight = joint.pi(s, a);
    if (weight == 0.0) continue;
    for (int sn = 0; sn < joint.next_states; ++sn) {
      const double p = joint.p(s, a, sn);
      if (p == 0.0) continue;
      out.mi_term += weight * p * std::log(p / marginal[sn]);
      if (!out.infinite) out.lhs += weight * p * std::log(p / joint.q(s, sn));
    }
  }

  if (out.infinite) {
    out.lhs = std::numeric_limits<double>::infinity();
    out.kl_term = std::numeric_limits<double>::infinity();
    return out;
  }
  for (int sn = 0; sn < joint.next_states; ++sn) {
    if (marginal[sn] > 0.0) out.kl_term += marginal[sn] * std::log(marginal[sn] / joint.q(s, sn));
  }
  return out;
}

std::vector<HeteroDecomposition> discrete_hetero_decomposition(const DiscreteJoint& joint) {
  std::vector<HeteroDecomposition> out;
  out.reserve(static_cast<std::size_t>(joint.states));
  for (int s = 0; s < joint.states; ++s) out.push_back(discrete_hetero_decomposition(joint, s));
  return out;
}

}  // namespace hhvg
