#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/factor.hpp"
#include "spi/network.hpp"

namespace spi {

// Reference implementations used by tests: straight chain-rule enumeration,
// independent of the factor product path and the query engine.

// Largest joint the enumeration will materialize.
inline constexpr std::size_t kMaxJointCells = std::size_t{1} << 22;

// Closed-form noisy-or table: P(child = active | parent assignment) is
// 1 - (1 - leak) * prod over active parents of (1 - c_p). Scope is the
// parents in order, then the child, child varying fastest.
Factor expand_noisy_or_to_cpt(const Variable& child, const std::vector<Variable>& parents,
                              const std::vector<double>& params, std::optional<double> leak);

// Full joint over all network variables by multiplying per-assignment
// chain-rule terms. Noisy-or nodes are expanded through the closed form;
// other expression models are rejected.
Factor brute_force_joint(const BeliefNetwork& net);

// Restricts the joint to evidence-consistent assignments, sums out
// non-targets, and normalizes when evidence is present.
Factor brute_force_marginal(const BeliefNetwork& net, const std::set<std::string>& targets,
                            const std::map<std::string, std::string>& evidence);

}  // namespace spi
