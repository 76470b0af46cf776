#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/expr.hpp"
#include "spi/network.hpp"
#include "spi/partition.hpp"

namespace spi {

// Where each variable referenced from a partition lives: inside the partition
// itself or in the subtree of one of its child slots.
struct PartitionScope {
  std::set<std::string> local_vars;
  std::map<std::string, int> var_to_child;

  // Child slots a subexpression needs information from ("required children").
  // Local variables do not contribute.
  std::set<int> requirements(const ExprPtr& e) const;
};

struct TermInfo {
  ExprPtr expr;
  std::set<int> required_children;
  std::set<std::string> local_vars;
};

TermInfo make_term_info(const ExprPtr& e, const PartitionScope& scope);

// Product of the local expressions of the target nodes plus any
// partition-local nodes they transitively condition on. CPT models appear as
// distribution leaves named p_<node>; expression models have their parameter
// leaves prefixed with "<node>." so bindings stay per node.
ExprPtr compose(const BeliefNetwork& net, const std::set<std::string>& partition_vars,
                const std::set<std::string>& targets);

// Local nodes whose expressions compose() would include.
std::set<std::string> compose_closure(const BeliefNetwork& net,
                                      const std::set<std::string>& partition_vars,
                                      const std::set<std::string>& targets);

// Rewrites an expression-model AST so its leaves are prefixed with the node
// name ("D.c_A"): keeps parameter names unique once several nodes compose.
ExprPtr prefix_leaves(const ExprPtr& e, const std::string& node);

// A node's local expression as compose() uses it: the prefixed expression for
// expression models, a p_<node> distribution leaf for CPT models.
ExprPtr local_expression(const BeliefNetwork& net, const std::string& node);

// Connected components of terms under "required-children sets intersect".
// Deterministic: components ordered by smallest member index, members in
// input order.
std::vector<std::vector<std::size_t>> group_terms(const std::vector<TermInfo>& terms);

// A term is separable within a group needing `group_children` iff it is
// compound and either (a) no single distribution inside it requires every
// child partition the whole term requires, or (b) the term requires a proper
// subset of the group's children.
bool separable(const TermInfo& term, const std::set<int>& group_children,
               const PartitionScope& scope);

// Drops additive components whose subspace cannot overlap the observed
// values. Returns nullopt when the whole expression is identically zero
// under the evidence. The first term of a difference is never dropped.
std::optional<ExprPtr> prune_for_evidence(const ExprPtr& e,
                                          const std::map<std::string, std::string>& evidence);

// Distributes conformal products over sums and differences, one level at a
// time: nested products are flattened, terms are grouped by overlapping
// child-partition requirements, and within each group the product is
// expanded across the additive terms for which clause (a) of the separable
// test holds. Terms that never group, and groups with nothing to expand,
// are left untouched. Throws EvalError when the rewritten tree would exceed
// `node_budget` nodes.
ExprPtr distribute(const ExprPtr& e, const PartitionScope& scope,
                   std::size_t node_budget = 1000000);

struct PlanStats {
  std::size_t ast_size = 0;
  std::size_t predicted_largest_scope = 0;
};

struct QueryPlan {
  ExprPtr rewritten;
  // One subquery per child bucket: (child slot, full-distribution variables).
  std::vector<std::pair<int, std::set<std::string>>> subqueries;
  // Variables in the order the evaluation sums them out.
  std::vector<std::string> elimination_order;
  PlanStats stats;
};

// What the product-ordering simulation needs to know about the evaluation
// context: which variables must survive, and which have marginals available
// for fold-before-sum.
struct PlanContext {
  std::set<std::string> needed;
  std::set<std::string> pool_vars;
};

// Greedily orders every n-ary product to minimize the variable count of each
// intermediate, marking variables for summing out at the earliest point after
// their last use. Fills in predicted stats and the elimination order.
QueryPlan order_products(const ExprPtr& e, const PlanContext& ctx);

// Indented text form of a plan: per-node required children and the scopes the
// simulation predicts.
std::string dump_plan(const QueryPlan& plan, const PartitionScope& scope, const PlanContext& ctx);

}  // namespace spi
