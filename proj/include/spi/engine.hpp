#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/factor.hpp"
#include "spi/network.hpp"
#include "spi/partition.hpp"
#include "spi/rewrite.hpp"

namespace spi {

struct Query {
  std::vector<std::string> targets;
  std::map<std::string, std::string> evidence;
};

struct EvalStats {
  std::size_t multiplications = 0;
  std::size_t additions = 0;
  std::size_t largest_intermediate_scope = 0;
  std::size_t peak_cells = 0;
  std::size_t subquery_count = 0;
  std::size_t ast_size = 0;
  std::size_t negative_clamps = 0;
};

struct EngineOptions {
  // Test hook: evidence indicators use this weight instead of 1.0. The
  // normalized posterior must not depend on it.
  double indicator_weight = 1.0;
  std::size_t rewrite_node_budget = 1000000;
};

// Query evaluation over a partition tree: per partition, compose the local
// expressions involved, rewrite them into an efficiently evaluable form,
// obtain child-partition joints through subqueries, and reduce numerically.
class Engine {
 public:
  Engine(const BeliefNetwork& net, const PartitionTree& tree, EngineOptions opts = {});

  // Marginal over the targets; the normalized posterior when evidence is
  // present. Throws EvalError on zero-mass evidence or invalid queries.
  Factor query_marginal(const Query& q);

  // Counters for the most recent query.
  const EvalStats& last_stats() const { return stats_; }
  // Incoherent-model reports (negative difference entries) from the most
  // recent query.
  const std::vector<std::string>& last_warnings() const { return warnings_; }

  // Root-partition plan for a query, with its subqueries, for inspection.
  struct RootPlan {
    QueryPlan plan;
    PartitionScope scope;
    PlanContext context;
  };
  RootPlan plan_root(const Query& q);

  const PartitionTreeView& tree() const { return view_; }

 private:
  struct PartitionEval;

  void check_query(const Query& q) const;
  Factor eval_partition(int part, const std::set<std::string>& requested,
                        const std::map<std::string, std::string>& evidence);
  PartitionEval prepare_partition(int part, const std::set<std::string>& requested,
                                  const std::map<std::string, std::string>& evidence);
  Factor eval_expr(const ExprPtr& e, const std::set<std::string>& needed,
                   const std::map<std::string, Factor>& env,
                   const std::map<std::string, Factor>& pool);
  Factor eval_product(const std::vector<ExprPtr>& input, const std::set<std::string>& needed,
                      const std::map<std::string, Factor>& env,
                      const std::map<std::string, Factor>& pool);
  Factor combine_additive(CombineOp op, std::vector<Factor> operands);
  static void flatten_product_terms(const ExprPtr& e, std::vector<ExprPtr>& out);
  Factor apply_kills(Factor f, const std::set<std::string>& live,
                     const std::map<std::string, Factor>& pool);
  void note_factor(const Factor& f);

  const BeliefNetwork& net_;
  PartitionTreeView view_;
  EngineOptions opts_;
  EvalStats stats_;
  std::vector<std::string> warnings_;
  std::map<std::pair<int, std::set<std::string>>, Factor> cache_;
};

// The subquery list of a plan: one (child slot, full-distribution variables)
// pair per child bucket.
std::vector<std::pair<int, std::set<std::string>>> generate_subqueries(const QueryPlan& plan);

// Reference evaluation that materializes the full joint over everything the
// expression and the marginals mention, then sums down to `keep`. No
// ordering, no early summation; used to check plan-based evaluation.
Factor evaluate_unfactored(const ExprPtr& e, const std::map<std::string, Factor>& env,
                           const std::map<std::string, Factor>& pool,
                           const std::set<std::string>& keep,
                           const std::map<std::string, Variable>& vars);

}  // namespace spi
