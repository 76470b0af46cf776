#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/expr.hpp"
#include "spi/factor.hpp"
#include "spi/partition.hpp"

namespace spi {

// Retained when a node was declared through a noisyor block, so the oracle
// can expand the closed form independently of the expression encoding.
struct NoisyOrSpec {
  std::vector<std::string> parents;
  std::vector<double> params;
  std::optional<double> leak;
};

// A node's local model: either a full conditional table (scope: parents in
// declaration order, then the child, child varying fastest) or an expression
// with parameter bindings.
struct LocalModel {
  enum class Kind { Cpt, Expr };
  Kind kind = Kind::Cpt;

  Factor cpt;

  ExprPtr expr;
  ParameterBindings bindings;

  std::optional<NoisyOrSpec> noisy;
};

class BeliefNetwork {
 public:
  // Builds the structure from the net file text. Hard syntax problems throw
  // ModelError; semantic issues are left for validate().
  static BeliefNetwork parse(const std::string& text);

  const std::vector<Variable>& variables() const { return order_; }
  const std::map<std::string, Variable>& variable_map() const { return vars_; }
  const Variable& variable(const std::string& name) const;
  bool has_variable(const std::string& name) const { return vars_.count(name) > 0; }

  const LocalModel& model(const std::string& var) const;
  const std::vector<std::string>& parents_of(const std::string& var) const;

  // Variables ordered so parents precede children. Throws on a cycle.
  std::vector<std::string> topo_order() const;

  // Structural diagnostics; empty iff the network is valid.
  std::vector<std::string> validate() const;

  const std::optional<PartitionNode>& partition_literal() const { return partition_; }

 private:
  std::map<std::string, Variable> vars_;
  std::vector<Variable> order_;
  std::map<std::string, LocalModel> models_;
  std::map<std::string, std::vector<std::string>> parents_;
  std::optional<PartitionNode> partition_;

  friend struct NetParser;
};

// Parses and fully validates; throws ModelError listing every diagnostic.
BeliefNetwork load_network(const std::string& text);

// Column-normalization tolerance for conditional tables.
inline constexpr double kCptTolerance = 1e-9;

}  // namespace spi
