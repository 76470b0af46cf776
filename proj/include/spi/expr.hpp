#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/errors.hpp"
#include "spi/factor.hpp"

namespace spi {

// One variable with the values it is restricted to inside a leaf subspace,
// e.g. the "D:t" or "B:t,f" pieces of a leaf.
struct ValueSet {
  std::string var;
  std::vector<std::string> values;

  bool operator==(const ValueSet& other) const = default;
};

enum class ExprKind { DistRef, One, Product, Sum, Difference };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

// Immutable expression node. Leaves are either a named distribution over a
// subspace (DistRef) or the constant-one distribution over a subspace (One).
// Compounds are n-ary with at least two terms; Difference means the first
// term minus all the rest.
struct Expr {
  ExprKind kind;

  // Leaf payload.
  std::string name;
  std::vector<ValueSet> conditioned;
  std::vector<ValueSet> conditioning;

  // Compound payload.
  std::vector<ExprPtr> terms;

  static ExprPtr dist_ref(std::string name, std::vector<ValueSet> conditioned,
                          std::vector<ValueSet> conditioning);
  static ExprPtr one(std::vector<ValueSet> subspace);
  static ExprPtr product(std::vector<ExprPtr> terms);
  static ExprPtr sum(std::vector<ExprPtr> terms);
  static ExprPtr difference(std::vector<ExprPtr> terms);

  bool is_leaf() const { return kind == ExprKind::DistRef || kind == ExprKind::One; }
  bool is_additive() const { return kind == ExprKind::Sum || kind == ExprKind::Difference; }
};

// Parses the concrete syntax:
//   leaf      = IDENT '[' assignlist ( '|' assignlist )? ']'
//   assignlist= VAR ':' VAL (',' VAL)* (VAR ':' VAL (',' VAL)*)*
//   compound  = '(' ('+'|'-'|'*') expr expr+ ')'
// The leaf name "1" denotes the constant-one distribution. Whitespace between
// tokens is ignored. Throws ParseError with an offset on malformed input.
ExprPtr parse(const std::string& text);

// Canonical text form; parse(print(e)) is structurally equal to e.
std::string print(const ExprPtr& e);

bool structurally_equal(const ExprPtr& a, const ExprPtr& b);

// Number of nodes in the expression tree; shared subtrees count once per
// occurrence.
std::size_t count_nodes(const ExprPtr& e);

struct FreeVariables {
  std::set<std::string> conditioned;
  std::set<std::string> conditioning;
};

// Union over leaves of the conditioned and conditioning variable names. A
// variable may appear in both sets.
FreeVariables free_variables(const ExprPtr& e);

// All variable names referenced anywhere in the expression.
std::set<std::string> referenced_variables(const ExprPtr& e);

// Numeric values for the named distributions of an expression, keyed by leaf
// name. The per-leaf factor is built from the leaf's own subspace, so one
// binding can serve several leaves that share a parameter (the two polarity
// copies of a noisy-or weight, for instance).
using ParameterBindings = std::map<std::string, std::vector<double>>;

struct NoisyOrModel {
  ExprPtr expr;
  ParameterBindings bindings;
};

// Encodes a noisy-or interaction: the child is true unless every active
// cause independently fails, cause p failing with probability 1 - params[p].
// An optional leak adds a parentless cause with strength `leak`. The child
// and all parents must be binary; domain[0] is the active value.
NoisyOrModel build_noisy_or(const Variable& child, const std::vector<Variable>& parents,
                            const std::vector<double>& params, std::optional<double> leak);

// Number of table cells a leaf's subspace spans.
std::size_t leaf_cells(const Expr& leaf);

// Instantiates the factor for a DistRef leaf from its binding values
// (row major over the leaf's subspace).
Factor leaf_factor(const Expr& leaf, const std::vector<double>& values,
                   const std::map<std::string, Variable>& vars);

// Constant-one factor over a One leaf's subspace.
Factor one_factor(const Expr& leaf, const std::map<std::string, Variable>& vars);

// Declaration context used by expression validation.
struct DeclContext {
  const std::map<std::string, Variable>* vars = nullptr;
  const ParameterBindings* bindings = nullptr;
};

// Structural diagnostics: unknown variables or values, duplicate variables in
// a subspace, unbound or size-mismatched parameters. Empty means valid.
std::vector<std::string> validate(const ExprPtr& e, const DeclContext& ctx);

}  // namespace spi
