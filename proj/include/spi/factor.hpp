#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/errors.hpp"

namespace spi {

// A discrete variable with a fixed, ordered domain of value labels.
struct Variable {
  std::string name;
  std::vector<std::string> domain;

  std::size_t arity() const { return domain.size(); }
  std::optional<std::size_t> value_index(const std::string& value) const;

  bool operator==(const Variable& other) const {
    return name == other.name && domain == other.domain;
  }
};

// One axis of a factor: a variable together with the ordered subset of its
// domain the factor is defined over. Values are stored as indices into the
// variable's domain, strictly increasing.
struct ScopeEntry {
  Variable var;
  std::vector<std::size_t> values;

  ScopeEntry() = default;
  ScopeEntry(Variable v, std::vector<std::size_t> idx);
  static ScopeEntry full(Variable v);
  static ScopeEntry from_labels(Variable v, const std::vector<std::string>& labels);

  std::size_t size() const { return values.size(); }
  bool is_full() const { return values.size() == var.domain.size(); }
  std::string label(std::size_t pos) const { return var.domain[values[pos]]; }
  // Position of a domain value index within this subdomain, if present.
  std::optional<std::size_t> position_of(std::size_t domain_index) const;
};

// A generalized distribution: a named dense nonnegative table over the cross
// product of the scope subdomains, row major in scope order (last axis
// varies fastest). Values outside a subdomain are implicitly zero.
class Factor {
 public:
  // Scalar factor with empty scope.
  explicit Factor(double value = 1.0, std::string name = "");
  Factor(std::string name, std::vector<ScopeEntry> scope, std::vector<double> table);

  const std::string& name() const { return name_; }
  const std::vector<ScopeEntry>& scope() const { return scope_; }
  const std::vector<double>& table() const { return table_; }
  std::size_t cells() const { return table_.size(); }
  std::size_t var_count() const { return scope_.size(); }
  bool is_scalar() const { return scope_.empty(); }

  std::optional<std::size_t> scope_index(const std::string& var_name) const;
  bool has_var(const std::string& var_name) const { return scope_index(var_name).has_value(); }

  // Table entry for a full assignment of value labels; zero when the
  // assignment falls outside a subdomain. Missing variables are an error.
  double value_at(const std::map<std::string, std::string>& assignment) const;

  Factor with_name(std::string name) const;

 private:
  std::string name_;
  std::vector<ScopeEntry> scope_;
  std::vector<double> table_;
};

enum class CombineOp { Add, Subtract };

// Filled in by the additive operations when a difference produces negative
// entries beyond floating-point noise. Entries are clamped to zero either way.
struct CombineReport {
  std::size_t negative_entries = 0;
  double most_negative = 0.0;
};

// Tolerance below which negative entries from subtraction are treated as
// rounding noise and clamped silently.
inline constexpr double kNegativeTolerance = 1e-12;

// Extends each axis of `f` to the full domain given in `targets`, filling new
// cells with zero. Every scope variable of `f` must appear in `targets`.
Factor zero_extend(const Factor& f, const std::vector<Variable>& targets);

// Pointwise product over the union of scopes. Shared variables are widened to
// their full domains (both operands zero-extended); unshared axes keep their
// subdomains. Result scope: shared vars in left order, then left-only, then
// right-only.
Factor conformal_product(const Factor& a, const Factor& b);

// Pointwise sum or difference over the union of scopes, all axes widened to
// full domains. A variable missing from one operand is broadcast: that
// operand is treated as constant across its values. Negative results are
// clamped and reported.
Factor pointwise_combine(CombineOp op, const Factor& a, const Factor& b,
                         CombineReport* report = nullptr);

// Sum or difference with domain normalization: for every variable present in
// exactly one operand's scope, both operands are first multiplied by that
// variable's marginal (which the caller must supply).
Factor additive_combine(CombineOp op, const Factor& a, const Factor& b,
                        const std::map<std::string, Factor>& marginals,
                        CombineReport* report = nullptr);

// Drops `vars` from the scope, summing the table over them.
Factor sum_out(const Factor& f, const std::set<std::string>& vars);

// Scales the table so it sums to one. Throws EvalError on zero total mass.
Factor normalize(const Factor& f);

double total_mass(const Factor& f);

// True iff the tables agree within `tol` after zero-extending both onto the
// union scope (missing variables extend with zero, like partial subdomains).
bool approx_equal(const Factor& a, const Factor& b, double tol);

// Reorders the scope axes to the given variable-name order (which must be a
// permutation of the scope). Used to canonicalize results for output.
Factor reorder_scope(const Factor& f, const std::vector<std::string>& order);

// 0/1 factor marking a single value of one variable; `weight` scales the hit.
Factor indicator(const Variable& var, const std::string& value, double weight = 1.0);

}  // namespace spi
