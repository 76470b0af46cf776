#include "spi/factor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spi {

namespace {

std::size_t checked_table_size(const std::vector<ScopeEntry>& scope) {
  std::size_t n = 1;
  for (const auto& e : scope) {
    if (e.values.empty()) throw ModelError("factor axis has empty subdomain");
    n *= e.size();
  }
  return n;
}

void check_consistent_domains(const Variable& a, const Variable& b) {
  if (a.name == b.name && a.domain != b.domain) {
    throw ModelError("variable '" + a.name + "' used with two different domains");
  }
}

// Decodes a flat row-major index into per-axis positions.
void decode(std::size_t flat, const std::vector<ScopeEntry>& scope,
            std::vector<std::size_t>& pos) {
  for (std::size_t i = scope.size(); i-- > 0;) {
    pos[i] = flat % scope[i].size();
    flat /= scope[i].size();
  }
}

// Maps one operand onto a result grid. For each result axis: the operand axis
// (npos when the operand lacks the variable, i.e. broadcast) and a translation
// from result-axis position to operand-axis position (npos = outside the
// operand's subdomain, value 0).
struct Alignment {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> axis;
  std::vector<std::vector<std::size_t>> positions;

  Alignment(const std::vector<ScopeEntry>& result, const Factor& operand) {
    axis.resize(result.size(), npos);
    positions.resize(result.size());
    for (std::size_t i = 0; i < result.size(); ++i) {
      auto oi = operand.scope_index(result[i].var.name);
      if (!oi) continue;
      check_consistent_domains(result[i].var, operand.scope()[*oi].var);
      axis[i] = *oi;
      const ScopeEntry& oe = operand.scope()[*oi];
      positions[i].resize(result[i].size(), npos);
      for (std::size_t p = 0; p < result[i].size(); ++p) {
        if (auto op = oe.position_of(result[i].values[p])) positions[i][p] = *op;
      }
    }
  }

  // Operand value for a result cell; zero when any mapped position falls
  // outside the operand's subdomain.
  double value(const Factor& operand, const std::vector<std::size_t>& pos) const {
    std::size_t flat = 0;
    std::vector<std::size_t> opos(operand.var_count(), 0);
    for (std::size_t i = 0; i < axis.size(); ++i) {
      if (axis[i] == npos) continue;
      std::size_t p = positions[i][pos[i]];
      if (p == npos) return 0.0;
      opos[axis[i]] = p;
    }
    for (std::size_t j = 0; j < operand.var_count(); ++j) {
      flat = flat * operand.scope()[j].size() + opos[j];
    }
    return operand.table()[flat];
  }
};

}  // namespace

std::optional<std::size_t> Variable::value_index(const std::string& value) const {
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (domain[i] == value) return i;
  }
  return std::nullopt;
}

ScopeEntry::ScopeEntry(Variable v, std::vector<std::size_t> idx)
    : var(std::move(v)), values(std::move(idx)) {
  if (var.domain.size() < 2) throw ModelError("variable '" + var.name + "' needs >= 2 values");
  std::set<std::string> labels(var.domain.begin(), var.domain.end());
  if (labels.size() != var.domain.size()) {
    throw ModelError("variable '" + var.name + "' has duplicate value labels");
  }
  if (values.empty()) throw ModelError("empty subdomain for variable '" + var.name + "'");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= var.domain.size()) {
      throw ModelError("subdomain index out of range for variable '" + var.name + "'");
    }
    if (i > 0 && values[i] <= values[i - 1]) {
      throw ModelError("subdomain of variable '" + var.name + "' must follow domain order");
    }
  }
}

ScopeEntry ScopeEntry::full(Variable v) {
  std::vector<std::size_t> idx(v.domain.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return ScopeEntry(std::move(v), std::move(idx));
}

ScopeEntry ScopeEntry::from_labels(Variable v, const std::vector<std::string>& labels) {
  std::vector<std::size_t> idx;
  idx.reserve(labels.size());
  for (const auto& l : labels) {
    auto i = v.value_index(l);
    if (!i) throw ModelError("value '" + l + "' not in domain of variable '" + v.name + "'");
    idx.push_back(*i);
  }
  return ScopeEntry(std::move(v), std::move(idx));
}

std::optional<std::size_t> ScopeEntry::position_of(std::size_t domain_index) const {
  for (std::size_t p = 0; p < values.size(); ++p) {
    if (values[p] == domain_index) return p;
  }
  return std::nullopt;
}

Factor::Factor(double value, std::string name) : name_(std::move(name)), table_{value} {
  if (!std::isfinite(value) || value < 0.0) {
    throw ModelError("factor entries must be finite and nonnegative");
  }
}

Factor::Factor(std::string name, std::vector<ScopeEntry> scope, std::vector<double> table)
    : name_(std::move(name)), scope_(std::move(scope)), table_(std::move(table)) {
  std::set<std::string> seen;
  for (const auto& e : scope_) {
    if (!seen.insert(e.var.name).second) {
      throw ModelError("factor '" + name_ + "' repeats variable '" + e.var.name + "'");
    }
  }
  if (table_.size() != checked_table_size(scope_)) {
    throw ModelError("factor '" + name_ + "' table size does not match its scope");
  }
  for (double v : table_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ModelError("factor '" + name_ + "' entries must be finite and nonnegative");
    }
  }
}

std::optional<std::size_t> Factor::scope_index(const std::string& var_name) const {
  for (std::size_t i = 0; i < scope_.size(); ++i) {
    if (scope_[i].var.name == var_name) return i;
  }
  return std::nullopt;
}

double Factor::value_at(const std::map<std::string, std::string>& assignment) const {
  std::size_t flat = 0;
  for (const auto& e : scope_) {
    auto it = assignment.find(e.var.name);
    if (it == assignment.end()) {
      throw ModelError("assignment missing variable '" + e.var.name + "'");
    }
    auto di = e.var.value_index(it->second);
    if (!di) throw ModelError("value '" + it->second + "' not in domain of '" + e.var.name + "'");
    auto p = e.position_of(*di);
    if (!p) return 0.0;
    flat = flat * e.size() + *p;
  }
  return table_[flat];
}

Factor Factor::with_name(std::string name) const {
  Factor f = *this;
  f.name_ = std::move(name);
  return f;
}

Factor zero_extend(const Factor& f, const std::vector<Variable>& targets) {
  std::vector<ScopeEntry> scope;
  // Per axis: result position -> operand position, npos when the target value
  // is not part of f's subdomain.
  std::vector<std::vector<std::size_t>> remap;
  scope.reserve(f.var_count());
  for (const auto& e : f.scope()) {
    const Variable* target = nullptr;
    for (const auto& t : targets) {
      if (t.name == e.var.name) {
        target = &t;
        break;
      }
    }
    if (!target) throw ModelError("zero_extend: no target domain for variable '" + e.var.name + "'");
    std::vector<std::size_t> axis_map(target->domain.size(), Alignment::npos);
    for (std::size_t p = 0; p < e.size(); ++p) {
      auto ti = target->value_index(e.label(p));
      if (!ti) {
        throw ModelError("zero_extend: value '" + e.label(p) + "' of '" + e.var.name +
                         "' not contained in target domain");
      }
      axis_map[*ti] = p;
    }
    remap.push_back(std::move(axis_map));
    scope.push_back(ScopeEntry::full(*target));
  }

  std::vector<double> table(checked_table_size(scope), 0.0);
  std::vector<std::size_t> pos(scope.size(), 0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    decode(flat, scope, pos);
    std::size_t src = 0;
    bool outside = false;
    for (std::size_t i = 0; i < scope.size(); ++i) {
      std::size_t p = remap[i][pos[i]];
      if (p == Alignment::npos) {
        outside = true;
        break;
      }
      src = src * f.scope()[i].size() + p;
    }
    table[flat] = outside ? 0.0 : f.table()[src];
  }
  return Factor(f.name(), std::move(scope), std::move(table));
}

namespace {

// Union scope for the binary ops: shared variables first in left order, then
// left-only, then right-only. `widen_all` forces full domains everywhere
// (additive ops); otherwise only shared variables are widened.
std::vector<ScopeEntry> union_scope(const Factor& a, const Factor& b, bool widen_all) {
  std::vector<ScopeEntry> scope;
  for (const auto& e : a.scope()) {
    if (auto bi = b.scope_index(e.var.name)) {
      check_consistent_domains(e.var, b.scope()[*bi].var);
      scope.push_back(ScopeEntry::full(e.var));
    }
  }
  for (const auto& e : a.scope()) {
    if (!b.has_var(e.var.name)) {
      scope.push_back(widen_all ? ScopeEntry::full(e.var) : e);
    }
  }
  for (const auto& e : b.scope()) {
    if (!a.has_var(e.var.name)) {
      scope.push_back(widen_all ? ScopeEntry::full(e.var) : e);
    }
  }
  return scope;
}

}  // namespace

Factor conformal_product(const Factor& a, const Factor& b) {
  auto scope = union_scope(a, b, /*widen_all=*/false);
  std::vector<double> table(checked_table_size(scope), 0.0);
  Alignment aa(scope, a), ab(scope, b);
  std::vector<std::size_t> pos(scope.size(), 0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    decode(flat, scope, pos);
    table[flat] = aa.value(a, pos) * ab.value(b, pos);
  }
  return Factor("", std::move(scope), std::move(table));
}

Factor pointwise_combine(CombineOp op, const Factor& a, const Factor& b,
                         CombineReport* report) {
  auto scope = union_scope(a, b, /*widen_all=*/true);
  std::vector<double> table(checked_table_size(scope), 0.0);
  Alignment aa(scope, a), ab(scope, b);
  std::vector<std::size_t> pos(scope.size(), 0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    decode(flat, scope, pos);
    // A missing variable broadcasts rather than zero-extends here: the
    // operand is constant across values it does not mention.
    double va = aa.value(a, pos);
    double vb = ab.value(b, pos);
    double v = op == CombineOp::Add ? va + vb : va - vb;
    if (v < 0.0) {
      if (v < -kNegativeTolerance && report) {
        report->negative_entries++;
        report->most_negative = std::min(report->most_negative, v);
      }
      v = 0.0;
    }
    table[flat] = v;
  }
  return Factor("", std::move(scope), std::move(table));
}

Factor additive_combine(CombineOp op, const Factor& a, const Factor& b,
                        const std::map<std::string, Factor>& marginals,
                        CombineReport* report) {
  // Variables present in exactly one operand: both sides are multiplied by
  // that variable's marginal so the terms reach a common joint footing.
  std::vector<std::string> mismatched;
  for (const auto& e : a.scope()) {
    if (!b.has_var(e.var.name)) mismatched.push_back(e.var.name);
  }
  for (const auto& e : b.scope()) {
    if (!a.has_var(e.var.name)) mismatched.push_back(e.var.name);
  }
  Factor ga = a, gb = b;
  for (const auto& v : mismatched) {
    auto it = marginals.find(v);
    if (it == marginals.end()) {
      throw ModelError("additive_combine: missing marginal for variable '" + v + "'");
    }
    ga = conformal_product(ga, it->second);
    gb = conformal_product(gb, it->second);
  }
  return pointwise_combine(op, ga, gb, report);
}

Factor sum_out(const Factor& f, const std::set<std::string>& vars) {
  if (vars.empty()) return f;
  for (const auto& v : vars) {
    if (!f.has_var(v)) throw ModelError("sum_out: variable '" + v + "' not in scope");
  }
  std::vector<ScopeEntry> scope;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < f.var_count(); ++i) {
    if (!vars.count(f.scope()[i].var.name)) {
      scope.push_back(f.scope()[i]);
      kept.push_back(i);
    }
  }
  std::vector<double> table(checked_table_size(scope), 0.0);
  std::vector<std::size_t> pos(f.var_count(), 0);
  for (std::size_t flat = 0; flat < f.cells(); ++flat) {
    decode(flat, f.scope(), pos);
    std::size_t out = 0;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      out = out * f.scope()[kept[k]].size() + pos[kept[k]];
    }
    table[out] += f.table()[flat];
  }
  return Factor(f.name(), std::move(scope), std::move(table));
}

double total_mass(const Factor& f) {
  double m = 0.0;
  for (double v : f.table()) m += v;
  return m;
}

Factor normalize(const Factor& f) {
  double m = total_mass(f);
  if (m <= 0.0) throw EvalError("zero-mass evidence: cannot normalize factor '" + f.name() + "'");
  std::vector<double> table = f.table();
  for (double& v : table) v /= m;
  return Factor(f.name(), f.scope(), std::move(table));
}

bool approx_equal(const Factor& a, const Factor& b, double tol) {
  // Union of variables, full domains. A variable absent from one operand
  // extends that operand with zeros everywhere on the new axis, the same
  // convention used for partial subdomains.
  std::vector<ScopeEntry> scope;
  std::set<std::string> seen;
  for (const auto& e : a.scope()) {
    scope.push_back(ScopeEntry::full(e.var));
    seen.insert(e.var.name);
  }
  for (const auto& e : b.scope()) {
    if (seen.insert(e.var.name).second) {
      scope.push_back(ScopeEntry::full(e.var));
    } else {
      auto ai = a.scope_index(e.var.name);
      check_consistent_domains(a.scope()[*ai].var, e.var);
    }
  }
  bool a_partial = a.var_count() != scope.size();
  bool b_partial = b.var_count() != scope.size();
  Alignment aa(scope, a), ab(scope, b);
  std::vector<std::size_t> pos(scope.size(), 0);
  std::size_t cells = checked_table_size(scope);
  for (std::size_t flat = 0; flat < cells; ++flat) {
    decode(flat, scope, pos);
    double va = a_partial ? 0.0 : aa.value(a, pos);
    double vb = b_partial ? 0.0 : ab.value(b, pos);
    if (std::abs(va - vb) > tol) return false;
  }
  return true;
}

Factor reorder_scope(const Factor& f, const std::vector<std::string>& order) {
  if (order.size() != f.var_count()) {
    throw ModelError("reorder_scope: order is not a permutation of the scope");
  }
  std::vector<ScopeEntry> scope;
  scope.reserve(order.size());
  for (const auto& name : order) {
    auto i = f.scope_index(name);
    if (!i) throw ModelError("reorder_scope: variable '" + name + "' not in scope");
    scope.push_back(f.scope()[*i]);
  }
  std::vector<double> table(f.cells(), 0.0);
  Alignment align(scope, f);
  std::vector<std::size_t> pos(scope.size(), 0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    decode(flat, scope, pos);
    table[flat] = align.value(f, pos);
  }
  return Factor(f.name(), std::move(scope), std::move(table));
}

Factor indicator(const Variable& var, const std::string& value, double weight) {
  auto entry = ScopeEntry::from_labels(var, {value});
  return Factor("", {entry}, {weight});
}

}  // namespace spi
