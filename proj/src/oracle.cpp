#include "spi/oracle.hpp"

#include <algorithm>

namespace spi {

Factor expand_noisy_or_to_cpt(const Variable& child, const std::vector<Variable>& parents,
                              const std::vector<double>& params, std::optional<double> leak) {
  if (child.arity() != 2) throw ModelError("noisy-or child must be binary");
  if (parents.size() != params.size()) {
    throw ModelError("noisy-or parameter count does not match parent count");
  }
  std::vector<ScopeEntry> scope;
  for (const auto& p : parents) {
    if (p.arity() != 2) throw ModelError("noisy-or parent must be binary");
    scope.push_back(ScopeEntry::full(p));
  }
  scope.push_back(ScopeEntry::full(child));

  std::size_t rows = std::size_t{1} << parents.size();
  std::vector<double> table(rows * 2, 0.0);
  for (std::size_t row = 0; row < rows; ++row) {
    double fail_all = leak ? (1.0 - *leak) : 1.0;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      // Parent i's bit in row-major order: first parent varies slowest.
      std::size_t bit = (row >> (parents.size() - 1 - i)) & 1;
      bool active = bit == 0;  // position 0 is the active value
      if (active) fail_all *= 1.0 - params[i];
    }
    table[row * 2 + 0] = 1.0 - fail_all;  // child active
    table[row * 2 + 1] = fail_all;        // child inactive
  }
  return Factor("p_" + child.name, std::move(scope), std::move(table));
}

namespace {

// Per-node conditional table in (parents..., child) scope order, child
// varying fastest, plus the lookup order of its variables.
struct NodeTable {
  Factor factor{1.0};
  std::vector<std::string> lookup;  // parents then child
};

NodeTable node_table(const BeliefNetwork& net, const std::string& name) {
  const LocalModel& m = net.model(name);
  NodeTable t;
  if (m.kind == LocalModel::Kind::Cpt) {
    t.factor = m.cpt;
  } else if (m.noisy) {
    std::vector<Variable> parents;
    for (const auto& p : m.noisy->parents) parents.push_back(net.variable(p));
    t.factor = expand_noisy_or_to_cpt(net.variable(name), parents, m.noisy->params, m.noisy->leak);
  } else {
    throw ModelError("brute force enumeration supports CPT and noisy-or nodes only; '" + name +
                     "' has a general expression model");
  }
  for (const auto& e : t.factor.scope()) t.lookup.push_back(e.var.name);
  return t;
}

}  // namespace

Factor brute_force_joint(const BeliefNetwork& net) {
  std::vector<std::string> order;
  for (const auto& v : net.variables()) order.push_back(v.name);
  std::sort(order.begin(), order.end());

  std::vector<ScopeEntry> scope;
  std::size_t cells = 1;
  for (const auto& name : order) {
    scope.push_back(ScopeEntry::full(net.variable(name)));
    cells *= net.variable(name).arity();
    if (cells > kMaxJointCells) {
      throw ModelError("network too large for brute-force enumeration");
    }
  }

  // Position of each variable in the assignment odometer.
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < order.size(); ++i) slot[order[i]] = i;

  std::vector<NodeTable> tables;
  for (const auto& name : order) tables.push_back(node_table(net, name));

  std::vector<double> joint(cells, 0.0);
  std::vector<std::size_t> pos(order.size(), 0);
  for (std::size_t flat = 0; flat < cells; ++flat) {
    std::size_t rem = flat;
    for (std::size_t i = order.size(); i-- > 0;) {
      pos[i] = rem % scope[i].size();
      rem /= scope[i].size();
    }
    double p = 1.0;
    for (const auto& t : tables) {
      std::size_t idx = 0;
      for (const auto& var : t.lookup) idx = idx * net.variable(var).arity() + pos[slot[var]];
      p *= t.factor.table()[idx];
    }
    joint[flat] = p;
  }
  return Factor("joint", std::move(scope), std::move(joint));
}

Factor brute_force_marginal(const BeliefNetwork& net, const std::set<std::string>& targets,
                            const std::map<std::string, std::string>& evidence) {
  Factor joint = brute_force_joint(net);

  // Mask out assignments inconsistent with the evidence.
  std::vector<double> table = joint.table();
  if (!evidence.empty()) {
    std::vector<std::size_t> pos(joint.var_count(), 0);
    for (std::size_t flat = 0; flat < table.size(); ++flat) {
      std::size_t rem = flat;
      for (std::size_t i = joint.var_count(); i-- > 0;) {
        pos[i] = rem % joint.scope()[i].size();
        rem /= joint.scope()[i].size();
      }
      for (const auto& [var, value] : evidence) {
        auto vi = joint.scope_index(var);
        if (!vi) throw ModelError("evidence variable '" + var + "' not in the network");
        if (joint.scope()[*vi].label(pos[*vi]) != value) {
          table[flat] = 0.0;
          break;
        }
      }
    }
  }
  Factor masked("joint", joint.scope(), std::move(table));

  std::set<std::string> drop;
  for (const auto& e : masked.scope()) {
    if (!targets.count(e.var.name)) drop.insert(e.var.name);
  }
  Factor out = sum_out(masked, drop);
  if (!evidence.empty()) out = normalize(out);
  std::vector<std::string> order(targets.begin(), targets.end());
  return reorder_scope(out, order).with_name("marginal");
}

}  // namespace spi
