#include "spi/rewrite.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <sstream>

namespace spi {

namespace {

void collect_requirements(const ExprPtr& e, const PartitionScope& scope, std::set<int>& out) {
  if (e->is_leaf()) {
    auto add = [&](const std::vector<ValueSet>& groups) {
      for (const auto& g : groups) {
        auto it = scope.var_to_child.find(g.var);
        if (it != scope.var_to_child.end()) out.insert(it->second);
      }
    };
    add(e->conditioned);
    add(e->conditioning);
    return;
  }
  for (const auto& t : e->terms) collect_requirements(t, scope, out);
}

}  // namespace

std::set<int> PartitionScope::requirements(const ExprPtr& e) const {
  std::set<int> out;
  collect_requirements(e, *this, out);
  return out;
}

TermInfo make_term_info(const ExprPtr& e, const PartitionScope& scope) {
  TermInfo info;
  info.expr = e;
  info.required_children = scope.requirements(e);
  for (const auto& v : referenced_variables(e)) {
    if (scope.local_vars.count(v)) info.local_vars.insert(v);
  }
  return info;
}

// ---------------------------------------------------------------------------
// Composition

ExprPtr prefix_leaves(const ExprPtr& e, const std::string& node) {
  if (e->kind == ExprKind::One) return e;
  if (e->kind == ExprKind::DistRef) {
    return Expr::dist_ref(node + "." + e->name, e->conditioned, e->conditioning);
  }
  std::vector<ExprPtr> terms;
  terms.reserve(e->terms.size());
  for (const auto& t : e->terms) terms.push_back(prefix_leaves(t, node));
  auto out = std::make_shared<Expr>();
  out->kind = e->kind;
  out->terms = std::move(terms);
  return out;
}

std::set<std::string> compose_closure(const BeliefNetwork& net,
                                      const std::set<std::string>& partition_vars,
                                      const std::set<std::string>& targets) {
  for (const auto& t : targets) {
    if (!partition_vars.count(t)) {
      throw ModelError("compose: target '" + t + "' is not in the partition");
    }
  }
  std::set<std::string> closure = targets;
  std::vector<std::string> frontier(targets.begin(), targets.end());
  while (!frontier.empty()) {
    std::string v = frontier.back();
    frontier.pop_back();
    for (const auto& p : net.parents_of(v)) {
      if (partition_vars.count(p) && closure.insert(p).second) frontier.push_back(p);
    }
  }
  return closure;
}

ExprPtr local_expression(const BeliefNetwork& net, const std::string& node) {
  const LocalModel& m = net.model(node);
  if (m.kind == LocalModel::Kind::Expr) return prefix_leaves(m.expr, node);
  // CPT leaf: conditioned on the node over its full domain, conditioning on
  // the parents over theirs.
  const Variable& child = net.variable(node);
  std::vector<ValueSet> conditioned{{node, child.domain}};
  std::vector<ValueSet> conditioning;
  for (const auto& p : net.parents_of(node)) {
    conditioning.push_back({p, net.variable(p).domain});
  }
  return Expr::dist_ref("p_" + node, std::move(conditioned), std::move(conditioning));
}

ExprPtr compose(const BeliefNetwork& net, const std::set<std::string>& partition_vars,
                const std::set<std::string>& targets) {
  std::set<std::string> closure = compose_closure(net, partition_vars, targets);
  std::vector<ExprPtr> terms;
  for (const auto& v : closure) terms.push_back(local_expression(net, v));
  if (terms.empty()) throw ModelError("compose: nothing to compose");
  return terms.size() == 1 ? terms[0] : Expr::product(std::move(terms));
}

// ---------------------------------------------------------------------------
// Grouping and separability

std::vector<std::vector<std::size_t>> group_terms(const std::vector<TermInfo>& terms) {
  std::vector<std::size_t> comp(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) comp[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (comp[x] != x) x = comp[x] = comp[comp[x]];
    return x;
  };
  for (std::size_t i = 0; i < terms.size(); ++i) {
    for (std::size_t j = i + 1; j < terms.size(); ++j) {
      bool overlap = false;
      for (int c : terms[i].required_children) {
        if (terms[j].required_children.count(c)) {
          overlap = true;
          break;
        }
      }
      if (overlap) comp[find(i)] = find(j);
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> by_root;
  for (std::size_t i = 0; i < terms.size(); ++i) by_root[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (smallest member, root)
  for (const auto& [root, members] : by_root) order.emplace_back(members.front(), root);
  std::sort(order.begin(), order.end());
  for (const auto& [first, root] : order) groups.push_back(by_root[root]);
  return groups;
}

namespace {

// Clause (a) of the separable test: no single distribution inside the term
// requires every child partition the term as a whole requires.
bool leaf_cover_separable(const ExprPtr& e, const std::set<int>& term_req,
                          const PartitionScope& scope) {
  if (term_req.empty()) return false;
  bool covered = false;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (covered) return;
    if (n->is_leaf()) {
      std::set<int> req = scope.requirements(n);
      if (std::includes(req.begin(), req.end(), term_req.begin(), term_req.end())) {
        covered = true;
      }
      return;
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return !covered;
}

}  // namespace

bool separable(const TermInfo& term, const std::set<int>& group_children,
               const PartitionScope& scope) {
  if (term.expr->is_leaf()) return false;
  const auto& req = term.required_children;
  bool proper_subset =
      req.size() < group_children.size() &&
      std::includes(group_children.begin(), group_children.end(), req.begin(), req.end());
  return leaf_cover_separable(term.expr, req, scope) || proper_subset;
}

// ---------------------------------------------------------------------------
// Evidence pruning

namespace {

// Value labels a subexpression can be nonzero on for `var`; nullopt means
// unconstrained.
std::optional<std::set<std::string>> support_on(const ExprPtr& e, const std::string& var) {
  if (e->is_leaf()) {
    for (const auto& g : e->conditioned) {
      if (g.var == var) return std::set<std::string>(g.values.begin(), g.values.end());
    }
    for (const auto& g : e->conditioning) {
      if (g.var == var) return std::set<std::string>(g.values.begin(), g.values.end());
    }
    return std::nullopt;
  }
  if (e->kind == ExprKind::Product) {
    std::optional<std::set<std::string>> acc;
    for (const auto& t : e->terms) {
      auto s = support_on(t, var);
      if (!s) continue;
      if (!acc) {
        acc = s;
      } else {
        std::set<std::string> inter;
        std::set_intersection(acc->begin(), acc->end(), s->begin(), s->end(),
                              std::inserter(inter, inter.begin()));
        acc = inter;
      }
    }
    return acc;
  }
  // Sum or difference: nonzero wherever any term can be.
  bool any = false;
  std::set<std::string> uni;
  for (const auto& t : e->terms) {
    auto s = support_on(t, var);
    if (!s) return std::nullopt;
    any = true;
    uni.insert(s->begin(), s->end());
  }
  return any ? std::optional(uni) : std::nullopt;
}

bool excluded_by_evidence(const ExprPtr& e,
                          const std::map<std::string, std::string>& evidence) {
  for (const auto& [var, value] : evidence) {
    auto s = support_on(e, var);
    if (s && !s->count(value)) return true;
  }
  return false;
}

}  // namespace

std::optional<ExprPtr> prune_for_evidence(const ExprPtr& e,
                                          const std::map<std::string, std::string>& evidence) {
  if (evidence.empty()) return e;
  if (excluded_by_evidence(e, evidence)) return std::nullopt;
  if (e->is_leaf()) return e;

  std::vector<ExprPtr> kept;
  bool changed = false;
  switch (e->kind) {
    case ExprKind::Product: {
      for (const auto& t : e->terms) {
        auto p = prune_for_evidence(t, evidence);
        if (!p) return std::nullopt;  // one zero factor kills the product
        changed = changed || *p != t;
        kept.push_back(*p);
      }
      break;
    }
    case ExprKind::Sum: {
      for (const auto& t : e->terms) {
        auto p = prune_for_evidence(t, evidence);
        if (!p) {
          changed = true;
          continue;
        }
        changed = changed || *p != t;
        kept.push_back(*p);
      }
      if (kept.empty()) return std::nullopt;
      if (kept.size() == 1) return kept[0];
      break;
    }
    case ExprKind::Difference: {
      // The language has no negation, so the first term is kept as written
      // even when its support misses the evidence; it just evaluates to zero.
      kept.push_back(e->terms[0]);
      auto p0 = prune_for_evidence(e->terms[0], evidence);
      if (p0) {
        kept[0] = *p0;
        changed = changed || *p0 != e->terms[0];
      }
      for (std::size_t i = 1; i < e->terms.size(); ++i) {
        auto p = prune_for_evidence(e->terms[i], evidence);
        if (!p) {
          changed = true;
          continue;
        }
        changed = changed || *p != e->terms[i];
        kept.push_back(*p);
      }
      if (kept.size() == 1) return kept[0];
      break;
    }
    default:
      return e;
  }
  if (!changed) return e;
  auto out = std::make_shared<Expr>();
  out->kind = e->kind;
  out->terms = std::move(kept);
  return ExprPtr(out);
}

// ---------------------------------------------------------------------------
// Distribution

namespace {

struct Budget {
  std::size_t limit;
  std::size_t used = 0;

  void charge(std::size_t n) {
    used += n;
    if (used > limit) {
      throw EvalError("expression rewrite exceeded the node budget of " + std::to_string(limit));
    }
  }
};

void flatten_product(const ExprPtr& e, std::vector<ExprPtr>& out) {
  for (const auto& t : e->terms) {
    if (t->kind == ExprKind::Product) {
      flatten_product(t, out);
    } else {
      out.push_back(t);
    }
  }
}

// Summand list of an additive node with signs; a difference is its first
// term minus the sum of the rest.
std::vector<std::pair<ExprPtr, int>> signed_terms(const ExprPtr& e) {
  std::vector<std::pair<ExprPtr, int>> out;
  for (std::size_t i = 0; i < e->terms.size(); ++i) {
    int sign = (e->kind == ExprKind::Difference && i > 0) ? -1 : 1;
    out.emplace_back(e->terms[i], sign);
  }
  return out;
}

ExprPtr dist_rec(const ExprPtr& e, const PartitionScope& scope, Budget& budget);

ExprPtr distribute_group(const std::vector<ExprPtr>& members, const std::set<int>& group_req,
                         const PartitionScope& scope, Budget& budget) {
  // Expansion applies to the additive members for which clause (a) of the
  // separable test holds; everything else stays a factor of the group
  // product. Expanding subset-requirement terms with a covering distribution
  // would blow the expression up without splitting anything.
  std::vector<std::size_t> expand;
  std::vector<ExprPtr> outside;
  for (std::size_t i = 0; i < members.size(); ++i) {
    std::set<int> req = scope.requirements(members[i]);
    if (members[i]->is_additive() && leaf_cover_separable(members[i], req, scope)) {
      expand.push_back(i);
    } else {
      outside.push_back(members[i]);
    }
  }
  (void)group_req;
  if (expand.empty()) {
    return members.size() == 1 ? members[0] : Expr::product(members);
  }

  std::vector<std::vector<std::pair<ExprPtr, int>>> choice_lists;
  for (std::size_t i : expand) choice_lists.push_back(signed_terms(members[i]));

  std::vector<ExprPtr> positives, negatives;
  std::vector<std::size_t> pick(choice_lists.size(), 0);
  while (true) {
    std::vector<ExprPtr> picks;
    int sign = 1;
    for (std::size_t k = 0; k < choice_lists.size(); ++k) {
      picks.push_back(choice_lists[k][pick[k]].first);
      sign *= choice_lists[k][pick[k]].second;
    }
    ExprPtr combo = picks.size() == 1 ? picks[0] : Expr::product(picks);
    combo = dist_rec(combo, scope, budget);
    budget.charge(count_nodes(combo));
    (sign > 0 ? positives : negatives).push_back(combo);

    std::size_t k = choice_lists.size();
    while (k > 0) {
      --k;
      if (++pick[k] < choice_lists[k].size()) break;
      pick[k] = 0;
      if (k == 0) {
        k = std::numeric_limits<std::size_t>::max();
        break;
      }
    }
    if (k == std::numeric_limits<std::size_t>::max()) break;
  }

  ExprPtr pos = positives.size() == 1 ? positives[0] : Expr::sum(positives);
  ExprPtr node = pos;
  if (!negatives.empty()) {
    ExprPtr neg = negatives.size() == 1 ? negatives[0] : Expr::sum(negatives);
    node = Expr::difference({pos, neg});
  }
  if (outside.empty()) return node;
  std::vector<ExprPtr> factors{node};
  factors.insert(factors.end(), outside.begin(), outside.end());
  return Expr::product(std::move(factors));
}

ExprPtr dist_rec(const ExprPtr& e, const PartitionScope& scope, Budget& budget) {
  if (e->kind != ExprKind::Product) return e;

  std::vector<ExprPtr> flat;
  flatten_product(e, flat);
  std::vector<TermInfo> infos;
  infos.reserve(flat.size());
  for (const auto& t : flat) infos.push_back(make_term_info(t, scope));
  auto groups = group_terms(infos);

  std::vector<ExprPtr> out;
  for (const auto& g : groups) {
    if (g.size() == 1) {
      out.push_back(flat[g[0]]);
      continue;
    }
    std::set<int> group_req;
    std::vector<ExprPtr> members;
    for (std::size_t i : g) {
      group_req.insert(infos[i].required_children.begin(), infos[i].required_children.end());
      members.push_back(flat[i]);
    }
    out.push_back(distribute_group(members, group_req, scope, budget));
  }
  return out.size() == 1 ? out[0] : Expr::product(std::move(out));
}

}  // namespace

ExprPtr distribute(const ExprPtr& e, const PartitionScope& scope, std::size_t node_budget) {
  Budget budget{node_budget};
  return dist_rec(e, scope, budget);
}

// ---------------------------------------------------------------------------
// Product ordering

namespace {

using VarSet = std::set<std::string>;

struct Simulator {
  explicit Simulator(const PlanContext& c) : ctx(c) {}

  const PlanContext& ctx;
  std::vector<std::string> elimination;
  std::size_t largest = 0;
  std::set<std::string> eliminated_seen;

  void note_scope(const VarSet& s) { largest = std::max(largest, s.size()); }

  void note_kill(const std::string& v) {
    if (eliminated_seen.insert(v).second) elimination.push_back(v);
  }

  // Removes dead variables from a scope, recording the kills.
  VarSet sweep(VarSet scope, const VarSet& live) {
    for (auto it = scope.begin(); it != scope.end();) {
      if (live.count(*it)) {
        ++it;
      } else {
        note_kill(*it);
        it = scope.erase(it);
      }
    }
    return scope;
  }

  // Simulates evaluation; returns the reordered node and its output scope.
  std::pair<ExprPtr, VarSet> run(const ExprPtr& e, const VarSet& needed) {
    switch (e->kind) {
      case ExprKind::DistRef:
      case ExprKind::One: {
        VarSet s = referenced_variables(e);
        note_scope(s);
        return {e, sweep(std::move(s), needed)};
      }
      case ExprKind::Sum:
      case ExprKind::Difference: {
        std::vector<ExprPtr> terms;
        VarSet s;
        for (const auto& t : e->terms) {
          auto [nt, ts] = run(t, needed);
          terms.push_back(nt);
          s.insert(ts.begin(), ts.end());
        }
        note_scope(s);
        auto out = std::make_shared<Expr>();
        out->kind = e->kind;
        out->terms = std::move(terms);
        return {ExprPtr(out), sweep(std::move(s), needed)};
      }
      case ExprKind::Product: {
        std::size_t n = e->terms.size();
        std::vector<VarSet> refs(n);
        for (std::size_t i = 0; i < n; ++i) refs[i] = referenced_variables(e->terms[i]);
        std::vector<ExprPtr> sim_terms(n);
        std::vector<VarSet> out_scope(n);
        for (std::size_t i = 0; i < n; ++i) {
          VarSet needed_i = needed;
          for (std::size_t j = 0; j < n; ++j) {
            if (j != i) needed_i.insert(refs[j].begin(), refs[j].end());
          }
          auto [nt, ts] = run(e->terms[i], needed_i);
          sim_terms[i] = nt;
          out_scope[i] = std::move(ts);
        }

        // Greedy accumulation order: smallest post-sweep scope first, ties on
        // the pre-sweep scope, then on term index.
        std::vector<std::size_t> remaining(n), order;
        for (std::size_t i = 0; i < n; ++i) remaining[i] = i;
        VarSet acc;
        while (!remaining.empty()) {
          std::size_t best = 0;
          std::size_t best_post = 0, best_pre = 0;
          for (std::size_t r = 0; r < remaining.size(); ++r) {
            std::size_t i = remaining[r];
            VarSet merged = acc;
            merged.insert(out_scope[i].begin(), out_scope[i].end());
            std::size_t pre = merged.size();
            VarSet live = needed;
            for (std::size_t q = 0; q < remaining.size(); ++q) {
              if (remaining[q] != i) {
                live.insert(out_scope[remaining[q]].begin(), out_scope[remaining[q]].end());
              }
            }
            std::size_t post = 0;
            for (const auto& v : merged) {
              if (live.count(v)) ++post;
            }
            if (r == 0 || post < best_post || (post == best_post && pre < best_pre)) {
              best = r;
              best_post = post;
              best_pre = pre;
            }
          }
          std::size_t i = remaining[best];
          remaining.erase(remaining.begin() + best);
          acc.insert(out_scope[i].begin(), out_scope[i].end());
          note_scope(acc);
          VarSet live = needed;
          for (std::size_t q : remaining) live.insert(out_scope[q].begin(), out_scope[q].end());
          acc = sweep(std::move(acc), live);
          order.push_back(i);
        }

        std::vector<ExprPtr> ordered;
        ordered.reserve(n);
        for (std::size_t i : order) ordered.push_back(sim_terms[i]);
        auto out = std::make_shared<Expr>();
        out->kind = ExprKind::Product;
        out->terms = std::move(ordered);
        return {ExprPtr(out), acc};
      }
    }
    throw ModelError("unreachable expression kind");
  }
};

}  // namespace

QueryPlan order_products(const ExprPtr& e, const PlanContext& ctx) {
  Simulator sim(ctx);
  auto [rewritten, scope] = sim.run(e, ctx.needed);
  QueryPlan plan;
  plan.rewritten = rewritten;
  plan.elimination_order = std::move(sim.elimination);
  plan.stats.ast_size = count_nodes(rewritten);
  plan.stats.predicted_largest_scope = sim.largest;
  return plan;
}

// ---------------------------------------------------------------------------
// Plan dump

namespace {

std::string join_set(const std::set<std::string>& s) {
  std::string out;
  for (const auto& v : s) out += (out.empty() ? "" : ",") + v;
  return out;
}

std::string join_ints(const std::set<int>& s) {
  std::string out;
  for (int v : s) out += (out.empty() ? "" : ",") + std::to_string(v);
  return out;
}

void dump_rec(std::ostringstream& os, const ExprPtr& e, const PartitionScope& scope, int depth) {
  std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  std::set<int> req = scope.requirements(e);
  switch (e->kind) {
    case ExprKind::DistRef:
    case ExprKind::One:
      os << indent << print(e) << "  req={" << join_ints(req) << "}\n";
      return;
    case ExprKind::Product:
      os << indent << "product  req={" << join_ints(req) << "}\n";
      break;
    case ExprKind::Sum:
      os << indent << "sum  req={" << join_ints(req) << "}\n";
      break;
    case ExprKind::Difference:
      os << indent << "difference  req={" << join_ints(req) << "}\n";
      break;
  }
  for (const auto& t : e->terms) dump_rec(os, t, scope, depth + 1);
}

}  // namespace

std::string dump_plan(const QueryPlan& plan, const PartitionScope& scope, const PlanContext& ctx) {
  std::ostringstream os;
  os << "targets: " << join_set(ctx.needed) << "\n";
  for (const auto& [child, vars] : plan.subqueries) {
    os << "subquery child " << child << ": " << join_set(vars) << "\n";
  }
  os << "elimination order:";
  for (const auto& v : plan.elimination_order) os << " " << v;
  os << "\n";
  os << "predicted largest intermediate scope: " << plan.stats.predicted_largest_scope << "\n";
  os << "rewritten ast nodes: " << plan.stats.ast_size << "\n";
  dump_rec(os, plan.rewritten, scope, 0);
  return os.str();
}

}  // namespace spi
