#include "spi/engine.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

namespace spi {

namespace {

std::string leaf_key(const ExprPtr& e) { return print(e); }

std::string join(const std::set<std::string>& s, const char* sep = ",") {
  std::string out;
  for (const auto& v : s) out += (out.empty() ? "" : sep) + v;
  return out;
}

}  // namespace

Engine::Engine(const BeliefNetwork& net, const PartitionTree& tree, EngineOptions opts)
    : net_(net), view_(tree), opts_(opts) {
  auto diags = validate_partition_tree(net, tree);
  if (!diags.empty()) {
    std::string joined;
    for (const auto& d : diags) joined += "\n  " + d;
    throw ModelError("invalid partition tree:" + joined);
  }
}

void Engine::check_query(const Query& q) const {
  if (q.targets.empty()) throw EvalError("invalid query: no target variables");
  std::set<std::string> seen;
  for (const auto& t : q.targets) {
    if (!net_.has_variable(t)) throw EvalError("invalid query: unknown target '" + t + "'");
    if (!seen.insert(t).second) throw EvalError("invalid query: duplicate target '" + t + "'");
    if (q.evidence.count(t)) {
      throw EvalError("invalid query: target '" + t + "' is also observed");
    }
  }
  for (const auto& [var, value] : q.evidence) {
    if (!net_.has_variable(var)) throw EvalError("invalid query: unknown evidence variable '" + var + "'");
    if (!net_.variable(var).value_index(value)) {
      throw EvalError("invalid query: value '" + value + "' not in domain of '" + var + "'");
    }
  }
}

void Engine::note_factor(const Factor& f) {
  stats_.largest_intermediate_scope = std::max(stats_.largest_intermediate_scope, f.var_count());
  stats_.peak_cells = std::max(stats_.peak_cells, f.cells());
}

// Everything a partition evaluation needs before numbers flow: the composed
// term list, the leaf bindings, the pool of single-variable marginals, the
// subquery buckets, and the accumulated evidence mass of the children.
struct Engine::PartitionEval {
  std::vector<ExprPtr> terms;
  std::map<std::string, Factor> env;
  std::map<std::string, Factor> pool;
  std::map<int, std::set<std::string>> buckets;
  PartitionScope scope;
  double child_mass = 1.0;
  bool zero = false;  // evidence already contradicts this partition
};

Engine::PartitionEval Engine::prepare_partition(int part, const std::set<std::string>& requested,
                                                const std::map<std::string, std::string>& evidence) {
  const auto& node = view_.node(part);
  PartitionEval ev;
  ev.scope.local_vars = node.vars;

  std::set<std::string> below_req;
  std::set<std::string> involved;  // local nodes whose expressions participate
  for (const auto& v : requested) {
    if (node.vars.count(v)) {
      involved.insert(v);
    } else {
      below_req.insert(v);
    }
  }
  for (const auto& v : node.vars) {
    if (evidence.count(v)) involved.insert(v);
  }
  // Close over partition-local conditioning.
  std::vector<std::string> frontier(involved.begin(), involved.end());
  while (!frontier.empty()) {
    std::string v = frontier.back();
    frontier.pop_back();
    for (const auto& p : net_.parents_of(v)) {
      if (node.vars.count(p) && involved.insert(p).second) frontier.push_back(p);
    }
  }

  std::set<std::string> external = below_req;
  for (const auto& v : involved) {
    for (const auto& p : net_.parents_of(v)) {
      if (!node.vars.count(p)) external.insert(p);
    }
  }
  ev.buckets = child_requirements(view_, part, external);

  // Children holding evidence but no requested information still condition
  // the result's mass; query them for their evidence weight alone.
  for (std::size_t slot = 0; slot < node.children.size(); ++slot) {
    int child = node.children[slot];
    if (ev.buckets.count(static_cast<int>(slot))) continue;
    for (const auto& [var, value] : evidence) {
      int home = view_.partition_of(var);
      if (home >= 0 && view_.in_subtree(home, child)) {
        ev.buckets[static_cast<int>(slot)] = {};
        break;
      }
    }
  }

  for (const auto& [slot, vars] : ev.buckets) {
    for (const auto& v : vars) ev.scope.var_to_child[v] = slot;
  }

  // Subqueries, one joint per child bucket.
  for (const auto& [slot, vars] : ev.buckets) {
    int child = view_.node(part).children[static_cast<std::size_t>(slot)];
    auto key = std::make_pair(child, vars);
    auto hit = cache_.find(key);
    Factor r{1.0};
    if (hit != cache_.end()) {
      r = hit->second;
    } else {
      r = eval_partition(child, vars, evidence);
      stats_.subquery_count++;
      cache_.emplace(key, r);
    }
    double m = total_mass(r);
    if (m <= 0.0) {
      ev.zero = true;
      return ev;
    }
    ev.child_mass *= m;
    if (vars.empty()) continue;
    Factor rn = normalize(r);
    if (vars.size() == 1 && !requested.count(*vars.begin())) {
      ev.pool.emplace(*vars.begin(), rn.with_name("q_" + *vars.begin()));
    } else {
      std::vector<ValueSet> conditioned;
      for (const auto& v : vars) conditioned.push_back({v, net_.variable(v).domain});
      ExprPtr leaf = Expr::dist_ref("q" + std::to_string(slot) + "_" + join(vars, "_"),
                                    std::move(conditioned), {});
      ev.env.emplace(leaf_key(leaf), rn);
      ev.terms.push_back(leaf);
    }
  }

  // Local model terms.
  for (const auto& v : involved) {
    const LocalModel& m = net_.model(v);
    bool is_root = net_.parents_of(v).empty();
    if (m.kind == LocalModel::Kind::Cpt) {
      if (is_root && !requested.count(v) && !evidence.count(v)) {
        ev.pool.emplace(v, normalize(m.cpt));
        continue;
      }
      ExprPtr leaf = local_expression(net_, v);
      ev.env.emplace(leaf_key(leaf), m.cpt);
      ev.terms.push_back(leaf);
    } else {
      ExprPtr expr = prefix_leaves(m.expr, v);
      auto pruned = prune_for_evidence(expr, evidence);
      if (!pruned) {
        ev.zero = true;
        return ev;
      }
      expr = *pruned;
      // Bind every distribution leaf from the node's parameter values.
      std::function<void(const ExprPtr&)> bind = [&](const ExprPtr& e) {
        if (e->kind == ExprKind::DistRef) {
          std::string raw = e->name.substr(v.size() + 1);
          auto it = m.bindings.find(raw);
          if (it == m.bindings.end()) {
            throw EvalError("missing binding '" + raw + "' for node '" + v + "'");
          }
          ev.env.emplace(leaf_key(e), leaf_factor(*e, it->second, net_.variable_map()));
          return;
        }
        for (const auto& t : e->terms) bind(t);
      };
      bind(expr);
      ev.terms.push_back(expr);
    }
  }

  // Evidence indicators for observed locals.
  for (const auto& [var, value] : evidence) {
    if (!node.vars.count(var)) continue;
    ExprPtr leaf = Expr::dist_ref("ev_" + var, {{var, {value}}}, {});
    ev.env.emplace(leaf_key(leaf), indicator(net_.variable(var), value, opts_.indicator_weight));
    ev.terms.push_back(leaf);
  }
  return ev;
}

Factor Engine::eval_partition(int part, const std::set<std::string>& requested,
                              const std::map<std::string, std::string>& evidence) {
  PartitionEval ev = prepare_partition(part, requested, evidence);
  if (ev.zero) return Factor(0.0, "zero");
  if (ev.terms.empty()) {
    // Nothing to evaluate here; the child masses are the whole story.
    return Factor(ev.child_mass, "mass");
  }

  ExprPtr top = ev.terms.size() == 1 ? ev.terms[0] : Expr::product(ev.terms);
  top = distribute(top, ev.scope, opts_.rewrite_node_budget);

  PlanContext pctx;
  pctx.needed = requested;
  for (const auto& [v, f] : ev.pool) pctx.pool_vars.insert(v);
  QueryPlan plan = order_products(top, pctx);
  stats_.ast_size += plan.stats.ast_size;

  Factor f = eval_expr(plan.rewritten, requested, ev.env, ev.pool);
  f = apply_kills(std::move(f), requested, ev.pool);
  if (ev.child_mass != 1.0) {
    std::vector<double> table = f.table();
    for (double& x : table) x *= ev.child_mass;
    f = Factor(f.name(), f.scope(), std::move(table));
  }
  return f;
}

Factor Engine::apply_kills(Factor f, const std::set<std::string>& live,
                           const std::map<std::string, Factor>& pool) {
  std::set<std::string> dead;
  for (const auto& e : f.scope()) {
    if (!live.count(e.var.name)) dead.insert(e.var.name);
  }
  if (dead.empty()) return f;
  for (const auto& v : dead) {
    auto it = pool.find(v);
    if (it != pool.end()) {
      f = conformal_product(f, it->second);
      stats_.multiplications += f.cells();
      note_factor(f);
    }
  }
  std::size_t before = f.cells();
  f = sum_out(f, dead);
  stats_.additions += before - f.cells();
  return f;
}

Factor Engine::eval_expr(const ExprPtr& e, const std::set<std::string>& needed,
                         const std::map<std::string, Factor>& env,
                         const std::map<std::string, Factor>& pool) {
  switch (e->kind) {
    case ExprKind::DistRef: {
      auto it = env.find(leaf_key(e));
      if (it == env.end()) throw EvalError("unbound distribution leaf " + print(e));
      note_factor(it->second);
      return apply_kills(it->second, needed, pool);
    }
    case ExprKind::One: {
      Factor f = one_factor(*e, net_.variable_map());
      note_factor(f);
      return apply_kills(std::move(f), needed, pool);
    }
    case ExprKind::Sum:
    case ExprKind::Difference: {
      CombineOp op = e->kind == ExprKind::Sum ? CombineOp::Add : CombineOp::Subtract;
      std::vector<Factor> operands;
      operands.reserve(e->terms.size());
      for (const auto& t : e->terms) operands.push_back(eval_expr(t, needed, env, pool));
      return apply_kills(combine_additive(op, std::move(operands)), needed, pool);
    }
    case ExprKind::Product: {
      std::vector<ExprPtr> terms;
      flatten_product_terms(e, terms);
      return eval_product(terms, needed, env, pool);
    }
  }
  throw EvalError("unreachable expression kind");
}

void Engine::flatten_product_terms(const ExprPtr& e, std::vector<ExprPtr>& out) {
  for (const auto& t : e->terms) {
    if (t->kind == ExprKind::Product) {
      flatten_product_terms(t, out);
    } else {
      out.push_back(t);
    }
  }
}

Factor Engine::combine_additive(CombineOp op, std::vector<Factor> operands) {
  Factor acc = std::move(operands[0]);
  for (std::size_t i = 1; i < operands.size(); ++i) {
    CombineReport report;
    acc = pointwise_combine(op, acc, operands[i], &report);
    stats_.additions += acc.cells();
    note_factor(acc);
    if (report.negative_entries > 0) {
      stats_.negative_clamps += report.negative_entries;
      std::ostringstream os;
      os << "difference produced " << report.negative_entries << " negative entries (worst "
         << report.most_negative << "); clamped to zero, the model may be incoherent";
      warnings_.push_back(os.str());
    }
  }
  return acc;
}

// Evaluates a conformal product of terms. An additive term that shares
// variables headed for summation with other terms is not reduced to a table
// first: the sharing terms are pushed into its branches so each branch can
// sum those variables out independently. This is what keeps evaluation
// linear in shared antecedents even though the rewritten expression keeps
// such factors outside the additive node.
Factor Engine::eval_product(const std::vector<ExprPtr>& input,
                            const std::set<std::string>& needed,
                            const std::map<std::string, Factor>& env,
                            const std::map<std::string, Factor>& pool) {
  std::vector<ExprPtr> pending = input;
  std::vector<Factor> ready;

  // Push siblings into additive terms while some additive term would
  // otherwise be reduced to a wide table: a term whose surviving dimension
  // count crosses the threshold pulls the whole chain of terms connected to
  // it through to-be-summed variables into its branches, so each branch can
  // sum them out independently. Narrow additive terms are just reduced to
  // small tables; the greedy accumulation below sums their variables at the
  // right moment without any replication.
  constexpr std::size_t kPushWidth = 5;
  while (true) {
    std::size_t n = pending.size();
    std::vector<std::set<std::string>> refs(n), dead(n);
    for (std::size_t i = 0; i < n; ++i) {
      refs[i] = referenced_variables(pending[i]);
      for (const auto& v : refs[i]) {
        if (!needed.count(v)) dead[i].insert(v);
      }
    }
    // Width of a standalone reduction: dimensions that other terms or the
    // caller keep alive.
    std::vector<std::size_t> width(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::string> outside = needed;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) outside.insert(refs[j].begin(), refs[j].end());
      }
      for (const auto& f : ready) {
        for (const auto& se : f.scope()) outside.insert(se.var.name);
      }
      for (const auto& v : refs[i]) {
        if (outside.count(v)) ++width[i];
      }
    }
    std::vector<std::size_t> comp(n);
    for (std::size_t i = 0; i < n; ++i) comp[i] = i;
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
      while (comp[x] != x) x = comp[x] = comp[comp[x]];
      return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        bool linked = false;
        for (const auto& v : dead[i]) linked = linked || dead[j].count(v) > 0;
        if (linked) comp[find(i)] = find(j);
      }
    }

    // First multi-term component with an additive member.
    std::size_t target = n;
    std::vector<std::size_t> members;
    std::set<std::size_t> roots_seen;
    for (std::size_t i = 0; i < n && target == n; ++i) {
      if (!roots_seen.insert(find(i)).second) continue;
      std::vector<std::size_t> group;
      for (std::size_t j = 0; j < n; ++j) {
        if (find(j) == find(i)) group.push_back(j);
      }
      if (group.size() < 2) continue;
      std::size_t best = n;
      for (std::size_t j : group) {
        if (!pending[j]->is_additive() || width[j] < kPushWidth) continue;
        if (best == n || dead[j].size() > dead[best].size() ||
            (dead[j].size() == dead[best].size() && refs[j].size() > refs[best].size())) {
          best = j;
        }
      }
      if (best != n) {
        target = best;
        members = group;
      }
    }
    if (target == n) break;

    std::vector<ExprPtr> partners;
    for (std::size_t j : members) {
      if (j != target) partners.push_back(pending[j]);
    }
    ExprPtr node = pending[target];
    {
      std::set<std::size_t> drop(members.begin(), members.end());
      std::vector<ExprPtr> rest;
      for (std::size_t j = 0; j < n; ++j) {
        if (!drop.count(j)) rest.push_back(pending[j]);
      }
      pending = std::move(rest);
    }
    std::set<std::string> needed_rest = needed;
    for (const auto& t : pending) {
      auto r = referenced_variables(t);
      needed_rest.insert(r.begin(), r.end());
    }
    for (const auto& f : ready) {
      for (const auto& se : f.scope()) needed_rest.insert(se.var.name);
    }

    CombineOp op = node->kind == ExprKind::Sum ? CombineOp::Add : CombineOp::Subtract;
    std::vector<Factor> branches;
    branches.reserve(node->terms.size());
    for (const auto& b : node->terms) {
      std::vector<ExprPtr> sub{b};
      sub.insert(sub.end(), partners.begin(), partners.end());
      std::vector<ExprPtr> flat;
      for (const auto& t : sub) {
        if (t->kind == ExprKind::Product) {
          flatten_product_terms(t, flat);
        } else {
          flat.push_back(t);
        }
      }
      branches.push_back(eval_product(flat, needed_rest, env, pool));
    }
    Factor combined = combine_additive(op, std::move(branches));
    ready.push_back(apply_kills(std::move(combined), needed_rest, pool));
  }

  // Reduce the remaining expression terms to tables.
  for (std::size_t i = 0; i < pending.size(); ++i) {
    std::set<std::string> needed_i = needed;
    for (std::size_t j = 0; j < pending.size(); ++j) {
      if (j != i) {
        auto r = referenced_variables(pending[j]);
        needed_i.insert(r.begin(), r.end());
      }
    }
    for (const auto& f : ready) {
      for (const auto& se : f.scope()) needed_i.insert(se.var.name);
    }
    ready.push_back(eval_expr(pending[i], needed_i, env, pool));
  }
  if (ready.empty()) return Factor(1.0);

  // Greedy accumulation: the factor whose merge leaves the smallest scope
  // after dead variables are summed away goes next.
  std::vector<std::size_t> remaining(ready.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
  auto scope_vars = [](const Factor& f) {
    std::set<std::string> s;
    for (const auto& se : f.scope()) s.insert(se.var.name);
    return s;
  };
  std::optional<Factor> acc;
  std::set<std::string> acc_scope;
  while (!remaining.empty()) {
    std::size_t best_r = 0;
    std::size_t best_post = 0, best_pre = 0;
    for (std::size_t r = 0; r < remaining.size(); ++r) {
      std::set<std::string> merged = acc_scope;
      auto ts = scope_vars(ready[remaining[r]]);
      merged.insert(ts.begin(), ts.end());
      std::set<std::string> live = needed;
      for (std::size_t q = 0; q < remaining.size(); ++q) {
        if (q == r) continue;
        auto qs = scope_vars(ready[remaining[q]]);
        live.insert(qs.begin(), qs.end());
      }
      std::size_t post = 0;
      for (const auto& v : merged) {
        if (live.count(v)) ++post;
      }
      if (r == 0 || post < best_post || (post == best_post && merged.size() < best_pre)) {
        best_r = r;
        best_post = post;
        best_pre = merged.size();
      }
    }
    std::size_t pick = remaining[best_r];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_r));
    if (!acc) {
      acc = ready[pick];
    } else {
      acc = conformal_product(*acc, ready[pick]);
      stats_.multiplications += acc->cells();
      note_factor(*acc);
    }
    std::set<std::string> live = needed;
    for (std::size_t q : remaining) {
      auto qs = scope_vars(ready[q]);
      live.insert(qs.begin(), qs.end());
    }
    acc = apply_kills(std::move(*acc), live, pool);
    acc_scope = scope_vars(*acc);
  }
  return *acc;
}

Factor Engine::query_marginal(const Query& q) {
  check_query(q);
  stats_ = EvalStats{};
  warnings_.clear();
  cache_.clear();

  std::set<std::string> targets(q.targets.begin(), q.targets.end());
  Factor f = eval_partition(0, targets, q.evidence);

  if (total_mass(f) <= 0.0) {
    throw EvalError("zero-mass evidence: the observed values have probability zero");
  }
  if (!q.evidence.empty()) f = normalize(f);

  // Canonical output: full domains, scope sorted by variable name.
  std::vector<Variable> domains;
  for (const auto& t : targets) domains.push_back(net_.variable(t));
  f = zero_extend(f, domains);
  std::vector<std::string> order(targets.begin(), targets.end());
  return reorder_scope(f, order).with_name("p(" + join(targets) + ")");
}

Engine::RootPlan Engine::plan_root(const Query& q) {
  check_query(q);
  stats_ = EvalStats{};
  warnings_.clear();
  cache_.clear();

  std::set<std::string> targets(q.targets.begin(), q.targets.end());
  PartitionEval ev = prepare_partition(0, targets, q.evidence);
  RootPlan out;
  out.scope = ev.scope;
  out.context.needed = targets;
  for (const auto& [v, f] : ev.pool) out.context.pool_vars.insert(v);
  if (ev.zero || ev.terms.empty()) {
    out.plan.rewritten = Expr::one({{q.targets.front(), {net_.variable(q.targets.front()).domain[0]}}});
    return out;
  }
  ExprPtr top = ev.terms.size() == 1 ? ev.terms[0] : Expr::product(ev.terms);
  top = distribute(top, ev.scope, opts_.rewrite_node_budget);
  out.plan = order_products(top, out.context);
  for (const auto& [slot, vars] : ev.buckets) out.plan.subqueries.emplace_back(slot, vars);
  return out;
}

std::vector<std::pair<int, std::set<std::string>>> generate_subqueries(const QueryPlan& plan) {
  return plan.subqueries;
}

Factor evaluate_unfactored(const ExprPtr& e, const std::map<std::string, Factor>& env,
                           const std::map<std::string, Factor>& pool,
                           const std::set<std::string>& keep,
                           const std::map<std::string, Variable>& vars) {
  std::function<Factor(const ExprPtr&)> rec = [&](const ExprPtr& n) -> Factor {
    switch (n->kind) {
      case ExprKind::DistRef: {
        auto it = env.find(leaf_key(n));
        if (it == env.end()) throw EvalError("unbound distribution leaf " + print(n));
        return it->second;
      }
      case ExprKind::One:
        return one_factor(*n, vars);
      case ExprKind::Product: {
        Factor acc = rec(n->terms[0]);
        for (std::size_t i = 1; i < n->terms.size(); ++i) {
          acc = conformal_product(acc, rec(n->terms[i]));
        }
        return acc;
      }
      case ExprKind::Sum:
      case ExprKind::Difference: {
        CombineOp op = n->kind == ExprKind::Sum ? CombineOp::Add : CombineOp::Subtract;
        Factor acc = rec(n->terms[0]);
        for (std::size_t i = 1; i < n->terms.size(); ++i) {
          acc = pointwise_combine(op, acc, rec(n->terms[i]));
        }
        return acc;
      }
    }
    throw EvalError("unreachable expression kind");
  };

  Factor full = rec(e);
  for (const auto& [v, m] : pool) {
    if (full.has_var(v)) full = conformal_product(full, m);
  }
  std::set<std::string> drop;
  for (const auto& se : full.scope()) {
    if (!keep.count(se.var.name)) drop.insert(se.var.name);
  }
  return sum_out(full, drop);
}

}  // namespace spi
