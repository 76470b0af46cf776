// Acceptance suite: one checked criterion per section, one PASS/FAIL line
// each, nonzero exit if anything fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <iomanip>
#include <random>
#include <sstream>
#include <vector>

#include "spi/engine.hpp"
#include "spi/network.hpp"
#include "spi/oracle.hpp"
#include "spi/partition.hpp"
#include "spi/rewrite.hpp"
#include "testutil.hpp"

using namespace spi;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail = "") {
  std::printf("%s criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  if (!ok) ++failures;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// --- 1: the worked normalization table, bitwise for these decimals ---------

void criterion_1() {
  Variable D{"D", {"t", "f"}}, A{"A", {"t", "f"}};
  Factor one("1", {ScopeEntry::from_labels(D, {"t"})}, {1.0});
  Factor c("c", {ScopeEntry::from_labels(D, {"t"}), ScopeEntry::from_labels(A, {"t"})}, {0.7});
  std::map<std::string, Factor> marginals{{"A", Factor("p_A", {ScopeEntry::full(A)}, {0.1, 0.9})}};

  additive_combine(CombineOp::Subtract, one, c, marginals);  // warm
  auto t0 = std::chrono::steady_clock::now();
  Factor r = additive_combine(CombineOp::Subtract, one, c, marginals);
  auto t1 = std::chrono::steady_clock::now();
  double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  bool ok = close(r.value_at({{"D", "t"}, {"A", "t"}}), 0.03, 1e-15) &&
            close(r.value_at({{"D", "t"}, {"A", "f"}}), 0.9, 1e-15) &&
            r.value_at({{"D", "f"}, {"A", "t"}}) == 0.0 &&
            r.value_at({{"D", "f"}, {"A", "f"}}) == 0.0 && ms < 1.0;
  std::ostringstream os;
  os << "result (" << r.value_at({{"D", "t"}, {"A", "t"}}) << ", "
     << r.value_at({{"D", "t"}, {"A", "f"}}) << "), " << ms << " ms";
  report(1, "normalization table reproduction", ok, os.str());
}

// --- 2: noisy-or expression vs closed form ----------------------------------

std::map<std::string, Factor> bind_env(const ExprPtr& e, const ParameterBindings& bindings,
                                       const std::map<std::string, Variable>& vars) {
  std::map<std::string, Factor> env;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (n->kind == ExprKind::DistRef) {
      env.emplace(print(n), leaf_factor(*n, bindings.at(n->name), vars));
      return;
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return env;
}

void criterion_2() {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  bool ok = true;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    int n = trial % 10 + 1;
    std::map<std::string, Variable> vars{{"D", Variable{"D", {"t", "f"}}}};
    std::vector<Variable> parents;
    std::vector<double> params;
    for (int i = 0; i < n; ++i) {
      Variable p{"P" + std::to_string(i), {"t", "f"}};
      vars.emplace(p.name, p);
      parents.push_back(p);
      params.push_back(w(rng));
    }
    std::optional<double> leak;
    if (trial % 4 == 0) leak = w(rng);
    NoisyOrModel m = build_noisy_or(vars.at("D"), parents, params, leak);
    std::set<std::string> keep{"D"};
    for (const auto& p : parents) keep.insert(p.name);
    Factor expanded = evaluate_unfactored(m.expr, bind_env(m.expr, m.bindings, vars), {}, keep, vars);
    Factor closed = expand_noisy_or_to_cpt(vars.at("D"), parents, params, leak);
    ok = approx_equal(expanded, closed, 1e-12);
  }
  report(2, "noisy-or expression fidelity (100 random models, 1..10 parents)", ok);
}

// --- 3: oracle equivalence on random networks -------------------------------

void criterion_3() {
  std::mt19937 rng(3);
  bool ok = true;
  std::string failure;
  for (int trial = 0; trial < 200; ++trial) {
    std::string text = test::random_net_text(rng, 8, 3);
    BeliefNetwork net = load_network(text);
    Engine engine(net, build_default_partition_tree(net));
    test::RandomQuery q = test::random_query(rng, net);
    std::set<std::string> targets(q.targets.begin(), q.targets.end());

    bool oracle_zero = false;
    Factor expected(1.0);
    try {
      expected = brute_force_marginal(net, targets, q.evidence);
    } catch (const EvalError&) {
      oracle_zero = true;
    }
    try {
      Factor got = engine.query_marginal({q.targets, q.evidence});
      if (oracle_zero || !approx_equal(got, expected, 1e-9)) {
        ok = false;
        failure = "trial " + std::to_string(trial);
        break;
      }
    } catch (const EvalError&) {
      if (!oracle_zero) {
        ok = false;
        failure = "trial " + std::to_string(trial) + " raised unexpectedly";
        break;
      }
    }
  }
  report(3, "oracle equivalence (200 random networks)", ok, failure);
}

// --- 4: rewrite value preservation and the shared-antecedent grouping -------

std::map<std::string, Factor> bind_all(const BeliefNetwork& net, const ExprPtr& e) {
  std::map<std::string, Factor> env;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (n->kind == ExprKind::DistRef) {
      if (n->name.rfind("p_", 0) == 0) {
        env.emplace(print(n), net.model(n->name.substr(2)).cpt);
      } else {
        auto dot = n->name.find('.');
        std::string node = n->name.substr(0, dot);
        std::string param = n->name.substr(dot + 1);
        env.emplace(print(n),
                    leaf_factor(*n, net.model(node).bindings.at(param), net.variable_map()));
      }
      return;
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return env;
}

std::set<std::string> leaf_names(const ExprPtr& e) {
  std::set<std::string> out;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (n->is_leaf()) {
      out.insert(n->name);
      return;
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return out;
}

bool has_b_product_group(const ExprPtr& e) {
  bool found = false;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (found || n->is_leaf()) return;
    if (n->kind == ExprKind::Product && n->terms.size() == 2) {
      auto a = leaf_names(n->terms[0]);
      auto b = leaf_names(n->terms[1]);
      if ((a.count("D.c_B") && b.count("E.c_B")) || (a.count("E.c_B") && b.count("D.c_B"))) {
        found = true;
        return;
      }
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return found;
}

void criterion_4() {
  bool ok = true;
  std::string detail;

  // Randomized corpus: distributing never changes the function of the leaves.
  std::mt19937 rng(4);
  for (int trial = 0; trial < 60 && ok; ++trial) {
    BeliefNetwork net = load_network(test::random_net_text(rng, 6, 3));
    std::set<std::string> all;
    for (const auto& v : net.variables()) all.insert(v.name);
    // Pretend every variable lives in its own child: maximal grouping.
    PartitionScope scope;
    int slot = 0;
    std::set<std::string> sinks = all;
    for (const auto& v : net.variables()) {
      for (const auto& p : net.parents_of(v.name)) sinks.erase(p);
    }
    for (const auto& v : all) {
      if (!sinks.count(v)) scope.var_to_child.emplace(v, slot++);
    }
    scope.local_vars = sinks;
    ExprPtr composed = compose(net, all, all);
    ExprPtr rewritten = distribute(composed, scope);
    auto env = bind_all(net, composed);
    Factor direct = evaluate_unfactored(composed, env, {}, all, net.variable_map());
    Factor dist = evaluate_unfactored(rewritten, env, {}, all, net.variable_map());
    if (!approx_equal(direct, dist, 1e-9)) {
      ok = false;
      detail = "value drift on trial " + std::to_string(trial);
    }
  }

  // The worked composition: value preserved and the B terms grouped.
  BeliefNetwork pair = load_network(test::kNoisyOrPairNet);
  PartitionScope scope;
  scope.local_vars = {"D", "E"};
  scope.var_to_child = {{"A", 0}, {"B", 1}, {"C", 2}};
  ExprPtr composed = compose(pair, {"D", "E"}, {"D", "E"});
  ExprPtr rewritten = distribute(composed, scope);
  auto env = bind_all(pair, composed);
  std::set<std::string> all{"A", "B", "C", "D", "E"};
  if (!approx_equal(evaluate_unfactored(composed, env, {}, all, pair.variable_map()),
                    evaluate_unfactored(rewritten, env, {}, all, pair.variable_map()), 1e-9)) {
    ok = false;
    detail = "worked composition value drift";
  }
  if (!has_b_product_group(rewritten)) {
    ok = false;
    detail = "shared-antecedent terms not grouped";
  }
  report(4, "rewrite value preservation and structural grouping", ok, detail);
}

// --- 5: noisy-or scaling ----------------------------------------------------

std::string star_net(int n, bool as_cpt, unsigned seed) {
  std::mt19937 rng(seed);
  std::ostringstream os;
  os << std::setprecision(17);
  os << "var D : t,f\n";
  std::vector<double> priors, weights;
  for (int i = 1; i <= n; ++i) {
    os << "var P" << i << " : t,f\n";
    priors.push_back(test::index_prob(rng));
    weights.push_back(test::index_prob(rng));
  }
  for (int i = 1; i <= n; ++i) {
    os << "cpt P" << i << " | { " << priors[i - 1u] << " " << 1 - priors[i - 1u] << " }\n";
  }
  if (as_cpt) {
    os << "cpt D |";
    for (int i = 1; i <= n; ++i) os << " P" << i;
    os << " {\n";
    std::size_t rows = std::size_t{1} << n;
    for (std::size_t row = 0; row < rows; ++row) {
      double fail = 1.0;
      for (int i = 0; i < n; ++i) {
        if (((row >> (n - 1 - i)) & 1) == 0) fail *= 1.0 - weights[static_cast<std::size_t>(i)];
      }
      os << 1 - fail << " " << fail << "\n";
    }
    os << "}\n";
  } else {
    os << "noisyor D |";
    for (int i = 1; i <= n; ++i) os << " P" << i << ":" << weights[i - 1u];
    os << "\n";
  }
  return os.str();
}

void criterion_5() {
  bool ok = true;
  std::string detail;
  std::map<int, std::size_t> mults;
  for (int n : {4, 8, 16}) {
    BeliefNetwork net = load_network(star_net(n, false, 5));
    Engine engine(net, build_default_partition_tree(net));
    Factor d = engine.query_marginal({{"D"}, {}});
    if (n <= 8 && !approx_equal(d, brute_force_marginal(net, {"D"}, {}), 1e-9)) {
      ok = false;
      detail = "posterior mismatch at n=" + std::to_string(n);
    }
    if (engine.last_stats().largest_intermediate_scope > 2) {
      ok = false;
      detail = "intermediate scope " +
               std::to_string(engine.last_stats().largest_intermediate_scope) + " at n=" +
               std::to_string(n);
    }
    mults[n] = engine.last_stats().multiplications;
  }
  double ratio = static_cast<double>(mults[16]) / static_cast<double>(mults[8]);
  if (ratio > 2.5) {
    ok = false;
    detail = "multiplication ratio " + std::to_string(ratio);
  }

  // Contrast: the explicit-table encoding at least doubles peak cells per
  // added parent.
  std::map<int, std::size_t> cells;
  for (int n : {4, 5, 6}) {
    BeliefNetwork net = load_network(star_net(n, true, 5));
    Engine engine(net, build_default_partition_tree(net));
    engine.query_marginal({{"D"}, {}});
    cells[n] = engine.last_stats().peak_cells;
  }
  if (static_cast<double>(cells[5]) / static_cast<double>(cells[4]) < 2.0 ||
      static_cast<double>(cells[6]) / static_cast<double>(cells[5]) < 2.0) {
    ok = false;
    detail = "full-table peak cells did not double";
  }
  std::ostringstream os;
  os << "mults(16)/mults(8) = " << ratio;
  report(5, "noisy-or evaluation is linear in independent causes", ok,
         detail.empty() ? os.str() : detail);
}

// --- 6: two-level noisy-or diagnosis behavior -------------------------------

// Four diseases, six findings, three disease parents per finding.
std::string bn2o_net() {
  std::ostringstream os;
  for (int d = 1; d <= 4; ++d) os << "var D" << d << " : t,f\n";
  for (int f = 1; f <= 6; ++f) os << "var F" << f << " : t,f\n";
  const double priors[4] = {0.05, 0.1, 0.15, 0.2};
  for (int d = 1; d <= 4; ++d) {
    os << "cpt D" << d << " | { " << priors[d - 1] << " " << 1 - priors[d - 1] << " }\n";
  }
  const int parents[6][3] = {{1, 2, 3}, {2, 3, 4}, {1, 3, 4}, {1, 2, 4}, {1, 2, 3}, {2, 3, 4}};
  const double weights[6][3] = {{0.6, 0.5, 0.4}, {0.7, 0.3, 0.5}, {0.45, 0.55, 0.65},
                                {0.35, 0.6, 0.5}, {0.5, 0.4, 0.7}, {0.55, 0.65, 0.35}};
  for (int f = 1; f <= 6; ++f) {
    os << "noisyor F" << f << " |";
    for (int k = 0; k < 3; ++k) {
      os << " D" << parents[f - 1][k] << ":" << weights[f - 1][k];
    }
    os << " leak:0.02\n";
  }
  return os.str();
}

void criterion_6() {
  BeliefNetwork net = load_network(bn2o_net());
  PartitionTree tree = build_default_partition_tree(net);
  bool ok = true;
  std::string detail;

  // (a) all findings negative; (b) a mixed set.
  std::map<std::string, std::string> all_negative, mixed;
  for (int f = 1; f <= 6; ++f) all_negative["F" + std::to_string(f)] = "f";
  mixed = {{"F1", "t"}, {"F2", "t"}, {"F3", "t"}, {"F4", "f"}, {"F5", "f"}, {"F6", "f"}};
  for (const auto& evidence : {all_negative, mixed}) {
    for (int d = 1; d <= 4 && ok; ++d) {
      std::string name = "D" + std::to_string(d);
      Engine engine(net, tree);
      Factor got = engine.query_marginal({{name}, evidence});
      Factor expected = brute_force_marginal(net, {name}, evidence);
      if (!approx_equal(got, expected, 1e-9)) {
        ok = false;
        detail = "posterior mismatch for " + name;
      }
    }
  }

  // Expression growth: multiplicative in positives, flat in negatives.
  auto ast_for = [&](int positives, int negatives) {
    std::map<std::string, std::string> evidence;
    for (int f = 1; f <= positives; ++f) evidence["F" + std::to_string(f)] = "t";
    for (int f = 4; f < 4 + negatives; ++f) evidence["F" + std::to_string(f)] = "f";
    Engine engine(net, tree);
    engine.query_marginal({{"D1"}, evidence});
    return static_cast<double>(engine.last_stats().ast_size);
  };

  double p1 = ast_for(1, 3), p2 = ast_for(2, 3), p3 = ast_for(3, 3);
  if (p2 / p1 < 1.5 || p3 / p2 < 1.5) {
    ok = false;
    detail = "positive-finding growth " + std::to_string(p2 / p1) + ", " + std::to_string(p3 / p2);
  }
  double n1 = ast_for(3, 1), n2 = ast_for(3, 2), n3 = ast_for(3, 3);
  if (n2 / n1 > 1.1 || n3 / n2 > 1.1) {
    ok = false;
    detail = "negative-finding growth " + std::to_string(n2 / n1) + ", " + std::to_string(n3 / n2);
  }
  std::ostringstream os;
  os << "pos growth " << p2 / p1 << ", " << p3 / p2 << "; neg growth " << n2 / n1 << ", "
     << n3 / n2;
  report(6, "two-level noisy-or diagnosis matches the oracle and Quickscore scaling", ok,
         detail.empty() ? os.str() : detail);
}

// --- 7: six-node dimensionality ----------------------------------------------

void criterion_7() {
  BeliefNetwork net = load_network(test::kSixNodeNet);
  Engine engine(net, build_default_partition_tree(net));
  engine.query_marginal({{"D"}, {}});
  std::size_t scope = engine.last_stats().largest_intermediate_scope;
  report(7, "six-node query peaks at four-variable intermediates", scope == 4,
         "largest scope " + std::to_string(scope));
}

// --- 8: parser round trip ----------------------------------------------------

ExprPtr random_expr(std::mt19937& rng, int depth) {
  static const std::vector<std::string> vars{"A", "B", "C", "D"};
  static const std::vector<std::string> values{"t", "f"};
  std::uniform_int_distribution<int> coin(0, 1);
  auto subspace = [&](int max_groups) {
    std::vector<ValueSet> groups;
    int k = std::uniform_int_distribution<int>(1, max_groups)(rng);
    std::vector<std::string> pool = vars;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < k; ++i) {
      std::vector<std::string> vals =
          coin(rng) ? std::vector<std::string>{values[static_cast<std::size_t>(coin(rng))]}
                    : values;
      groups.push_back({pool[static_cast<std::size_t>(i)], vals});
    }
    return groups;
  };
  if (depth == 0 || std::uniform_int_distribution<int>(0, 3)(rng) == 0) {
    if (coin(rng)) return Expr::one(subspace(1));
    auto conditioned = subspace(2);
    std::set<std::string> used;
    for (const auto& g : conditioned) used.insert(g.var);
    std::vector<ValueSet> conditioning;
    if (coin(rng)) {
      for (auto& g : subspace(2)) {
        if (!used.count(g.var)) conditioning.push_back(g);
      }
    }
    return Expr::dist_ref(coin(rng) ? "c" : "p_1", conditioned, conditioning);
  }
  int k = std::uniform_int_distribution<int>(2, 4)(rng);
  std::vector<ExprPtr> terms;
  for (int i = 0; i < k; ++i) terms.push_back(random_expr(rng, depth - 1));
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: return Expr::sum(std::move(terms));
    case 1: return Expr::difference(std::move(terms));
    default: return Expr::product(std::move(terms));
  }
}

void criterion_8() {
  std::mt19937 rng(8);
  bool ok = true;
  for (int i = 0; i < 1000 && ok; ++i) {
    ExprPtr e = random_expr(rng, 3);
    ok = structurally_equal(parse(print(e)), e);
  }
  report(8, "parser round-trips 1000 random expressions", ok);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (failures == 0) {
    std::printf("all criteria passed\n");
  } else {
    std::printf("%d criteria failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
