#include "doctest.h"

#include <functional>
#include <random>

#include "spi/engine.hpp"
#include "spi/rewrite.hpp"
#include "testutil.hpp"

using namespace spi;

namespace {

// Child slots 0,1,2 for A,B,C with D,E local: the root partition of the
// noisy-or pair net.
PartitionScope pair_scope() {
  PartitionScope s;
  s.local_vars = {"D", "E"};
  s.var_to_child = {{"A", 0}, {"B", 1}, {"C", 2}};
  return s;
}

TermInfo term(const std::string& text, const PartitionScope& scope) {
  return make_term_info(parse(text), scope);
}

// Collects the distribution names referenced in a subtree.
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

// True iff somewhere in the tree a product node holds exactly the two
// single-antecedent differences that share variable B.
bool has_b_product_group(const ExprPtr& e) {
  bool found = false;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (found || n->is_leaf()) return;
    if (n->kind == ExprKind::Product && n->terms.size() == 2) {
      auto names0 = leaf_names(n->terms[0]);
      auto names1 = leaf_names(n->terms[1]);
      bool left = names0.count("D.c_B") && n->terms[0]->kind == ExprKind::Difference &&
                  referenced_variables(n->terms[0]) == std::set<std::string>{"D", "B"};
      bool right = names1.count("E.c_B") && n->terms[1]->kind == ExprKind::Difference &&
                   referenced_variables(n->terms[1]) == std::set<std::string>{"E", "B"};
      bool swapped = names1.count("D.c_B") && names0.count("E.c_B");
      if ((left && right) || swapped) {
        found = true;
        return;
      }
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return found;
}

std::map<std::string, Factor> bind_all(const BeliefNetwork& net, const ExprPtr& e) {
  std::map<std::string, Factor> env;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
    if (n->kind == ExprKind::DistRef) {
      if (n->name.rfind("p_", 0) == 0) {
        env.emplace(print(n), net.model(n->name.substr(2)).cpt);
        return;
      }
      auto dot = n->name.find('.');
      REQUIRE(dot != std::string::npos);
      std::string node = n->name.substr(0, dot);
      std::string param = n->name.substr(dot + 1);
      env.emplace(print(n),
                  leaf_factor(*n, net.model(node).bindings.at(param), net.variable_map()));
      return;
    }
    for (const auto& t : n->terms) walk(t);
  };
  walk(e);
  return env;
}

}  // namespace

TEST_CASE("compose multiplies the local expressions of the targets") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  ExprPtr e = compose(net, {"D", "E"}, {"D", "E"});
  REQUIRE(e->kind == ExprKind::Product);
  REQUIRE(e->terms.size() == 2);
  CHECK(e->terms[0]->kind == ExprKind::Sum);
  CHECK(leaf_names(e->terms[0]).count("D.c_A") == 1);
  CHECK(leaf_names(e->terms[1]).count("E.c_C") == 1);

  BeliefNetwork six = load_network(test::kSixNodeNet);
  ExprPtr d = compose(six, {"D"}, {"D"});
  REQUIRE(d->kind == ExprKind::DistRef);
  CHECK(d->name == "p_D");

  CHECK_THROWS_AS(compose(six, {"D"}, {"A"}), ModelError);
}

TEST_CASE("compose pulls in partition-local conditioning") {
  std::string text = R"(
var A : t,f
var B : t,f
cpt A | { 0.3 0.7 }
cpt B | A { 0.9 0.1  0.2 0.8 }
)";
  BeliefNetwork net = load_network(text);
  ExprPtr e = compose(net, {"A", "B"}, {"B"});
  REQUIRE(e->kind == ExprKind::Product);
  CHECK(leaf_names(e) == std::set<std::string>{"p_A", "p_B"});
}

TEST_CASE("group_terms builds connected components of overlapping requirements") {
  PartitionScope scope = pair_scope();

  std::vector<TermInfo> fig = {term("(+ x[D:t|A:t B:t] y[D:f|A:t B:t])", scope),
                               term("(+ x[E:t|B:t C:t] y[E:f|B:t C:t])", scope)};
  auto groups = group_terms(fig);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0] == std::vector<std::size_t>{0, 1});

  std::vector<TermInfo> disjoint = {term("x[D:t|A:t]", scope), term("y[E:t|C:t]", scope)};
  groups = group_terms(disjoint);
  REQUIRE(groups.size() == 2);

  PartitionScope four;
  four.local_vars = {"D"};
  four.var_to_child = {{"A", 1}, {"B", 2}, {"C", 3}, {"X", 4}};
  std::vector<TermInfo> three = {term("x[D:t|A:t B:t]", four), term("y[D:t|B:t C:t]", four),
                                 term("z[D:t|X:t]", four)};
  groups = group_terms(three);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0] == std::vector<std::size_t>{0, 1});
  CHECK(groups[1] == std::vector<std::size_t>{2});
}

TEST_CASE("separable matches the documented cases") {
  PartitionScope scope = pair_scope();
  std::set<int> group_children{0, 1, 2};

  // Product of two single-antecedent differences: separable both ways.
  TermInfo pd = term("(* (- 1[D:t] c[D:t|A:t]) (- 1[D:t] c[D:t|B:t]))", scope);
  CHECK(separable(pd, group_children, scope));

  // A lone distribution is atomic.
  TermInfo leaf = term("p[D:t,f|B:t,f C:t,f]", scope);
  CHECK_FALSE(separable(leaf, group_children, scope));

  // The known imperfection: no single distribution needs all three children,
  // so both halves count as separable even though distributing does not help.
  TermInfo note1 = term("(+ p[D:t|B:t C:t] q[E:t|A:t B:t])", scope);
  CHECK(separable(note1, {0, 1, 2}, scope));

  // A difference whose distribution covers everything the term needs.
  TermInfo covered = term("(- 1[D:t] c[D:t|B:t])", scope);
  CHECK_FALSE(separable(covered, {1}, scope));
  CHECK(separable(covered, group_children, scope));  // proper subset clause
}

TEST_CASE("distribute reproduces the noisy-or pair rewriting") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  ExprPtr composed = compose(net, {"D", "E"}, {"D", "E"});
  PartitionScope scope = pair_scope();
  ExprPtr rewritten = distribute(composed, scope);

  // The two differences sharing B end up inside one product group.
  CHECK(has_b_product_group(rewritten));

  // Value preservation: both forms are identical functions of the leaves.
  auto env = bind_all(net, composed);
  std::set<std::string> all{"A", "B", "C", "D", "E"};
  Factor direct = evaluate_unfactored(composed, env, {}, all, net.variable_map());
  Factor dist = evaluate_unfactored(rewritten, env, {}, all, net.variable_map());
  CHECK(approx_equal(direct, dist, 1e-9));
}

TEST_CASE("distribute leaves already-efficient forms alone") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  PartitionScope scope = pair_scope();

  // A single noisy-or expression: additive at the top, untouched.
  ExprPtr exp_d = compose(net, {"D", "E"}, {"D"});
  CHECK(structurally_equal(distribute(exp_d, scope), exp_d));

  // Terms with pairwise disjoint requirements never group.
  ExprPtr disjoint = parse("(* x[D:t|A:t] y[E:t|C:t])");
  CHECK(structurally_equal(distribute(disjoint, scope), disjoint));
}

TEST_CASE("a lone noisy-or stays untouched however many causes it has") {
  for (int n : {2, 4, 8, 16}) {
    std::ostringstream os;
    os << "var D : t,f\n";
    for (int i = 1; i <= n; ++i) os << "var P" << i << " : t,f\n";
    for (int i = 1; i <= n; ++i) os << "cpt P" << i << " | { 0.4 0.6 }\n";
    os << "noisyor D |";
    for (int i = 1; i <= n; ++i) os << " P" << i << ":0.5";
    os << "\n";
    BeliefNetwork net = load_network(os.str());
    PartitionScope scope;
    scope.local_vars = {"D"};
    for (int i = 1; i <= n; ++i) scope.var_to_child.emplace("P" + std::to_string(i), i - 1);
    ExprPtr exp_d = compose(net, {"D"}, {"D"});
    CHECK(structurally_equal(distribute(exp_d, scope), exp_d));
  }
}

TEST_CASE("distribute expands a shared-child product of sums one level") {
  PartitionScope scope = pair_scope();
  // Each sum needs one private child and shares B with the other.
  ExprPtr e = parse("(* (+ x[D:t|A:t] y[D:f|B:t]) (+ u[E:t|B:t] w[E:f|C:t]))");
  ExprPtr r = distribute(e, scope);
  REQUIRE(r->kind == ExprKind::Sum);
  CHECK(r->terms.size() == 4);
  for (const auto& t : r->terms) CHECK(t->kind == ExprKind::Product);

  // Without a shared child there is nothing to distribute over.
  ExprPtr bundle = parse("(* (+ x[D:t|B:t] y[D:f|B:t]) (+ u[E:t|B:t] w[E:f|B:t]))");
  ExprPtr kept = distribute(bundle, scope);
  REQUIRE(kept->kind == ExprKind::Product);
  CHECK(kept->terms.size() == 2);
}

TEST_CASE("distribute honors the node budget") {
  PartitionScope scope = pair_scope();
  ExprPtr e = parse(
      "(* (+ x[D:t|A:t] y[D:f|B:t]) (+ u[E:t|B:t] w[E:f|C:t])"
      " (+ g[D:t|A:t] h[E:t|C:t]))");
  CHECK_THROWS_AS(distribute(e, scope, 10), EvalError);
}

TEST_CASE("prune_for_evidence keeps only components overlapping the evidence") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  ExprPtr exp_d = prefix_leaves(net.model("D").expr, "D");

  auto negative = prune_for_evidence(exp_d, {{"D", "f"}});
  REQUIRE(negative.has_value());
  CHECK((*negative)->kind == ExprKind::Product);  // only the false component
  CHECK(leaf_names(*negative) == std::set<std::string>{"1", "D.c_A", "D.c_B"});
  FreeVariables fv = free_variables(*negative);
  CHECK(fv.conditioned == std::set<std::string>{"D"});

  auto positive = prune_for_evidence(exp_d, {{"D", "t"}});
  REQUIRE(positive.has_value());
  CHECK((*positive)->kind == ExprKind::Difference);

  // Evidence on a parent restricts the expression to the observed slice: the
  // A-conditioned weights disappear, and the restriction agrees with the
  // original wherever the evidence holds.
  auto parent_ev = prune_for_evidence(exp_d, {{"A", "f"}});
  REQUIRE(parent_ev.has_value());
  CHECK(leaf_names(*parent_ev).count("D.c_A") == 0);
  auto env = bind_all(net, exp_d);
  Variable a = net.variable("A");
  Factor mask = indicator(a, "f");
  Factor original = conformal_product(
      evaluate_unfactored(exp_d, env, {}, {"A", "B", "D"}, net.variable_map()), mask);
  Factor restricted = conformal_product(
      evaluate_unfactored(*parent_ev, env, {}, {"A", "B", "D"}, net.variable_map()), mask);
  CHECK(approx_equal(original, restricted, 1e-12));

  // A lone leaf outside the evidence subspace is identically zero.
  CHECK_FALSE(prune_for_evidence(parse("c[D:t|A:t]"), {{"D", "f"}}).has_value());
}

TEST_CASE("order_products sums variables out at their last use") {
  PartitionScope scope;  // unused by ordering
  (void)scope;

  // Two conditionals sharing A, with A poolable: A is summed right after the
  // product that completes its uses.
  ExprPtr e = parse("(* b[B:t,f|A:t,f] c[C:t,f|A:t,f])");
  PlanContext ctx;
  ctx.needed = {"B", "C"};
  ctx.pool_vars = {"A"};
  QueryPlan plan = order_products(e, ctx);
  REQUIRE(plan.elimination_order.size() == 1);
  CHECK(plan.elimination_order[0] == "A");
  CHECK(plan.stats.predicted_largest_scope == 3);

  // Chain: never more than two variables at once.
  ExprPtr chain = parse("(* c[C:t,f|B:t,f] b[B:t,f|A:t,f])");
  PlanContext cctx;
  cctx.needed = {"C"};
  cctx.pool_vars = {"A"};
  QueryPlan cplan = order_products(chain, cctx);
  CHECK(cplan.stats.predicted_largest_scope == 2);
  CHECK(cplan.elimination_order == std::vector<std::string>{"A", "B"});

  // Single leaf: trivial plan.
  QueryPlan trivial = order_products(parse("p[D:t,f]"), PlanContext{{"D"}, {}});
  CHECK(trivial.stats.predicted_largest_scope == 1);
  CHECK(trivial.elimination_order.empty());
  CHECK(trivial.stats.ast_size == 1);
}

TEST_CASE("order preservation: ordering never changes the value") {
  std::mt19937 rng(47);
  for (int trial = 0; trial < 40; ++trial) {
    BeliefNetwork net = load_network(test::random_net_text(rng, 6, 2));
    std::set<std::string> all;
    for (const auto& v : net.variables()) all.insert(v.name);
    ExprPtr composed = compose(net, all, all);
    PartitionScope scope;
    scope.local_vars = all;
    ExprPtr dist = distribute(composed, scope);
    PlanContext ctx;
    std::vector<std::string> names(all.begin(), all.end());
    ctx.needed = {names[0]};
    QueryPlan plan = order_products(dist, ctx);

    auto env = bind_all(net, composed);
    Factor a = evaluate_unfactored(composed, env, {}, all, net.variable_map());
    Factor b = evaluate_unfactored(plan.rewritten, env, {}, all, net.variable_map());
    CHECK(approx_equal(a, b, 1e-12));
  }
}

TEST_CASE("plan dump lists subqueries and requirements") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  ExprPtr composed = compose(net, {"D", "E"}, {"D", "E"});
  PartitionScope scope = pair_scope();
  ExprPtr dist = distribute(composed, scope);
  PlanContext ctx;
  ctx.needed = {"D", "E"};
  ctx.pool_vars = {"A", "B", "C"};
  QueryPlan plan = order_products(dist, ctx);
  plan.subqueries = {{0, {"A"}}, {1, {"B"}}, {2, {"C"}}};
  std::string text = dump_plan(plan, scope, ctx);
  CHECK(text.find("subquery child 0: A") != std::string::npos);
  CHECK(text.find("req={1}") != std::string::npos);
  CHECK(text.find("predicted largest intermediate scope") != std::string::npos);
}
