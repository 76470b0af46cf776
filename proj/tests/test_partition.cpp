#include "doctest.h"

#include <random>

#include "spi/network.hpp"
#include "spi/partition.hpp"
#include "testutil.hpp"

using namespace spi;

namespace {

const PartitionNode* find_by_vars(const PartitionNode& n, const std::set<std::string>& vars) {
  std::set<std::string> mine(n.vars.begin(), n.vars.end());
  if (mine == vars) return &n;
  for (const auto& c : n.children) {
    if (const PartitionNode* hit = find_by_vars(c, vars)) return hit;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("default tree for the six-node net") {
  BeliefNetwork net = load_network(test::kSixNodeNet);
  PartitionTree tree = build_default_partition_tree(net);
  CHECK(validate_partition_tree(net, tree).empty());

  // Root holds the sink D; B and C share a partition with A below; F has its
  // own subtree with E below.
  CHECK(tree.root.vars == std::vector<std::string>{"D"});
  REQUIRE(tree.root.children.size() == 2);
  const PartitionNode* bc = find_by_vars(tree.root, {"B", "C"});
  REQUIRE(bc != nullptr);
  REQUIRE(bc->children.size() == 1);
  CHECK(bc->children[0].vars == std::vector<std::string>{"A"});
  const PartitionNode* f = find_by_vars(tree.root, {"F"});
  REQUIRE(f != nullptr);
  REQUIRE(f->children.size() == 1);
  CHECK(f->children[0].vars == std::vector<std::string>{"E"});
}

TEST_CASE("default tree for the noisy-or pair net") {
  BeliefNetwork net = load_network(test::kNoisyOrPairNet);
  PartitionTree tree = build_default_partition_tree(net);
  CHECK(validate_partition_tree(net, tree).empty());

  std::set<std::string> root(tree.root.vars.begin(), tree.root.vars.end());
  CHECK(root == std::set<std::string>{"D", "E"});
  REQUIRE(tree.root.children.size() == 3);
  for (const auto& c : tree.root.children) {
    CHECK(c.vars.size() == 1);
    CHECK(c.children.empty());
  }
}

TEST_CASE("single variable nets get one leaf partition") {
  BeliefNetwork net = load_network("var A : t,f\ncpt A | { 0.5 0.5 }\n");
  PartitionTree tree = build_default_partition_tree(net);
  CHECK(tree.root.vars == std::vector<std::string>{"A"});
  CHECK(tree.root.children.empty());
  CHECK(validate_partition_tree(net, tree).empty());
}

TEST_CASE("validation flags structural problems") {
  BeliefNetwork net = load_network(test::kSixNodeNet);

  // Valid literal matching the default shape.
  PartitionTree good{parse_partition_literal("(R: D (X: B,C (Y: A)) (Z: F (W: E)))")};
  CHECK(validate_partition_tree(net, good).empty());

  // C's parent A sits in a sibling subtree.
  PartitionTree sibling{parse_partition_literal("(R: D (X: B (Y: A)) (Z: C) (Q: F (W: E)))")};
  auto diags = validate_partition_tree(net, sibling);
  REQUIRE(!diags.empty());
  CHECK(diags[0].find("decomposition constraint") != std::string::npos);

  // E missing entirely.
  PartitionTree missing{parse_partition_literal("(R: D (X: B,C (Y: A)) (Z: F))")};
  diags = validate_partition_tree(net, missing);
  REQUIRE(!diags.empty());
  CHECK(diags[0].find("not covered") != std::string::npos);

  // Parentless variable in an internal partition.
  PartitionTree roots{parse_partition_literal("(R: D (X: A,B,C) (Z: F (W: E)))")};
  bool flagged = false;
  for (const auto& d : validate_partition_tree(net, roots)) {
    flagged = flagged || d.find("leaf partition") != std::string::npos;
  }
  CHECK(!flagged);  // X has no children, so A is fine there
  PartitionTree bad_roots{parse_partition_literal("(R: D (X: A,B,C (Y: E)) (Z: F))")};
  flagged = false;
  for (const auto& d : validate_partition_tree(net, bad_roots)) {
    flagged = flagged || d.find("leaf partition") != std::string::npos;
  }
  CHECK(flagged);

  // Duplicated variable.
  PartitionTree dup{parse_partition_literal("(R: D,E (X: B,C (Y: A)) (Z: F (W: E)))")};
  diags = validate_partition_tree(net, dup);
  REQUIRE(!diags.empty());
  CHECK(diags[0].find("more than one partition") != std::string::npos);
}

TEST_CASE("child_requirements groups by child subtree") {
  BeliefNetwork net = load_network(test::kSixNodeNet);
  PartitionTreeView view(build_default_partition_tree(net));

  auto buckets = child_requirements(view, 0, {"B", "C", "F"});
  REQUIRE(buckets.size() == 2);
  CHECK(buckets.at(0) == std::set<std::string>{"B", "C"});
  CHECK(buckets.at(1) == std::set<std::string>{"F"});

  auto local = child_requirements(view, 0, {"D"});
  REQUIRE(local.size() == 1);
  CHECK(local.at(kLocalBucket) == std::set<std::string>{"D"});

  BeliefNetwork pair = load_network(test::kNoisyOrPairNet);
  PartitionTreeView pview(build_default_partition_tree(pair));
  auto three = child_requirements(pview, 0, {"A", "B", "C"});
  CHECK(three.size() == 3);
  for (const auto& [slot, vars] : three) CHECK(vars.size() == 1);

  CHECK_THROWS_AS(child_requirements(view, 1, {"E"}), ModelError);
}

TEST_CASE("default construction is valid on random dags") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 150; ++trial) {
    BeliefNetwork net = load_network(test::random_net_text(rng, 12, 3));
    PartitionTree tree = build_default_partition_tree(net);
    auto diags = validate_partition_tree(net, tree);
    if (!diags.empty()) {
      CAPTURE(trial);
      CAPTURE(diags[0]);
    }
    CHECK(diags.empty());
  }
}

TEST_CASE("child_requirements buckets partition the input") {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    BeliefNetwork net = load_network(test::random_net_text(rng, 10, 3));
    PartitionTreeView view(build_default_partition_tree(net));
    std::set<std::string> vars;
    for (const auto& v : net.variables()) {
      if (std::uniform_int_distribution<int>(0, 1)(rng)) vars.insert(v.name);
    }
    auto buckets = child_requirements(view, 0, vars);
    std::set<std::string> younion;
    std::size_t total = 0;
    for (const auto& [slot, s] : buckets) {
      total += s.size();
      younion.insert(s.begin(), s.end());
    }
    CHECK(total == vars.size());
    CHECK(younion == vars);
  }
}

TEST_CASE("partition literals parse and reject junk") {
  PartitionNode n = parse_partition_literal("(P1: D,E (P2: A) (P3: B))");
  CHECK(n.label == "P1");
  CHECK(n.vars == std::vector<std::string>{"D", "E"});
  REQUIRE(n.children.size() == 2);
  CHECK(n.children[1].vars == std::vector<std::string>{"B"});

  CHECK_THROWS_AS(parse_partition_literal("(P1 D)"), ModelError);
  CHECK_THROWS_AS(parse_partition_literal("(P1: D) junk"), ModelError);
  CHECK_THROWS_AS(parse_partition_literal("(P1: D (P2: A)"), ModelError);
}
