#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spi/errors.hpp"

namespace spi {

class BeliefNetwork;

// One partition: a labeled, nonempty set of network variables plus child
// partitions.
struct PartitionNode {
  std::string label;
  std::vector<std::string> vars;
  std::vector<PartitionNode> children;
};

struct PartitionTree {
  PartitionNode root;
};

// Flattened, indexed view used for traversal. Node 0 is the root.
class PartitionTreeView {
 public:
  struct Node {
    std::string label;
    std::set<std::string> vars;
    std::vector<int> children;
    int parent = -1;
  };

  explicit PartitionTreeView(const PartitionTree& tree);

  const Node& node(int id) const { return nodes_[id]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  // Partition containing a variable, or -1.
  int partition_of(const std::string& var) const;
  // True iff `node` lies in the subtree rooted at `root` (inclusive).
  bool in_subtree(int node, int root) const;
  // The child slot of `p` whose subtree contains `var`, or -1.
  int child_slot_for(int p, const std::string& var) const;

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int> var_home_;
};

// Reserved bucket key for variables that live inside the partition itself.
inline constexpr int kLocalBucket = -1;

// Groups `vars` by the child subtree of partition `p` that contains them;
// variables inside `p` map to kLocalBucket. Throws ModelError when a variable
// lies outside the subtree of `p`.
std::map<int, std::set<std::string>> child_requirements(const PartitionTreeView& view, int p,
                                                        const std::set<std::string>& vars);

// Deterministic default construction: sinks form the root partition, every
// other variable starts a singleton partition under the deepest partition
// holding one of its children, and sibling partitions are merged when a
// variable's children would otherwise end up in disjoint subtrees. Parentless
// variables always land in leaf partitions.
PartitionTree build_default_partition_tree(const BeliefNetwork& net);

// Checks coverage and disjointness, the decomposition constraint (every
// parent of a partition's variable lies in that partition or below it), and
// the restriction that parentless variables sit in leaf partitions.
std::vector<std::string> validate_partition_tree(const BeliefNetwork& net,
                                                 const PartitionTree& tree);

// Parses the net-file literal, e.g. "(P1: D,E (P2: A) (P3: B))".
PartitionNode parse_partition_literal(const std::string& text);

std::string format_partition_tree(const PartitionTree& tree);

}  // namespace spi
