#include "spi/partition.hpp"

#include <algorithm>
#include <sstream>

#include "spi/network.hpp"

namespace spi {

PartitionTreeView::PartitionTreeView(const PartitionTree& tree) {
  // Depth-first flatten, root first.
  struct Item {
    const PartitionNode* node;
    int parent;
  };
  std::vector<Item> stack{{&tree.root, -1}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    int id = static_cast<int>(nodes_.size());
    Node n;
    n.label = it.node->label;
    n.vars.insert(it.node->vars.begin(), it.node->vars.end());
    n.parent = it.parent;
    nodes_.push_back(std::move(n));
    if (it.parent >= 0) nodes_[it.parent].children.push_back(id);
    for (auto c = it.node->children.rbegin(); c != it.node->children.rend(); ++c) {
      stack.push_back({&*c, id});
    }
  }
  // Reversed stack order flips children; restore declaration order.
  for (auto& n : nodes_) std::sort(n.children.begin(), n.children.end());
  for (int id = 0; id < size(); ++id) {
    for (const auto& v : nodes_[id].vars) var_home_.emplace(v, id);
  }
}

int PartitionTreeView::partition_of(const std::string& var) const {
  auto it = var_home_.find(var);
  return it == var_home_.end() ? -1 : it->second;
}

bool PartitionTreeView::in_subtree(int node, int root) const {
  while (node >= 0) {
    if (node == root) return true;
    node = nodes_[node].parent;
  }
  return false;
}

int PartitionTreeView::child_slot_for(int p, const std::string& var) const {
  int home = partition_of(var);
  if (home < 0) return -1;
  const auto& children = nodes_[p].children;
  for (std::size_t slot = 0; slot < children.size(); ++slot) {
    if (in_subtree(home, children[slot])) return static_cast<int>(slot);
  }
  return -1;
}

std::map<int, std::set<std::string>> child_requirements(const PartitionTreeView& view, int p,
                                                        const std::set<std::string>& vars) {
  std::map<int, std::set<std::string>> buckets;
  for (const auto& v : vars) {
    if (view.node(p).vars.count(v)) {
      buckets[kLocalBucket].insert(v);
      continue;
    }
    int slot = view.child_slot_for(p, v);
    if (slot < 0) {
      throw ModelError("variable '" + v + "' is not in the subtree of partition '" +
                       view.node(p).label + "'");
    }
    buckets[slot].insert(v);
  }
  return buckets;
}

// ---------------------------------------------------------------------------
// Default construction

namespace {

// Mutable partition forest used while building the default tree.
struct Builder {
  struct Part {
    std::set<std::string> vars;
    std::vector<int> children;
    int parent = -1;
    bool alive = true;
  };
  std::vector<Part> parts;
  std::map<std::string, int> home;

  int add(const std::set<std::string>& vars, int parent) {
    int id = static_cast<int>(parts.size());
    parts.push_back({vars, {}, parent, true});
    if (parent >= 0) parts[parent].children.push_back(id);
    for (const auto& v : vars) home[v] = id;
    return id;
  }

  int depth(int id) const {
    int d = 0;
    for (int p = parts[id].parent; p >= 0; p = parts[p].parent) ++d;
    return d;
  }

  bool is_ancestor(int a, int b) const {  // a ancestor-or-equal of b
    for (int p = b; p >= 0; p = parts[p].parent) {
      if (p == a) return true;
    }
    return false;
  }

  // Lowest common ancestor of two live partitions.
  int lca(int a, int b) const {
    std::set<int> seen;
    for (int p = a; p >= 0; p = parts[p].parent) seen.insert(p);
    for (int p = b; p >= 0; p = parts[p].parent) {
      if (seen.count(p)) return p;
    }
    return -1;
  }

  int child_towards(int anc, int node) const {
    int prev = node;
    for (int p = parts[node].parent; p >= 0; p = parts[p].parent) {
      if (p == anc) return prev;
      prev = p;
    }
    return node;
  }

  // Merges b into a (both must share a parent).
  void merge(int a, int b) {
    for (const auto& v : parts[b].vars) {
      parts[a].vars.insert(v);
      home[v] = a;
    }
    for (int c : parts[b].children) {
      parts[c].parent = a;
      parts[a].children.push_back(c);
    }
    auto& sibs = parts[parts[b].parent].children;
    sibs.erase(std::remove(sibs.begin(), sibs.end(), b), sibs.end());
    parts[b].alive = false;
    parts[b].children.clear();
    parts[b].vars.clear();
  }

  PartitionNode freeze(int id, int& counter) const {
    PartitionNode n;
    n.label = "P" + std::to_string(++counter);
    n.vars.assign(parts[id].vars.begin(), parts[id].vars.end());
    std::vector<int> kids = parts[id].children;
    std::sort(kids.begin(), kids.end());
    for (int c : kids) n.children.push_back(freeze(c, counter));
    return n;
  }
};

}  // namespace

PartitionTree build_default_partition_tree(const BeliefNetwork& net) {
  std::map<std::string, std::vector<std::string>> children_of;
  for (const auto& v : net.variables()) children_of[v.name];
  for (const auto& v : net.variables()) {
    for (const auto& p : net.parents_of(v.name)) children_of[p].push_back(v.name);
  }

  std::vector<std::string> sinks, isolated;
  for (const auto& v : net.variables()) {
    if (!children_of[v.name].empty()) continue;
    if (net.parents_of(v.name).empty()) {
      isolated.push_back(v.name);
    } else {
      sinks.push_back(v.name);
    }
  }
  std::sort(sinks.begin(), sinks.end());
  std::sort(isolated.begin(), isolated.end());

  Builder b;
  if (sinks.empty()) {
    // Edge-free network: one partition holding everything is both root and
    // leaf, which keeps parentless variables in a leaf.
    std::set<std::string> all;
    for (const auto& v : net.variables()) all.insert(v.name);
    b.add(all, -1);
    int counter = 0;
    return PartitionTree{b.freeze(0, counter)};
  }

  int root = b.add(std::set<std::string>(sinks.begin(), sinks.end()), -1);
  for (const auto& v : isolated) b.add({v}, root);

  // Sink-to-source order, lexicographic among ready variables.
  std::map<std::string, int> pending;
  for (const auto& v : net.variables()) pending[v.name] = static_cast<int>(children_of[v.name].size());
  std::vector<std::string> ready;
  for (const auto& [name, n] : pending) {
    if (n == 0) ready.push_back(name);
  }
  std::sort(ready.begin(), ready.end());

  while (!ready.empty()) {
    std::string v = ready.front();
    ready.erase(ready.begin());
    for (const auto& p : net.parents_of(v)) {
      if (--pending[p] == 0) {
        ready.insert(std::lower_bound(ready.begin(), ready.end(), p), p);
      }
    }
    if (b.home.count(v)) continue;  // sinks and isolated variables are placed

    // Partitions holding v's children; merge siblings until they sit on one
    // root-to-leaf chain, then hang v under the deepest of them.
    while (true) {
      std::set<int> cp;
      for (const auto& c : children_of[v]) cp.insert(b.home.at(c));
      std::vector<int> cps(cp.begin(), cp.end());
      int m1 = -1, m2 = -1;
      for (std::size_t i = 0; i < cps.size() && m1 < 0; ++i) {
        for (std::size_t j = i + 1; j < cps.size() && m1 < 0; ++j) {
          if (!b.is_ancestor(cps[i], cps[j]) && !b.is_ancestor(cps[j], cps[i])) {
            int l = b.lca(cps[i], cps[j]);
            m1 = b.child_towards(l, cps[i]);
            m2 = b.child_towards(l, cps[j]);
          }
        }
      }
      if (m1 < 0) {
        int deepest = cps.front();
        for (int p : cps) {
          if (b.depth(p) > b.depth(deepest)) deepest = p;
        }
        b.add({v}, deepest);
        break;
      }
      b.merge(std::min(m1, m2), std::max(m1, m2));
    }
  }

  int counter = 0;
  return PartitionTree{b.freeze(root, counter)};
}

// ---------------------------------------------------------------------------
// Validation

std::vector<std::string> validate_partition_tree(const BeliefNetwork& net,
                                                 const PartitionTree& tree) {
  std::vector<std::string> diags;
  PartitionTreeView view(tree);

  std::map<std::string, int> seen;
  for (int id = 0; id < view.size(); ++id) {
    const auto& node = view.node(id);
    if (node.vars.empty()) diags.push_back("partition '" + node.label + "' is empty");
    for (const auto& v : node.vars) {
      if (!net.has_variable(v)) {
        diags.push_back("partition '" + node.label + "' names unknown variable '" + v + "'");
        continue;
      }
      auto [it, fresh] = seen.emplace(v, id);
      if (!fresh) {
        diags.push_back("variable '" + v + "' appears in more than one partition");
      }
    }
  }
  for (const auto& v : net.variables()) {
    if (!seen.count(v.name)) {
      diags.push_back("variable '" + v.name + "' is not covered by the partition tree");
    }
  }
  if (!diags.empty()) return diags;

  for (int id = 0; id < view.size(); ++id) {
    const auto& node = view.node(id);
    for (const auto& v : node.vars) {
      for (const auto& q : net.parents_of(v)) {
        int qp = view.partition_of(q);
        if (!view.in_subtree(qp, id)) {
          diags.push_back("decomposition constraint violated: parent '" + q + "' of '" + v +
                          "' lies outside the subtree of partition '" + node.label + "'");
        }
      }
      if (net.parents_of(v).empty() && !node.children.empty()) {
        diags.push_back("parentless variable '" + v + "' must be in a leaf partition, but '" +
                        node.label + "' has children");
      }
    }
  }
  return diags;
}

// ---------------------------------------------------------------------------
// Literal parsing and formatting

namespace {

struct LiteralParser {
  const std::string& text;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }

  void expect(char c) {
    if (peek() != c) {
      throw ModelError(std::string("partition literal: expected '") + c + "' at offset " +
                       std::to_string(pos));
    }
    ++pos;
  }

  std::string name() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_')) {
      ++pos;
    }
    if (pos == start) {
      throw ModelError("partition literal: expected a name at offset " + std::to_string(pos));
    }
    return text.substr(start, pos - start);
  }

  PartitionNode node() {
    expect('(');
    PartitionNode n;
    n.label = name();
    expect(':');
    n.vars.push_back(name());
    while (peek() == ',') {
      ++pos;
      n.vars.push_back(name());
    }
    while (peek() == '(') n.children.push_back(node());
    expect(')');
    return n;
  }
};

void format_rec(std::ostringstream& os, const PartitionNode& n, int depth) {
  os << std::string(static_cast<std::size_t>(depth) * 2, ' ') << n.label << ":";
  for (std::size_t i = 0; i < n.vars.size(); ++i) os << (i ? "," : " ") << n.vars[i];
  os << "\n";
  for (const auto& c : n.children) format_rec(os, c, depth + 1);
}

}  // namespace

PartitionNode parse_partition_literal(const std::string& text) {
  LiteralParser p{text};
  PartitionNode n = p.node();
  p.skip_ws();
  if (p.pos != text.size()) {
    throw ModelError("partition literal: trailing input at offset " + std::to_string(p.pos));
  }
  return n;
}

std::string format_partition_tree(const PartitionTree& tree) {
  std::ostringstream os;
  format_rec(os, tree.root, 0);
  return os.str();
}

}  // namespace spi
