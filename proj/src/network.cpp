#include "spi/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace spi {

namespace {

std::string strip_comment(const std::string& line) {
  auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<double> parse_reals(const std::string& body, const std::string& where) {
  std::string cleaned = body;
  for (char& c : cleaned) {
    if (c == ',' || c == ';') c = ' ';
  }
  std::istringstream is(cleaned);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ModelError("bad number '" + tok + "' in " + where);
    }
    if (used != tok.size()) throw ModelError("bad number '" + tok + "' in " + where);
    out.push_back(v);
  }
  return out;
}

// Splits "head { body }" where the braces may span lines.
bool split_braced(const std::string& stmt, std::string& head, std::string& body) {
  auto open = stmt.find('{');
  if (open == std::string::npos) return false;
  auto close = stmt.rfind('}');
  if (close == std::string::npos || close < open) {
    throw ModelError("unbalanced braces in statement: " + trim(stmt.substr(0, 40)));
  }
  head = trim(stmt.substr(0, open));
  body = stmt.substr(open + 1, close - open - 1);
  return true;
}

}  // namespace

struct NetParser {
  BeliefNetwork net;
  std::vector<std::string> errors;
  // Expression node whose bind lines are still being collected.
  std::string open_expr_node;

  void fail(const std::string& msg) { throw ModelError(msg); }

  const Variable& need_var(const std::string& name, const std::string& where) {
    auto it = net.vars_.find(name);
    if (it == net.vars_.end()) fail("undeclared variable '" + name + "' in " + where);
    return it->second;
  }

  void handle_var(const std::string& rest) {
    auto colon = rest.find(':');
    if (colon == std::string::npos) fail("var statement needs ':' before the value list");
    std::string name = trim(rest.substr(0, colon));
    if (name.empty()) fail("var statement missing a name");
    if (net.vars_.count(name)) fail("variable '" + name + "' declared twice");
    std::vector<std::string> values = split_on(rest.substr(colon + 1), ',');
    values.erase(std::remove(values.begin(), values.end(), ""), values.end());
    if (values.size() < 2) fail("variable '" + name + "' needs at least two values");
    std::set<std::string> uniq(values.begin(), values.end());
    if (uniq.size() != values.size()) fail("variable '" + name + "' has duplicate values");
    Variable v{name, values};
    net.vars_.emplace(name, v);
    net.order_.push_back(std::move(v));
  }

  void set_model(const std::string& node, LocalModel model, std::vector<std::string> parents) {
    if (net.models_.count(node)) fail("node '" + node + "' has two local models");
    net.models_.emplace(node, std::move(model));
    net.parents_.emplace(node, std::move(parents));
  }

  void handle_cpt(const std::string& head, const std::string& body) {
    // head: "NAME | P1 P2 ..." (parents optional)
    auto bar = head.find('|');
    std::string name = trim(bar == std::string::npos ? head : head.substr(0, bar));
    if (name.empty()) fail("cpt statement missing a node name");
    const Variable& child = need_var(name, "cpt " + name);
    std::vector<std::string> parents;
    if (bar != std::string::npos) parents = split_ws(head.substr(bar + 1));

    std::vector<ScopeEntry> scope;
    std::size_t rows = 1;
    for (const auto& p : parents) {
      const Variable& pv = need_var(p, "cpt " + name);
      if (p == name) fail("node '" + name + "' cannot be its own parent");
      scope.push_back(ScopeEntry::full(pv));
      rows *= pv.arity();
    }
    scope.push_back(ScopeEntry::full(child));

    std::vector<double> reals = parse_reals(body, "cpt " + name);
    if (reals.size() != rows * child.arity()) {
      fail("cpt " + name + " needs " + std::to_string(rows * child.arity()) +
           " numbers, got " + std::to_string(reals.size()));
    }
    for (double v : reals) {
      if (!(v >= 0.0) || !std::isfinite(v)) fail("cpt " + name + " has a negative or non-finite entry");
    }
    LocalModel m;
    m.kind = LocalModel::Kind::Cpt;
    m.cpt = Factor("p_" + name, std::move(scope), std::move(reals));
    set_model(name, std::move(m), parents);
  }

  void handle_noisyor(const std::string& rest) {
    auto bar = rest.find('|');
    if (bar == std::string::npos) fail("noisyor statement needs '|' before the parent list");
    std::string name = trim(rest.substr(0, bar));
    const Variable& child = need_var(name, "noisyor " + name);

    std::vector<Variable> parents;
    std::vector<std::string> parent_names;
    std::vector<double> params;
    std::optional<double> leak;
    for (const auto& tok : split_ws(rest.substr(bar + 1))) {
      auto colon = tok.find(':');
      if (colon == std::string::npos) {
        fail("noisyor " + name + ": expected PARENT:weight, got '" + tok + "'");
      }
      std::string key = tok.substr(0, colon);
      auto values = parse_reals(tok.substr(colon + 1), "noisyor " + name);
      if (values.size() != 1) fail("noisyor " + name + ": '" + tok + "' needs one number");
      double value = values[0];
      if (key == "leak") {
        if (leak) fail("noisyor " + name + " repeats leak");
        leak = value;
        continue;
      }
      const Variable& pv = need_var(key, "noisyor " + name);
      parents.push_back(pv);
      parent_names.push_back(key);
      params.push_back(value);
    }
    NoisyOrModel built = build_noisy_or(child, parents, params, leak);
    LocalModel m;
    m.kind = LocalModel::Kind::Expr;
    m.expr = built.expr;
    m.bindings = std::move(built.bindings);
    m.noisy = NoisyOrSpec{parent_names, params, leak};
    set_model(name, std::move(m), parent_names);
  }

  void handle_expr(const std::string& rest) {
    auto colon = rest.find(':');
    if (colon == std::string::npos) fail("expr statement needs ':' before the expression");
    std::string name = trim(rest.substr(0, colon));
    need_var(name, "expr " + name);
    ExprPtr e;
    try {
      e = spi::parse(rest.substr(colon + 1));
    } catch (const ParseError& pe) {
      fail("expr " + name + ": " + pe.what());
    }
    FreeVariables fv = free_variables(e);
    std::vector<std::string> parents(fv.conditioning.begin(), fv.conditioning.end());
    LocalModel m;
    m.kind = LocalModel::Kind::Expr;
    m.expr = e;
    set_model(name, std::move(m), std::move(parents));
    open_expr_node = name;
  }

  void handle_bind(const std::string& head, const std::string& body) {
    // head: "NAME ="
    std::string name = trim(head);
    if (!name.empty() && name.back() == '=') name = trim(name.substr(0, name.size() - 1));
    if (name.empty()) fail("bind statement missing a parameter name");
    if (open_expr_node.empty()) fail("bind '" + name + "' has no preceding expr statement");
    auto& model = net.models_.at(open_expr_node);
    if (model.bindings.count(name)) {
      fail("parameter '" + name + "' bound twice for node '" + open_expr_node + "'");
    }
    model.bindings[name] = parse_reals(body, "bind " + name);
  }

  void handle_partition(const std::string& body) {
    if (net.partition_) fail("duplicate partition block");
    net.partition_ = parse_partition_literal(body);
  }

  void handle_statement(const std::string& stmt) {
    std::string head, body;
    bool braced = split_braced(stmt, head, body);
    std::string text = braced ? head : trim(stmt);
    std::istringstream is(text);
    std::string keyword;
    is >> keyword;
    std::string rest = trim(text.substr(keyword.size()));

    if (keyword != "bind") open_expr_node.clear();
    if (keyword == "var") {
      handle_var(rest);
    } else if (keyword == "cpt") {
      if (!braced) fail("cpt statement needs a { ... } table");
      handle_cpt(rest, body);
    } else if (keyword == "noisyor") {
      handle_noisyor(rest);
    } else if (keyword == "expr") {
      handle_expr(rest);
    } else if (keyword == "bind") {
      if (!braced) fail("bind statement needs a { ... } value list");
      handle_bind(rest, body);
    } else if (keyword == "partition") {
      if (!braced) fail("partition statement needs a { ... } tree");
      handle_partition(body);
    } else {
      fail("unknown statement '" + keyword + "'");
    }
  }

  void run(const std::string& text) {
    std::istringstream is(text);
    std::string line, pending;
    int depth = 0;
    while (std::getline(is, line)) {
      std::string cleaned = strip_comment(line);
      for (char c : cleaned) {
        if (c == '{') ++depth;
        if (c == '}') --depth;
      }
      pending += cleaned;
      pending += '\n';
      if (depth > 0) continue;
      if (depth < 0) fail("unbalanced '}' in net file");
      std::string stmt = trim(pending);
      pending.clear();
      if (!stmt.empty()) handle_statement(stmt);
    }
    if (depth != 0) fail("unterminated { ... } block at end of file");
    if (!trim(pending).empty()) handle_statement(trim(pending));
  }
};

BeliefNetwork BeliefNetwork::parse(const std::string& text) {
  NetParser p;
  p.run(text);
  return std::move(p.net);
}

const Variable& BeliefNetwork::variable(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ModelError("unknown variable '" + name + "'");
  return it->second;
}

const LocalModel& BeliefNetwork::model(const std::string& var) const {
  auto it = models_.find(var);
  if (it == models_.end()) throw ModelError("no local model for variable '" + var + "'");
  return it->second;
}

const std::vector<std::string>& BeliefNetwork::parents_of(const std::string& var) const {
  auto it = parents_.find(var);
  if (it == parents_.end()) throw ModelError("no local model for variable '" + var + "'");
  return it->second;
}

std::vector<std::string> BeliefNetwork::topo_order() const {
  std::map<std::string, int> pending;
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& v : order_) {
    auto it = parents_.find(v.name);
    int n = 0;
    if (it != parents_.end()) {
      for (const auto& p : it->second) {
        if (vars_.count(p)) {
          children[p].push_back(v.name);
          ++n;
        }
      }
    }
    pending[v.name] = n;
  }
  std::vector<std::string> ready, out;
  for (const auto& v : order_) {
    if (pending[v.name] == 0) ready.push_back(v.name);
  }
  std::sort(ready.begin(), ready.end());
  while (!ready.empty()) {
    std::string v = ready.front();
    ready.erase(ready.begin());
    out.push_back(v);
    for (const auto& c : children[v]) {
      if (--pending[c] == 0) {
        ready.insert(std::lower_bound(ready.begin(), ready.end(), c), c);
      }
    }
  }
  if (out.size() != order_.size()) {
    std::string stuck;
    for (const auto& [name, n] : pending) {
      if (n > 0) stuck += (stuck.empty() ? "" : ", ") + name;
    }
    throw ModelError("network has a cycle involving: " + stuck);
  }
  return out;
}

std::vector<std::string> BeliefNetwork::validate() const {
  std::vector<std::string> diags;

  for (const auto& v : order_) {
    if (!models_.count(v.name)) diags.push_back("variable '" + v.name + "' has no local model");
  }

  for (const auto& [name, model] : models_) {
    const auto& parents = parents_.at(name);
    for (const auto& p : parents) {
      if (!vars_.count(p)) diags.push_back("node '" + name + "' has undeclared parent '" + p + "'");
    }
    if (model.kind == LocalModel::Kind::Cpt) {
      // Child varies fastest: each run of child.arity() cells is one column.
      const Variable& child = vars_.at(name);
      const auto& table = model.cpt.table();
      for (std::size_t row = 0; row * child.arity() < table.size(); ++row) {
        double sum = 0.0;
        for (std::size_t k = 0; k < child.arity(); ++k) sum += table[row * child.arity() + k];
        if (std::abs(sum - 1.0) > kCptTolerance) {
          diags.push_back("cpt " + name + ": distribution for parent assignment " +
                          std::to_string(row) + " sums to " + std::to_string(sum));
          break;
        }
      }
    } else {
      DeclContext ctx{&vars_, &model.bindings};
      for (const auto& d : spi::validate(model.expr, ctx)) {
        diags.push_back("expr " + name + ": " + d);
      }
      FreeVariables fv = free_variables(model.expr);
      if (fv.conditioned != std::set<std::string>{name}) {
        diags.push_back("expr " + name + ": expression must be conditioned on exactly '" + name +
                        "'");
      }
    }
  }

  try {
    topo_order();
  } catch (const ModelError& e) {
    diags.push_back(e.what());
  }
  return diags;
}

BeliefNetwork load_network(const std::string& text) {
  BeliefNetwork net = BeliefNetwork::parse(text);
  auto diags = net.validate();
  if (!diags.empty()) {
    std::string joined;
    for (const auto& d : diags) joined += "\n  " + d;
    throw ModelError("invalid network:" + joined);
  }
  return net;
}

}  // namespace spi
