#include "spi/expr.hpp"

#include <cctype>
#include <sstream>

namespace spi {

namespace {

ExprPtr make_compound(ExprKind kind, std::vector<ExprPtr> terms) {
  if (terms.size() < 2) throw ModelError("compound expression needs at least two terms");
  auto e = std::make_shared<Expr>();
  e->kind = kind;
  e->terms = std::move(terms);
  return e;
}

}  // namespace

ExprPtr Expr::dist_ref(std::string name, std::vector<ValueSet> conditioned,
                       std::vector<ValueSet> conditioning) {
  if (conditioned.empty()) throw ModelError("distribution reference needs a conditioned subspace");
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::DistRef;
  e->name = std::move(name);
  e->conditioned = std::move(conditioned);
  e->conditioning = std::move(conditioning);
  return e;
}

ExprPtr Expr::one(std::vector<ValueSet> subspace) {
  if (subspace.empty()) throw ModelError("constant-one needs a subspace");
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::One;
  e->name = "1";
  e->conditioned = std::move(subspace);
  return e;
}

ExprPtr Expr::product(std::vector<ExprPtr> terms) {
  return make_compound(ExprKind::Product, std::move(terms));
}

ExprPtr Expr::sum(std::vector<ExprPtr> terms) {
  return make_compound(ExprKind::Sum, std::move(terms));
}

ExprPtr Expr::difference(std::vector<ExprPtr> terms) {
  return make_compound(ExprKind::Difference, std::move(terms));
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Lexer {
  const std::string& text;
  std::size_t pos = 0;

  explicit Lexer(const std::string& t) : text(t) {}

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool at_end() {
    skip_ws();
    return pos >= text.size();
  }

  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }

  bool try_consume(char c) {
    skip_ws();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  void expect(char c, const char* what) {
    if (!try_consume(c)) {
      throw ParseError(std::string("expected '") + c + "' " + what, pos);
    }
  }

  static bool name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  }

  std::string name(const char* what) {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && name_char(text[pos])) ++pos;
    if (pos == start) throw ParseError(std::string("expected ") + what, pos);
    return text.substr(start, pos - start);
  }
};

std::vector<ValueSet> parse_assignlist(Lexer& lx) {
  std::vector<ValueSet> groups;
  while (true) {
    ValueSet g;
    g.var = lx.name("variable name");
    lx.expect(':', "after variable name");
    g.values.push_back(lx.name("value label"));
    while (lx.try_consume(',')) g.values.push_back(lx.name("value label"));
    groups.push_back(std::move(g));
    char c = lx.peek();
    if (c == '|' || c == ']' || c == '\0') break;
  }
  return groups;
}

ExprPtr parse_expr(Lexer& lx) {
  if (lx.try_consume('(')) {
    lx.skip_ws();
    char op = lx.peek();
    if (op != '+' && op != '-' && op != '*') {
      throw ParseError("unknown operator, expected one of '+', '-', '*'", lx.pos);
    }
    ++lx.pos;
    std::vector<ExprPtr> terms;
    while (lx.peek() != ')') {
      if (lx.at_end()) throw ParseError("unterminated compound expression", lx.pos);
      terms.push_back(parse_expr(lx));
    }
    lx.expect(')', "to close compound expression");
    if (terms.size() < 2) {
      throw ParseError("term-set requires at least one more term after the first", lx.pos);
    }
    switch (op) {
      case '+': return Expr::sum(std::move(terms));
      case '-': return Expr::difference(std::move(terms));
      default: return Expr::product(std::move(terms));
    }
  }

  std::size_t name_pos = lx.pos;
  std::string name = lx.name("distribution name or '('");
  lx.expect('[', "after distribution name");
  auto conditioned = parse_assignlist(lx);
  std::vector<ValueSet> conditioning;
  if (lx.try_consume('|')) conditioning = parse_assignlist(lx);
  lx.expect(']', "to close subspace");

  if (name == "1") {
    if (!conditioning.empty()) {
      throw ParseError("constant '1' cannot have a conditioning part", name_pos);
    }
    return Expr::one(std::move(conditioned));
  }
  bool all_digits = true;
  for (char c : name) {
    if (!std::isdigit(static_cast<unsigned char>(c))) all_digits = false;
  }
  if (all_digits) throw ParseError("invalid distribution name '" + name + "'", name_pos);
  return Expr::dist_ref(std::move(name), std::move(conditioned), std::move(conditioning));
}

}  // namespace

ExprPtr parse(const std::string& text) {
  Lexer lx(text);
  ExprPtr e = parse_expr(lx);
  if (!lx.at_end()) throw ParseError("trailing input after expression", lx.pos);
  return e;
}

// ---------------------------------------------------------------------------
// Printer

namespace {

void print_assignlist(std::ostream& os, const std::vector<ValueSet>& groups) {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (i) os << ' ';
    os << groups[i].var << ':';
    for (std::size_t j = 0; j < groups[i].values.size(); ++j) {
      if (j) os << ',';
      os << groups[i].values[j];
    }
  }
}

void print_rec(std::ostream& os, const ExprPtr& e) {
  switch (e->kind) {
    case ExprKind::DistRef:
    case ExprKind::One:
      os << e->name << '[';
      print_assignlist(os, e->conditioned);
      if (!e->conditioning.empty()) {
        os << '|';
        print_assignlist(os, e->conditioning);
      }
      os << ']';
      break;
    case ExprKind::Product:
    case ExprKind::Sum:
    case ExprKind::Difference: {
      char op = e->kind == ExprKind::Product ? '*' : (e->kind == ExprKind::Sum ? '+' : '-');
      os << '(' << op;
      for (const auto& t : e->terms) {
        os << ' ';
        print_rec(os, t);
      }
      os << ')';
      break;
    }
  }
}

}  // namespace

std::string print(const ExprPtr& e) {
  std::ostringstream os;
  print_rec(os, e);
  return os.str();
}

bool structurally_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a.get() == b.get()) return true;
  if (a->kind != b->kind) return false;
  if (a->is_leaf()) {
    return a->name == b->name && a->conditioned == b->conditioned &&
           a->conditioning == b->conditioning;
  }
  if (a->terms.size() != b->terms.size()) return false;
  for (std::size_t i = 0; i < a->terms.size(); ++i) {
    if (!structurally_equal(a->terms[i], b->terms[i])) return false;
  }
  return true;
}

std::size_t count_nodes(const ExprPtr& e) {
  std::size_t n = 1;
  for (const auto& t : e->terms) n += count_nodes(t);
  return n;
}

FreeVariables free_variables(const ExprPtr& e) {
  FreeVariables fv;
  if (e->is_leaf()) {
    for (const auto& g : e->conditioned) fv.conditioned.insert(g.var);
    for (const auto& g : e->conditioning) fv.conditioning.insert(g.var);
    return fv;
  }
  for (const auto& t : e->terms) {
    FreeVariables sub = free_variables(t);
    fv.conditioned.insert(sub.conditioned.begin(), sub.conditioned.end());
    fv.conditioning.insert(sub.conditioning.begin(), sub.conditioning.end());
  }
  return fv;
}

std::set<std::string> referenced_variables(const ExprPtr& e) {
  FreeVariables fv = free_variables(e);
  fv.conditioned.insert(fv.conditioning.begin(), fv.conditioning.end());
  return fv.conditioned;
}

// ---------------------------------------------------------------------------
// Noisy-or builder

NoisyOrModel build_noisy_or(const Variable& child, const std::vector<Variable>& parents,
                            const std::vector<double>& params, std::optional<double> leak) {
  if (child.arity() != 2) {
    throw ModelError("noisy-or child '" + child.name + "' must be binary");
  }
  if (parents.empty()) throw ModelError("noisy-or needs at least one parent");
  if (parents.size() != params.size()) {
    throw ModelError("noisy-or parameter count does not match parent count");
  }
  for (const auto& p : parents) {
    if (p.arity() != 2) {
      throw ModelError("noisy-or parent '" + p.name + "' must be binary");
    }
  }
  for (double c : params) {
    if (!(c >= 0.0 && c <= 1.0)) throw ModelError("noisy-or parameter out of [0,1]");
  }
  if (leak && !(*leak >= 0.0 && *leak <= 1.0)) {
    throw ModelError("noisy-or leak out of [0,1]");
  }

  const std::string& ct = child.domain[0];
  const std::string& cf = child.domain[1];

  NoisyOrModel model;
  // One numeric binding per parent feeds both polarity copies of the weight;
  // the leak likewise.
  for (std::size_t i = 0; i < parents.size(); ++i) {
    model.bindings["c_" + parents[i].name] = {params[i]};
  }
  if (leak) model.bindings["lk"] = {1.0 - *leak};

  auto component = [&](const std::string& cv) {
    std::vector<ExprPtr> factors;
    if (leak) {
      factors.push_back(Expr::dist_ref("lk", {{child.name, {cv}}}, {}));
    }
    for (const auto& p : parents) {
      factors.push_back(Expr::difference(
          {Expr::one({{child.name, {cv}}}),
           Expr::dist_ref("c_" + p.name, {{child.name, {cv}}}, {{p.name, {p.domain[0]}}})}));
    }
    return factors.size() == 1 ? factors[0] : Expr::product(std::move(factors));
  };

  ExprPtr true_part = Expr::difference({Expr::one({{child.name, {ct}}}), component(ct)});
  ExprPtr false_part = component(cf);
  model.expr = Expr::sum({true_part, false_part});
  return model;
}

// ---------------------------------------------------------------------------
// Leaf factors and validation

std::size_t leaf_cells(const Expr& leaf) {
  std::size_t n = 1;
  for (const auto& g : leaf.conditioned) n *= g.values.size();
  for (const auto& g : leaf.conditioning) n *= g.values.size();
  return n;
}

namespace {

std::vector<ScopeEntry> leaf_scope(const Expr& leaf, const std::map<std::string, Variable>& vars) {
  std::vector<ScopeEntry> scope;
  auto add = [&](const ValueSet& g) {
    auto it = vars.find(g.var);
    if (it == vars.end()) throw ModelError("unknown variable '" + g.var + "' in expression leaf");
    scope.push_back(ScopeEntry::from_labels(it->second, g.values));
  };
  for (const auto& g : leaf.conditioned) add(g);
  for (const auto& g : leaf.conditioning) add(g);
  return scope;
}

}  // namespace

Factor leaf_factor(const Expr& leaf, const std::vector<double>& values,
                   const std::map<std::string, Variable>& vars) {
  auto scope = leaf_scope(leaf, vars);
  if (values.size() != leaf_cells(leaf)) {
    throw ModelError("binding for '" + leaf.name + "' has " + std::to_string(values.size()) +
                     " values, leaf subspace has " + std::to_string(leaf_cells(leaf)));
  }
  return Factor(leaf.name, std::move(scope), values);
}

Factor one_factor(const Expr& leaf, const std::map<std::string, Variable>& vars) {
  auto scope = leaf_scope(leaf, vars);
  std::size_t n = leaf_cells(leaf);
  return Factor("1", std::move(scope), std::vector<double>(n, 1.0));
}

std::vector<std::string> validate(const ExprPtr& e, const DeclContext& ctx) {
  std::vector<std::string> diags;
  auto check_groups = [&](const std::vector<ValueSet>& groups, const std::string& where) {
    std::set<std::string> seen;
    for (const auto& g : groups) {
      if (!seen.insert(g.var).second) {
        diags.push_back("duplicate variable '" + g.var + "' in " + where);
      }
      if (!ctx.vars) continue;
      auto it = ctx.vars->find(g.var);
      if (it == ctx.vars->end()) {
        diags.push_back("unknown variable '" + g.var + "' in " + where);
        continue;
      }
      for (const auto& v : g.values) {
        if (!it->second.value_index(v)) {
          diags.push_back("unknown value '" + v + "' for variable '" + g.var + "' in " + where);
        }
      }
    }
  };

  if (e->is_leaf()) {
    std::string where = "leaf '" + print(e) + "'";
    check_groups(e->conditioned, where);
    check_groups(e->conditioning, where);
    if (e->kind == ExprKind::DistRef && ctx.bindings) {
      auto it = ctx.bindings->find(e->name);
      if (it == ctx.bindings->end()) {
        diags.push_back("missing binding for distribution '" + e->name + "'");
      } else if (it->second.size() != leaf_cells(*e)) {
        diags.push_back("binding '" + e->name + "' has " + std::to_string(it->second.size()) +
                        " values but " + where + " spans " + std::to_string(leaf_cells(*e)) +
                        " cells");
      }
    }
    return diags;
  }
  for (const auto& t : e->terms) {
    auto sub = validate(t, ctx);
    diags.insert(diags.end(), sub.begin(), sub.end());
  }
  return diags;
}

}  // namespace spi
