#include <cstdio>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spi/engine.hpp"
#include "spi/network.hpp"
#include "spi/oracle.hpp"
#include "spi/partition.hpp"
#include "spi/rewrite.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitModel = 2;
constexpr int kExitEval = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw spi::ModelError("cannot read net file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

spi::Query parse_query_flags(const std::string& targets, const std::string& evidence) {
  spi::Query q;
  q.targets = split(targets, ',');
  for (const auto& item : split(evidence, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw spi::EvalError("invalid query: evidence '" + item + "' is not var=value");
    }
    q.evidence[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return q;
}

// TSV rows "assignment<TAB>probability", lexicographic by assignment text,
// twelve significant digits.
std::vector<std::string> result_rows(const spi::Factor& f) {
  std::vector<std::string> rows;
  std::vector<std::size_t> pos(f.var_count(), 0);
  for (std::size_t flat = 0; flat < f.cells(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t i = f.var_count(); i-- > 0;) {
      pos[i] = rem % f.scope()[i].size();
      rem /= f.scope()[i].size();
    }
    std::string key;
    for (std::size_t i = 0; i < f.var_count(); ++i) {
      key += (i ? "," : "") + f.scope()[i].var.name + "=" + f.scope()[i].label(pos[i]);
    }
    char value[64];
    std::snprintf(value, sizeof(value), "%.12g", f.table()[flat]);
    rows.push_back(key + "\t" + value);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

void print_stats(const spi::EvalStats& s) {
  std::cout << "# multiplications " << s.multiplications << "\n"
            << "# additions " << s.additions << "\n"
            << "# largest_intermediate_scope " << s.largest_intermediate_scope << "\n"
            << "# peak_cells " << s.peak_cells << "\n"
            << "# subquery_count " << s.subquery_count << "\n"
            << "# ast_size " << s.ast_size << "\n"
            << "# negative_clamps " << s.negative_clamps << "\n";
}

spi::PartitionTree tree_for(const spi::BeliefNetwork& net) {
  if (net.partition_literal()) {
    spi::PartitionTree tree{*net.partition_literal()};
    auto diags = spi::validate_partition_tree(net, tree);
    if (!diags.empty()) {
      std::string joined;
      for (const auto& d : diags) joined += "\n  " + d;
      throw spi::ModelError("invalid partition block:" + joined);
    }
    return tree;
  }
  return spi::build_default_partition_tree(net);
}

int cmd_validate(const std::string& path) {
  spi::BeliefNetwork net = spi::BeliefNetwork::parse(read_file(path));
  auto diags = net.validate();
  if (net.partition_literal()) {
    if (diags.empty()) {
      spi::PartitionTree tree{*net.partition_literal()};
      auto pd = spi::validate_partition_tree(net, tree);
      diags.insert(diags.end(), pd.begin(), pd.end());
    }
  }
  for (const auto& d : diags) std::cout << d << "\n";
  if (!diags.empty()) return kExitModel;
  std::cout << "ok: " << net.variables().size() << " variables\n";
  return kExitOk;
}

int cmd_query(const std::string& path, const std::string& targets, const std::string& evidence,
              bool stats) {
  spi::BeliefNetwork net = spi::load_network(read_file(path));
  spi::Engine engine(net, tree_for(net));
  spi::Query q = parse_query_flags(targets, evidence);
  spi::Factor f = engine.query_marginal(q);
  for (const auto& row : result_rows(f)) std::cout << row << "\n";
  for (const auto& w : engine.last_warnings()) std::cerr << "warning: " << w << "\n";
  if (stats) print_stats(engine.last_stats());
  return kExitOk;
}

int cmd_plan(const std::string& path, const std::string& targets, const std::string& evidence) {
  spi::BeliefNetwork net = spi::load_network(read_file(path));
  spi::Engine engine(net, tree_for(net));
  spi::Query q = parse_query_flags(targets, evidence);
  auto root = engine.plan_root(q);
  std::cout << spi::dump_plan(root.plan, root.scope, root.context);
  return kExitOk;
}

std::string make_noisyor_net(int n, unsigned seed, bool as_cpt) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> prior(0.05, 0.95);
  std::uniform_real_distribution<double> weight(0.1, 0.9);

  std::ostringstream os;
  os << std::setprecision(17);
  os << "var D : t,f\n";
  std::vector<double> priors, weights;
  for (int i = 1; i <= n; ++i) {
    os << "var P" << i << " : t,f\n";
    priors.push_back(prior(rng));
    weights.push_back(weight(rng));
  }
  for (int i = 1; i <= n; ++i) {
    os << "cpt P" << i << " | { " << priors[static_cast<std::size_t>(i - 1)] << " "
       << 1.0 - priors[static_cast<std::size_t>(i - 1)] << " }\n";
  }
  if (!as_cpt) {
    os << "noisyor D |";
    for (int i = 1; i <= n; ++i) os << " P" << i << ":" << weights[static_cast<std::size_t>(i - 1)];
    os << "\n";
  } else {
    os << "cpt D |";
    for (int i = 1; i <= n; ++i) os << " P" << i;
    os << " {\n";
    std::size_t rows = std::size_t{1} << n;
    for (std::size_t row = 0; row < rows; ++row) {
      double fail = 1.0;
      for (int i = 0; i < n; ++i) {
        bool active = ((row >> (n - 1 - i)) & 1) == 0;
        if (active) fail *= 1.0 - weights[static_cast<std::size_t>(i)];
      }
      os << "  " << 1.0 - fail << " " << fail << "\n";
    }
    os << "}\n";
  }
  return os.str();
}

int cmd_bench(int n, unsigned seed, bool as_cpt) {
  spi::BeliefNetwork net = spi::load_network(make_noisyor_net(n, seed, as_cpt));
  spi::Engine engine(net, spi::build_default_partition_tree(net));
  spi::Factor f = engine.query_marginal({{"D"}, {}});
  for (const auto& row : result_rows(f)) std::cout << row << "\n";
  print_stats(engine.last_stats());
  return kExitOk;
}

int cmd_expand(const std::string& path, const std::string& node) {
  spi::BeliefNetwork net = spi::load_network(read_file(path));
  const spi::LocalModel& m = net.model(node);
  if (!m.noisy) throw spi::ModelError("node '" + node + "' is not a noisy-or node");
  std::vector<spi::Variable> parents;
  for (const auto& p : m.noisy->parents) parents.push_back(net.variable(p));
  spi::Factor cpt =
      spi::expand_noisy_or_to_cpt(net.variable(node), parents, m.noisy->params, m.noisy->leak);
  for (const auto& row : result_rows(cpt)) std::cout << row << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symbolic probabilistic inference over belief networks"};
  app.require_subcommand(1);

  std::string net_path, targets, evidence, node;
  bool stats = false, as_cpt = false;
  int noisyor_n = 8;
  unsigned seed = 0;

  auto* validate = app.add_subcommand("validate", "check a net file");
  validate->add_option("net", net_path, "net file")->required();

  auto* query = app.add_subcommand("query", "compute a marginal or posterior");
  query->add_option("net", net_path, "net file")->required();
  query->add_option("-t", targets, "target variables, comma separated")->required();
  query->add_option("-e", evidence, "evidence as var=value, comma separated");
  query->add_flag("--stats", stats, "append evaluation counters");

  auto* plan = app.add_subcommand("plan", "show the rewritten root expression");
  plan->add_option("net", net_path, "net file")->required();
  plan->add_option("-t", targets, "target variables, comma separated")->required();
  plan->add_option("-e", evidence, "evidence as var=value, comma separated");

  auto* bench = app.add_subcommand("bench", "noisy-or scaling run");
  bench->add_option("--noisyor", noisyor_n, "number of parents")->required();
  bench->add_option("--seed", seed, "random seed");
  bench->add_flag("--cpt", as_cpt, "encode the child as a full table instead");

  auto* expand = app.add_subcommand("expand", "print a noisy-or node's full table");
  expand->add_option("net", net_path, "net file")->required();
  expand->add_option("node", node, "noisy-or node name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand(validate)) return cmd_validate(net_path);
    if (app.got_subcommand(query)) return cmd_query(net_path, targets, evidence, stats);
    if (app.got_subcommand(plan)) return cmd_plan(net_path, targets, evidence);
    if (app.got_subcommand(bench)) return cmd_bench(noisyor_n, seed, as_cpt);
    if (app.got_subcommand(expand)) return cmd_expand(net_path, node);
  } catch (const spi::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitModel;
  } catch (const spi::ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitModel;
  } catch (const spi::EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEval;
  }
  return kExitUsage;
}
