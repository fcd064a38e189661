#include "ots/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ots {

namespace {

// One numeric table from a case file, with the source line of each row.
struct Table {
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;
};

// Strips MATLAB comments and trailing whitespace.
std::string strip_comment(const std::string& s) {
  auto pos = s.find('%');
  std::string t = (pos == std::string::npos) ? s : s.substr(0, pos);
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r')) t.pop_back();
  return t;
}

bool parse_number(const std::string& tok, double& out) {
  try {
    size_t used = 0;
    out = std::stod(tok, &used);
    return used == tok.size();
  } catch (...) {
    return false;
  }
}

// Scans `text` for "mpc.<name> = [ ... ];" and parses the numeric rows.
// Rows are terminated by ';' or end of line.
bool read_table(const std::string& text, const std::string& name, Table& out) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const std::string key = "mpc." + name;
  bool in_table = false;
  std::vector<double> current;
  int current_line = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip_comment(line);
    if (!in_table) {
      auto kpos = s.find(key);
      if (kpos == std::string::npos) continue;
      auto rest = s.substr(kpos + key.size());
      auto eq = rest.find('=');
      if (eq == std::string::npos) continue;
      auto brk = rest.find('[', eq);
      if (brk == std::string::npos) throw ParseError(key + ": expected '[' after '='", lineno);
      in_table = true;
      s = rest.substr(brk + 1);
    }
    // Tokenize the remainder of the row(s) on this line.
    std::string tok;
    auto flush_tok = [&]() {
      if (tok.empty()) return;
      double v;
      if (!parse_number(tok, v)) throw ParseError(name + ": bad number '" + tok + "'", lineno);
      if (current.empty()) current_line = lineno;
      current.push_back(v);
      tok.clear();
    };
    for (char c : s) {
      if (c == ']') {
        flush_tok();
        if (!current.empty()) {
          out.rows.push_back(current);
          out.row_lines.push_back(current_line);
          current.clear();
        }
        return true;
      } else if (c == ';' || c == '\n') {
        flush_tok();
        if (!current.empty()) {
          out.rows.push_back(current);
          out.row_lines.push_back(current_line);
          current.clear();
        }
      } else if (c == ' ' || c == '\t' || c == ',') {
        flush_tok();
      } else {
        tok += c;
      }
    }
    flush_tok();
    // Row continues on the next line unless it was ';'-terminated above.
  }
  if (in_table) throw ParseError(name + ": table not closed with ']'", lineno);
  return false;
}

bool read_scalar(const std::string& text, const std::string& name, double& out) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const std::string key = "mpc." + name;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip_comment(line);
    auto kpos = s.find(key);
    if (kpos == std::string::npos) continue;
    auto eq = s.find('=', kpos);
    if (eq == std::string::npos) continue;
    std::string rest = s.substr(eq + 1);
    std::string tok;
    for (char c : rest) {
      if (c == ';' || c == ' ' || c == '\t') {
        if (!tok.empty()) break;
      } else {
        tok += c;
      }
    }
    double v;
    if (!parse_number(tok, v)) throw ParseError(name + ": bad number '" + tok + "'", lineno);
    out = v;
    return true;
  }
  return false;
}

}  // namespace

std::pair<double, double> admittance(double r, double x) {
  const double d = r * r + x * x;
  if (d <= 0.0) throw std::domain_error("admittance: zero-impedance line unsupported");
  return {-r / d, x / d};
}

int Network::bus_index(int bus_id) const {
  auto it = std::lower_bound(id_index_.begin(), id_index_.end(), std::make_pair(bus_id, -1));
  if (it == id_index_.end() || it->first != bus_id)
    throw ValidationError("unknown bus id " + std::to_string(bus_id));
  return it->second;
}

void Network::finalize() {
  id_index_.clear();
  id_index_.reserve(buses.size());
  for (int i = 0; i < num_buses(); ++i) id_index_.emplace_back(buses[i].id, i);
  std::sort(id_index_.begin(), id_index_.end());
  for (size_t i = 1; i < id_index_.size(); ++i)
    if (id_index_[i].first == id_index_[i - 1].first)
      throw ValidationError("duplicate bus id " + std::to_string(id_index_[i].first));

  for (const auto& b : buses) {
    if (!(b.v_min > 0) || !(b.v_min <= b.v_max))
      throw ValidationError("bus " + std::to_string(b.id) + ": need 0 < v_min <= v_max");
  }
  for (const auto& g : generators) {
    bus_index(g.bus);
    if (g.p_min > g.p_max || g.q_min > g.q_max)
      throw ValidationError("generator at bus " + std::to_string(g.bus) + ": empty output box");
    if (g.cost_quadratic < 0)
      throw ValidationError("generator at bus " + std::to_string(g.bus) +
                            ": concave cost unsupported");
  }
  lines_at_.assign(buses.size(), {});
  gens_at_.assign(buses.size(), {});
  for (int l = 0; l < num_lines(); ++l) {
    const auto& ln = lines[l];
    if (ln.from_bus == ln.to_bus)
      throw ValidationError("line " + std::to_string(l) + ": self-loop");
    if (!(ln.s_max > 0)) throw ValidationError("line " + std::to_string(l) + ": s_max must be > 0");
    lines_at_[bus_index(ln.from_bus)].push_back(l);
    lines_at_[bus_index(ln.to_bus)].push_back(l);
  }
  for (int g = 0; g < num_generators(); ++g)
    gens_at_[bus_index(generators[g].bus)].push_back(g);

  // Connectivity with every line on.
  if (!buses.empty()) {
    std::vector<uint8_t> seen(buses.size(), 0);
    std::deque<int> q{0};
    seen[0] = 1;
    size_t reached = 1;
    while (!q.empty()) {
      int b = q.front();
      q.pop_front();
      for (int l : lines_at_[b]) {
        int o = bus_index(lines[l].from_bus) == b ? bus_index(lines[l].to_bus)
                                                  : bus_index(lines[l].from_bus);
        if (!seen[o]) {
          seen[o] = 1;
          ++reached;
          q.push_back(o);
        }
      }
    }
    if (reached != buses.size())
      throw ValidationError("network disconnected with all lines in service");
  }
}

bool Network::on_subgraph_serves_all(const std::vector<uint8_t>& on) const {
  if (buses.empty()) return true;
  auto active = [&](int b) {
    const Bus& bb = buses[b];
    return bb.p_load != 0 || bb.q_load != 0 || bb.g_shunt != 0 || bb.b_shunt != 0 ||
           !gens_at_[b].empty();
  };
  int start = -1;
  for (int b = 0; b < num_buses(); ++b)
    if (active(b)) {
      start = b;
      break;
    }
  if (start < 0) return true;
  std::vector<uint8_t> seen(buses.size(), 0);
  std::deque<int> q{start};
  seen[start] = 1;
  while (!q.empty()) {
    int b = q.front();
    q.pop_front();
    for (int l : lines_at_[b]) {
      if (!on[l]) continue;
      int o = bus_index(lines[l].from_bus) == b ? bus_index(lines[l].to_bus)
                                                : bus_index(lines[l].from_bus);
      if (!seen[o]) {
        seen[o] = 1;
        q.push_back(o);
      }
    }
  }
  for (int b = 0; b < num_buses(); ++b)
    if (active(b) && !seen[b]) return false;
  return true;
}

Network parse_case(const std::string& text) {
  Network net;
  double base = 100.0;
  if (!read_scalar(text, "baseMVA", base)) throw ParseError("missing mpc.baseMVA");
  if (!(base > 0)) throw ParseError("baseMVA must be positive");
  net.base_mva = base;

  Table bus_t, gen_t, branch_t, cost_t;
  if (!read_table(text, "bus", bus_t)) throw ParseError("missing mpc.bus table");
  if (!read_table(text, "gen", gen_t)) throw ParseError("missing mpc.gen table");
  if (!read_table(text, "branch", branch_t)) throw ParseError("missing mpc.branch table");
  bool have_cost = read_table(text, "gencost", cost_t);

  for (size_t i = 0; i < bus_t.rows.size(); ++i) {
    const auto& r = bus_t.rows[i];
    if (r.size() < 13) throw ParseError("bus row needs 13 columns", bus_t.row_lines[i]);
    Bus b;
    b.id = static_cast<int>(r[0]);
    b.p_load = r[2] / base;
    b.q_load = r[3] / base;
    b.g_shunt = r[4] / base;
    b.b_shunt = r[5] / base;
    b.v_max = r[11];
    b.v_min = r[12];
    net.buses.push_back(b);
  }

  std::vector<size_t> live_gens;
  for (size_t i = 0; i < gen_t.rows.size(); ++i) {
    const auto& r = gen_t.rows[i];
    if (r.size() < 10) throw ParseError("gen row needs 10 columns", gen_t.row_lines[i]);
    if (r[7] <= 0) continue;  // out of service
    Generator g;
    g.bus = static_cast<int>(r[0]);
    g.q_max = r[3] / base;
    g.q_min = r[4] / base;
    g.p_max = r[8] / base;
    g.p_min = r[9] / base;
    net.generators.push_back(g);
    live_gens.push_back(i);
  }

  if (have_cost) {
    if (cost_t.rows.size() != gen_t.rows.size())
      throw ParseError("gencost rows (" + std::to_string(cost_t.rows.size()) +
                       ") do not match gen rows (" + std::to_string(gen_t.rows.size()) + ")");
    for (size_t k = 0; k < live_gens.size(); ++k) {
      const auto& r = cost_t.rows[live_gens[k]];
      int ln = cost_t.row_lines[live_gens[k]];
      if (r.size() < 4) throw ParseError("gencost row needs at least 4 columns", ln);
      int model = static_cast<int>(r[0]);
      if (model != 2) throw ParseError("only polynomial cost (model 2) supported", ln);
      int n = static_cast<int>(r[3]);
      if (n < 1 || n > 3) throw ParseError("polynomial cost needs 1..3 coefficients", ln);
      if (r.size() < 4 + static_cast<size_t>(n))
        throw ParseError("gencost row truncated", ln);
      Generator& g = net.generators[k];
      // Coefficients arrive for p in MW; rescale for p in p.u.
      if (n == 3) {
        g.cost_quadratic = r[4] * base * base;
        g.cost_linear = r[5] * base;
        g.cost_constant = r[6];
      } else if (n == 2) {
        g.cost_linear = r[4] * base;
        g.cost_constant = r[5];
      } else {
        g.cost_constant = r[4];
      }
    }
  }

  for (size_t i = 0; i < branch_t.rows.size(); ++i) {
    const auto& r = branch_t.rows[i];
    if (r.size() < 11) throw ParseError("branch row needs 11 columns", branch_t.row_lines[i]);
    if (r[10] == 0) continue;  // out of service
    const int fb = static_cast<int>(r[0]);
    const int tb = static_cast<int>(r[1]);
    const double tap = r[8];
    const double shift = r[9];
    if (tap != 0.0 && tap != 1.0)
      throw ValidationError("branch (" + std::to_string(fb) + "," + std::to_string(tb) +
                            "): off-nominal tap " + std::to_string(tap) + " unsupported");
    if (shift != 0.0)
      throw ValidationError("branch (" + std::to_string(fb) + "," + std::to_string(tb) +
                            "): phase shift unsupported");
    Line ln;
    ln.from_bus = fb;
    ln.to_bus = tb;
    ln.r_series = r[2];
    ln.x_series = r[3];
    double rate_a = r[5];
    ln.s_max = rate_a > 0 ? rate_a / base : 1000.0;  // 0 means unlimited in MATPOWER
    try {
      std::tie(ln.G, ln.B) = admittance(ln.r_series, ln.x_series);
    } catch (const std::domain_error& e) {
      throw ValidationError("branch (" + std::to_string(fb) + "," + std::to_string(tb) +
                            "): " + e.what());
    }
    net.lines.push_back(ln);
    // Fold line charging into the endpoint bus shunts.
    const double bc = r[4];
    if (bc != 0.0) {
      auto add = [&](int id) {
        for (auto& b : net.buses)
          if (b.id == id) {
            b.b_shunt += bc / 2.0;
            return;
          }
        throw ValidationError("branch references unknown bus " + std::to_string(id));
      };
      add(fb);
      add(tb);
    }
  }

  net.finalize();
  return net;
}

Network parse_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

namespace {

// Edge set as a sorted vector of line indices; XOR = symmetric difference.
using EdgeSet = std::vector<int>;

EdgeSet sym_diff(const EdgeSet& a, const EdgeSet& b) {
  EdgeSet out;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Tries to order `edges` into a single simple closed walk. Returns empty on
// failure (multiple loops or repeated interior buses).
std::vector<CycleEdge> walk_cycle(const Network& net, const EdgeSet& edges) {
  if (edges.size() < 3) return {};
  std::map<int, std::vector<int>> adj;  // bus index -> incident edge list
  for (int l : edges) {
    adj[net.bus_index(net.lines[l].from_bus)].push_back(l);
    adj[net.bus_index(net.lines[l].to_bus)].push_back(l);
  }
  for (auto& [b, ls] : adj)
    if (ls.size() != 2) return {};
  std::vector<CycleEdge> walk;
  std::set<int> used;
  int start_bus = adj.begin()->first;
  int bus = start_bus;
  while (true) {
    int next_line = -1;
    for (int l : adj[bus])
      if (!used.count(l)) {
        next_line = l;
        break;
      }
    if (next_line < 0) break;
    used.insert(next_line);
    const Line& ln = net.lines[next_line];
    bool fwd = net.bus_index(ln.from_bus) == bus;
    walk.push_back({next_line, fwd});
    bus = fwd ? net.bus_index(ln.to_bus) : net.bus_index(ln.from_bus);
    if (bus == start_bus) break;
  }
  if (walk.size() != edges.size() || bus != start_bus) return {};
  return walk;
}

}  // namespace

std::vector<Cycle> cycle_basis(const Network& net) {
  const int nb = net.num_buses();
  const int nl = net.num_lines();
  if (nb == 0 || nl == 0) return {};

  // BFS forest; parent edge per bus.
  std::vector<int> parent_edge(nb, -1), depth(nb, -1), parent(nb, -1);
  std::vector<uint8_t> tree_edge(nl, 0);
  for (int root = 0; root < nb; ++root) {
    if (depth[root] >= 0) continue;
    depth[root] = 0;
    std::deque<int> q{root};
    while (!q.empty()) {
      int b = q.front();
      q.pop_front();
      for (int l : net.lines_at(b)) {
        int o = net.bus_index(net.lines[l].from_bus) == b ? net.bus_index(net.lines[l].to_bus)
                                                          : net.bus_index(net.lines[l].from_bus);
        if (depth[o] < 0) {
          depth[o] = depth[b] + 1;
          parent[o] = b;
          parent_edge[o] = l;
          tree_edge[l] = 1;
          q.push_back(o);
        }
      }
    }
  }

  std::vector<EdgeSet> basis;
  for (int l = 0; l < nl; ++l) {
    if (tree_edge[l]) continue;
    // Fundamental cycle: the non-tree edge plus the tree path between ends.
    int a = net.bus_index(net.lines[l].from_bus);
    int b = net.bus_index(net.lines[l].to_bus);
    EdgeSet es{l};
    while (a != b) {
      if (depth[a] < depth[b]) std::swap(a, b);
      es.push_back(parent_edge[a]);
      a = parent[a];
    }
    std::sort(es.begin(), es.end());
    basis.push_back(es);
  }

  // Shortening pass: replace a cycle by its symmetric difference with another
  // when the result is a strictly shorter simple cycle. Replacing C_i by
  // C_i ^ C_j keeps the set a basis.
  bool improved = true;
  int guard = 0;
  while (improved && guard++ < 20) {
    improved = false;
    for (size_t i = 0; i < basis.size(); ++i) {
      for (size_t j = 0; j < basis.size(); ++j) {
        if (i == j) continue;
        EdgeSet cand = sym_diff(basis[i], basis[j]);
        if (cand.size() >= basis[i].size() || cand.size() < 3) continue;
        if (walk_cycle(net, cand).empty()) continue;
        basis[i] = std::move(cand);
        improved = true;
      }
    }
  }

  std::vector<Cycle> out;
  for (auto& es : basis) {
    Cycle c;
    c.edges = walk_cycle(net, es);
    if (c.edges.empty())
      throw ValidationError("internal: cycle basis element is not a simple cycle");
    out.push_back(std::move(c));
  }
  return out;
}

std::string network_to_json(const Network& net) {
  nlohmann::json j;
  j["version"] = 1;
  j["base_mva"] = net.base_mva;
  for (const auto& b : net.buses)
    j["buses"].push_back({{"id", b.id},
                          {"p_load", b.p_load},
                          {"q_load", b.q_load},
                          {"g_shunt", b.g_shunt},
                          {"b_shunt", b.b_shunt},
                          {"v_min", b.v_min},
                          {"v_max", b.v_max}});
  j["generators"] = nlohmann::json::array();
  for (const auto& g : net.generators)
    j["generators"].push_back({{"bus", g.bus},
                               {"p_min", g.p_min},
                               {"p_max", g.p_max},
                               {"q_min", g.q_min},
                               {"q_max", g.q_max},
                               {"cost_quadratic", g.cost_quadratic},
                               {"cost_linear", g.cost_linear},
                               {"cost_constant", g.cost_constant}});
  j["lines"] = nlohmann::json::array();
  for (const auto& l : net.lines)
    j["lines"].push_back({{"from_bus", l.from_bus},
                          {"to_bus", l.to_bus},
                          {"r_series", l.r_series},
                          {"x_series", l.x_series},
                          {"s_max", l.s_max},
                          {"switchable", l.switchable}});
  return j.dump(2);
}

Network network_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.value("version", 0) != 1) throw ParseError("unsupported network fixture version");
  Network net;
  net.base_mva = j.at("base_mva").get<double>();
  for (const auto& jb : j.value("buses", nlohmann::json::array())) {
    Bus b;
    b.id = jb.at("id");
    b.p_load = jb.at("p_load");
    b.q_load = jb.at("q_load");
    b.g_shunt = jb.at("g_shunt");
    b.b_shunt = jb.at("b_shunt");
    b.v_min = jb.at("v_min");
    b.v_max = jb.at("v_max");
    net.buses.push_back(b);
  }
  for (const auto& jg : j.value("generators", nlohmann::json::array())) {
    Generator g;
    g.bus = jg.at("bus");
    g.p_min = jg.at("p_min");
    g.p_max = jg.at("p_max");
    g.q_min = jg.at("q_min");
    g.q_max = jg.at("q_max");
    g.cost_quadratic = jg.at("cost_quadratic");
    g.cost_linear = jg.at("cost_linear");
    g.cost_constant = jg.at("cost_constant");
    net.generators.push_back(g);
  }
  for (const auto& jl : j.value("lines", nlohmann::json::array())) {
    Line l;
    l.from_bus = jl.at("from_bus");
    l.to_bus = jl.at("to_bus");
    l.r_series = jl.at("r_series");
    l.x_series = jl.at("x_series");
    l.s_max = jl.at("s_max");
    l.switchable = jl.at("switchable");
    std::tie(l.G, l.B) = admittance(l.r_series, l.x_series);
    net.lines.push_back(l);
  }
  net.finalize();
  return net;
}

}  // namespace ots
