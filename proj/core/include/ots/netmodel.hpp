#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ots {

/// Thrown on malformed case text. Carries the 1-based source line when known.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg, int line = -1)
      : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Thrown when a parsed case violates a model requirement (disconnected
/// network, off-nominal tap, dangling reference, ...).
class ValidationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;          // external bus number, unique
  double p_load = 0;   // p.u.
  double q_load = 0;   // p.u.
  double g_shunt = 0;  // p.u., consumes g*|V|^2
  double b_shunt = 0;  // p.u., injects b*|V|^2 (line charging folded in here)
  double v_min = 0;    // p.u.
  double v_max = 0;    // p.u.
};

struct Generator {
  int bus = 0;                  // external bus id
  double p_min = 0, p_max = 0;  // p.u.
  double q_min = 0, q_max = 0;  // p.u.
  // Cost of active output, original currency units with p in p.u.:
  // C(p) = cost_quadratic*p^2 + cost_linear*p + cost_constant.
  double cost_quadratic = 0;
  double cost_linear = 0;
  double cost_constant = 0;
};

struct Line {
  int from_bus = 0, to_bus = 0;       // external bus ids
  double r_series = 0, x_series = 0;  // p.u.
  double s_max = 0;                   // p.u. apparent power limit
  double G = 0, B = 0;                // negated series admittance, see admittance()
  bool switchable = true;
};

/// One element of a cycle walk: a line index plus the traversal direction.
/// forward == true means the walk passes from_bus -> to_bus.
struct CycleEdge {
  int line = 0;
  bool forward = true;
};

struct Cycle {
  std::vector<CycleEdge> edges;  // closed walk, consecutive edges share a bus
  int size() const { return static_cast<int>(edges.size()); }
};

class Network {
 public:
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> generators;
  std::vector<Line> lines;

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_lines() const { return static_cast<int>(lines.size()); }
  int num_generators() const { return static_cast<int>(generators.size()); }

  /// Internal index of an external bus id; throws ValidationError if unknown.
  int bus_index(int bus_id) const;

  /// Generator indices attached to internal bus index b.
  const std::vector<int>& generators_at(int b) const { return gens_at_[b]; }

  /// Line indices incident to internal bus index b.
  const std::vector<int>& lines_at(int b) const { return lines_at_[b]; }

  /// Validates invariants and rebuilds adjacency. Throws ValidationError.
  void finalize();

  /// True when the subgraph of switched-on lines connects every bus that
  /// carries load, shunt or generation. Buses carrying nothing may island.
  bool on_subgraph_serves_all(const std::vector<uint8_t>& on) const;

 private:
  std::vector<std::vector<int>> lines_at_;
  std::vector<std::vector<int>> gens_at_;
  std::vector<std::pair<int, int>> id_index_;  // sorted (external id, index)
};

/// Negated series admittance of a line with impedance r + ix:
///   (G, B) = (-r/(r^2+x^2), x/(r^2+x^2)).
/// Throws std::domain_error when r = x = 0.
std::pair<double, double> admittance(double r, double x);

/// Parse MATPOWER case text (mpc.bus / mpc.gen / mpc.branch / mpc.gencost).
/// All quantities are converted to per-unit on baseMVA; cost coefficients are
/// rescaled so the objective keeps its original units. Branches with status 0
/// are dropped; off-nominal taps or phase shifts are rejected.
Network parse_case(const std::string& text);

/// Convenience: parse a case from a file path.
Network parse_case_file(const std::string& path);

/// Cycle basis of the network graph: exactly |L| - |B| + #components
/// independent cycles. Fundamental cycles from a BFS tree, then a GF(2)
/// reduction pass that swaps in strictly shorter symmetric differences.
std::vector<Cycle> cycle_basis(const Network& net);

/// Versioned JSON fixture format.
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& json_text);

}  // namespace ots
