#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace ots {

/// Cone of the slack vector s = b - A x over one contiguous row block.
///   Zero:   s = 0 (equality rows)
///   NonNeg: s >= 0 (a x <= b rows)
///   Soc:    s0 >= ||s_1:||
///   RSoc:   s0*s1 >= ||s_2:||^2, s0, s1 >= 0
///   Psd:    s = svec(M) with M of order `size` PSD (off-diagonals scaled
///           by sqrt(2); rows = size*(size+1)/2)
enum class ConeKind { Zero, NonNeg, Soc, RSoc, Psd };

struct ConeBlock {
  ConeKind kind = ConeKind::Zero;
  int size = 0;  // rows, except Psd where it is the matrix order
  int rows() const { return kind == ConeKind::Psd ? size * (size + 1) / 2 : size; }
};

/// Sparse linear expression sum coef*x[var].
using LinExpr = std::vector<std::pair<int, double>>;

struct ConeRow {
  LinExpr expr;
  double rhs = 0;
};

/// A conic program  min c'x + c0  s.t.  b - A x in K1 x K2 x ...
/// Rows are stored as triplets grouped by cone blocks in declaration order.
class ConicProgram {
 public:
  int num_vars() const { return num_vars_; }
  int num_rows() const { return num_rows_; }

  int add_variable(std::string name = "");
  void reserve_rows(int rows, int nnz);

  void add_objective_term(int var, double coef);
  void set_objective_constant(double c0) { obj_constant_ = c0; }
  double objective_constant() const { return obj_constant_; }

  /// expr == rhs
  void add_eq(const LinExpr& expr, double rhs) { append_block(ConeKind::Zero, {{expr, rhs}}); }
  /// expr <= rhs
  void add_le(const LinExpr& expr, double rhs) { append_block(ConeKind::NonNeg, {{expr, rhs}}); }
  /// expr >= rhs
  void add_ge(LinExpr expr, double rhs);
  /// lo <= x[var] <= hi (either side may be +-inf)
  void add_box(int var, double lo, double hi);

  /// General cone block; rows are (expr, rhs) with slack rhs - expr.
  void append_block(ConeKind kind, const std::vector<ConeRow>& rows);
  /// PSD block of matrix order d: rows must hold d*(d+1)/2 entries in svec
  /// order (col-major upper triangle), already carrying the sqrt(2) scaling.
  void append_psd_block(int order, const std::vector<ConeRow>& rows);

  const std::vector<ConeBlock>& cones() const { return cones_; }
  const std::vector<Eigen::Triplet<double>>& triplets() const { return triplets_; }
  const std::vector<double>& rhs() const { return rhs_; }
  const std::vector<std::pair<int, double>>& objective() const { return obj_; }
  const std::vector<std::string>& names() const { return names_; }

  Eigen::SparseMatrix<double> matrix() const;
  Eigen::VectorXd rhs_vector() const;
  Eigen::VectorXd cost_vector() const;

  double eval_objective(const Eigen::VectorXd& x) const;

  /// JSON interchange format (versioned), usable by external solvers.
  std::string to_json() const;
  static ConicProgram from_json(const std::string& text);

 private:
  int num_vars_ = 0;
  int num_rows_ = 0;
  double obj_constant_ = 0;
  std::vector<std::pair<int, double>> obj_;
  std::vector<Eigen::Triplet<double>> triplets_;
  std::vector<double> rhs_;
  std::vector<ConeBlock> cones_;
  std::vector<std::string> names_;
};

/// Mixed-integer conic program: base program plus binary variables.
struct MIConicProgram {
  ConicProgram base;
  std::vector<int> binaries;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterLimit, TimeLimit };

const char* to_string(SolveStatus s);

struct ConicSolution {
  SolveStatus status = SolveStatus::IterLimit;
  Eigen::VectorXd x;  // primal values
  Eigen::VectorXd y;  // dual multiplier per row, in K*
  Eigen::VectorXd s;  // slack per row
  double objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double gap_abs = std::numeric_limits<double>::infinity();
  double gap_rel = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int psd_rounds = 0;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

struct SolveOptions {
  double feas_tol = 1e-8;
  double gap_tol_abs = 1e-8;
  double gap_tol_rel = 1e-8;
  int max_iters = 200;
  double time_limit_sec = std::numeric_limits<double>::infinity();
  int psd_max_rounds = 80;
  double psd_tol = 1e-7;  // accept when lambda_min(W) >= -psd_tol
  bool verbose = false;
};

/// Interior-point solve. Programs containing PSD blocks are routed through
/// the eigenvalue outer loop automatically.
ConicSolution solve(const ConicProgram& prog, const SolveOptions& opts = {});

/// Outer loop for PSD blocks: solves the SOC part, adds linear cuts
/// v'Mv >= 0 for eigenvectors of negative eigenvalues, repeats until
/// lambda_min >= -psd_tol for every block.
ConicSolution psd_outer_loop(const ConicProgram& prog, const SolveOptions& opts = {});

/// Adapter so an external solver can be swapped in for cross-checks.
class ConicSolverBackend {
 public:
  virtual ~ConicSolverBackend() = default;
  virtual ConicSolution solve(const ConicProgram& prog, const SolveOptions& opts) = 0;
};

/// svec packing order for PSD blocks: (0,0),(0,1),(1,1),(0,2),(1,2),(2,2),...
int svec_size(int order);
int svec_index(int row, int col);  // requires row <= col
Eigen::MatrixXd svec_to_matrix(const Eigen::VectorXd& v, int order);
Eigen::VectorXd matrix_to_svec(const Eigen::MatrixXd& m);

}  // namespace ots
