#include "ots/conic.hpp"

#include <stdexcept>

#include "json.hpp"

namespace ots {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterLimit: return "iteration-limit";
    case SolveStatus::TimeLimit: return "time-limit";
  }
  return "?";
}

int ConicProgram::add_variable(std::string name) {
  names_.push_back(std::move(name));
  return num_vars_++;
}

void ConicProgram::reserve_rows(int rows, int nnz) {
  rhs_.reserve(rhs_.size() + rows);
  triplets_.reserve(triplets_.size() + nnz);
}

void ConicProgram::add_objective_term(int var, double coef) {
  if (coef != 0.0) obj_.emplace_back(var, coef);
}

void ConicProgram::add_ge(LinExpr expr, double rhs) {
  for (auto& t : expr) t.second = -t.second;
  append_block(ConeKind::NonNeg, {{std::move(expr), -rhs}});
}

void ConicProgram::add_box(int var, double lo, double hi) {
  const double inf = std::numeric_limits<double>::infinity();
  if (lo == hi) {
    add_eq({{var, 1.0}}, lo);
    return;
  }
  if (lo > -inf) add_ge({{var, 1.0}}, lo);
  if (hi < inf) add_le({{var, 1.0}}, hi);
}

void ConicProgram::append_block(ConeKind kind, const std::vector<ConeRow>& rows) {
  if (kind == ConeKind::Psd) throw std::logic_error("use append_psd_block");
  if (rows.empty()) return;
  for (const auto& r : rows) {
    for (const auto& [v, coef] : r.expr) {
      if (v < 0 || v >= num_vars_) throw std::out_of_range("conic row references unknown variable");
      if (coef != 0.0) triplets_.emplace_back(num_rows_, v, coef);
    }
    rhs_.push_back(r.rhs);
    ++num_rows_;
  }
  // Merge adjacent Zero/NonNeg blocks to keep the cone list compact.
  if ((kind == ConeKind::Zero || kind == ConeKind::NonNeg) && !cones_.empty() &&
      cones_.back().kind == kind) {
    cones_.back().size += static_cast<int>(rows.size());
  } else {
    cones_.push_back({kind, static_cast<int>(rows.size())});
  }
}

void ConicProgram::append_psd_block(int order, const std::vector<ConeRow>& rows) {
  if (static_cast<int>(rows.size()) != svec_size(order))
    throw std::invalid_argument("psd block needs order*(order+1)/2 rows");
  for (const auto& r : rows) {
    for (const auto& [v, coef] : r.expr) {
      if (v < 0 || v >= num_vars_) throw std::out_of_range("conic row references unknown variable");
      if (coef != 0.0) triplets_.emplace_back(num_rows_, v, coef);
    }
    rhs_.push_back(r.rhs);
    ++num_rows_;
  }
  cones_.push_back({ConeKind::Psd, order});
}

Eigen::SparseMatrix<double> ConicProgram::matrix() const {
  Eigen::SparseMatrix<double> A(num_rows_, num_vars_);
  A.setFromTriplets(triplets_.begin(), triplets_.end());
  return A;
}

Eigen::VectorXd ConicProgram::rhs_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(rhs_.data(), rhs_.size());
}

Eigen::VectorXd ConicProgram::cost_vector() const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(num_vars_);
  for (auto [v, coef] : obj_) c[v] += coef;
  return c;
}

double ConicProgram::eval_objective(const Eigen::VectorXd& x) const {
  double v = obj_constant_;
  for (auto [i, coef] : obj_) v += coef * x[i];
  return v;
}

std::string ConicProgram::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["num_vars"] = num_vars_;
  j["objective"]["constant"] = obj_constant_;
  auto& terms = j["objective"]["terms"] = nlohmann::json::array();
  for (auto [v, coef] : obj_) terms.push_back({v, coef});
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& t : triplets_) rows.push_back({t.row(), t.col(), t.value()});
  j["rhs"] = rhs_;
  auto& cones = j["cones"] = nlohmann::json::array();
  for (const auto& c : cones_) {
    const char* kind = nullptr;
    switch (c.kind) {
      case ConeKind::Zero: kind = "zero"; break;
      case ConeKind::NonNeg: kind = "nonneg"; break;
      case ConeKind::Soc: kind = "soc"; break;
      case ConeKind::RSoc: kind = "rsoc"; break;
      case ConeKind::Psd: kind = "psd"; break;
    }
    cones.push_back({{"kind", kind}, {"size", c.size}});
  }
  bool any_name = false;
  for (const auto& n : names_)
    if (!n.empty()) any_name = true;
  if (any_name) j["names"] = names_;
  return j.dump();
}

ConicProgram ConicProgram::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported conic program version");
  ConicProgram p;
  int nv = j.at("num_vars");
  std::vector<std::string> names(nv);
  if (j.contains("names")) names = j["names"].get<std::vector<std::string>>();
  for (int i = 0; i < nv; ++i) p.add_variable(names[i]);
  p.set_objective_constant(j["objective"].value("constant", 0.0));
  for (const auto& t : j["objective"]["terms"]) p.add_objective_term(t[0], t[1]);
  std::vector<double> rhs = j.at("rhs").get<std::vector<double>>();
  std::vector<Eigen::Triplet<double>> trips;
  for (const auto& r : j.at("rows")) trips.emplace_back(r[0], r[1], r[2]);
  // Rebuild block by block so invariants stay checked.
  std::vector<std::vector<std::pair<int, double>>> per_row(rhs.size());
  for (const auto& t : trips) per_row[t.row()].emplace_back(t.col(), t.value());
  int row = 0;
  for (const auto& jc : j.at("cones")) {
    std::string kind = jc.at("kind");
    int size = jc.at("size");
    ConeKind k;
    if (kind == "zero") k = ConeKind::Zero;
    else if (kind == "nonneg") k = ConeKind::NonNeg;
    else if (kind == "soc") k = ConeKind::Soc;
    else if (kind == "rsoc") k = ConeKind::RSoc;
    else if (kind == "psd") k = ConeKind::Psd;
    else throw std::invalid_argument("unknown cone kind " + kind);
    int nrows = (k == ConeKind::Psd) ? svec_size(size) : size;
    std::vector<ConeRow> block;
    for (int i = 0; i < nrows; ++i, ++row) block.push_back({per_row.at(row), rhs.at(row)});
    if (k == ConeKind::Psd) p.append_psd_block(size, block);
    else p.append_block(k, block);
  }
  if (row != static_cast<int>(rhs.size()))
    throw std::invalid_argument("cone blocks do not cover all rows");
  return p;
}

int svec_size(int order) { return order * (order + 1) / 2; }

int svec_index(int row, int col) { return col * (col + 1) / 2 + row; }

Eigen::MatrixXd svec_to_matrix(const Eigen::VectorXd& v, int order) {
  const double rt2 = std::sqrt(2.0);
  Eigen::MatrixXd m(order, order);
  for (int c = 0; c < order; ++c)
    for (int r = 0; r <= c; ++r) {
      double val = v[svec_index(r, c)];
      if (r == c) {
        m(r, c) = val;
      } else {
        m(r, c) = m(c, r) = val / rt2;
      }
    }
  return m;
}

Eigen::VectorXd matrix_to_svec(const Eigen::MatrixXd& m) {
  const double rt2 = std::sqrt(2.0);
  const int d = static_cast<int>(m.rows());
  Eigen::VectorXd v(svec_size(d));
  for (int c = 0; c < d; ++c)
    for (int r = 0; r <= c; ++r) v[svec_index(r, c)] = (r == c) ? m(r, c) : rt2 * m(r, c);
  return v;
}

}  // namespace ots
