#include <algorithm>
#include <cstdio>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "ots/conic.hpp"

namespace ots {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Trip = Eigen::Triplet<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Presolve: fix variables pinned by singleton equality rows, drop empty rows.
// ---------------------------------------------------------------------------

struct ElimRecord {
  int orig_row;  // singleton equality row that fixed the variable
  int var;       // original variable index
  double coef;   // row coefficient on var
};

struct Presolved {
  bool infeasible = false;
  int infeasible_row = -1;
  double infeasible_sign = 0;  // certificate entry on that row
  int orig_vars = 0;
  std::vector<int> var_map;       // orig var -> reduced var (-1 if fixed)
  Vec fixed_vals;                 // per orig var, value when fixed
  std::vector<ElimRecord> elims;  // in elimination order
  std::vector<int> row_map;       // orig row -> reduced row (-1 if dropped)
  ConicProgram reduced;
};

struct RowView {
  std::vector<std::pair<int, double>> cols;
  double rhs = 0;
  ConeKind kind = ConeKind::Zero;
  bool dropped = false;
};

Presolved presolve(const ConicProgram& prog) {
  Presolved out;
  const int n = prog.num_vars();
  const int m = prog.num_rows();
  out.orig_vars = n;
  out.var_map.assign(n, 0);
  out.fixed_vals = Vec::Zero(n);
  out.row_map.assign(m, -1);

  std::vector<RowView> rows(m);
  {
    int r = 0;
    for (const auto& blk : prog.cones()) {
      for (int i = 0; i < blk.rows(); ++i) rows[r + i].kind = blk.kind;
      r += blk.rows();
    }
  }
  for (const auto& t : prog.triplets()) rows[t.row()].cols.emplace_back(t.col(), t.value());
  for (int r = 0; r < m; ++r) rows[r].rhs = prog.rhs()[r];

  std::vector<char> fixed(n, 0);
  Vec fixval = Vec::Zero(n);

  bool changed = true;
  while (changed) {
    changed = false;
    // Pass 1: compact rows against known fixings, find new singletons.
    for (int r = 0; r < m; ++r) {
      auto& row = rows[r];
      if (row.dropped) continue;
      std::vector<std::pair<int, double>> kept;
      double shift = 0;
      for (auto [v, a] : row.cols) {
        if (fixed[v]) shift += a * fixval[v];
        else kept.push_back({v, a});
      }
      if (shift != 0 || kept.size() != row.cols.size()) {
        row.cols = std::move(kept);
        row.rhs -= shift;
      }
      if (row.kind != ConeKind::Zero) continue;
      if (row.cols.empty()) {
        if (std::abs(row.rhs) > 1e-10) {
          out.infeasible = true;
          out.infeasible_row = r;
          out.infeasible_sign = row.rhs > 0 ? -1.0 : 1.0;
          return out;
        }
        row.dropped = true;
        continue;
      }
      if (row.cols.size() == 1) {
        auto [v, a] = row.cols[0];
        if (std::abs(a) < 1e-14) continue;
        fixed[v] = 1;
        fixval[v] = row.rhs / a;
        out.elims.push_back({r, v, a});
        row.dropped = true;
        changed = true;
      }
    }
  }

  // Drop empty nonnegative rows (0 <= rhs) or report infeasibility.
  for (int r = 0; r < m; ++r) {
    auto& row = rows[r];
    if (row.dropped || row.kind != ConeKind::NonNeg || !row.cols.empty()) continue;
    if (row.rhs < -1e-10) {
      out.infeasible = true;
      out.infeasible_row = r;
      out.infeasible_sign = 1.0;
      return out;
    }
    row.dropped = true;
  }

  // Rebuild the reduced program block by block.
  std::vector<int> new_var(n, -1);
  int nv = 0;
  for (int v = 0; v < n; ++v)
    if (!fixed[v]) new_var[v] = nv++;
  out.var_map = new_var;
  for (int v = 0; v < n; ++v) out.fixed_vals[v] = fixed[v] ? fixval[v] : 0.0;

  ConicProgram& red = out.reduced;
  for (int v = 0; v < n; ++v)
    if (!fixed[v]) red.add_variable();
  double c0 = prog.objective_constant();
  for (auto [v, coef] : prog.objective()) {
    if (fixed[v]) c0 += coef * fixval[v];
    else red.add_objective_term(new_var[v], coef);
  }
  red.set_objective_constant(c0);

  int r0 = 0;
  int new_row = 0;
  for (const auto& blk : prog.cones()) {
    const int nr = blk.rows();
    if (blk.kind == ConeKind::Zero || blk.kind == ConeKind::NonNeg) {
      std::vector<ConeRow> keep;
      for (int i = 0; i < nr; ++i) {
        const auto& row = rows[r0 + i];
        if (row.dropped) continue;
        LinExpr e;
        for (auto [v, a] : row.cols) e.emplace_back(new_var[v], a);
        keep.push_back({std::move(e), row.rhs});
        out.row_map[r0 + i] = new_row++;
      }
      if (!keep.empty()) red.append_block(blk.kind, keep);
    } else {
      // Cone blocks survive intact (values updated by fixings above).
      std::vector<ConeRow> all;
      for (int i = 0; i < nr; ++i) {
        const auto& row = rows[r0 + i];
        LinExpr e;
        for (auto [v, a] : row.cols) e.emplace_back(new_var[v], a);
        all.push_back({std::move(e), row.rhs});
        out.row_map[r0 + i] = new_row + i;
      }
      new_row += nr;
      if (blk.kind == ConeKind::Psd) red.append_psd_block(blk.size, all);
      else red.append_block(blk.kind, all);
    }
    r0 += nr;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lowering to the interior-point standard form
//   min c'x  s.t.  A x = b,  G x + s = h,  s in R+^l x SOC(q1) x ...
// RSoc blocks are turned into Soc blocks; Psd must have been handled upstream.
// ---------------------------------------------------------------------------

struct RowTarget {
  enum Kind { Eq, Cone } kind = Eq;
  int index = 0;  // row in A (Eq) or in G (Cone)
};

struct Lowered {
  int n = 0;
  SpMat A, G;
  Vec b, h, c;
  double c0 = 0;
  int l = 0;                  // leading nonnegative rows of G
  std::vector<int> soc_dims;  // SOC block sizes after the nonnegative part
  std::vector<RowTarget> map;           // reduced row -> target
  std::vector<ConeKind> reduced_kind;   // reduced row -> original kind
  std::vector<int> rsoc_block_start;    // reduced row index of RSoc block starts
};

Lowered lower(const ConicProgram& prog) {
  Lowered lo;
  lo.n = prog.num_vars();
  lo.c = prog.cost_vector();
  lo.c0 = prog.objective_constant();

  const int m = prog.num_rows();
  std::vector<std::vector<std::pair<int, double>>> rowdata(m);
  for (const auto& t : prog.triplets()) rowdata[t.row()].emplace_back(t.col(), t.value());
  const auto& rhs = prog.rhs();

  lo.map.resize(m);
  lo.reduced_kind.assign(m, ConeKind::Zero);

  // Count layout.
  int me = 0, ml = 0;
  std::vector<int> socs;
  int r0 = 0;
  for (const auto& blk : prog.cones()) {
    switch (blk.kind) {
      case ConeKind::Zero: me += blk.size; break;
      case ConeKind::NonNeg: ml += blk.size; break;
      case ConeKind::Soc: socs.push_back(blk.size); break;
      case ConeKind::RSoc: socs.push_back(blk.size); break;
      case ConeKind::Psd: throw std::logic_error("psd block reached the cone IPM");
    }
    r0 += blk.rows();
  }
  bool dummy_row = false;
  if (ml == 0 && socs.empty()) {
    ml = 1;  // harmless 0 <= 1 row so the cone machinery is never empty
    dummy_row = true;
  }
  lo.l = ml;
  lo.soc_dims = socs;

  std::vector<Trip> ta, tg;
  lo.b = Vec::Zero(me);
  const int mc = ml + std::accumulate(socs.begin(), socs.end(), 0);
  lo.h = Vec::Zero(mc);
  if (dummy_row) lo.h[0] = 1.0;

  int ie = 0, il = 0, ic = ml;
  r0 = 0;
  const double rt = 1.0;
  (void)rt;
  for (const auto& blk : prog.cones()) {
    const int nr = blk.rows();
    if (blk.kind == ConeKind::Zero) {
      for (int i = 0; i < nr; ++i) {
        for (auto [v, a] : rowdata[r0 + i]) ta.emplace_back(ie, v, a);
        lo.b[ie] = rhs[r0 + i];
        lo.map[r0 + i] = {RowTarget::Eq, ie};
        lo.reduced_kind[r0 + i] = ConeKind::Zero;
        ++ie;
      }
    } else if (blk.kind == ConeKind::NonNeg) {
      for (int i = 0; i < nr; ++i) {
        for (auto [v, a] : rowdata[r0 + i]) tg.emplace_back(il, v, a);
        lo.h[il] = rhs[r0 + i];
        lo.map[r0 + i] = {RowTarget::Cone, il};
        lo.reduced_kind[r0 + i] = ConeKind::NonNeg;
        ++il;
      }
    } else if (blk.kind == ConeKind::Soc) {
      for (int i = 0; i < nr; ++i) {
        for (auto [v, a] : rowdata[r0 + i]) tg.emplace_back(ic + i, v, a);
        lo.h[ic + i] = rhs[r0 + i];
        lo.map[r0 + i] = {RowTarget::Cone, ic + i};
        lo.reduced_kind[r0 + i] = ConeKind::Soc;
      }
      ic += nr;
    } else {  // RSoc -> Soc via (u,v,w) -> (u+v, u-v, 2w)
      lo.rsoc_block_start.push_back(r0);
      for (auto [v, a] : rowdata[r0]) tg.emplace_back(ic, v, a);
      for (auto [v, a] : rowdata[r0 + 1]) tg.emplace_back(ic, v, a);
      lo.h[ic] = rhs[r0] + rhs[r0 + 1];
      for (auto [v, a] : rowdata[r0]) tg.emplace_back(ic + 1, v, a);
      for (auto [v, a] : rowdata[r0 + 1]) tg.emplace_back(ic + 1, v, -a);
      lo.h[ic + 1] = rhs[r0] - rhs[r0 + 1];
      for (int i = 2; i < nr; ++i) {
        for (auto [v, a] : rowdata[r0 + i]) tg.emplace_back(ic + i, v, 2.0 * a);
        lo.h[ic + i] = 2.0 * rhs[r0 + i];
      }
      for (int i = 0; i < nr; ++i) {
        lo.map[r0 + i] = {RowTarget::Cone, ic + i};
        lo.reduced_kind[r0 + i] = ConeKind::RSoc;
      }
      ic += nr;
    }
    r0 += nr;
  }

  lo.A = SpMat(me, lo.n);
  lo.A.setFromTriplets(ta.begin(), ta.end());
  lo.G = SpMat(mc, lo.n);
  lo.G.setFromTriplets(tg.begin(), tg.end());
  return lo;
}

// ---------------------------------------------------------------------------
// Cone algebra over (l, soc_dims) layouts.
// ---------------------------------------------------------------------------

struct ConeOps {
  int l = 0;
  std::vector<int> q;
  int dim() const { return l + std::accumulate(q.begin(), q.end(), 0); }
  int degree() const { return l + static_cast<int>(q.size()); }

  double min_eig(const Vec& u) const {
    double me = kInf;
    for (int i = 0; i < l; ++i) me = std::min(me, u[i]);
    int k = l;
    for (int d : q) {
      me = std::min(me, u[k] - u.segment(k + 1, d - 1).norm());
      k += d;
    }
    return me;
  }

  void add_unit(Vec& u, double a) const {
    for (int i = 0; i < l; ++i) u[i] += a;
    int k = l;
    for (int d : q) {
      u[k] += a;
      k += d;
    }
  }

  Vec unit() const {
    Vec e = Vec::Zero(dim());
    add_unit(e, 1.0);
    return e;
  }

  // Largest t >= 0 with u + t*du staying in the cone; kInf if unlimited.
  double max_step(const Vec& u, const Vec& du) const {
    double t = kInf;
    for (int i = 0; i < l; ++i)
      if (du[i] < 0) t = std::min(t, -u[i] / du[i]);
    int k = l;
    for (int d : q) {
      const double u0 = u[k], d0 = du[k];
      const auto u1 = u.segment(k + 1, d - 1);
      const auto d1 = du.segment(k + 1, d - 1);
      const double a = d0 * d0 - d1.squaredNorm();
      const double b = 2.0 * (u0 * d0 - u1.dot(d1));
      const double cc = u0 * u0 - u1.squaredNorm();
      double tq = kInf;
      // Smallest positive root of a t^2 + b t + cc = 0 (cc >= 0 at a point
      // inside the cone).
      const double disc = b * b - 4 * a * cc;
      if (std::abs(a) < 1e-300) {
        if (b < 0) tq = -cc / b;
      } else if (disc >= 0) {
        const double sq = std::sqrt(disc);
        const double r1 = (-b - sq) / (2 * a);
        const double r2 = (-b + sq) / (2 * a);
        for (double r : {std::min(r1, r2), std::max(r1, r2)})
          if (r > 0) {
            tq = r;
            break;
          }
      }
      if (d0 < 0) tq = std::min(tq, -u0 / d0);
      t = std::min(t, tq);
      k += d;
    }
    return t;
  }

  Vec jordan(const Vec& u, const Vec& v) const {
    Vec w(dim());
    for (int i = 0; i < l; ++i) w[i] = u[i] * v[i];
    int k = l;
    for (int d : q) {
      w[k] = u.segment(k, d).dot(v.segment(k, d));
      w.segment(k + 1, d - 1) =
          u[k] * v.segment(k + 1, d - 1) + v[k] * u.segment(k + 1, d - 1);
      k += d;
    }
    return w;
  }

  // Solves lambda o g = d.
  Vec jordan_div(const Vec& lam, const Vec& d) const {
    Vec g(dim());
    for (int i = 0; i < l; ++i) g[i] = d[i] / lam[i];
    int k = l;
    for (int dq : q) {
      const double l0 = lam[k];
      const auto l1 = lam.segment(k + 1, dq - 1);
      const double det = l0 * l0 - l1.squaredNorm();
      const double g0 = (l0 * d[k] - l1.dot(d.segment(k + 1, dq - 1))) / det;
      g[k] = g0;
      g.segment(k + 1, dq - 1) = (d.segment(k + 1, dq - 1) - g0 * l1) / l0;
      k += dq;
    }
    return g;
  }
};

// Nesterov-Todd scaling state.
struct NTScaling {
  ConeOps ops;
  Vec w_lp;                         // sqrt(s/z) per nonnegative row
  std::vector<double> eta;          // per SOC
  std::vector<Vec> wbar;            // per SOC, unit hyperbolic point
  Vec lambda;                       // W z = W^{-1} s

  bool update(const Vec& s, const Vec& z) {
    const int l = ops.l;
    w_lp.resize(l);
    for (int i = 0; i < l; ++i) {
      if (s[i] <= 0 || z[i] <= 0) return false;
      w_lp[i] = std::sqrt(s[i] / z[i]);
    }
    eta.assign(ops.q.size(), 0);
    wbar.assign(ops.q.size(), Vec());
    int k = l;
    for (size_t ci = 0; ci < ops.q.size(); ++ci) {
      const int d = ops.q[ci];
      const auto sb = s.segment(k, d);
      const auto zb = z.segment(k, d);
      // Factored form avoids cancellation close to the boundary.
      const double sres = (sb[0] - sb.tail(d - 1).norm()) * (sb[0] + sb.tail(d - 1).norm());
      const double zres = (zb[0] - zb.tail(d - 1).norm()) * (zb[0] + zb.tail(d - 1).norm());
      if (sres <= 0 || zres <= 0) return false;
      const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
      Vec sbar = sb / snorm, zbar = zb / znorm;
      const double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
      Vec w(d);
      w[0] = (sbar[0] + zbar[0]) / (2 * gamma);
      w.tail(d - 1) = (sbar.tail(d - 1) - zbar.tail(d - 1)) / (2 * gamma);
      wbar[ci] = w;
      eta[ci] = std::sqrt(snorm / znorm);
      k += d;
    }
    lambda = apply_W(z);
    return true;
  }

  // H(w) v with w'Jw = 1.
  static Vec apply_H(const Vec& w, const Vec& v) {
    const int d = static_cast<int>(w.size());
    Vec r(d);
    const double a = w[0];
    const auto q1 = w.tail(d - 1);
    const double dot = q1.dot(v.tail(d - 1));
    r[0] = a * v[0] + dot;
    r.tail(d - 1) = v[0] * q1 + v.tail(d - 1) + (dot / (1.0 + a)) * q1;
    return r;
  }

  Vec apply_W(const Vec& v) const {
    Vec r(v.size());
    for (int i = 0; i < ops.l; ++i) r[i] = w_lp[i] * v[i];
    int k = ops.l;
    for (size_t ci = 0; ci < ops.q.size(); ++ci) {
      const int d = ops.q[ci];
      r.segment(k, d) = eta[ci] * apply_H(wbar[ci], v.segment(k, d));
      k += d;
    }
    return r;
  }

  Vec apply_Winv(const Vec& v) const {
    Vec r(v.size());
    for (int i = 0; i < ops.l; ++i) r[i] = v[i] / w_lp[i];
    int k = ops.l;
    for (size_t ci = 0; ci < ops.q.size(); ++ci) {
      const int d = ops.q[ci];
      Vec wj = wbar[ci];
      wj.tail(d - 1) = -wj.tail(d - 1);
      r.segment(k, d) = apply_H(wj, v.segment(k, d)) / eta[ci];
      k += d;
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// KKT system assembly and solve with static regularization + refinement.
// ---------------------------------------------------------------------------

struct KktSolver {
  int n = 0, me = 0, mc = 0;
  const Lowered* lo = nullptr;
  SpMat K;             // unregularized, rebuilt each iteration
  SpMat Kreg;
  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;
  double delta = 1e-9;

  void assemble(const NTScaling& nt) {
    n = lo->n;
    me = static_cast<int>(lo->A.rows());
    mc = static_cast<int>(lo->G.rows());
    const int N = n + me + mc;
    std::vector<Trip> t;
    t.reserve(lo->A.nonZeros() * 2 + lo->G.nonZeros() * 2 + N * 2 + 64);
    for (int k = 0; k < lo->A.outerSize(); ++k)
      for (SpMat::InnerIterator it(lo->A, k); it; ++it) {
        t.emplace_back(n + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n + it.row(), it.value());
      }
    for (int k = 0; k < lo->G.outerSize(); ++k)
      for (SpMat::InnerIterator it(lo->G, k); it; ++it) {
        t.emplace_back(n + me + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n + me + it.row(), it.value());
      }
    // -W^2 block: diagonal for the nonnegative part, dense per SOC.
    for (int i = 0; i < nt.ops.l; ++i) {
      const double w2 = nt.w_lp[i] * nt.w_lp[i];
      t.emplace_back(n + me + i, n + me + i, -w2);
    }
    int k0 = nt.ops.l;
    for (size_t ci = 0; ci < nt.ops.q.size(); ++ci) {
      const int d = nt.ops.q[ci];
      const Vec& w = nt.wbar[ci];
      const double e2 = nt.eta[ci] * nt.eta[ci];
      // W^2 = eta^2 (2 w w' - J); keep all d*d entries structural so the
      // factorization pattern is stable across iterations.
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double v = 2.0 * w[i] * w[j];
          if (i == j) v -= (i == 0) ? 1.0 : -1.0;
          t.emplace_back(n + me + k0 + i, n + me + k0 + j, -e2 * v);
        }
      k0 += d;
    }
    // Structural diagonal so the regularized pattern is a superset.
    for (int i = 0; i < N; ++i) t.emplace_back(i, i, 0.0);
    K = SpMat(N, N);
    K.setFromTriplets(t.begin(), t.end());
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    // Dynamic regularization: escalate until the quasidefinite
    // factorization goes through.
    double d = delta;
    for (int attempt = 0; attempt < 8; ++attempt, d *= 100.0) {
      Kreg = K;
      for (int i = 0; i < N; ++i) Kreg.coeffRef(i, i) += (i < n ? d : -d);
      ldlt.factorize(Kreg);
      if (ldlt.info() == Eigen::Success && std::isfinite(ldlt.vectorD().sum())) return;
    }
  }

  bool ok() const { return ldlt.info() == Eigen::Success; }

  Vec solve(const Vec& rhs) const {
    Vec x = ldlt.solve(rhs);
    const double scale = 1.0 + rhs.cwiseAbs().maxCoeff();
    for (int pass = 0; pass < 4; ++pass) {
      Vec r = rhs - K * x;
      if (r.cwiseAbs().maxCoeff() <= 1e-14 * scale) break;
      x += ldlt.solve(r);
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// The homogeneous self-dual predictor-corrector method.
// ---------------------------------------------------------------------------

struct IpmResult {
  SolveStatus status = SolveStatus::IterLimit;
  Vec x, y, z, s;
  double tau = 1, kappa = 1;
  int iterations = 0;
  double pres = kInf, dres = kInf, gap_abs = kInf, gap_rel = kInf;
};

IpmResult ipm_solve(const Lowered& lo, const SolveOptions& opts,
                    std::chrono::steady_clock::time_point deadline) {
  IpmResult best, cur;
  ConeOps ops{lo.l, lo.soc_dims};
  const int n = lo.n, me = static_cast<int>(lo.A.rows()), mc = static_cast<int>(lo.G.rows());
  const double normb = std::max(1.0, lo.b.size() ? lo.b.cwiseAbs().maxCoeff() : 0.0);
  const double normh = std::max(1.0, lo.h.size() ? lo.h.cwiseAbs().maxCoeff() : 0.0);
  const double normc = std::max(1.0, lo.c.size() ? lo.c.cwiseAbs().maxCoeff() : 0.0);

  KktSolver kkt;
  kkt.lo = &lo;

  // Initial point: identity scaling solves.
  NTScaling nt;
  nt.ops = ops;
  nt.w_lp = Vec::Ones(ops.l);
  nt.eta.assign(ops.q.size(), 1.0);
  nt.wbar.clear();
  for (int d : ops.q) {
    Vec w = Vec::Zero(d);
    w[0] = 1.0;
    nt.wbar.push_back(w);
  }
  nt.lambda = Vec::Zero(ops.dim());
  kkt.assemble(nt);
  if (!kkt.ok()) {
    best.status = SolveStatus::IterLimit;
    best.x = Vec::Zero(n);
    best.y = Vec::Zero(me);
    best.z = Vec::Zero(mc);
    best.s = Vec::Zero(mc);
    return best;
  }

  Vec rhs1(n + me + mc);
  rhs1 << Vec::Zero(n), lo.b, lo.h;
  Vec sol1 = kkt.solve(rhs1);
  Vec x = sol1.segment(0, n);
  Vec zc = sol1.segment(n + me, mc);
  Vec s = -zc;  // from G x - z~ = h, the cone slack candidate is h - Gx = -z~
  double shift = -ops.min_eig(s);
  if (shift >= -1e-8 * std::max(1.0, s.cwiseAbs().maxCoeff())) ops.add_unit(s, 1.0 + shift);

  Vec rhs2(n + me + mc);
  rhs2 << -lo.c, Vec::Zero(me), Vec::Zero(mc);
  Vec sol2 = kkt.solve(rhs2);
  Vec y = sol2.segment(n, me);
  Vec z = sol2.segment(n + me, mc);
  shift = -ops.min_eig(z);
  if (shift >= -1e-8 * std::max(1.0, z.cwiseAbs().maxCoeff())) ops.add_unit(z, 1.0 + shift);

  double tau = 1.0, kappa = 1.0;
  const int nu = ops.degree() + 1;
  double best_merit = kInf;

  auto record = [&](SolveStatus st, double pres, double dres, double ga, double gr, int it) {
    cur = {st, x, y, z, s, tau, kappa, it, pres, dres, ga, gr};
    const double merit = std::max({pres, dres, std::min(ga, gr)});
    if (merit < best_merit) {
      best_merit = merit;
      best = cur;
    }
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // Residuals.
    Vec rx = lo.A.transpose() * y + lo.G.transpose() * z + lo.c * tau;
    Vec ry = lo.A * x - lo.b * tau;
    Vec rz = lo.G * x + s - lo.h * tau;
    const double cx = lo.c.dot(x), by = lo.b.dot(y), hz = lo.h.dot(z);
    const double rt = cx + by + hz + kappa;
    const double gap = s.dot(z) + tau * kappa;
    const double mu = gap / nu;

    const double pres = std::max(ry.size() ? ry.cwiseAbs().maxCoeff() / (tau * normb) : 0.0,
                                 rz.size() ? rz.cwiseAbs().maxCoeff() / (tau * normh) : 0.0);
    const double dres = rx.size() ? rx.cwiseAbs().maxCoeff() / (tau * normc) : 0.0;
    const double pcost = cx / tau, dcost = -(by + hz) / tau;
    const double gap_abs = s.dot(z) / (tau * tau);
    const double gap_rel = gap_abs / std::max({1.0, std::abs(pcost), std::abs(dcost)});

    record(SolveStatus::IterLimit, pres, dres, gap_abs, gap_rel, iter);

    if (opts.verbose)
      std::fprintf(stderr, "it %2d pres %.2e dres %.2e gap %.2e mu %.2e tau %.2e kap %.2e\n", iter,
                   pres, dres, gap_rel, mu, tau, kappa);

    if (pres <= opts.feas_tol && dres <= opts.feas_tol &&
        (gap_abs <= opts.gap_tol_abs || gap_rel <= opts.gap_tol_rel)) {
      best = cur;
      best.status = SolveStatus::Optimal;
      return best;
    }
    // Infeasibility certificates once the homogenizing variable collapses.
    if (tau <= 1e-7 * std::max(1.0, kappa)) {
      const double on_ray = -(by + hz);
      if (on_ray > 1e-12) {
        Vec ay = (lo.A.transpose() * y + lo.G.transpose() * z) / on_ray;
        if (ay.size() == 0 || ay.cwiseAbs().maxCoeff() <= opts.feas_tol * normc) {
          best = cur;
          best.y = y / on_ray;
          best.z = z / on_ray;
          best.status = SolveStatus::Infeasible;
          return best;
        }
      }
      if (-cx > 1e-12) {
        Vec gxs = (lo.G * x + s) / (-cx);
        const double eqres = me ? (lo.A * x).cwiseAbs().maxCoeff() / (-cx) : 0.0;
        if (eqres <= opts.feas_tol * normb &&
            gxs.cwiseAbs().maxCoeff() <= opts.feas_tol * normh) {
          best = cur;
          best.x = x / (-cx);
          best.s = s / (-cx);
          best.status = SolveStatus::Unbounded;
          return best;
        }
      }
    }
    if (std::chrono::steady_clock::now() > deadline) {
      best.status = SolveStatus::TimeLimit;
      return best;
    }

    if (!nt.update(s, z)) { if (opts.verbose) std::fprintf(stderr, "BREAK 1\n"); break; }
    kkt.assemble(nt);
    if (!kkt.ok()) { if (opts.verbose) std::fprintf(stderr, "BREAK 2\n"); break; }

    // tau column solve (shared by both passes).
    Vec rhs_t(n + me + mc);
    rhs_t << -lo.c, lo.b, lo.h;
    Vec u1 = kkt.solve(rhs_t);
    const double phi1 =
        lo.c.dot(u1.segment(0, n)) + lo.b.dot(u1.segment(n, me)) + lo.h.dot(u1.segment(n + me, mc));

    auto direction = [&](double gamma, const Vec& ds_comb, double dtk_comb, Vec& dx, Vec& dy,
                         Vec& dz, Vec& ds, double& dtau, double& dkappa) -> bool {
      // ds_comb is the target for lambda o (W dz + W^{-1} ds).
      Vec dl = ops.jordan_div(nt.lambda, ds_comb);
      Vec rhs(n + me + mc);
      rhs.segment(0, n) = -(1 - gamma) * rx;
      rhs.segment(n, me) = -(1 - gamma) * ry;
      rhs.segment(n + me, mc) = -(1 - gamma) * rz - nt.apply_W(dl);
      Vec u2 = kkt.solve(rhs);
      const double phi2 = lo.c.dot(u2.segment(0, n)) + lo.b.dot(u2.segment(n, me)) +
                          lo.h.dot(u2.segment(n + me, mc));
      const double denom = phi1 - kappa / tau;
      const double numer = -(1 - gamma) * rt - phi2 - dtk_comb / tau;
      if (std::abs(denom) < 1e-300) return false;
      dtau = numer / denom;
      dx = u2.segment(0, n) + dtau * u1.segment(0, n);
      dy = u2.segment(n, me) + dtau * u1.segment(n, me);
      dz = u2.segment(n + me, mc) + dtau * u1.segment(n + me, mc);
      ds = nt.apply_W(dl - nt.apply_W(dz));
      dkappa = (dtk_comb - kappa * dtau) / tau;
      return true;
    };

    // Predictor.
    Vec ll = ops.jordan(nt.lambda, nt.lambda);
    Vec ds_aff_t = -ll;
    double dtk_aff = -tau * kappa;
    Vec dxa, dya, dza, dsa;
    double dta, dka;
    if (!direction(0.0, ds_aff_t, dtk_aff, dxa, dya, dza, dsa, dta, dka)) { if (opts.verbose) std::fprintf(stderr, "BREAK 3\n"); break; }
    double alpha_aff = std::min({ops.max_step(s, dsa), ops.max_step(z, dza),
                                 dta < 0 ? -tau / dta : kInf, dka < 0 ? -kappa / dka : kInf, 1.0});
    alpha_aff = std::max(0.0, alpha_aff);
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    // Corrector.
    Vec corr = ops.jordan(nt.apply_Winv(dsa), nt.apply_W(dza));
    Vec ds_t = -ll - corr + sigma * mu * ops.unit();
    const double dtk = -tau * kappa - dta * dka + sigma * mu;
    Vec dx, dy, dz, ds;
    double dtau, dkappa;
    if (!direction(sigma, ds_t, dtk, dx, dy, dz, ds, dtau, dkappa)) { if (opts.verbose) std::fprintf(stderr, "BREAK 4\n"); break; }

    double alpha = std::min({ops.max_step(s, ds), ops.max_step(z, dz),
                             dtau < 0 ? -tau / dtau : kInf, dkappa < 0 ? -kappa / dkappa : kInf});
    alpha = std::min(1.0, 0.99 * alpha);
    if (alpha < 1e-6) {
      // Corrector overshoot near the boundary; take a plain centering step.
      const double gc = 0.8;
      Vec ds_c = -ll + gc * mu * ops.unit();
      if (!direction(gc, ds_c, -tau * kappa + gc * mu, dx, dy, dz, ds, dtau, dkappa)) { if (opts.verbose) std::fprintf(stderr, "BREAK 5\n"); break; }
      alpha = std::min({ops.max_step(s, ds), ops.max_step(z, dz),
                        dtau < 0 ? -tau / dtau : kInf, dkappa < 0 ? -kappa / dkappa : kInf});
      alpha = std::min(1.0, 0.99 * alpha);
    }
    if (!(alpha > 1e-9)) { if (opts.verbose) std::fprintf(stderr, "BREAK 6\n"); break; }

    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
    tau += alpha * dtau;
    kappa += alpha * dkappa;
    if (!(tau > 1e-300) || !x.allFinite() || !s.allFinite() || !z.allFinite()) { if (opts.verbose) std::fprintf(stderr, "BREAK 7\n"); break; }
  }

  return best;
}

// Duals of eliminated singleton equality rows, recovered in reverse order
// from the dual feasibility condition of the variable each row fixed. For
// Farkas certificates the cost term is omitted (homogeneous condition).
void recover_elim_duals(const ConicProgram& orig, const Presolved& pre, Vec& y,
                        bool include_cost) {
  if (pre.elims.empty()) return;
  Vec c_orig = orig.cost_vector();
  SpMat A = orig.matrix();  // column-major: InnerIterator walks one column
  for (auto it = pre.elims.rbegin(); it != pre.elims.rend(); ++it) {
    double acc = include_cost ? c_orig[it->var] : 0.0;
    for (SpMat::InnerIterator colit(A, it->var); colit; ++colit) {
      const int row = static_cast<int>(colit.row());
      if (row == it->orig_row) continue;
      acc += colit.value() * y[row];
    }
    y[it->orig_row] = -acc / it->coef;
  }
}

// ---------------------------------------------------------------------------
// Map the IPM result back through lowering and presolve.
// ---------------------------------------------------------------------------

ConicSolution assemble_solution(const ConicProgram& orig, const Presolved& pre, const Lowered& lo,
                                const IpmResult& ipm, const SolveOptions& opts) {
  ConicSolution sol;
  sol.status = ipm.status;
  sol.iterations = ipm.iterations;

  const int n_orig = orig.num_vars();
  const int m_orig = orig.num_rows();
  sol.x = Vec::Zero(n_orig);
  sol.y = Vec::Zero(m_orig);
  sol.s = Vec::Zero(m_orig);

  const bool ray = ipm.status == SolveStatus::Infeasible || ipm.status == SolveStatus::Unbounded;
  const double tau = ray ? 1.0 : ipm.tau;
  if (!(tau > 0)) {
    sol.status = SolveStatus::IterLimit;
    return sol;
  }

  // Reduced-space primal/duals.
  Vec xr = ipm.x / tau;
  Vec yr_eq = ipm.y / tau;
  Vec zr = ipm.z / tau;

  // Primal: fixed values + reduced values (rays keep fixed vars at 0).
  for (int v = 0; v < n_orig; ++v) {
    if (pre.var_map[v] >= 0) sol.x[v] = xr[pre.var_map[v]];
    else sol.x[v] = (ipm.status == SolveStatus::Unbounded) ? 0.0 : pre.fixed_vals[v];
  }

  // Duals on surviving rows, mapped through the lowering transform.
  Vec y_reduced = Vec::Zero(pre.reduced.num_rows());
  {
    // Identify RSoc block starts for transposed transform.
    std::vector<char> is_rsoc_start(pre.reduced.num_rows(), 0);
    for (int r : lo.rsoc_block_start) is_rsoc_start[r] = 1;
    int r = 0;
    for (const auto& blk : pre.reduced.cones()) {
      const int nr = blk.rows();
      if (blk.kind == ConeKind::RSoc) {
        const int i0 = lo.map[r].index;
        const double z0 = zr[i0], z1 = zr[i0 + 1];
        y_reduced[r] = z0 + z1;
        y_reduced[r + 1] = z0 - z1;
        for (int i = 2; i < nr; ++i) y_reduced[r + i] = 2.0 * zr[i0 + i];
      } else {
        for (int i = 0; i < nr; ++i) {
          const auto& tgt = lo.map[r + i];
          y_reduced[r + i] = (tgt.kind == RowTarget::Eq) ? yr_eq[tgt.index] : zr[tgt.index];
        }
      }
      r += nr;
    }
  }
  for (int r = 0; r < m_orig; ++r)
    if (pre.row_map[r] >= 0) sol.y[r] = y_reduced[pre.row_map[r]];

  recover_elim_duals(orig, pre, sol.y, /*include_cost=*/!ray);

  // Slacks directly from original data.
  {
    Vec Ax = orig.matrix() * sol.x;
    Vec b = orig.rhs_vector();
    sol.s = ray ? Vec(-Ax) : Vec(b - Ax);
  }

  if (!ray) {
    sol.objective = orig.eval_objective(sol.x);
    sol.dual_objective = -orig.rhs_vector().dot(sol.y) + orig.objective_constant();
    sol.primal_residual = ipm.pres;
    sol.dual_residual = ipm.dres;
    sol.gap_abs = ipm.gap_abs;
    sol.gap_rel = ipm.gap_rel;
  } else if (ipm.status == SolveStatus::Infeasible) {
    // Normalize the Farkas certificate to b'y = -1.
    const double by = orig.rhs_vector().dot(sol.y);
    if (by < 0) sol.y /= -by;
  } else {
    const double cx = orig.cost_vector().dot(sol.x);
    if (cx < 0) sol.x /= -cx;
  }
  (void)opts;
  return sol;
}

ConicSolution solve_socp(const ConicProgram& prog, const SolveOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  auto deadline = (opts.time_limit_sec == kInf)
                      ? std::chrono::steady_clock::time_point::max()
                      : t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(opts.time_limit_sec));

  Presolved pre = presolve(prog);
  if (pre.infeasible) {
    ConicSolution sol;
    sol.status = SolveStatus::Infeasible;
    sol.x = Vec::Zero(prog.num_vars());
    sol.s = Vec::Zero(prog.num_rows());
    sol.y = Vec::Zero(prog.num_rows());
    sol.y[pre.infeasible_row] = pre.infeasible_sign;
    const double by = prog.rhs_vector().dot(sol.y);
    if (by < 0) sol.y /= -by;
    return sol;
  }

  if (pre.reduced.num_vars() == 0) {
    // Everything fixed; verify remaining rows and return directly.
    ConicSolution sol;
    sol.x = Vec::Zero(prog.num_vars());
    for (int v = 0; v < prog.num_vars(); ++v) sol.x[v] = pre.fixed_vals[v];
    Vec svec = prog.rhs_vector() - prog.matrix() * sol.x;
    // Cone feasibility check.
    int r = 0;
    double worst = 0;
    for (const auto& blk : prog.cones()) {
      const int nr = blk.rows();
      Vec seg = svec.segment(r, nr);
      switch (blk.kind) {
        case ConeKind::Zero: worst = std::max(worst, seg.cwiseAbs().maxCoeff()); break;
        case ConeKind::NonNeg: worst = std::max(worst, -seg.minCoeff()); break;
        case ConeKind::Soc: worst = std::max(worst, seg.tail(nr - 1).norm() - seg[0]); break;
        case ConeKind::RSoc:
          worst = std::max(worst, std::max({-seg[0], -seg[1],
                                            seg.tail(nr - 2).squaredNorm() - seg[0] * seg[1]}));
          break;
        case ConeKind::Psd: {
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(svec_to_matrix(seg, blk.size));
          worst = std::max(worst, -es.eigenvalues().minCoeff());
          break;
        }
      }
      r += nr;
    }
    sol.s = svec;
    sol.y = Vec::Zero(prog.num_rows());
    if (worst <= 1e-8) {
      sol.status = SolveStatus::Optimal;
      sol.objective = prog.eval_objective(sol.x);
      // Recover duals for the eliminated rows so weak duality reports hold.
      recover_elim_duals(prog, pre, sol.y, /*include_cost=*/true);
      sol.dual_objective = -prog.rhs_vector().dot(sol.y) + prog.objective_constant();
      sol.primal_residual = worst;
      sol.dual_residual = 0;
      sol.gap_abs = std::abs(sol.objective - sol.dual_objective);
      sol.gap_rel = sol.gap_abs / std::max(1.0, std::abs(sol.objective));
    } else {
      sol.status = SolveStatus::Infeasible;
    }
    return sol;
  }

  Lowered lo = lower(pre.reduced);
  IpmResult ipm = ipm_solve(lo, opts, deadline);
  return assemble_solution(prog, pre, lo, ipm, opts);
}

}  // namespace

ConicSolution psd_outer_loop(const ConicProgram& prog, const SolveOptions& opts) {
  // Split out PSD blocks; everything else is copied into a working program.
  struct PsdBlock {
    int order = 0;
    int first_row = 0;  // row offset in the original program
    std::vector<std::vector<std::pair<int, double>>> rows;
    std::vector<double> rhs;
  };
  std::vector<PsdBlock> psd;
  ConicProgram work;
  for (int v = 0; v < prog.num_vars(); ++v) work.add_variable();
  work.set_objective_constant(prog.objective_constant());
  for (auto [v, coef] : prog.objective()) work.add_objective_term(v, coef);

  std::vector<std::vector<std::pair<int, double>>> rowdata(prog.num_rows());
  for (const auto& t : prog.triplets()) rowdata[t.row()].emplace_back(t.col(), t.value());

  // Row bookkeeping: map original rows to work rows (non-PSD), and remember
  // which work rows realize each PSD block's relaxation.
  std::vector<int> orig_to_work(prog.num_rows(), -1);
  struct MinorRef {
    int psd_index;
    int i, j;      // minor indices; i == j means the diagonal row
    int work_row;  // first row of the RSoc triple (or the NonNeg row)
  };
  std::vector<MinorRef> minors;

  int r0 = 0;
  int wrow = 0;
  const double rt2 = std::sqrt(2.0);
  for (const auto& blk : prog.cones()) {
    const int nr = blk.rows();
    if (blk.kind != ConeKind::Psd) {
      std::vector<ConeRow> rows;
      for (int i = 0; i < nr; ++i) {
        rows.push_back({rowdata[r0 + i], prog.rhs()[r0 + i]});
        orig_to_work[r0 + i] = wrow + i;
      }
      work.append_block(blk.kind, rows);
      wrow += nr;
    } else {
      PsdBlock pb;
      pb.order = blk.size;
      pb.first_row = r0;
      for (int i = 0; i < nr; ++i) {
        pb.rows.push_back(rowdata[r0 + i]);
        pb.rhs.push_back(prog.rhs()[r0 + i]);
      }
      const int pidx = static_cast<int>(psd.size());
      // Diagonal nonnegativity and 2x2 minors as a base relaxation; these
      // also keep the first SOCP iteration bounded.
      for (int i = 0; i < pb.order; ++i) {
        const int di = svec_index(i, i);
        std::vector<ConeRow> one = {{pb.rows[di], pb.rhs[di]}};
        // slack >= 0  <=>  expr <= rhs
        work.append_block(ConeKind::NonNeg, one);
        minors.push_back({pidx, i, i, wrow});
        wrow += 1;
      }
      for (int j = 1; j < pb.order; ++j)
        for (int i = 0; i < j; ++i) {
          const int dii = svec_index(i, i), djj = svec_index(j, j), dij = svec_index(i, j);
          // (s_ii, s_jj, s_ij/sqrt2) in RSoc  <=>  W_ii W_jj >= W_ij^2
          std::vector<ConeRow> rows3;
          rows3.push_back({pb.rows[dii], pb.rhs[dii]});
          rows3.push_back({pb.rows[djj], pb.rhs[djj]});
          LinExpr e = pb.rows[dij];
          for (auto& t : e) t.second /= rt2;
          rows3.push_back({std::move(e), pb.rhs[dij] / rt2});
          work.append_block(ConeKind::RSoc, rows3);
          minors.push_back({pidx, i, j, wrow});
          wrow += 3;
        }
      psd.push_back(std::move(pb));
    }
    r0 += nr;
  }

  // Eigenvector cuts accumulate here; each is (psd block, svec weights).
  struct Cut {
    int psd_index;
    Vec w;  // svec weights
    int work_row;
  };
  std::vector<Cut> cuts;

  ConicSolution sol;
  for (int round = 0; round < opts.psd_max_rounds; ++round) {
    sol = solve_socp(work, opts);
    sol.psd_rounds = round + 1;
    if (sol.status != SolveStatus::Optimal) break;
    bool clean = true;
    for (size_t pi = 0; pi < psd.size(); ++pi) {
      const auto& pb = psd[pi];
      const int sv = svec_size(pb.order);
      Vec slack(sv);
      for (int i = 0; i < sv; ++i) {
        double ax = 0;
        for (auto [v, a] : pb.rows[i]) ax += a * sol.x[v];
        slack[i] = pb.rhs[i] - ax;
      }
      Eigen::MatrixXd M = svec_to_matrix(slack, pb.order);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
      for (int k = 0; k < pb.order; ++k) {
        const double lam = es.eigenvalues()[k];
        if (lam >= -opts.psd_tol) break;
        clean = false;
        Vec v = es.eigenvectors().col(k);
        Vec w = matrix_to_svec(v * v.transpose());
        // w' slack >= 0  <=>  sum_r w_r a_r' x <= sum_r w_r rhs_r
        LinExpr e;
        double rhs = 0;
        std::vector<double> dense(prog.num_vars(), 0.0);
        for (int i = 0; i < sv; ++i) {
          rhs += w[i] * pb.rhs[i];
          for (auto [var, a] : pb.rows[i]) dense[var] += w[i] * a;
        }
        for (int var = 0; var < prog.num_vars(); ++var)
          if (dense[var] != 0.0) e.emplace_back(var, dense[var]);
        cuts.push_back({static_cast<int>(pi), w, work.num_rows()});
        work.add_le(e, rhs);
      }
    }
    if (clean) {
      // Map duals back onto the original rows.
      Vec y = Vec::Zero(prog.num_rows());
      for (int r = 0; r < prog.num_rows(); ++r)
        if (orig_to_work[r] >= 0) y[r] = sol.y[orig_to_work[r]];
      // PSD rows: combine minor and cut multipliers.
      for (const auto& mr : minors) {
        const auto& pb = psd[mr.psd_index];
        if (mr.i == mr.j) {
          y[pb.first_row + svec_index(mr.i, mr.i)] += sol.y[mr.work_row];
        } else {
          const double a = sol.y[mr.work_row];
          const double b = sol.y[mr.work_row + 1];
          const double cdual = sol.y[mr.work_row + 2];
          y[pb.first_row + svec_index(mr.i, mr.i)] += a;
          y[pb.first_row + svec_index(mr.j, mr.j)] += b;
          y[pb.first_row + svec_index(mr.i, mr.j)] += cdual / rt2;
        }
      }
      for (const auto& cut : cuts) {
        const auto& pb = psd[cut.psd_index];
        const double eta = sol.y[cut.work_row];
        for (int i = 0; i < svec_size(pb.order); ++i) y[pb.first_row + i] += eta * cut.w[i];
      }
      ConicSolution out = sol;
      out.y = y;
      out.s = prog.rhs_vector() - prog.matrix() * out.x;
      out.objective = prog.eval_objective(out.x);
      out.dual_objective = -prog.rhs_vector().dot(y) + prog.objective_constant();
      return out;
    }
  }
  if (sol.status == SolveStatus::Optimal) sol.status = SolveStatus::IterLimit;
  return sol;
}

ConicSolution solve(const ConicProgram& prog, const SolveOptions& opts) {
  bool has_psd = false;
  for (const auto& blk : prog.cones())
    if (blk.kind == ConeKind::Psd) has_psd = true;
  if (has_psd) return psd_outer_loop(prog, opts);
  return solve_socp(prog, opts);
}

}  // namespace ots
