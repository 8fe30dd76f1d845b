#include "safely/qp.hpp"


#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <fstream>

namespace safely {

using SpMat = Eigen::SparseMatrix<double>;

QuadraticProgram QuadraticProgram::unconstrained(const Mat& P, const Vec& q) {
  QuadraticProgram qp;
  const auto n = q.size();
  qp.P = P;
  qp.q = q;
  qp.A_eq = Mat::Zero(0, n);
  qp.b_eq = Vec::Zero(0);
  qp.A_in = Mat::Zero(0, n);
  qp.b_in = Vec::Zero(0);
  return qp;
}

void QuadraticProgram::validate() const {
  const auto n = q.size();
  if (P.rows() != n || P.cols() != n) throw ConfigError("qp: P must be n x n");
  if (A_eq.cols() != n || A_eq.rows() != b_eq.size())
    throw ConfigError("qp: equality block dimension mismatch");
  if (A_in.cols() != n || A_in.rows() != b_in.size())
    throw ConfigError("qp: inequality block dimension mismatch");
  if (!eq_tags.empty() && static_cast<int>(eq_tags.size()) != num_eq())
    throw ConfigError("qp: eq_tags size mismatch");
  if (!in_tags.empty() && static_cast<int>(in_tags.size()) != num_in())
    throw ConfigError("qp: in_tags size mismatch");
  const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw ConfigError("qp: P must be symmetric");
  if (n > 0 && min_eigenvalue(P) < -1e-9 * scale)
    throw ConfigError("qp: P must be positive semidefinite");
  if (!P.allFinite() || !q.allFinite() || !A_eq.allFinite() || !b_eq.allFinite() ||
      !A_in.allFinite() || !b_in.allFinite())
    throw ConfigError("qp: non-finite data");
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "OPTIMAL";
    case QpStatus::PrimalInfeasible: return "PRIMAL_INFEASIBLE";
    case QpStatus::MaxIter: return "MAX_ITER";
  }
  return "UNKNOWN";
}

double KktResiduals::max() const {
  return std::max({stationarity, primal, complementarity});
}

double QpSolution::dual_objective(const QuadraticProgram& qp) const {
  return -0.5 * y.dot(qp.P * y) - qp.b_eq.dot(lambda_eq) - qp.b_in.dot(lambda_in);
}

KktResiduals kkt_residuals(const QuadraticProgram& qp, const Vec& y,
                           const Vec& lambda_eq, const Vec& lambda_in) {
  KktResiduals r;
  Vec grad = qp.P * y + qp.q;
  if (qp.num_eq() > 0) grad += qp.A_eq.transpose() * lambda_eq;
  if (qp.num_in() > 0) grad += qp.A_in.transpose() * lambda_in;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  if (qp.num_eq() > 0)
    r.primal = (qp.A_eq * y - qp.b_eq).cwiseAbs().maxCoeff();
  if (qp.num_in() > 0) {
    const Vec slack = qp.A_in * y - qp.b_in;
    r.primal = std::max(r.primal, std::max(0.0, slack.maxCoeff()));
    r.complementarity = lambda_in.cwiseProduct(slack).cwiseAbs().maxCoeff();
  }
  return r;
}

namespace {

double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct Scaling {
  Vec D;  // variable scaling
  Vec E;  // constraint scaling
  double c = 1.0;
};

// Stacked constraint form l <= A y <= u used by the splitting iterations.
struct StackedProblem {
  Mat P;
  Vec q;
  Mat A;
  Vec l;
  Vec u;
  int m_eq = 0;
};

StackedProblem stack(const QuadraticProgram& qp) {
  StackedProblem s;
  const int n = qp.num_vars(), me = qp.num_eq(), mi = qp.num_in();
  s.P = symmetrize(qp.P);
  s.q = qp.q;
  s.A.resize(me + mi, n);
  if (me) s.A.topRows(me) = qp.A_eq;
  if (mi) s.A.bottomRows(mi) = qp.A_in;
  s.l.resize(me + mi);
  s.u.resize(me + mi);
  if (me) {
    s.l.head(me) = qp.b_eq;
    s.u.head(me) = qp.b_eq;
  }
  if (mi) {
    s.l.tail(mi).setConstant(-kInf);
    s.u.tail(mi) = qp.b_in;
  }
  s.m_eq = me;
  return s;
}

// Modified Ruiz equilibration of the KKT matrix followed by cost scaling.
Scaling equilibrate(StackedProblem& s, int iters) {
  const int n = static_cast<int>(s.q.size());
  const int m = static_cast<int>(s.l.size());
  Scaling sc{Vec::Ones(n), Vec::Ones(m), 1.0};
  auto clip = [](double v) {
    if (v < 1e-4) return 1.0;
    return std::clamp(v, 1e-4, 1e4);
  };
  for (int it = 0; it < iters; ++it) {
    Vec d(n), e(m);
    for (int j = 0; j < n; ++j) {
      double nj = s.P.col(j).cwiseAbs().maxCoeff();
      if (m) nj = std::max(nj, s.A.col(j).cwiseAbs().maxCoeff());
      d(j) = 1.0 / std::sqrt(clip(nj));
    }
    for (int i = 0; i < m; ++i) e(i) = 1.0 / std::sqrt(clip(s.A.row(i).cwiseAbs().maxCoeff()));
    s.P = d.asDiagonal() * s.P * d.asDiagonal();
    s.q = d.cwiseProduct(s.q);
    if (m) s.A = e.asDiagonal() * s.A * d.asDiagonal();
    sc.D = sc.D.cwiseProduct(d);
    sc.E = sc.E.cwiseProduct(e);

    double mean_col = 0.0;
    for (int j = 0; j < n; ++j) mean_col += s.P.col(j).cwiseAbs().maxCoeff();
    mean_col /= std::max(1, n);
    const double gamma = 1.0 / clip(std::max(mean_col, inf_norm(s.q)));
    s.P *= gamma;
    s.q *= gamma;
    sc.c *= gamma;
  }
  for (int i = 0; i < m; ++i) {
    if (std::isfinite(s.l(i))) s.l(i) *= sc.E(i);
    if (std::isfinite(s.u(i))) s.u(i) *= sc.E(i);
  }
  return sc;
}

SpMat to_sparse(const Mat& m) { return m.sparseView(0.0, 0.0); }

// Quasi-definite KKT matrix [P + reg_x I, A'; A, -diag(reg_y)].
SpMat kkt_matrix(const SpMat& P, const SpMat& A, double reg_x, const Vec& reg_y) {
  const int n = static_cast<int>(P.rows());
  const int m = static_cast<int>(A.rows());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(P.nonZeros() + 2 * A.nonZeros() + n + m);
  for (int k = 0; k < P.outerSize(); ++k)
    for (SpMat::InnerIterator it(P, k); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
  for (int j = 0; j < n; ++j) trips.emplace_back(j, j, reg_x);
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      trips.emplace_back(n + it.row(), it.col(), it.value());
      trips.emplace_back(it.col(), n + it.row(), it.value());
    }
  for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -reg_y(i));
  SpMat K(n + m, n + m);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

struct PolishResult {
  bool ok = false;
  Vec y;
  Vec lambda_eq;
  Vec lambda_in;
};

// Equality-constrained KKT solve on the active set W, regularized and then
// corrected by iterative refinement against the unregularized system.
bool solve_active_kkt(const SpMat& P, const QuadraticProgram& qp,
                      const std::vector<int>& active, Vec& y, Vec& mult) {
  const int n = qp.num_vars(), me = qp.num_eq();
  const int mw = me + static_cast<int>(active.size());
  Mat Aw(mw, n);
  Vec bw(mw);
  if (me) {
    Aw.topRows(me) = qp.A_eq;
    bw.head(me) = qp.b_eq;
  }
  for (std::size_t k = 0; k < active.size(); ++k) {
    Aw.row(me + k) = qp.A_in.row(active[k]);
    bw(me + k) = qp.b_in(active[k]);
  }
  const SpMat As = to_sparse(Aw);
  const double delta = 1e-9;
  const SpMat Kreg = kkt_matrix(P, As, delta, Vec::Constant(mw, delta));
  const SpMat Ktrue = kkt_matrix(P, As, 0.0, Vec::Zero(mw));
  Eigen::SimplicialLDLT<SpMat> ldlt(Kreg);
  if (ldlt.info() != Eigen::Success) return false;

  Vec rhs(n + mw);
  rhs.head(n) = -qp.q;
  rhs.tail(mw) = bw;
  Vec sol = ldlt.solve(rhs);
  const double rhs_scale = 1.0 + inf_norm(rhs);
  for (int it = 0; it < 30; ++it) {
    const Vec r = rhs - Ktrue * sol;
    if (inf_norm(r) <= 1e-14 * rhs_scale) break;
    sol += ldlt.solve(r);
  }
  if (!sol.allFinite()) return false;
  y = sol.head(n);
  mult = sol.tail(mw);
  return true;
}

struct InteriorResult {
  bool converged = false;
  Vec y, lambda_eq, lambda_in, slack;
  int iterations = 0;
};

// Mehrotra predictor-corrector on the original (unscaled) problem with
// slacks A_in y + s = b_in. Each step solves the reduced quasi-definite
// system [P + A_in' D A_in, A_eq'; A_eq, 0] with D = diag(lambda / s).
InteriorResult interior_point(const QuadraticProgram& qp, const SpMat& P, int max_iter) {
  const int n = qp.num_vars(), me = qp.num_eq(), mi = qp.num_in();
  const SpMat Ae = to_sparse(qp.A_eq), Ai = to_sparse(qp.A_in);
  const SpMat AiT = Ai.transpose();
  InteriorResult r;
  const double q_scale = 1.0 + inf_norm(qp.q);
  const double b_scale = 1.0 + std::max(inf_norm(qp.b_eq), inf_norm(qp.b_in));
  constexpr double delta = 1e-10;

  Eigen::SimplicialLDLT<SpMat> ldlt;
  SpMat K, Kexact;

  // Starting point from the least-squares system with unit scaling, shifted
  // into the positive orthant.
  Vec y(n), le(me), s(mi), lam(mi);
  {
    SpMat H = P;
    if (mi) H += AiT * Ai;
    Kexact = kkt_matrix(H, Ae, 0.0, Vec::Zero(me));
    ldlt.compute(kkt_matrix(H, Ae, delta, Vec::Constant(me, delta)));
    if (ldlt.info() != Eigen::Success) return r;
    Vec rhs(n + me);
    rhs.head(n) = -qp.q + (mi ? Vec(AiT * qp.b_in) : Vec::Zero(n));
    if (me) rhs.tail(me) = qp.b_eq;
    Vec sol = ldlt.solve(rhs);
    for (int it = 0; it < 5; ++it) sol += ldlt.solve(Vec(rhs - Kexact * sol));
    y = sol.head(n);
    le = sol.tail(me);
    if (mi) {
      const Vec z = Ai * y - qp.b_in;
      s = -z;
      lam = z;
      const double ts = (-s).maxCoeff(), tz = (-lam).maxCoeff();
      const double floor = -1e-8 * std::max(1.0, s.norm());
      if (ts >= floor) s.array() += 1.0 + ts;
      if (tz >= -1e-8 * std::max(1.0, lam.norm())) lam.array() += 1.0 + tz;
    }
  }
  auto solve_reduced = [&](const Vec& rhs) {
    Vec sol = ldlt.solve(rhs);
    for (int it = 0; it < 5; ++it) {
      const Vec res = rhs - Kexact * sol;
      if (inf_norm(res) <= 1e-13 * (1.0 + inf_norm(rhs))) break;
      sol += ldlt.solve(res);
    }
    return sol;
  };
  auto max_step = [](const Vec& v, const Vec& dv) {
    double a = 1.0;
    for (int i = 0; i < v.size(); ++i)
      if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
    return a;
  };

  for (int k = 0; k < max_iter; ++k) {
    const Vec rd = P * y + qp.q + (me ? Vec(Ae.transpose() * le) : Vec::Zero(n)) +
                   (mi ? Vec(AiT * lam) : Vec::Zero(n));
    const Vec re = me ? Vec(Ae * y - qp.b_eq) : Vec();
    const Vec ri = mi ? Vec(Ai * y + s - qp.b_in) : Vec();
    const double mu = mi ? s.dot(lam) / mi : 0.0;
    r.iterations = k;
    if (inf_norm(rd) <= 1e-10 * q_scale && inf_norm(re) <= 1e-10 * b_scale &&
        inf_norm(ri) <= 1e-10 * b_scale && mu <= 1e-11 * q_scale) {
      r.converged = true;
      break;
    }

    const Vec d = mi ? Vec(lam.cwiseQuotient(s)) : Vec();
    SpMat H = P;
    if (mi) H += AiT * d.asDiagonal() * Ai;
    Kexact = kkt_matrix(H, Ae, 0.0, Vec::Zero(me));
    K = kkt_matrix(H, Ae, delta, Vec::Constant(me, delta));
    ldlt.compute(K);
    if (ldlt.info() != Eigen::Success) break;

    auto direction = [&](const Vec& rc, Vec& dy, Vec& dle, Vec& dlam, Vec& ds) {
      Vec rhs(n + me);
      const Vec w = mi ? Vec((lam.cwiseProduct(ri) - rc).cwiseQuotient(s)) : Vec();
      rhs.head(n) = -rd - (mi ? Vec(AiT * w) : Vec::Zero(n));
      if (me) rhs.tail(me) = -re;
      const Vec sol = solve_reduced(rhs);
      dy = sol.head(n);
      dle = sol.tail(me);
      if (mi) {
        const Vec Ady = Ai * dy;
        dlam = w + d.cwiseProduct(Ady);
        ds = -ri - Ady;
      }
    };

    Vec dy, dle, dlam, ds;
    if (mi == 0) {
      direction(Vec(), dy, dle, dlam, ds);
      y += dy;
      le += dle;
      continue;
    }
    direction(s.cwiseProduct(lam), dy, dle, dlam, ds);
    const double a_aff = std::min(max_step(s, ds), max_step(lam, dlam));
    const double mu_aff = (s + a_aff * ds).dot(lam + a_aff * dlam) / mi;
    const double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    const Vec rc = s.cwiseProduct(lam) + ds.cwiseProduct(dlam) - Vec::Constant(mi, sigma * mu);
    direction(rc, dy, dle, dlam, ds);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(lam, dlam)));
    y += a * dy;
    le += a * dle;
    lam += a * dlam;
    s += a * ds;
    if (!y.allFinite() || !lam.allFinite()) break;
  }
  r.y = y;
  r.lambda_eq = le;
  r.lambda_in = lam;
  r.slack = s;
  return r;
}

PolishResult polish(const QuadraticProgram& qp, const SpMat& P, const Vec& y0,
                    const Vec& lam_in0, const QpSettings& st, double active_tol) {
  const int n = qp.num_vars(), me = qp.num_eq(), mi = qp.num_in();
  std::vector<char> in_set(mi, 0);
  if (mi) {
    const Vec resid = qp.b_in - qp.A_in * y0;
    for (int i = 0; i < mi; ++i)
      in_set[i] = (resid(i) <= active_tol || resid(i) < lam_in0(i)) ? 1 : 0;
  }
  const double b_scale = 1.0 + std::max(inf_norm(qp.b_in), inf_norm(qp.b_eq));
  const double tol_p = 1e-10 * b_scale;

  PolishResult res;
  for (int round = 0; round < st.polish_rounds; ++round) {
    std::vector<int> active;
    for (int i = 0; i < mi; ++i)
      if (in_set[i]) active.push_back(i);
    Vec y, mult;
    if (!solve_active_kkt(P, qp, active, y, mult)) return res;

    Vec lam_in = Vec::Zero(mi);
    for (std::size_t k = 0; k < active.size(); ++k) lam_in(active[k]) = mult(me + k);
    const double lam_scale = 1.0 + inf_norm(lam_in);
    const double tol_d = 1e-10 * lam_scale;

    std::vector<int> violated, negative;
    Vec slack = mi ? Vec(qp.A_in * y - qp.b_in) : Vec();
    int worst_v = -1, worst_n = -1;
    for (int i = 0; i < mi; ++i) {
      if (!in_set[i] && slack(i) > tol_p) {
        violated.push_back(i);
        if (worst_v < 0 || slack(i) > slack(worst_v)) worst_v = i;
      }
      if (in_set[i] && lam_in(i) < -tol_d) {
        negative.push_back(i);
        if (worst_n < 0 || lam_in(i) < lam_in(worst_n)) worst_n = i;
      }
    }
    if (violated.empty() && negative.empty()) {
      res.ok = true;
      res.y = y;
      res.lambda_eq = mult.head(me);
      res.lambda_in = lam_in.cwiseMax(0.0);
      return res;
    }
    if (round < 10) {
      for (int i : violated) in_set[i] = 1;
      for (int i : negative) in_set[i] = 0;
    } else if (worst_n >= 0) {
      in_set[worst_n] = 0;
    } else {
      in_set[worst_v] = 1;
    }
    (void)n;
  }
  return res;
}

}  // namespace

QpSolution QpSolver::solve(const QuadraticProgram& qp, const std::optional<Vec>& warm_start) {
  qp.validate();
  const QpSettings& st = settings_;
  const int n = qp.num_vars();
  const int me = qp.num_eq();
  const int mi = qp.num_in();

  StackedProblem s = stack(qp);
  const int m = me + mi;
  const Scaling sc = equilibrate(s, st.scaling_iters);
  const SpMat Ps = to_sparse(s.P);
  const SpMat As = to_sparse(s.A);
  const SpMat Porig = to_sparse(symmetrize(qp.P));

  Vec rho(m);
  auto set_rho = [&](double base) {
    for (int i = 0; i < m; ++i) rho(i) = (i < me) ? 1e3 * base : base;
  };
  double rho_base = st.rho;
  set_rho(rho_base);

  auto factor = [&](Eigen::SimplicialLDLT<SpMat>& ldlt) {
    ldlt.compute(kkt_matrix(Ps, As, st.sigma, rho.cwiseInverse()));
    if (ldlt.info() != Eigen::Success) throw NumericalError("qp: KKT factorization failed");
  };
  Eigen::SimplicialLDLT<SpMat> ldlt;
  factor(ldlt);

  Vec x = Vec::Zero(n), z = Vec::Zero(m), yd = Vec::Zero(m);
  if (warm_start && warm_start->size() == n) {
    x = warm_start->cwiseQuotient(sc.D);
    z = (As * x).cwiseMax(s.l).cwiseMin(s.u);
  }

  auto unscale = [&](const Vec& xs, const Vec& ys, QpSolution& out) {
    out.y = sc.D.cwiseProduct(xs);
    const Vec yu = sc.E.cwiseProduct(ys) / sc.c;
    out.lambda_eq = yu.head(me);
    out.lambda_in = yu.tail(mi).cwiseMax(0.0);
  };
  auto finish = [&](QpSolution& out) {
    out.objective = qp.objective(out.y);
    out.kkt = kkt_residuals(qp, out.y, out.lambda_eq, out.lambda_in);
    return out;
  };
  auto accept_kkt = [&](const QpSolution& cand) {
    const KktResiduals r = kkt_residuals(qp, cand.y, cand.lambda_eq, cand.lambda_in);
    Vec grad_terms = qp.P * cand.y;
    double dual_scale = std::max({inf_norm(grad_terms), inf_norm(qp.q),
                                  me ? inf_norm(qp.A_eq.transpose() * cand.lambda_eq) : 0.0,
                                  mi ? inf_norm(qp.A_in.transpose() * cand.lambda_in) : 0.0});
    double prim_scale = std::max({me ? inf_norm(qp.A_eq * cand.y) : 0.0,
                                  mi ? inf_norm(qp.A_in * cand.y) : 0.0,
                                  inf_norm(qp.b_eq), inf_norm(qp.b_in)});
    return r.stationarity <= st.eps_abs + st.eps_rel * dual_scale &&
           r.primal <= st.eps_abs + st.eps_rel * prim_scale &&
           r.complementarity <= st.eps_abs + st.eps_rel * std::max(dual_scale, prim_scale);
  };

  int next_polish_level = 3;  // polish when residuals reach 10^level x tolerance
  bool tried_interior = false;
  Vec y_prev = yd;
  const double alpha = st.relaxation;
  QpSolution out;

  for (int iter = 1; iter <= st.max_iter; ++iter) {
    y_prev = yd;
    Vec rhs(n + m);
    rhs.head(n) = st.sigma * x - s.q;
    rhs.tail(m) = z - yd.cwiseQuotient(rho);
    const Vec sol = ldlt.solve(rhs);
    const Vec xt = sol.head(n);
    const Vec nu = sol.tail(m);
    const Vec zt = z + (nu - yd).cwiseQuotient(rho);
    x = alpha * xt + (1.0 - alpha) * x;
    const Vec zr = alpha * zt + (1.0 - alpha) * z;
    const Vec z_new = (zr + yd.cwiseQuotient(rho)).cwiseMax(s.l).cwiseMin(s.u);
    yd = yd + rho.cwiseProduct(zr - z_new);
    z = z_new;

    if (iter % st.check_every != 0 && iter != st.max_iter) continue;

    const Vec Ax = As * x;
    const Vec Px = Ps * x;
    const Vec Aty = As.transpose() * yd;
    const Vec Einv = sc.E.cwiseInverse();
    const Vec Dinv = sc.D.cwiseInverse();
    const double prim_res = m ? inf_norm(Einv.cwiseProduct(Ax - z)) : 0.0;
    const double dual_res = inf_norm(Dinv.cwiseProduct(Px + s.q + Aty)) / sc.c;
    const double eps_prim =
        st.eps_abs + st.eps_rel * (m ? std::max(inf_norm(Einv.cwiseProduct(Ax)),
                                                inf_norm(Einv.cwiseProduct(z)))
                                     : 0.0);
    const double eps_dual =
        st.eps_abs + st.eps_rel / sc.c *
                         std::max({inf_norm(Dinv.cwiseProduct(Px)), inf_norm(Dinv.cwiseProduct(Aty)),
                                   inf_norm(Dinv.cwiseProduct(s.q))});

    // Infeasibility certificate from the dual iterate difference.
    if (m) {
      const Vec dy = yd - y_prev;
      const double dy_norm = inf_norm(sc.E.cwiseProduct(dy));
      if (dy_norm > 1e-12) {
        const double at_dy = inf_norm(Dinv.cwiseProduct(As.transpose() * dy));
        double support = 0.0;
        bool valid = true;
        for (int i = 0; i < m && valid; ++i) {
          const double v = dy(i);
          if (std::abs(v) <= 1e-12 * dy_norm) continue;
          if (v > 0) {
            if (!std::isfinite(s.u(i))) valid = false;
            else support += s.u(i) * v;
          } else {
            if (!std::isfinite(s.l(i))) valid = false;
            else support += s.l(i) * v;
          }
        }
        if (valid && at_dy <= st.eps_prim_inf * dy_norm && support <= -st.eps_prim_inf * dy_norm) {
          unscale(x, yd, out);
          out.status = QpStatus::PrimalInfeasible;
          out.iterations = iter;
          out.certificate = sc.E.cwiseProduct(dy);
          return finish(out);
        }
      }
    }

    const bool converged = prim_res <= eps_prim && dual_res <= eps_dual;
    while (next_polish_level >= 0) {
      const double f = std::pow(10.0, next_polish_level);
      if (!(prim_res <= f * eps_prim && dual_res <= f * eps_dual)) break;
      --next_polish_level;
      QpSolution admm;
      unscale(x, yd, admm);
      PolishResult pr = polish(qp, Porig, admm.y, admm.lambda_in, st, st.active_tol);
      if (pr.ok) {
        QpSolution cand;
        cand.y = pr.y;
        cand.lambda_eq = pr.lambda_eq;
        cand.lambda_in = pr.lambda_in;
        if (accept_kkt(cand)) {
          cand.status = QpStatus::Optimal;
          cand.polished = true;
          cand.iterations = iter;
          return finish(cand);
        }
      }
      break;
    }
    if (converged) {
      unscale(x, yd, out);
      out.status = QpStatus::Optimal;
      out.iterations = iter;
      return finish(out);
    }

    if (iter >= st.splitting_budget && !tried_interior) {
      tried_interior = true;
      const InteriorResult ip = interior_point(qp, Porig, st.interior_max_iter);
      if (ip.converged) {
        // Active set read off the interior solution: rows whose slack is
        // smaller than their multiplier.
        PolishResult pr = polish(qp, Porig, ip.y, ip.lambda_in, st, 0.0);
        QpSolution cand;
        if (pr.ok) {
          cand.y = pr.y;
          cand.lambda_eq = pr.lambda_eq;
          cand.lambda_in = pr.lambda_in;
          cand.polished = true;
        }
        if (!pr.ok || !accept_kkt(cand)) {
          cand.y = ip.y;
          cand.lambda_eq = ip.lambda_eq;
          cand.lambda_in = ip.lambda_in.cwiseMax(0.0);
          cand.polished = false;
        }
        if (accept_kkt(cand)) {
          cand.status = QpStatus::Optimal;
          cand.iterations = iter + ip.iterations;
          return finish(cand);
        }
      }
    }

    if (m) {
      const double prim_norm = std::max(inf_norm(Ax), inf_norm(z));
      const double dual_norm = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(s.q)});
      const double num = inf_norm(Ax - z) / (prim_norm + 1e-30);
      const double den = inf_norm(Px + s.q + Aty) / (dual_norm + 1e-30);
      if (num > 0 && den > 0) {
        const double cand = std::clamp(rho_base * std::sqrt(num / den), 1e-6, 1e6);
        if (cand > 5.0 * rho_base || cand < 0.2 * rho_base) {
          rho_base = cand;
          set_rho(rho_base);
          factor(ldlt);
        }
      }
    }
  }
  unscale(x, yd, out);
  out.status = QpStatus::MaxIter;
  out.iterations = st.max_iter;
  return finish(out);
}

nlohmann::json qp_to_json(const QuadraticProgram& qp) {
  auto mat = [](const Mat& m) {
    nlohmann::json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
  };
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["format"] = "safely-qp";
  j["version"] = 1;
  j["description"] = "min 1/2 y'Py + q'y s.t. A_eq y = b_eq, A_in y <= b_in; row-major dense";
  j["P"] = mat(qp.P);
  j["q"] = vec(qp.q);
  j["A_eq"] = mat(qp.A_eq);
  j["b_eq"] = vec(qp.b_eq);
  j["A_in"] = mat(qp.A_in);
  j["b_in"] = vec(qp.b_in);
  auto tags = [](const std::vector<ConstraintTag>& ts) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : ts)
      a.push_back({{"kind", static_cast<int>(t.kind)}, {"obstacle", t.obstacle},
                   {"time", t.time}, {"index", t.index}});
    return a;
  };
  j["eq_tags"] = tags(qp.eq_tags);
  j["in_tags"] = tags(qp.in_tags);
  return j;
}

QuadraticProgram qp_from_json(const nlohmann::json& j) {
  auto mat = [](const nlohmann::json& jm) {
    const auto rows = jm.at("rows").get<Eigen::Index>();
    const auto cols = jm.at("cols").get<Eigen::Index>();
    const auto data = jm.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw ConfigError("qp json: matrix data size mismatch");
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
    return m;
  };
  auto vec = [](const nlohmann::json& jv) {
    const auto d = jv.get<std::vector<double>>();
    return Vec(Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size())));
  };
  auto tags = [](const nlohmann::json& a) {
    std::vector<ConstraintTag> ts;
    for (const auto& t : a)
      ts.push_back({static_cast<ConstraintTag::Kind>(t.at("kind").get<int>()),
                    t.at("obstacle").get<int>(), t.at("time").get<int>(), t.at("index").get<int>()});
    return ts;
  };
  QuadraticProgram qp;
  qp.P = mat(j.at("P"));
  qp.q = vec(j.at("q"));
  qp.A_eq = mat(j.at("A_eq"));
  qp.b_eq = vec(j.at("b_eq"));
  qp.A_in = mat(j.at("A_in"));
  qp.b_in = vec(j.at("b_in"));
  if (j.contains("eq_tags")) qp.eq_tags = tags(j["eq_tags"]);
  if (j.contains("in_tags")) qp.in_tags = tags(j["in_tags"]);
  qp.validate();
  return qp;
}

void dump_qp(const QuadraticProgram& qp, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("dump_qp: cannot open " + path);
  f << qp_to_json(qp).dump(1) << "\n";
}

}  // namespace safely
