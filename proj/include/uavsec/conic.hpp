#pragma once

// Structured convex program builder and a dense log-barrier interior-point
// backend. Problems are assembled from scalar and Hermitian-matrix variables,
// affine equalities, term-sum inequalities, second-order cones, and PSD cones
// over affine Hermitian expressions. The objective is a sum of library terms
// (affine, quadratic, log-of-affine, inverse-sqrt-of-affine, norm-cubed, and
// path-loss logs of position slices).
//
// The backend runs nullspace-reduced damped Newton centering along the
// barrier path. Hessians are regularized when a term is indefinite, so mildly
// non-convex smooth terms are handled as trust-region style local steps.

#include "uavsec/core.hpp"
#include "uavsec/rates.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <ostream>

namespace uavsec::conic {

// Sparse affine form a.x + c0 over the flat variable vector.
struct LinForm {
  std::vector<int> idx;
  std::vector<double> coef;
  double c0 = 0.0;

  double eval(const VecX& x) const {
    double s = c0;
    for (size_t i = 0; i < idx.size(); ++i) s += coef[i] * x[idx[i]];
    return s;
  }
  void add_gradient(VecX& g, double w) const {
    for (size_t i = 0; i < idx.size(); ++i) g[idx[i]] += w * coef[i];
  }
  void add_outer(MatX& h, double w) const {
    for (size_t i = 0; i < idx.size(); ++i)
      for (size_t j = 0; j < idx.size(); ++j) h(idx[i], idx[j]) += w * coef[i] * coef[j];
  }
  LinForm& push(int index, double c) {
    if (c != 0.0) {
      idx.push_back(index);
      coef.push_back(c);
    }
    return *this;
  }
  static LinForm constant(double c) {
    LinForm f;
    f.c0 = c;
    return f;
  }
  static LinForm single(int index, double c, double c0 = 0.0) {
    LinForm f;
    f.c0 = c0;
    f.push(index, c);
    return f;
  }
};

enum class TermKind { affine, quadratic, log_affine, inv_sqrt_affine, norm_cube, iso_log };

// One objective/constraint building block; value is weight * base(x).
struct Term {
  TermKind kind = TermKind::affine;
  double weight = 1.0;
  LinForm lin;              // affine / log_affine / inv_sqrt_affine argument
  std::vector<int> qidx;    // quadratic: ||x[qidx] - qtarget||^2
  VecX qtarget;
  std::vector<int> nidx;    // norm_cube: ||x[nidx]||^3
  int iso_q0 = -1;          // iso_log: position slice start (3 entries)
  IsoLog iso;

  static Term affine(LinForm f, double w = 1.0) {
    Term t;
    t.kind = TermKind::affine;
    t.lin = std::move(f);
    t.weight = w;
    return t;
  }
  static Term quadratic(std::vector<int> indices, VecX target, double w) {
    Term t;
    t.kind = TermKind::quadratic;
    t.qidx = std::move(indices);
    t.qtarget = std::move(target);
    t.weight = w;
    return t;
  }
  static Term log_affine(LinForm arg, double w) {
    Term t;
    t.kind = TermKind::log_affine;
    t.lin = std::move(arg);
    t.weight = w;
    return t;
  }
  static Term inv_sqrt_affine(LinForm arg, double w) {
    Term t;
    t.kind = TermKind::inv_sqrt_affine;
    t.lin = std::move(arg);
    t.weight = w;
    return t;
  }
  static Term norm_cube(std::vector<int> indices, double w) {
    Term t;
    t.kind = TermKind::norm_cube;
    t.nidx = std::move(indices);
    t.weight = w;
    return t;
  }
  static Term iso_log(int q0, IsoLog f, double w) {
    Term t;
    t.kind = TermKind::iso_log;
    t.iso_q0 = q0;
    t.iso = std::move(f);
    t.weight = w;
    return t;
  }

  bool domain_ok(const VecX& x) const {
    switch (kind) {
      case TermKind::log_affine:
      case TermKind::inv_sqrt_affine:
        return lin.eval(x) > 0.0;
      case TermKind::iso_log: {
        const Vec3 q(x[iso_q0], x[iso_q0 + 1], x[iso_q0 + 2]);
        for (const auto& tm : iso.terms)
          if ((q - tm.site).norm() < 1e-3) return false;
        return iso.argument(q) > 0.0;
      }
      default:
        return true;
    }
  }

  double eval(const VecX& x) const {
    switch (kind) {
      case TermKind::affine:
        return weight * lin.eval(x);
      case TermKind::quadratic: {
        double s = 0.0;
        for (size_t i = 0; i < qidx.size(); ++i) {
          const double d = x[qidx[i]] - qtarget[static_cast<int>(i)];
          s += d * d;
        }
        return weight * s;
      }
      case TermKind::log_affine:
        return weight * std::log2(lin.eval(x));
      case TermKind::inv_sqrt_affine:
        return weight / std::sqrt(lin.eval(x));
      case TermKind::norm_cube: {
        double s = 0.0;
        for (int i : nidx) s += x[i] * x[i];
        return weight * std::pow(s, 1.5);
      }
      case TermKind::iso_log: {
        const Vec3 q(x[iso_q0], x[iso_q0 + 1], x[iso_q0 + 2]);
        return weight * iso.value(q);
      }
    }
    return 0.0;
  }

  void add_gradient(const VecX& x, VecX& g) const {
    switch (kind) {
      case TermKind::affine:
        lin.add_gradient(g, weight);
        return;
      case TermKind::quadratic:
        for (size_t i = 0; i < qidx.size(); ++i)
          g[qidx[i]] += weight * 2.0 * (x[qidx[i]] - qtarget[static_cast<int>(i)]);
        return;
      case TermKind::log_affine:
        lin.add_gradient(g, weight / (std::numbers::ln2 * lin.eval(x)));
        return;
      case TermKind::inv_sqrt_affine:
        lin.add_gradient(g, -0.5 * weight * std::pow(lin.eval(x), -1.5));
        return;
      case TermKind::norm_cube: {
        double s = 0.0;
        for (int i : nidx) s += x[i] * x[i];
        const double r = std::sqrt(s);
        for (int i : nidx) g[i] += weight * 3.0 * r * x[i];
        return;
      }
      case TermKind::iso_log: {
        const Vec3 q(x[iso_q0], x[iso_q0 + 1], x[iso_q0 + 2]);
        const Vec3 gi = iso.gradient(q);
        for (int a = 0; a < 3; ++a) g[iso_q0 + a] += weight * gi[a];
        return;
      }
    }
  }

  void add_hessian(const VecX& x, MatX& h) const {
    switch (kind) {
      case TermKind::affine:
        return;
      case TermKind::quadratic:
        for (int i : qidx) h(i, i) += 2.0 * weight;
        return;
      case TermKind::log_affine:
        lin.add_outer(h, -weight / (std::numbers::ln2 * std::pow(lin.eval(x), 2.0)));
        return;
      case TermKind::inv_sqrt_affine:
        lin.add_outer(h, 0.75 * weight * std::pow(lin.eval(x), -2.5));
        return;
      case TermKind::norm_cube: {
        double s = 0.0;
        for (int i : nidx) s += x[i] * x[i];
        const double r = std::sqrt(s);
        if (r < 1e-12) return;
        for (size_t a = 0; a < nidx.size(); ++a)
          for (size_t b = 0; b < nidx.size(); ++b) {
            double v = 3.0 * x[nidx[a]] * x[nidx[b]] / r;
            if (a == b) v += 3.0 * r;
            h(nidx[a], nidx[b]) += weight * v;
          }
        return;
      }
      case TermKind::iso_log: {
        const Vec3 q(x[iso_q0], x[iso_q0 + 1], x[iso_q0 + 2]);
        const Eigen::Matrix3d hi = iso.hessian(q);
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) h(iso_q0 + a, iso_q0 + b) += weight * hi(a, b);
        return;
      }
    }
  }
};

// sum of terms <= rhs
struct Constraint {
  std::vector<Term> terms;
  double rhs = 0.0;
  std::string label;

  double eval(const VecX& x) const {
    double s = -rhs;
    for (const auto& t : terms) s += t.eval(x);
    return s;  // feasible iff <= 0
  }
  bool domain_ok(const VecX& x) const {
    for (const auto& t : terms)
      if (!t.domain_ok(x)) return false;
    return true;
  }
};

// ||F x + f|| <= u(x), u affine.
struct Soc {
  std::vector<int> idx;  // support of F's columns
  MatX f_rows;           // rows x support
  VecX f0;
  LinForm u;
  std::string label;

  VecX arm(const VecX& x) const {
    VecX w = f0;
    for (int r = 0; r < f_rows.rows(); ++r)
      for (size_t c = 0; c < idx.size(); ++c) w[r] += f_rows(r, static_cast<int>(c)) * x[idx[c]];
    return w;
  }
};

// X(x) = c0 + sum_p x[idx_p] * coef_p  must be Hermitian positive definite.
struct PsdCone {
  int dim = 0;
  MatC c0;
  std::vector<int> idx;
  std::vector<MatC> coef;
  std::string label;

  MatC assemble(const VecX& x) const {
    MatC m = c0;
    for (size_t p = 0; p < idx.size(); ++p) m += x[idx[p]] * coef[p];
    return m;
  }
};

// Hermitian matrix variable: n*n real parameters laid out as
// [diag(0..n-1); then for each pair a<b row-major: Re, Im].
struct MatVar {
  int offset = -1;
  int n = 0;

  int params() const { return n * n; }
  int diag_index(int a) const { return offset + a; }
  int pair_base(int a, int b) const {  // a < b
    const int pair = a * n - a * (a + 1) / 2 + (b - a - 1);
    return offset + n + 2 * pair;
  }
  MatC unpack(const VecX& x) const {
    MatC m(n, n);
    for (int a = 0; a < n; ++a) m(a, a) = x[diag_index(a)];
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        const int p = pair_base(a, b);
        m(a, b) = Cplx(x[p], x[p + 1]);
        m(b, a) = std::conj(m(a, b));
      }
    return m;
  }
  void pack_into(const MatC& m, VecX& x) const {
    for (int a = 0; a < n; ++a) x[diag_index(a)] = m(a, a).real();
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        const int p = pair_base(a, b);
        x[p] = m(a, b).real();
        x[p + 1] = m(a, b).imag();
      }
  }
};

enum class SolveStatus { optimal, near_optimal, infeasible, numerical_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::near_optimal: return "near-optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_failure: return "numerical-failure";
  }
  return "?";
}

struct SolveResult {
  SolveStatus status = SolveStatus::numerical_failure;
  double objective = 0.0;
  VecX x;                   // present iff optimal / near-optimal
  int newton_iters = 0;
  double wall_seconds = 0.0;
  double eq_residual = 0.0;
  double gap = 0.0;
  std::string message;

  bool ok() const {
    return status == SolveStatus::optimal || status == SolveStatus::near_optimal;
  }
};

struct SolverOptions {
  double tol_rel = 1e-7;       // relative duality-gap target
  double mu = 20.0;            // barrier path multiplier
  int max_newton = 80;         // per centering stage
  int max_stages = 48;
  double gap0 = 0.25;          // first-stage gap as a fraction of objective scale
  bool allow_phase1 = true;
  // phase-1 early stop: finish once x[watch_index] < watch_value
  int watch_index = -1;
  double watch_value = 0.0;
};

class ConicProblem {
 public:
  int num_vars() const { return n_; }

  int add_scalars(int count) {
    const int off = n_;
    n_ += count;
    return off;
  }
  MatVar add_hermitian(int n) {
    MatVar m;
    m.offset = n_;
    m.n = n;
    n_ += m.params();
    return m;
  }

  // <coeff, X> as a linear form over the block's parameters.
  static LinForm trace_form(const MatVar& m, const MatC& coeff, double scale = 1.0,
                            double c0 = 0.0) {
    LinForm f;
    f.c0 = c0;
    for (int a = 0; a < m.n; ++a) f.push(m.diag_index(a), scale * coeff(a, a).real());
    for (int a = 0; a < m.n; ++a)
      for (int b = a + 1; b < m.n; ++b) {
        const int p = m.pair_base(a, b);
        f.push(p, scale * 2.0 * coeff(a, b).real());
        f.push(p + 1, scale * 2.0 * coeff(a, b).imag());
      }
    return f;
  }
  static LinForm trace_of(const MatVar& m, double scale = 1.0) {
    return trace_form(m, MatC::Identity(m.n, m.n), scale);
  }

  void require_psd(const MatVar& m, std::string label = {}) {
    PsdCone cone;
    cone.dim = m.n;
    cone.c0 = MatC::Zero(m.n, m.n);
    for (int a = 0; a < m.n; ++a) {
      cone.idx.push_back(m.diag_index(a));
      MatC e = MatC::Zero(m.n, m.n);
      e(a, a) = 1.0;
      cone.coef.push_back(e);
    }
    for (int a = 0; a < m.n; ++a)
      for (int b = a + 1; b < m.n; ++b) {
        const int p = m.pair_base(a, b);
        MatC re = MatC::Zero(m.n, m.n), im = MatC::Zero(m.n, m.n);
        re(a, b) = re(b, a) = 1.0;
        im(a, b) = Cplx(0, 1);
        im(b, a) = Cplx(0, -1);
        cone.idx.push_back(p);
        cone.coef.push_back(re);
        cone.idx.push_back(p + 1);
        cone.coef.push_back(im);
      }
    cone.label = std::move(label);
    psds_.push_back(std::move(cone));
  }
  void require_psd_expr(PsdCone cone) { psds_.push_back(std::move(cone)); }
  // X - shift must stay positive definite (e.g. X >= I with shift = I).
  void require_psd_shifted(const MatVar& m, const MatC& shift, std::string label = {}) {
    require_psd(m, std::move(label));
    psds_.back().c0 = -shift;
  }

  void add_equality(const LinForm& f, double rhs) {
    eq_rows_.push_back(f);
    eq_rhs_.push_back(rhs - f.c0);
  }
  void add_inequality(Constraint c) { ineqs_.push_back(std::move(c)); }
  // convenience: affine form <= rhs
  void add_linear_inequality(LinForm f, double rhs, std::string label = {}) {
    Constraint c;
    c.rhs = rhs;
    c.terms.push_back(Term::affine(std::move(f)));
    c.label = std::move(label);
    ineqs_.push_back(std::move(c));
  }
  void add_soc(Soc s) { socs_.push_back(std::move(s)); }
  void add_objective(Term t) { objective_.push_back(std::move(t)); }

  double eval_objective(const VecX& x) const {
    double s = 0.0;
    for (const auto& t : objective_) s += t.eval(x);
    return s;
  }

  const std::vector<Constraint>& inequalities() const { return ineqs_; }
  const std::vector<PsdCone>& psd_cones() const { return psds_; }

  bool strictly_feasible(const VecX& x, double margin = 0.0) const {
    for (const auto& t : objective_)
      if (!t.domain_ok(x)) return false;
    for (const auto& c : ineqs_)
      if (!c.domain_ok(x) || c.eval(x) >= -margin) return false;
    for (const auto& s : socs_) {
      const double u = s.u.eval(x);
      if (u <= margin) return false;
      if (u * u - s.arm(x).squaredNorm() <= margin) return false;
    }
    for (const auto& p : psds_) {
      Eigen::LLT<MatC> llt(p.assemble(x));
      if (llt.info() != Eigen::Success) return false;
    }
    return true;
  }

  SolveResult solve(const VecX& x0, const SolverOptions& opts = {}) const;

  void dump(std::ostream& os) const {
    os << "{\n  \"vars\": " << n_ << ",\n  \"objective_terms\": " << objective_.size()
       << ",\n  \"equalities\": " << eq_rows_.size() << ",\n  \"inequalities\": [";
    for (size_t i = 0; i < ineqs_.size(); ++i)
      os << (i ? ", " : "") << '"' << (ineqs_[i].label.empty() ? "ineq" : ineqs_[i].label)
         << '"';
    os << "],\n  \"socs\": " << socs_.size() << ",\n  \"psd_cones\": [";
    for (size_t i = 0; i < psds_.size(); ++i)
      os << (i ? ", " : "") << psds_[i].dim;
    os << "]\n}\n";
  }

 private:
  int n_ = 0;
  std::vector<Term> objective_;
  std::vector<Constraint> ineqs_;
  std::vector<Soc> socs_;
  std::vector<PsdCone> psds_;
  std::vector<LinForm> eq_rows_;
  std::vector<double> eq_rhs_;

  friend class BarrierSolver;
};

// ---------------------------------------------------------------------------
// Backend.
// ---------------------------------------------------------------------------

class BarrierSolver {
 public:
  BarrierSolver(const ConicProblem& p, const SolverOptions& opts) : p_(p), opts_(opts) {}

  SolveResult run(const VecX& x0) {
    const auto t_start = std::chrono::steady_clock::now();
    SolveResult res;
    res.x = x0;
    if (res.x.size() != p_.n_) res.x = VecX::Zero(p_.n_);

    build_equalities();
    project_onto_equalities(res.x);

    if (!p_.strictly_feasible(res.x)) {
      if (!opts_.allow_phase1) {
        res.status = SolveStatus::infeasible;
        res.message = "infeasible start and phase 1 disabled";
        return res;
      }
      if (!phase1(res)) {
        res.wall_seconds = elapsed(t_start);
        return res;  // status already set
      }
    }

    nu_ = barrier_complexity();
    if (nu_ == 0.0) {
      // No inequality structure: a single Newton solve on the objective.
      const bool ok = center(res.x, 1.0, res.newton_iters);
      res.objective = p_.eval_objective(res.x);
      res.status = ok ? SolveStatus::optimal : SolveStatus::numerical_failure;
      res.eq_residual = eq_residual(res.x);
      res.wall_seconds = elapsed(t_start);
      return res;
    }

    double fscale = 1.0 + std::abs(p_.eval_objective(res.x));
    double t = std::max(1e-6, nu_ / (opts_.gap0 * fscale));
    bool stalled = false;
    for (int stage = 0; stage < opts_.max_stages; ++stage) {
      if (!center(res.x, t, res.newton_iters)) {
        stalled = true;
        break;
      }
      if (watch_hit(res.x)) break;
      fscale = 1.0 + std::abs(p_.eval_objective(res.x));
      if (nu_ / t <= opts_.tol_rel * fscale) break;
      t *= opts_.mu;
    }
    res.gap = nu_ / t;
    res.objective = p_.eval_objective(res.x);
    res.eq_residual = eq_residual(res.x);
    if (!stalled || res.gap <= 100.0 * opts_.tol_rel * fscale) {
      res.status = (res.gap <= opts_.tol_rel * fscale * 1.001 || watch_hit(res.x))
                       ? SolveStatus::optimal
                       : SolveStatus::near_optimal;
    } else {
      res.status = SolveStatus::numerical_failure;
      res.message = "newton centering stalled";
    }
    if (res.status == SolveStatus::optimal && p_.psds_.empty() && opts_.watch_index < 0)
      polish(res.x, t);
    res.objective = p_.eval_objective(res.x);
    res.wall_seconds = elapsed(t_start);
    return res;
  }

 private:
  const ConicProblem& p_;
  SolverOptions opts_;
  double nu_ = 0.0;
  MatX eq_mat_;   // m x n
  VecX eq_vec_;
  MatX null_z_;   // n x (n - m) null-space basis, identity when m == 0

  static double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  bool watch_hit(const VecX& x) const {
    return opts_.watch_index >= 0 && x[opts_.watch_index] < opts_.watch_value;
  }

  void build_equalities() {
    const int m = static_cast<int>(p_.eq_rows_.size());
    eq_mat_ = MatX::Zero(m, p_.n_);
    eq_vec_ = VecX::Zero(m);
    for (int r = 0; r < m; ++r) {
      const auto& f = p_.eq_rows_[static_cast<size_t>(r)];
      for (size_t i = 0; i < f.idx.size(); ++i) eq_mat_(r, f.idx[i]) = f.coef[i];
      eq_vec_[r] = p_.eq_rhs_[static_cast<size_t>(r)];
    }
    if (m == 0) {
      null_z_ = MatX::Identity(p_.n_, p_.n_);
      return;
    }
    Eigen::HouseholderQR<MatX> qr(eq_mat_.transpose());
    const MatX q = qr.householderQ();
    null_z_ = q.rightCols(p_.n_ - m);
  }

  void project_onto_equalities(VecX& x) const {
    if (eq_mat_.rows() == 0) return;
    const VecX r = eq_vec_ - eq_mat_ * x;
    if (r.norm() < 1e-12) return;
    x += eq_mat_.transpose() *
         (eq_mat_ * eq_mat_.transpose()).ldlt().solve(r);
  }

  double eq_residual(const VecX& x) const {
    if (eq_mat_.rows() == 0) return 0.0;
    return (eq_mat_ * x - eq_vec_).cwiseAbs().maxCoeff();
  }

  double barrier_complexity() const {
    double nu = static_cast<double>(p_.ineqs_.size()) + 2.0 * p_.socs_.size();
    for (const auto& c : p_.psds_) nu += c.dim;
    return nu;
  }

  bool domain_ok(const VecX& x) const { return p_.strictly_feasible(x); }

  // t * objective + barrier, with gradient/Hessian accumulation.
  double merit(const VecX& x, double t, VecX* grad, MatX* hess) const {
    double val = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();

    for (const auto& term : p_.objective_) {
      val += t * term.eval(x);
      if (grad) {
        VecX g = VecX::Zero(p_.n_);
        term.add_gradient(x, g);
        *grad += t * g;
      }
      if (hess) {
        MatX h = MatX::Zero(p_.n_, p_.n_);
        term.add_hessian(x, h);
        *hess += t * h;
      }
    }

    for (const auto& c : p_.ineqs_) {
      const double gval = c.eval(x);           // < 0
      const double s = -gval;
      val += -std::log(s);
      if (grad || hess) {
        VecX gg = VecX::Zero(p_.n_);
        for (const auto& term : c.terms) term.add_gradient(x, gg);
        if (grad) *grad += gg / s;
        if (hess) {
          for (const auto& term : c.terms) {
            MatX hh = MatX::Zero(p_.n_, p_.n_);
            term.add_hessian(x, hh);
            *hess += hh / s;
          }
          *hess += (gg * gg.transpose()) / (s * s);
        }
      }
    }

    for (const auto& s : p_.socs_) {
      const double u = s.u.eval(x);
      const VecX w = s.arm(x);
      const double r = u * u - w.squaredNorm();
      val += -std::log(r);
      if (grad || hess) {
        // dr/dx = 2u c - 2 F^T w over the support
        VecX dr = VecX::Zero(p_.n_);
        s.u.add_gradient(dr, 2.0 * u);
        for (int row = 0; row < s.f_rows.rows(); ++row)
          for (size_t cidx = 0; cidx < s.idx.size(); ++cidx)
            dr[s.idx[cidx]] -= 2.0 * s.f_rows(row, static_cast<int>(cidx)) * w[row];
        if (grad) *grad -= dr / r;
        if (hess) {
          // -d2r/r + dr dr^T / r^2 ; d2r = 2 c c^T - 2 F^T F
          MatX d2r = MatX::Zero(p_.n_, p_.n_);
          LinForm uc = s.u;
          uc.add_outer(d2r, 2.0);
          for (size_t a = 0; a < s.idx.size(); ++a)
            for (size_t b = 0; b < s.idx.size(); ++b) {
              double acc = 0.0;
              for (int row = 0; row < s.f_rows.rows(); ++row)
                acc += s.f_rows(row, static_cast<int>(a)) * s.f_rows(row, static_cast<int>(b));
              d2r(s.idx[a], s.idx[b]) -= 2.0 * acc;
            }
          *hess += -d2r / r + (dr * dr.transpose()) / (r * r);
        }
      }
    }

    for (const auto& cone : p_.psds_) {
      const MatC xm = cone.assemble(x);
      Eigen::LLT<MatC> llt(xm);
      // log det from Cholesky diagonal
      double logdet = 0.0;
      const MatC l = llt.matrixL();
      for (int i = 0; i < cone.dim; ++i) logdet += 2.0 * std::log(l(i, i).real());
      val += -logdet;
      if (grad || hess) {
        const MatC xinv = llt.solve(MatC::Identity(cone.dim, cone.dim));
        if (grad)
          for (size_t pidx = 0; pidx < cone.idx.size(); ++pidx)
            (*grad)[cone.idx[pidx]] -= re_trace(xinv, cone.coef[pidx]);
        if (hess) {
          std::vector<MatC> sp(cone.idx.size());
          for (size_t pidx = 0; pidx < cone.idx.size(); ++pidx)
            sp[pidx] = xinv * cone.coef[pidx] * xinv;
          for (size_t a = 0; a < cone.idx.size(); ++a)
            for (size_t b = a; b < cone.idx.size(); ++b) {
              const double v = re_trace(sp[a], cone.coef[b]);
              (*hess)(cone.idx[a], cone.idx[b]) += v;
              if (a != b) (*hess)(cone.idx[b], cone.idx[a]) += v;
            }
        }
      }
    }
    return val;
  }

  bool center(VecX& x, double t, int& iter_count) {
    VecX grad(p_.n_);
    MatX hess(p_.n_, p_.n_);
    const int nz = static_cast<int>(null_z_.cols());
    for (int it = 0; it < opts_.max_newton; ++it) {
      ++iter_count;
      const double f0 = merit(x, t, &grad, &hess);
      const VecX gz = null_z_.transpose() * grad;
      MatX hz = null_z_.transpose() * hess * null_z_;

      // damped factorization; escalates when the reduced Hessian is not PD
      double lambda = 0.0;
      const double base = std::max(1e-12, hz.diagonal().cwiseAbs().maxCoeff() * 1e-14);
      Eigen::LDLT<MatX> ldlt;
      VecX dz;
      for (int attempt = 0; attempt < 24; ++attempt) {
        MatX hdamp = hz;
        if (lambda > 0.0) hdamp += lambda * MatX::Identity(nz, nz);
        ldlt.compute(hdamp);
        if (ldlt.info() == Eigen::Success) {
          dz = -ldlt.solve(gz);
          if ((ldlt.vectorD().array() > 0.0).all() && gz.dot(dz) <= 0.0 && dz.allFinite())
            break;
        }
        lambda = (lambda == 0.0) ? base * 1e4 : lambda * 32.0;
        dz.resize(0);
      }
      if (dz.size() == 0) return false;

      const double dec = -gz.dot(dz);
      // Newton decrement in gap units; never scaled by t*objective.
      if (dec * 0.5 <= 1e-9 * (1.0 + nu_)) return true;

      const VecX dx = null_z_ * dz;
      double alpha = 1.0;
      bool stepped = false;
      for (int ls = 0; ls < 60; ++ls) {
        const VecX xn = x + alpha * dx;
        if (domain_ok(xn)) {
          const double fn = merit(xn, t, nullptr, nullptr);
          if (fn <= f0 - 0.25 * alpha * dec) {
            x = xn;
            stepped = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!stepped) {
        // no productive step at this stage; accept if we are already flat
        return dec * 0.5 <= 1e-4 * (1.0 + nu_);
      }
      if (watch_hit(x)) return true;
    }
    return true;  // iteration cap: treat as centered enough for this stage
  }

  // Active-set KKT refinement. The barrier path parks an O(sqrt(gap)) bias
  // on the primal point; a few Newton steps on the KKT system of the active
  // constraints remove it, making repeated solves land on the same point.
  // Scalar and SOC constraints only; reverts on any sign of trouble.
  void polish(VecX& x, double t_final) const {
    const int n = p_.n_;
    struct ActiveIneq {
      const Constraint* c;
      double lambda;
    };
    struct ActiveSoc {
      const Soc* s;
      double lambda;
    };
    std::vector<ActiveIneq> act;
    std::vector<ActiveSoc> act_soc;
    double lam_max = 0.0;
    for (const auto& c : p_.ineqs_) {
      const double lam = 1.0 / (t_final * std::max(1e-300, -c.eval(x)));
      lam_max = std::max(lam_max, lam);
      act.push_back({&c, lam});
    }
    for (const auto& s : p_.socs_) {
      const double u = s.u.eval(x);
      const double slack = u - s.arm(x).norm();
      const double lam = 1.0 / (t_final * std::max(1e-300, slack));
      lam_max = std::max(lam_max, lam);
      act_soc.push_back({&s, lam});
    }
    const double lam_cut = std::max(1e-9, 1e-6 * lam_max);
    std::erase_if(act, [&](const ActiveIneq& a) { return a.lambda < lam_cut; });
    std::erase_if(act_soc, [&](const ActiveSoc& a) { return a.lambda < lam_cut; });

    const int m_eq = static_cast<int>(eq_mat_.rows());
    const int m_act = static_cast<int>(act.size() + act_soc.size());
    VecX x_try = x;
    VecX lam(m_act);
    for (int i = 0; i < static_cast<int>(act.size()); ++i) lam[i] = act[static_cast<size_t>(i)].lambda;
    for (int i = 0; i < static_cast<int>(act_soc.size()); ++i)
      lam[static_cast<int>(act.size()) + i] = act_soc[static_cast<size_t>(i)].lambda;
    VecX nu_eq = VecX::Zero(m_eq);

    const auto soc_residual = [](const Soc& s, const VecX& xv) {
      return s.arm(xv).norm() - s.u.eval(xv);
    };
    const auto soc_gradient = [n](const Soc& s, const VecX& xv) {
      VecX g = VecX::Zero(n);
      const VecX w = s.arm(xv);
      const double r = std::max(w.norm(), 1e-12);
      for (int row = 0; row < s.f_rows.rows(); ++row)
        for (size_t c = 0; c < s.idx.size(); ++c)
          g[s.idx[c]] += s.f_rows(row, static_cast<int>(c)) * w[row] / r;
      s.u.add_gradient(g, -1.0);
      return g;
    };

    double old_res = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 8; ++it) {
      VecX grad_f = VecX::Zero(n);
      MatX hess = MatX::Zero(n, n);
      for (const auto& term : p_.objective_) {
        term.add_gradient(x_try, grad_f);
        term.add_hessian(x_try, hess);
      }
      // Perturbed complementarity target: active rows are driven to the tiny
      // fixed slack mu_pol / lambda instead of the exact boundary, so the
      // polished point stays strictly feasible (reusable as a warm start)
      // while remaining deterministic.
      const double mu_pol = 1e-9;
      MatX jac = MatX::Zero(m_act, n);
      VecX cons(m_act);
      int row = 0;
      for (const auto& a : act) {
        VecX g = VecX::Zero(n);
        for (const auto& term : a.c->terms) {
          term.add_gradient(x_try, g);
          MatX h = MatX::Zero(n, n);
          term.add_hessian(x_try, h);
          hess += lam[row] * h;
        }
        jac.row(row) = g.transpose();
        cons[row] = a.c->eval(x_try) + mu_pol / std::max(lam[row], 1e-6);
        ++row;
      }
      for (const auto& a : act_soc) {
        jac.row(row) = soc_gradient(*a.s, x_try).transpose();
        cons[row] = soc_residual(*a.s, x_try) + mu_pol / std::max(lam[row], 1e-6);
        ++row;
      }
      VecX kkt_grad = grad_f + jac.transpose() * lam;
      if (m_eq > 0) kkt_grad += eq_mat_.transpose() * nu_eq;
      const VecX eq_res = m_eq > 0 ? VecX(eq_mat_ * x_try - eq_vec_) : VecX();
      const double res_norm = kkt_grad.cwiseAbs().maxCoeff() +
                              (m_act ? cons.cwiseAbs().maxCoeff() : 0.0) +
                              (m_eq ? eq_res.cwiseAbs().maxCoeff() : 0.0);
      if (res_norm < 1e-11 * (1.0 + grad_f.cwiseAbs().maxCoeff())) break;
      if (res_norm > 10.0 * old_res) return;  // diverging: keep the barrier point
      old_res = std::min(old_res, res_norm);

      const int dim = n + m_act + m_eq;
      MatX kkt = MatX::Zero(dim, dim);
      kkt.topLeftCorner(n, n) = hess;
      const double ridge = 1e-12 * std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff());
      kkt.topLeftCorner(n, n) += ridge * MatX::Identity(n, n);
      if (m_act) {
        kkt.block(n, 0, m_act, n) = jac;
        kkt.block(0, n, n, m_act) = jac.transpose();
      }
      if (m_eq) {
        kkt.block(n + m_act, 0, m_eq, n) = eq_mat_;
        kkt.block(0, n + m_act, n, m_eq) = eq_mat_.transpose();
      }
      VecX rhs(dim);
      rhs.head(n) = -kkt_grad;
      if (m_act) rhs.segment(n, m_act) = -cons;
      if (m_eq) rhs.tail(m_eq) = -eq_res;
      const VecX step = kkt.partialPivLu().solve(rhs);
      if (!step.allFinite()) return;
      x_try += step.head(n);
      lam += step.segment(n, m_act);
      if (m_eq) nu_eq += step.tail(m_eq);
    }
    // accept only when the polished point stays strictly feasible with sane
    // multipliers and did not drift in objective value
    if ((lam.array() < -1e-9).any()) return;
    if (!p_.strictly_feasible(x_try)) return;
    const double f_old = p_.eval_objective(x);
    const double f_new = p_.eval_objective(x_try);
    if (f_new > f_old + 1e-6 * (1.0 + std::abs(f_old))) return;
    x = x_try;
  }

  // Phase 1: minimize a shared slack s shifted into every constraint.
  bool phase1(SolveResult& res) {
    ConicProblem aux;
    aux.n_ = p_.n_ + 1;
    const int s_idx = p_.n_;
    aux.objective_.push_back(Term::affine(LinForm::single(s_idx, 1.0)));
    // mild pull toward the hint keeps the auxiliary problem bounded
    {
      std::vector<int> all(static_cast<size_t>(p_.n_));
      for (int i = 0; i < p_.n_; ++i) all[static_cast<size_t>(i)] = i;
      VecX target = res.x;
      aux.objective_.push_back(Term::quadratic(all, target, 1e-9));
    }
    for (const auto& c : p_.ineqs_) {
      Constraint shifted = c;
      shifted.terms.push_back(Term::affine(LinForm::single(s_idx, -1.0)));
      aux.ineqs_.push_back(std::move(shifted));
    }
    for (const auto& s : p_.socs_) {
      Soc shifted = s;
      shifted.u.push(s_idx, 1.0);
      aux.socs_.push_back(std::move(shifted));
    }
    for (const auto& cone : p_.psds_) {
      PsdCone shifted = cone;
      shifted.idx.push_back(s_idx);
      shifted.coef.push_back(MatC::Identity(cone.dim, cone.dim));
      aux.psds_.push_back(std::move(shifted));
    }
    aux.eq_rows_ = p_.eq_rows_;
    aux.eq_rhs_ = p_.eq_rhs_;

    // objective-domain terms (logs etc.) cannot be slack-shifted; phase 1
    // requires the hint to satisfy them already
    for (const auto& t : p_.objective_)
      if (!t.domain_ok(res.x)) {
        res.status = SolveStatus::infeasible;
        res.message = "hint violates an objective-term domain";
        return false;
      }

    VecX x_aux(aux.n_);
    x_aux.head(p_.n_) = res.x;
    double s0 = 1.0;
    for (const auto& c : p_.ineqs_)
      if (c.domain_ok(res.x)) s0 = std::max(s0, c.eval(res.x) * 1.5 + 1.0);
    for (const auto& cone : p_.psds_) {
      const VecX ev = hermitian_eigenvalues(cone.assemble(res.x));
      s0 = std::max(s0, -ev.minCoeff() * 1.5 + 1.0);
    }
    for (const auto& s : p_.socs_) {
      const double u = s.u.eval(res.x);
      const double need = s.arm(res.x).norm() - u;
      s0 = std::max(s0, need * 1.5 + 1.0);
    }
    x_aux[s_idx] = s0;

    SolverOptions popts = opts_;
    popts.allow_phase1 = false;
    popts.watch_index = s_idx;
    popts.watch_value = -1e-9;
    popts.tol_rel = 1e-9;
    const SolveResult pres = aux.solve(x_aux, popts);
    res.newton_iters += pres.newton_iters;
    if (!pres.ok() || pres.x[s_idx] >= 0.0) {
      res.status = SolveStatus::infeasible;
      res.message = "phase 1 could not find a strictly feasible point";
      return false;
    }
    res.x = pres.x.head(p_.n_);
    if (!p_.strictly_feasible(res.x)) {
      res.status = SolveStatus::infeasible;
      res.message = "phase 1 endpoint not strictly feasible";
      return false;
    }
    return true;
  }
};

inline SolveResult ConicProblem::solve(const VecX& x0, const SolverOptions& opts) const {
  BarrierSolver solver(*this, opts);
  return solver.run(x0);
}

}  // namespace uavsec::conic
