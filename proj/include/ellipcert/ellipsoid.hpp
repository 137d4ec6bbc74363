// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ellipcert/error.hpp"

namespace ellipcert {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative tolerance of the PSD test.
inline constexpr double kPsdTol = 1e-9;
/// Reciprocal condition number below which a matrix counts as singular.
inline constexpr double kMinRcond = 1e-12;

inline double maxabs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
    }
}

/// Square symmetric matrix; the input is symmetrized on construction.
class SymMatrix {
  public:
    SymMatrix() = default;
    explicit SymMatrix(const Matrix& m) {
        if (m.rows() != m.cols()) {
            throw Error(ErrorKind::DimensionMismatch, "symmetric matrix must be square");
        }
        require_finite(m, "matrix");
        m_ = 0.5 * (m + m.transpose());
    }
    static SymMatrix identity(Eigen::Index n) { return SymMatrix(Matrix::Identity(n, n)); }
    static SymMatrix zero(Eigen::Index n) { return SymMatrix(Matrix::Zero(n, n)); }

    [[nodiscard]] const Matrix& mat() const { return m_; }
    [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    [[nodiscard]] double maxabs() const { return ellipcert::maxabs(m_); }
    [[nodiscard]] double trace() const { return m_.trace(); }

  private:
    Matrix m_;
};

enum class Form { Direct, Reverse };

inline const char* to_string(Form f) { return f == Form::Direct ? "direct" : "reverse"; }

/// Pivoted Cholesky of M + tol*maxabs(M)*I; succeeds iff every eigenvalue of
/// M is at least -tol*maxabs(M), up to rounding.
inline bool is_psd(const Matrix& m, double tol = kPsdTol) {
    if (m.rows() != m.cols()) {
        throw Error(ErrorKind::DimensionMismatch, "PSD test needs a square matrix");
    }
    require_finite(m, "matrix");
    const Eigen::Index n = m.rows();
    const double scale = maxabs(m);
    if (scale == 0.0) {
        return true;
    }
    Matrix a = 0.5 * (m + m.transpose());
    a.diagonal().array() += tol * scale;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    // Pivot floor: rounding noise of the elimination, far below the shift.
    const double floor = 1e-3 * tol * scale;
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Index p = k;
        for (Eigen::Index i = k + 1; i < n; ++i) {
            if (a(i, i) > a(p, p)) {
                p = i;
            }
        }
        if (p != k) {
            a.row(k).swap(a.row(p));
            a.col(k).swap(a.col(p));
        }
        const double d = a(k, k);
        if (!(d > floor)) {
            return false;
        }
        const double l = std::sqrt(d);
        a(k, k) = l;
        for (Eigen::Index i = k + 1; i < n; ++i) {
            a(i, k) /= l;
        }
        for (Eigen::Index j = k + 1; j < n; ++j) {
            for (Eigen::Index i = k + 1; i < n; ++i) {
                a(i, j) -= a(i, k) * a(j, k);
            }
        }
    }
    return true;
}

inline bool is_psd(const SymMatrix& m, double tol = kPsdTol) { return is_psd(m.mat(), tol); }

inline double min_eigenvalue(const Matrix& m) {
    if (m.rows() == 0) {
        return 0.0;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& m) {
    if (m.rows() == 0) {
        return 0.0;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(m.rows() - 1);
}

/// LU inverse guarded by the reciprocal condition estimate.
inline Matrix checked_inverse(const Matrix& m, const char* what = "matrix") {
    if (m.rows() != m.cols()) {
        throw Error(ErrorKind::DimensionMismatch, std::string(what) + " must be square to invert");
    }
    require_finite(m, what);
    if (m.rows() == 0) {
        return m;
    }
    Eigen::PartialPivLU<Matrix> lu(m);
    if (!(lu.rcond() >= kMinRcond)) {
        throw Error(ErrorKind::NotInvertible, std::string(what) + " is singular or ill-conditioned");
    }
    return lu.inverse();
}

inline SymMatrix inverse(const SymMatrix& m) { return SymMatrix(checked_inverse(m.mat())); }

struct Ellipsoid {
    Form form = Form::Reverse;
    SymMatrix M;
    std::vector<std::string> layout;

    Ellipsoid() = default;
    Ellipsoid(Form f, SymMatrix m, std::vector<std::string> l) : form(f), M(std::move(m)), layout(std::move(l)) {
        if (static_cast<Eigen::Index>(layout.size()) != M.dim()) {
            throw Error(ErrorKind::DimensionMismatch, "ellipsoid layout does not match matrix dimension");
        }
    }
    [[nodiscard]] Eigen::Index dim() const { return M.dim(); }
};

/// Weights in the simplex.
class ConvexCombinator {
  public:
    explicit ConvexCombinator(std::vector<double> w) : w_(std::move(w)) {
        double sum = 0.0;
        for (double x : w_) {
            if (!(x >= 0.0 && x <= 1.0)) {
                throw Error(ErrorKind::InvalidParameter, "convex weight outside [0, 1]");
            }
            sum += x;
        }
        if (w_.empty() || std::abs(sum - 1.0) > 1e-12) {
            throw Error(ErrorKind::InvalidParameter, "convex weights must sum to 1");
        }
    }
    [[nodiscard]] const std::vector<double>& weights() const { return w_; }
    [[nodiscard]] std::size_t size() const { return w_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return w_[i]; }

  private:
    std::vector<double> w_;
};

// ---------------------------------------------------------------------------
// Membership and conversions.

/// Direct: x'Mx <= 1 + tol. Reverse: [[1, x'], [x, M]] is PSD. The bordered
/// matrix is equilibrated by its diagonal first (a congruence, so PSD-ness is
/// unchanged) so the relative tolerance does not depend on the ellipsoid size.
inline bool membership(const Vector& x, const Ellipsoid& e, double tol = kPsdTol) {
    if (x.size() != e.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "point dimension does not match ellipsoid");
    }
    if (!x.allFinite()) {
        throw Error(ErrorKind::NonFinite, "point has non-finite entries");
    }
    const Matrix& m = e.M.mat();
    if (e.form == Form::Direct) {
        return x.dot(m * x) <= 1.0 + tol;
    }
    const Eigen::Index n = e.dim();
    Matrix b(n + 1, n + 1);
    b(0, 0) = 1.0;
    b.block(1, 0, n, 1) = x;
    b.block(0, 1, 1, n) = x.transpose();
    b.block(1, 1, n, n) = m;
    Vector d = Vector::Ones(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (m(i, i) > 0.0) {
            d(i + 1) = 1.0 / std::sqrt(m(i, i));
        }
    }
    return is_psd(d.asDiagonal() * b * d.asDiagonal(), tol);
}

inline Ellipsoid direct_to_reverse(const Ellipsoid& e) {
    if (e.form != Form::Direct) {
        throw Error(ErrorKind::InvalidParameter, "expected a direct-form ellipsoid");
    }
    return {Form::Reverse, inverse(e.M), e.layout};
}

inline Ellipsoid reverse_to_direct(const Ellipsoid& e) {
    if (e.form != Form::Reverse) {
        throw Error(ErrorKind::InvalidParameter, "expected a reverse-form ellipsoid");
    }
    return {Form::Direct, inverse(e.M), e.layout};
}

// ---------------------------------------------------------------------------
// Selection helpers.

/// Rows of the identity picked by `keep`: x -> x[keep].
inline Matrix selection_matrix(Eigen::Index n, const std::vector<Eigen::Index>& keep) {
    Matrix s = Matrix::Zero(static_cast<Eigen::Index>(keep.size()), n);
    for (std::size_t r = 0; r < keep.size(); ++r) {
        s(static_cast<Eigen::Index>(r), keep[r]) = 1.0;
    }
    return s;
}

inline Matrix block_diag(const std::vector<Matrix>& blocks) {
    Eigen::Index n = 0;
    for (const auto& b : blocks) {
        n += b.rows();
    }
    Matrix out = Matrix::Zero(n, n);
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
        out.block(off, off, b.rows(), b.cols()) = b;
        off += b.rows();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Propagation rules. Reverse-form rules take and return P-hat.

/// {x in E'(P)} y = Ax {y in E'(APA')}.
inline SymMatrix affine_image_reverse(const SymMatrix& p, const Matrix& a) {
    if (a.cols() != p.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "affine map does not match ellipsoid dimension");
    }
    require_finite(a, "affine map");
    return SymMatrix(a * p.mat() * a.transpose());
}

/// New variable appended with value 0: A = [I; 0].
inline SymMatrix init_zero_reverse(const SymMatrix& p, Eigen::Index added = 1) {
    Matrix a = Matrix::Zero(p.dim() + added, p.dim());
    a.topRows(p.dim()).setIdentity();
    return affine_image_reverse(p, a);
}

/// Drop the coordinates not listed in `keep` (reverse form: exact shadow).
inline SymMatrix project_reverse(const SymMatrix& p, const std::vector<Eigen::Index>& keep) {
    return affine_image_reverse(p, selection_matrix(p.dim(), keep));
}

/// Sum of lambda_i P_i: contains the intersection of the E(P_i).
inline SymMatrix convex_combination(const std::vector<SymMatrix>& ps, const ConvexCombinator& lambda) {
    if (ps.empty() || ps.size() != lambda.size()) {
        throw Error(ErrorKind::InvalidParameter, "one weight per ellipsoid required");
    }
    Matrix sum = Matrix::Zero(ps[0].dim(), ps[0].dim());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].dim() != ps[0].dim()) {
            throw Error(ErrorKind::DimensionMismatch, "convex combination of different dimensions");
        }
        sum += lambda[i] * ps[i].mat();
    }
    return SymMatrix(sum);
}

/// diag(lambda_i P_i): contains the product of the E(P_i).
inline SymMatrix cartesian_product(const std::vector<SymMatrix>& ps, const ConvexCombinator& lambda) {
    if (ps.empty() || ps.size() != lambda.size()) {
        throw Error(ErrorKind::InvalidParameter, "one weight per ellipsoid required");
    }
    std::vector<Matrix> blocks;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        blocks.push_back(lambda[i] * ps[i].mat());
    }
    return SymMatrix(block_diag(blocks));
}

inline Ellipsoid cartesian_product(const std::vector<Ellipsoid>& es, const ConvexCombinator& lambda) {
    std::set<std::string> seen;
    std::vector<std::string> layout;
    std::vector<SymMatrix> ps;
    for (const auto& e : es) {
        if (e.form != Form::Direct) {
            throw Error(ErrorKind::InvalidParameter, "cartesian product takes direct-form ellipsoids");
        }
        for (const auto& v : e.layout) {
            if (!seen.insert(v).second) {
                throw Error(ErrorKind::InvalidParameter, "cartesian product of overlapping layouts ('" + v + "')");
            }
            layout.push_back(v);
        }
        ps.push_back(e.M);
    }
    return {Form::Direct, cartesian_product(ps, lambda), layout};
}

/// Reverse form of the cartesian product: diag(P-hat_i / lambda_i). Stays
/// valid when some P-hat_i is degenerate, where the direct form has no inverse.
inline SymMatrix cartesian_product_reverse(const std::vector<SymMatrix>& ps, const std::vector<double>& lambda) {
    if (ps.empty() || ps.size() != lambda.size()) {
        throw Error(ErrorKind::InvalidParameter, "one weight per ellipsoid required");
    }
    ConvexCombinator check(lambda);
    std::vector<Matrix> blocks;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!(lambda[i] > 0.0)) {
            throw Error(ErrorKind::InvalidParameter, "reverse product needs positive weights");
        }
        blocks.push_back(ps[i].mat() / lambda[i]);
    }
    return SymMatrix(block_diag(blocks));
}

/// Shadow of E([[P, R'], [R, Q]]) on the first `keep` coordinates: P - R'Q^-1 R.
inline SymMatrix project_direct(const SymMatrix& m, Eigen::Index keep) {
    if (keep < 0 || keep > m.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "projection keeps more coordinates than present");
    }
    const Eigen::Index rest = m.dim() - keep;
    Matrix p = m.mat().topLeftCorner(keep, keep);
    Matrix r = m.mat().bottomLeftCorner(rest, keep);
    Matrix q = m.mat().bottomRightCorner(rest, rest);
    if (rest == 0 || maxabs(r) <= 1e-12 * m.maxabs()) {
        return SymMatrix(p);
    }
    Matrix qinv;
    try {
        qinv = checked_inverse(q, "projected block");
    } catch (const Error&) {
        throw Error(ErrorKind::NotProjectable, "projected block is singular and coupled to the kept coordinates");
    }
    return SymMatrix(p - r.transpose() * qinv * r);
}

/// {x in E(P)} y = Ax {y in E(A^-T P A^-1)} for invertible A.
inline SymMatrix inverse_image_direct(const SymMatrix& p, const Matrix& a) {
    if (a.rows() != a.cols() || a.cols() != p.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "inverse image needs a square map of the ellipsoid dimension");
    }
    Matrix ainv = checked_inverse(a, "affine map");
    return SymMatrix(ainv.transpose() * p.mat() * ainv);
}

/// {x in E(P)} y = Ax {x+y in E([[P,0],[0,0]] + lambda [A'; -I][A, -I])}.
inline SymMatrix copy_rule_direct(const SymMatrix& p, const Matrix& a, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorKind::InvalidParameter, "copy rule needs lambda >= 0");
    }
    if (a.cols() != p.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "copy map does not match ellipsoid dimension");
    }
    const Eigen::Index n = p.dim();
    const Eigen::Index m = a.rows();
    Matrix b(m, n + m);
    b << a, -Matrix::Identity(m, m);
    Matrix q = Matrix::Zero(n + m, n + m);
    q.topLeftCorner(n, n) = p.mat();
    q += lambda * b.transpose() * b;
    return SymMatrix(q);
}

/// {x in E'(P)} y = Ax {x+y in E'([[P, PA'], [AP, APA' + eps I]])}.
inline SymMatrix copy_rule_reverse(const SymMatrix& p, const Matrix& a, double eps) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) {
        throw Error(ErrorKind::InvalidParameter, "copy rule needs epsilon >= 0");
    }
    if (a.cols() != p.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "copy map does not match ellipsoid dimension");
    }
    const Eigen::Index n = p.dim();
    const Eigen::Index m = a.rows();
    Matrix q(n + m, n + m);
    q.topLeftCorner(n, n) = p.mat();
    q.topRightCorner(n, m) = p.mat() * a.transpose();
    q.bottomLeftCorner(m, n) = a * p.mat();
    q.bottomRightCorner(m, m) = a * p.mat() * a.transpose() + eps * Matrix::Identity(m, m);
    return SymMatrix(q);
}

/// {x in E(P)} u = f(x) {x+u in E(diag(P - mu I, mu))} for |f(x)| <= |x|.
inline SymMatrix sector_rule_direct(const SymMatrix& p, double mu) {
    if (!(mu >= 0.0) || !std::isfinite(mu)) {
        throw Error(ErrorKind::InvalidParameter, "sector rule needs mu >= 0");
    }
    Matrix shifted = p.mat() - mu * Matrix::Identity(p.dim(), p.dim());
    if (!is_psd(shifted) && min_eigenvalue(shifted) < -kPsdTol * std::max(1.0, p.maxabs())) {
        throw Error(ErrorKind::InvalidParameter, "sector rule needs P - mu I to be PSD");
    }
    return SymMatrix(block_diag({shifted, Matrix::Constant(1, 1, mu)}));
}

/// {x in E'(P)} u = f(x) {x+u in E'(diag(-eps P (P - eps I)^-1, eps))} for
/// eps above the largest eigenvalue of P. A singular P is accepted: the
/// formula is continuous there and the image stays flat along ker P.
inline SymMatrix sector_rule_reverse(const SymMatrix& p, double eps) {
    if (!std::isfinite(eps)) {
        throw Error(ErrorKind::NonFinite, "sector rule epsilon is not finite");
    }
    const Eigen::Index n = p.dim();
    Eigen::SelfAdjointEigenSolver<Matrix> es(p.mat());
    const Vector& lam = es.eigenvalues();
    const double top = n > 0 ? lam(n - 1) : 0.0;
    if (!(eps > top) || !(eps > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "sector rule needs epsilon above the largest eigenvalue");
    }
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i) = eps * std::max(lam(i), 0.0) / (eps - lam(i));
    }
    Matrix block = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    return SymMatrix(block_diag({block, Matrix::Constant(1, 1, eps)}));
}

/// Mb - Ma - margin I is PSD (reverse form: E'(Ma) inside E'(Mb) with slack).
inline bool loewner_leq(const SymMatrix& ma, const SymMatrix& mb, double margin = 0.0, double tol = kPsdTol) {
    if (ma.dim() != mb.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "Loewner comparison of different dimensions");
    }
    Matrix d = mb.mat() - ma.mat() - margin * Matrix::Identity(ma.dim(), ma.dim());
    return is_psd(d, tol);
}

} // namespace ellipcert
