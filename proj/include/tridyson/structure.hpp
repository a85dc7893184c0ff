#pragma once

#include <cmath>
#include <vector>

#include "jacobi.hpp"

namespace tridyson {

enum class Symmetry { symmetric, antisymmetric, none, tridiagonal };

template <class T>
bool check_symmetry(const MatT<T>& X, Symmetry tag, double tol = 1e-12) {
    const double norm = std::max(X.cwiseAbs().maxCoeff(), 1e-300);
    switch (tag) {
        case Symmetry::symmetric: return (X - X.transpose()).cwiseAbs().maxCoeff() <= tol * norm;
        case Symmetry::antisymmetric: return (X + X.transpose()).cwiseAbs().maxCoeff() <= tol * norm;
        case Symmetry::tridiagonal:
            for (Eigen::Index i = 0; i < X.rows(); ++i)
                for (Eigen::Index j = 0; j < X.cols(); ++j)
                    if (std::abs(i - j) > 1 && X(i, j) != T(0)) return false;
            return true;
        case Symmetry::none: return true;
    }
    return true;
}

// Largest entry outside the three central diagonals.
template <class T>
double off_tridiagonal_max(const MatT<T>& X) {
    double m = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            if (std::abs(i - j) > 1) m = std::max(m, std::abs(X(i, j)));
    return m;
}

template <class T>
MatT<T> commutator(const MatT<T>& X, const MatT<T>& Y) {
    return X * Y - Y * X;
}

template <class T>
struct EFamily {
    MatT<T> E, Ep, Em;
};

template <class T>
EFamily<T> build_E_family(const OPBasisEval<T>& X, const OPBasisEval<T>& Y) {
    if (X.n() != Y.n()) throw ShapeError("build_E_family: evaluations of different size");
    const int n = X.n();
    EFamily<T> f;
    f.E = MatT<T>::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        for (int l = 0; l < k; ++l) f.E(k, l) = X.p[k] * Y.p[l];
        f.E(k, k) = T(0.5) * X.p[k] * Y.p[k];
    }
    f.Ep = f.E + f.E.transpose();
    f.Em = f.E - f.E.transpose();
    return f;
}

template <class T>
MatT<T> build_Em(const OPBasisEval<T>& X, const OPBasisEval<T>& Y) {
    return build_E_family(X, Y).Em;
}

template <class T>
MatT<T> build_Ep(const OPBasisEval<T>& X, const OPBasisEval<T>& Y) {
    return build_E_family(X, Y).Ep;
}

inline void require_separated(double x, double y, double scale) {
    if (std::abs(x - y) <= 1e-8 * scale) throw ConfluentInputError("points closer than the confluence threshold");
}

// (E^-(x,y) - E^-(y,x))/(x - y).
inline Mat build_Hminus(const OPBasisEval<double>& X, const OPBasisEval<double>& Y, double scale = 1.0) {
    require_separated(X.x, Y.x, scale);
    return (build_Em(X, Y) - build_Em(Y, X)) / (X.x - Y.x);
}

// (E^-(x,y) - E^-(y,x) - E^-(x,x) + E^-(y,y))/(x - y); first column vanishes identically.
inline Mat build_H0minus(const OPBasisEval<double>& X, const OPBasisEval<double>& Y, double scale = 1.0) {
    require_separated(X.x, Y.x, scale);
    const int n = X.n();
    Mat H = Mat::Zero(n, n);
    const double inv = 1.0 / (X.x - Y.x);
    // entry (k,l), k > l: -(p_{k-1}(x) + p_{k-1}(y)) (p_{l-1}(x) - p_{l-1}(y))/(x - y)
    for (int k = 0; k < n; ++k)
        for (int l = 1; l < k; ++l) {
            H(k, l) = -(X.p[k] + Y.p[k]) * (X.p[l] - Y.p[l]) * inv;
            H(l, k) = -H(k, l);
        }
    return H;
}

// F(y) = -d/dy E^-(x,y) at x = y: F_{kl} = -p_{k-1} p'_{l-1} below the diagonal.
template <class T>
MatT<T> build_F(const OPBasisEval<T>& Y) {
    const int n = Y.n();
    MatT<T> F = MatT<T>::Zero(n, n);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < k; ++l) {
            F(k, l) = -Y.p[k] * Y.dp[l];
            F(l, k) = -F(k, l);
        }
    return F;
}

// Tridiagonal B-type table with x-slot values X(i) and y-slot values Y(i) (i = polynomial index,
// zero for i < 0) and off-diagonal coefficients a(l), l = 0..m.
template <class T, class AFn, class XFn, class YFn>
MatT<T> b_table(int m, AFn a, XFn X, YFn Y) {
    MatT<T> B = MatT<T>::Zero(m, m);
    for (int l = 1; l <= m; ++l) {
        const real_of<T> am = a(l - 1), al = a(l);
        B(l - 1, l - 1) = -am * X(l - 2) * Y(l - 1) + al * X(l - 1) * Y(l) - am * X(l - 1) * Y(l - 2) + al * X(l) * Y(l - 1);
        if (l < m) {
            B(l, l - 1) = -al * (X(l - 1) * Y(l - 1) - X(l) * Y(l));
            B(l - 1, l) = B(l, l - 1);
        }
    }
    return B;
}

template <class T>
MatT<T> build_B(const JacobiMatrix& A, const OPBasisEval<T>& X, const OPBasisEval<T>& Y) {
    return b_table<T>(A.n(), [&](int k) { return A.a_at(k); }, [&](int i) { return X.p_at(i); },
                      [&](int i) { return Y.p_at(i); });
}

// B with the boundary terms of row and column n: [A, E^-(x,y)] - (x - y) E^+(x,y).
template <class T>
MatT<T> build_Btilde(const JacobiMatrix& A, const OPBasisEval<T>& X, const OPBasisEval<T>& Y) {
    const int n = A.n();
    MatT<T> B = build_B(A, X, Y);
    const auto px = [&](int i) { return X.p_at(i); };
    const auto py = [&](int i) { return Y.p_at(i); };
    for (int l = 1; l <= n - 1; ++l) {
        T v = -px(n) * py(l - 1);
        if (l == n - 1) v += -A.a_at(l) * (px(l - 1) * py(l - 1) - px(l) * py(l));
        B(n - 1, l - 1) = v;
        B(l - 1, n - 1) = v;
    }
    const int l = n;
    B(n - 1, n - 1) = -A.a_at(l - 1) * px(l - 2) * py(l - 1) + A.a_at(l) * px(l - 1) * py(l) -
                      A.a_at(l - 1) * px(l - 1) * py(l - 2) - A.a_at(l) * px(l) * py(l - 1);
    return B;
}

// [A, H^-(x,y)] - E^+(x,y) - E^+(y,x); supported in row and column n.
inline Mat build_L(const JacobiMatrix& A, const OPBasisEval<double>& X, const OPBasisEval<double>& Y) {
    const int n = A.n();
    Mat L = Mat::Zero(n, n);
    const double inv = 1.0 / (X.x - Y.x);
    for (int l = 1; l <= n - 1; ++l) {
        L(n - 1, l - 1) = (-X.p[n] * Y.p[l - 1] + X.p[l - 1] * Y.p[n]) * inv;
        L(l - 1, n - 1) = L(n - 1, l - 1);
    }
    L(n - 1, n - 1) = 2.0 * (-X.p[n] * Y.p[n - 1] + X.p[n - 1] * Y.p[n]) * inv;
    return L;
}

// G(y) = -1/2 d/dy B(y,y).
template <class T>
MatT<T> build_G(const JacobiMatrix& A, const OPBasisEval<T>& Y) {
    const auto a = [&](int k) { return A.a_at(k); };
    const auto p = [&](int i) { return Y.p_at(i); };
    const auto dp = [&](int i) { return Y.dp_at(i); };
    return T(-0.5) * (b_table<T>(A.n(), a, dp, p) + b_table<T>(A.n(), a, p, dp));
}

// G^{(0)}(y): B table with p^{(0)}(y) in the x slot and p'(y) in the y slot, negated.
template <class T>
MatT<T> build_G0(const JacobiMatrix& A, const OPBasisEval<T>& Y, std::span<const T> minor0) {
    const auto a = [&](int k) { return A.a_at(k); };
    const auto r = [&](int i) { return i < 0 ? T(0) : minor0[i]; };
    const auto dp = [&](int i) { return Y.dp_at(i); };
    return -b_table<T>(A.n(), a, r, dp);
}

template <class T>
MatT<T> build_G0(const JacobiMatrix& A, T y) {
    const auto Y = eval_polynomials<T>(A, y, 1);
    const auto r0 = eval_minor0<T>(A, y);
    return build_G0<T>(A, Y, std::span<const T>(r0));
}

// Spectral data together with polynomial and minor values at every eigenvalue.
struct EigenBasis {
    JacobiMatrix A;
    SpectralData S;
    std::vector<OPBasisEval<double>> at;
    std::vector<std::vector<double>> minor0;

    int n() const { return A.n(); }
    // p_l^{(j)}(lambda_i) for l >= j, zero otherwise
    double minor(int i, int j, int l) const {
        if (l <= j || l < 0) return 0.0;
        if (j == 0) return minor0[i][l];
        return at[i].p[j] * minor0[i][l] - at[i].p[l] * minor0[i][j];
    }
};

// Values at eigenvalues come from the eigenvectors rather than forward recurrence, which loses all
// accuracy once an eigenvector decays along the chain. With (x - A) p(x) = p_n(x) e_n, differentiating
// once and twice gives p' and p'' through their components in the eigenbasis; p'_0 = p''_0 = 0 fixes
// the free component. p^{(0)} then follows from its defining sum over the spectral measure.
inline EigenBasis make_eigen_basis(const JacobiMatrix& A, const SpectralData& S) {
    const int n = A.n();
    if (S.n() != n) throw ShapeError("make_eigen_basis: spectral data of wrong size");
    const Mat O = eigenvector_matrix(A);
    const Vec q = O.row(0).transpose();
    Mat D = Mat::Zero(n, n);  // D(j,i) = 1/(lambda_i - lambda_j)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i) D(j, i) = 1.0 / (S.lambda[i] - S.lambda[j]);

    Vec dpn(n), ddpn(n);
    Mat C1 = Mat::Zero(n, n), C2 = Mat::Zero(n, n);
    const auto fix_free_component = [&](Mat& C, int i) {
        double s = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) s += q[j] * C(j, i);
        C(i, i) = -s / q[i];
    };
    for (int i = 0; i < n; ++i) {
        dpn[i] = 1.0 / (q[i] * O(n - 1, i));
        for (int j = 0; j < n; ++j)
            if (j != i) C1(j, i) = dpn[i] * O(n - 1, j) * D(j, i);
        fix_free_component(C1, i);
        ddpn[i] = 2.0 * C1(i, i) / O(n - 1, i);
        for (int j = 0; j < n; ++j)
            if (j != i) C2(j, i) = (ddpn[i] * O(n - 1, j) - 2.0 * C1(j, i)) * D(j, i);
        fix_free_component(C2, i);
    }
    const Mat P = O * q.cwiseInverse().asDiagonal();
    const Mat P1 = O * C1;
    const Mat P2 = O * C2;
    const Vec qsq = q.cwiseAbs2();
    const Mat PD = P * (qsq.asDiagonal() * D);
    const Vec rowsum = D.transpose() * qsq;

    EigenBasis eb{A, S, {}, {}};
    eb.at.resize(n);
    eb.minor0.assign(n, std::vector<double>(n + 1, 0.0));
    for (int i = 0; i < n; ++i) {
        auto& e = eb.at[i];
        e.x = S.lambda[i];
        e.p.assign(n + 1, 0.0);
        e.dp.assign(n + 1, 0.0);
        e.ddp.assign(n + 1, 0.0);
        for (int k = 0; k < n; ++k) {
            e.p[k] = P(k, i);
            e.dp[k] = P1(k, i);
            e.ddp[k] = P2(k, i);
            eb.minor0[i][k] = P(k, i) * rowsum[i] - PD(k, i) + qsq[i] * P1(k, i);
        }
        e.p[0] = 1.0;
        e.dp[0] = 0.0;
        e.ddp[0] = 0.0;
        eb.minor0[i][0] = 0.0;
        e.dp[n] = dpn[i];
        e.ddp[n] = ddpn[i];
        eb.minor0[i][n] = qsq[i] * dpn[i];
    }
    return eb;
}

inline EigenBasis make_eigen_basis(const JacobiMatrix& A) { return make_eigen_basis(A, spectral_decompose(A)); }

// Symmetric W^{k,l}: ones at (k,l) and (l,k), a single one when k = l (1-based).
inline Mat w_basis(int n, int k, int l) {
    if (k < 1 || l < 1 || k > n || l > n) throw ParameterError("w_basis: index out of range");
    Mat W = Mat::Zero(n, n);
    W(k - 1, l - 1) = 1.0;
    W(l - 1, k - 1) = 1.0;
    return W;
}

// The printed entry table: -1/2 sum_i q_i^2 p_{k-1}(l_i) B(p(l_i), p^{(l-1)}(l_i)).
inline Mat remark_table_Gkl(const EigenBasis& eb, int k, int l) {
    const int n = eb.n();
    if (k < 1 || l < 1 || k > n || l > n) throw ParameterError("remark_table_Gkl: index out of range");
    Mat R = Mat::Zero(n, n);
    const auto a = [&](int s) { return eb.A.a_at(s); };
    for (int i = 0; i < n; ++i) {
        const double w = -0.5 * eb.S.qsq[i] * eb.at[i].p[k - 1];
        if (w == 0.0) continue;
        R += w * b_table<double>(
                     n, a, [&](int s) { return eb.at[i].p_at(s); }, [&](int s) { return eb.minor(i, l - 1, s); });
    }
    return R;
}

// Derivative of the tridiagonalization in direction W^{k,l}: G^{k,l} = -2 x (printed table);
// zero for k < l.
inline Mat build_Gkl(const EigenBasis& eb, int k, int l) {
    const int n = eb.n();
    if (k < 1 || l < 1 || k > n || l > n) throw ParameterError("build_Gkl: index out of range");
    if (k < l) return Mat::Zero(n, n);
    if (k == l || k == l + 1) return w_basis(n, k, l);
    return -2.0 * remark_table_Gkl(eb, k, l);
}

// Zero-first-column solution of [A,M] - W^{k,l} in T, entries -sum_i q_i^2 p_{u-1} p_{k-1} p_{r-1}^{(l-1)}.
inline Mat build_Mkl(const EigenBasis& eb, int k, int l) {
    const int n = eb.n();
    if (l < 1 || k < l || k > n) throw ParameterError("build_Mkl: need 1 <= l <= k <= n");
    Mat M = Mat::Zero(n, n);
    if (k == l || k == l + 1) return M;
    for (int u = 1; u <= n; ++u)
        for (int r = 1; r < u; ++r) {
            double s = 0;
            for (int i = 0; i < n; ++i)
                s += eb.S.qsq[i] * eb.at[i].p[u - 1] * eb.at[i].p[k - 1] * eb.minor(i, l - 1, r - 1);
            M(u - 1, r - 1) = -s;
            M(r - 1, u - 1) = s;
        }
    return M;
}

struct CommutatorRemainders {
    Mat calH;         // symmetric extension of the k > l+1 table, zero diagonal
    Mat corrections;  // [G,F] - calH: diagonal and first off-diagonal only
    Mat calE;         // remainder of [E^+, F] after the -(p p' + p' p)/q^2 term
};

inline double calH_entry(const JacobiMatrix& A, const OPBasisEval<double>& Y, int k, int l) {
    const auto P = [&](int i) { return Y.p_at(i); };
    const auto D = [&](int i) { return Y.dp_at(i); };
    const auto a = [&](int i) { return A.a_at(i); };
    return -D(l - 1) * a(k - 1) * D(k - 2) * (P(k - 2) * P(k - 2) + P(k - 1) * P(k - 1)) +
           D(l - 1) * a(k) * D(k) * (P(k - 1) * P(k - 1) + P(k) * P(k)) +
           P(k - 1) * a(l - 1) * P(l - 2) * (D(l - 2) * D(l - 2) + D(l - 1) * D(l - 1)) -
           P(k - 1) * a(l) * P(l) * (D(l - 1) * D(l - 1) + D(l) * D(l));
}

inline CommutatorRemainders build_commutator_remainders(const JacobiMatrix& A, const OPBasisEval<double>& Y) {
    const int n = A.n();
    const auto P = [&](int i) { return Y.p_at(i); };
    const auto D = [&](int i) { return Y.dp_at(i); };
    const auto DD = [&](int i) { return Y.ddp_at(i); };
    const auto a = [&](int i) { return A.a_at(i); };
    CommutatorRemainders r{Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n)};
    for (int k = 1; k <= n; ++k)
        for (int l = 1; l < k; ++l) {
            r.calH(k - 1, l - 1) = calH_entry(A, Y, k, l);
            r.calH(l - 1, k - 1) = r.calH(k - 1, l - 1);
        }
    for (int l = 1; l <= n; ++l) {
        const double corr = -D(l - 1) * a(l - 1) * D(l - 2) * (-P(l - 2) * P(l - 2) + P(l - 1) * P(l - 1)) +
                            D(l - 1) * a(l) * D(l) * (-P(l - 1) * P(l - 1) + P(l) * P(l)) +
                            P(l - 1) * a(l - 1) * P(l - 2) * (D(l - 2) * D(l - 2) - D(l - 1) * D(l - 1)) -
                            P(l - 1) * a(l) * P(l) * (D(l - 1) * D(l - 1) - D(l) * D(l));
        r.corrections(l - 1, l - 1) = calH_entry(A, Y, l, l) + corr;
        if (l < n) {
            const double g = P(l - 1) * D(l - 1) - P(l) * D(l);
            r.corrections(l, l - 1) = a(l) * g * g;
            r.corrections(l - 1, l) = r.corrections(l, l - 1);
        }
    }
    for (int k = 1; k <= n; ++k)
        for (int l = 1; l <= n; ++l)
            r.calE(k - 1, l - 1) = -P(k - 1) * D(l - 1) * a(l) * (-D(l) * P(l - 1) + P(l) * D(l - 1)) -
                                   D(k - 1) * P(l - 1) * a(k) * (-D(k) * P(k - 1) + P(k) * D(k - 1)) +
                                   0.5 * P(k - 1) * P(l - 1) * a(l - 1) * (DD(l - 1) * P(l - 2) - P(l - 1) * DD(l - 2)) +
                                   0.5 * P(k - 1) * P(l - 1) * a(k - 1) * (DD(k - 1) * P(k - 2) - P(k - 1) * DD(k - 2));
    return r;
}

// Linear operator of the limiting corner dynamics, applied to a tridiagonal increment. The diagonal
// rows are -(4l-2) b_l + 4 sum_{j<l} b_j in both tables. Off the diagonal the printed table reads
// -2(l+1) a_l - 2l a_{l-1} + 4 sum_{j<=l-2} a_j; the derived table -4l a_l + 4 sum_{j<l} a_j is the
// large-n response of the exact corner expression to single-entry perturbations.
enum class CalFTable { printed, derived };

inline const char* to_string(CalFTable t) { return t == CalFTable::printed ? "printed" : "derived"; }

inline Mat apply_calF(const Mat& X, CalFTable table = CalFTable::derived) {
    const auto m = static_cast<int>(X.rows());
    Mat Y = Mat::Zero(m, m);
    const auto b = [&](int j) { return X(j - 1, j - 1); };
    const auto a = [&](int j) { return j >= 1 && j < m ? X(j, j - 1) : 0.0; };
    for (int l = 1; l <= m; ++l) {
        double s = -b(l) * (4.0 * l - 2.0);
        for (int j = 1; j < l; ++j) s += 4.0 * b(j);
        Y(l - 1, l - 1) = s;
        if (l < m) {
            double t = 0;
            if (table == CalFTable::printed) {
                t = -2.0 * (l + 1) * a(l) - 2.0 * l * a(l - 1);
                for (int j = 1; j <= l - 2; ++j) t += 4.0 * a(j);
            } else {
                t = -4.0 * l * a(l);
                for (int j = 1; j < l; ++j) t += 4.0 * a(j);
            }
            Y(l, l - 1) = t;
            Y(l - 1, l) = t;
        }
    }
    return Y;
}

inline Mat build_D(int m) {
    if (m < 1) throw ParameterError("build_D: order must be positive");
    Mat D = Mat::Zero(m, m);
    for (int l = 0; l + 1 < m; ++l) D(l + 1, l) = D(l, l + 1) = 0.5;
    return D;
}

// Chebyshev analogue of B, truncated to order m; with deriv, d/dz of the diagonal value at (z,z).
template <class T>
MatT<T> build_U_matrix(T x, T y, int m, bool deriv = false) {
    if (m < 1) throw ParameterError("build_U_matrix: order must be positive");
    const auto one = [](int) { return 1.0; };
    const auto ux = [&](int i) { return chebyshev_u<T>(i, x, 0); };
    const auto uy = [&](int i) { return chebyshev_u<T>(i, y, 0); };
    if (!deriv) return T(0.5) * b_table<T>(m, one, ux, uy);
    const auto dux = [&](int i) { return chebyshev_u<T>(i, x, 1); };
    return T(0.5) * (b_table<T>(m, one, dux, ux) + b_table<T>(m, one, ux, dux));
}

}  // namespace tridyson
