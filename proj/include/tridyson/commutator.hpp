#pragma once

#include <vector>

#include <Eigen/Eigenvalues>

#include "structure.hpp"

namespace tridyson {

// [A,M] - W = T with M antisymmetric, first column zero, T tridiagonal.
struct CommutatorSolution {
    Mat M;
    Mat T;
};

namespace detail {

inline Mat spectral_coefficients(const EigenBasis& eb, const Mat& W) {
    const int n = eb.n();
    if (W.rows() != n || W.cols() != n) throw ShapeError("commutator: direction has wrong size");
    Mat O(n, n);
    for (int i = 0; i < n; ++i)
        for (int m = 0; m < n; ++m) O(m, i) = std::sqrt(eb.S.qsq[i]) * eb.at[i].p[m];
    return O.transpose() * W * O;
}

}  // namespace detail

// M = sum_i C_ii q_i^2 F(l_i) + sum_{i>j} C_ij q_i q_j H0^-(l_i,l_j), C = O^T W O.
inline CommutatorSolution solve_commutator(const EigenBasis& eb, const Mat& W) {
    const int n = eb.n();
    const Mat C = detail::spectral_coefficients(eb, W);
    const Vec q = eb.S.q();
    const double scale = eb.A.scale();
    Mat M = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        M += C(i, i) * eb.S.qsq[i] * build_F(eb.at[i]);
        for (int j = 0; j < i; ++j) M += C(i, j) * q[i] * q[j] * build_H0minus(eb.at[i], eb.at[j], scale);
    }
    const Mat A = eb.A.dense();
    return {M, commutator<double>(A, M) - W};
}

inline CommutatorSolution solve_commutator(const JacobiMatrix& A, const Mat& W) {
    return solve_commutator(make_eigen_basis(A), W);
}

// T = sum_i C_ii q_i^2 G(l_i) - sum_{i>j} C_ij q_i q_j (B(l_i,l_i) - B(l_j,l_j))/(l_i - l_j).
inline Mat commutator_residual_formula(const EigenBasis& eb, const Mat& W) {
    const int n = eb.n();
    const Mat C = detail::spectral_coefficients(eb, W);
    const Vec q = eb.S.q();
    std::vector<Mat> Bd(n);
    for (int i = 0; i < n; ++i) Bd[i] = build_B(eb.A, eb.at[i], eb.at[i]);
    Mat T = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        T += C(i, i) * eb.S.qsq[i] * build_G(eb.A, eb.at[i]);
        for (int j = 0; j < i; ++j)
            T -= C(i, j) * q[i] * q[j] * (Bd[i] - Bd[j]) / (eb.S.lambda[i] - eb.S.lambda[j]);
    }
    return T;
}

inline std::vector<Mat> span_basis(const EigenBasis& eb) {
    std::vector<Mat> v;
    v.reserve(eb.n());
    for (const auto& e : eb.at) v.push_back(build_Em(e, e));
    return v;
}

struct SpanReport {
    int rank = 0;
    Vec singular_values;  // descending
    double gap = 0;       // sigma_rank / sigma_{rank+1}, infinite if full rank
    Vec kernel;           // right singular vector of the smallest singular value
};

// Rank of the stacked vectorizations of E^-(l_i,l_i), cutoff 1e-9 sigma_max.
inline SpanReport span_rank(const EigenBasis& eb) {
    const int n = eb.n();
    const auto basis = span_basis(eb);
    Mat stacked(n * n, n);
    for (int i = 0; i < n; ++i) stacked.col(i) = basis[i].reshaped();
    Eigen::JacobiSVD<Mat> svd(stacked, Eigen::ComputeThinV);
    SpanReport r;
    r.singular_values = svd.singularValues();
    const double smax = r.singular_values.size() ? r.singular_values[0] : 0.0;
    for (Eigen::Index k = 0; k < r.singular_values.size(); ++k)
        if (r.singular_values[k] > 1e-9 * smax) ++r.rank;
    r.gap = r.rank < n && r.rank > 0 ? r.singular_values[r.rank - 1] / std::max(r.singular_values[r.rank], 1e-300)
                                     : std::numeric_limits<double>::infinity();
    r.kernel = svd.matrixV().col(n - 1);
    return r;
}

// Derivative of the tridiagonalization from e_1 in a symmetric direction X:
// sum_{k>=l} X_{kl} G^{k,l}, equivalently X - [A, M(X)].
inline Mat lanczos_derivative(const EigenBasis& eb, const Mat& X) {
    return -solve_commutator(eb, X).T;
}

inline Mat lanczos_derivative(const JacobiMatrix& A, const Mat& X) { return lanczos_derivative(make_eigen_basis(A), X); }

// Same derivative assembled entry by entry from the G^{k,l}.
inline Mat lanczos_derivative_by_entries(const EigenBasis& eb, const Mat& X) {
    const int n = eb.n();
    Mat D = Mat::Zero(n, n);
    for (int k = 1; k <= n; ++k)
        for (int l = 1; l <= k; ++l)
            if (X(k - 1, l - 1) != 0.0) D += X(k - 1, l - 1) * build_Gkl(eb, k, l);
    return D;
}

// Direction given in an orthonormal basis Q with Q e_1 = e_1 and A = Q^T X Q.
inline Mat lanczos_derivative_in_basis(const EigenBasis& eb, const Mat& Q, const Mat& G) {
    return lanczos_derivative(eb, Q.transpose() * G * Q);
}

struct Retridiagonalized {
    JacobiMatrix A;
    Mat Q;  // X = Q A Q^T, Q e_1 = e_1
};

// Householder reduction fixing e_1, with signs flipped so all off-diagonals are positive.
inline Retridiagonalized retridiagonalize(const Mat& X) {
    const auto n = X.rows();
    if (X.cols() != n || n < 1) throw ShapeError("retridiagonalize: matrix must be square");
    if (n == 1) return {JacobiMatrix(X.diagonal(), Vec(0)), Mat::Identity(1, 1)};
    Eigen::Tridiagonalization<Mat> tri(X);
    Mat Q = tri.matrixQ();
    Vec b = tri.diagonal();
    Vec a = tri.subDiagonal();
    const double scale = std::max(X.cwiseAbs().maxCoeff(), 1e-300);
    double sign = 1.0;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        if (std::abs(a[k]) <= 1e-14 * scale) throw DegenerateSpectrumError("retridiagonalize: off-diagonal underflow");
        if (a[k] * sign < 0) sign = -sign;
        Q.col(k + 1) *= sign;
        a[k] = std::abs(a[k]);
    }
    return {JacobiMatrix(b, a), Q};
}

struct HalfFVCoefficients {
    Vec c;         // coefficients of E^-(l_j,l_j)
    Mat target;    // -1/2 d/dl E^-(l,l) at l_i
    Mat residual;  // target - sum_j c_j E^-(l_j,l_j); zero on k+l <= n
    Mat wronskian; // F(l_i) - target
};

// Lagrange-interpolation coefficients for the symmetrized F at l_i; the kernel direction
// (q_1^2..q_n^2) is removed so that c_i = 0.
inline HalfFVCoefficients half_fv_coefficients(const EigenBasis& eb, int i) {
    const int n = eb.n();
    if (i < 0 || i >= n) throw ParameterError("half_fv_coefficients: eigenvalue index out of range");
    const double pi = eb.at[i].p[n - 1];
    if (std::abs(pi) < 1e-12 * eb.A.scale()) throw ConditioningError("half_fv_coefficients: p_{n-1}(lambda_i) too small");
    const auto& qsq = eb.S.qsq;
    const auto& lam = eb.S.lambda;
    Vec c = Vec::Zero(n);
    double cii = 0;
    for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        c[j] = -eb.at[j].p[n - 1] * qsq[j] / (2.0 * pi * qsq[i] * (lam[i] - lam[j]));
        cii -= 0.5 / (lam[i] - lam[j]);
    }
    c[i] = cii;
    c -= (cii / qsq[i]) * qsq;
    c[i] = 0.0;

    HalfFVCoefficients r;
    r.c = c;
    const auto& Y = eb.at[i];
    r.target = Mat::Zero(n, n);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < k; ++l) {
            r.target(k, l) = -0.5 * (Y.dp[k] * Y.p[l] + Y.p[k] * Y.dp[l]);
            r.target(l, k) = -r.target(k, l);
        }
    r.residual = r.target;
    for (int j = 0; j < n; ++j) r.residual -= c[j] * build_Em(eb.at[j], eb.at[j]);
    r.wronskian = build_F(Y) - r.target;
    return r;
}

}  // namespace tridyson
