#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "errors.hpp"
#include "random.hpp"

namespace tridyson {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using cplx = std::complex<double>;
template <class T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using real_of = decltype(std::real(std::declval<T>()));

// Symmetric tridiagonal matrix with diagonal b_1..b_n and positive off-diagonal a_1..a_{n-1}.
// Indexed accessors are 1-based and use the completion a_0 = 0, a_n = 1.
class JacobiMatrix {
public:
    JacobiMatrix() = default;
    JacobiMatrix(Vec b, Vec a) : b_(std::move(b)), a_(std::move(a)) {
        if (b_.size() < 1) throw ParameterError("JacobiMatrix: n must be positive");
        if (a_.size() != b_.size() - 1) throw ShapeError("JacobiMatrix: need n-1 off-diagonal entries");
        for (Eigen::Index k = 0; k < a_.size(); ++k)
            if (!(a_[k] > 0.0)) throw ParameterError("JacobiMatrix: off-diagonal entries must be positive");
    }

    static JacobiMatrix from_dense(const Mat& X) {
        const auto n = X.rows();
        if (X.cols() != n) throw ShapeError("from_dense: matrix must be square");
        Vec b = X.diagonal();
        Vec a = n > 1 ? Vec(X.diagonal(-1)) : Vec(0);
        return {b, a};
    }

    int n() const { return static_cast<int>(b_.size()); }
    const Vec& b() const { return b_; }
    const Vec& a() const { return a_; }

    double b_at(int k) const { return b_[k - 1]; }
    double a_at(int k) const {
        if (k <= 0) return 0.0;
        if (k >= n()) return 1.0;
        return a_[k - 1];
    }

    Mat dense() const {
        Mat X = Mat::Zero(n(), n());
        X.diagonal() = b_;
        if (n() > 1) {
            X.diagonal(1) = a_;
            X.diagonal(-1) = a_;
        }
        return X;
    }

    // Gershgorin estimate of the spectral diameter, used to scale tolerances.
    double scale() const {
        double lo = 0, hi = 0;
        for (int k = 1; k <= n(); ++k) {
            double r = (k > 1 ? a_at(k - 1) : 0.0) + (k < n() ? a_at(k) : 0.0);
            double l = b_at(k) - r, h = b_at(k) + r;
            if (k == 1 || l < lo) lo = l;
            if (k == 1 || h > hi) hi = h;
        }
        return std::max(hi - lo, 1e-300);
    }

    friend bool operator==(const JacobiMatrix& x, const JacobiMatrix& y) {
        return x.n() == y.n() && x.b_ == y.b_ && x.a_ == y.a_;
    }

private:
    Vec b_;
    Vec a_;
};

// Sorted eigenvalues and squared first eigenvector components.
struct SpectralData {
    Vec lambda;
    Vec qsq;

    int n() const { return static_cast<int>(lambda.size()); }
    Vec q() const { return qsq.array().sqrt(); }

    void validate() const {
        if (lambda.size() != qsq.size() || lambda.size() == 0)
            throw ShapeError("SpectralData: lambda and qsq must have equal positive length");
        for (int i = 0; i + 1 < n(); ++i)
            if (!(lambda[i] < lambda[i + 1])) throw DegenerateSpectrumError("SpectralData: eigenvalues must increase strictly");
        for (int i = 0; i < n(); ++i)
            if (!(qsq[i] > 0.0)) throw ParameterError("SpectralData: weights must be positive");
        if (std::abs(qsq.sum() - 1.0) > 1e-12) throw ParameterError("SpectralData: weights must sum to 1");
    }
};

// p_0..p_n and their first two derivatives at one point.
template <class T>
struct OPBasisEval {
    T x{};
    std::vector<T> p, dp, ddp;

    int n() const { return static_cast<int>(p.size()) - 1; }
    T p_at(int k) const { return k < 0 ? T(0) : p[k]; }
    T dp_at(int k) const { return k < 0 ? T(0) : dp[k]; }
    T ddp_at(int k) const { return k < 0 ? T(0) : ddp[k]; }
};

// a_k p_k = (x - b_k) p_{k-1} - a_{k-1} p_{k-2}, differentiated for p', p''.
template <class T>
OPBasisEval<T> eval_polynomials(const JacobiMatrix& A, T x, int max_deriv = 2) {
    if (max_deriv < 0 || max_deriv > 2) throw ParameterError("eval_polynomials: max_deriv must be in 0..2");
    const int n = A.n();
    using R = real_of<T>;
    OPBasisEval<T> e;
    e.x = x;
    e.p.assign(n + 1, T(0));
    e.dp.assign(n + 1, T(0));
    e.ddp.assign(n + 1, T(0));
    e.p[0] = T(1);
    for (int k = 1; k <= n; ++k) {
        const R ak = R(A.a_at(k)), am = R(A.a_at(k - 1));
        const T xb = x - R(A.b_at(k));
        const T pm2 = k >= 2 ? e.p[k - 2] : T(0);
        e.p[k] = (xb * e.p[k - 1] - am * pm2) / ak;
        if (max_deriv >= 1) {
            const T dpm2 = k >= 2 ? e.dp[k - 2] : T(0);
            e.dp[k] = (e.p[k - 1] + xb * e.dp[k - 1] - am * dpm2) / ak;
        }
        if (max_deriv >= 2) {
            const T ddpm2 = k >= 2 ? e.ddp[k - 2] : T(0);
            e.ddp[k] = (T(2) * e.dp[k - 1] + xb * e.ddp[k - 1] - am * ddpm2) / ak;
        }
    }
    return e;
}

template <class T>
struct MinorTable {
    int j = 0;
    T x{};
    std::vector<T> values;  // p_l^{(j)}(x), l = 0..n

    T at(int l) const { return l < 0 ? T(0) : values[l]; }
};

// p^{(0)} from the shifted recurrence with initial values 0, 1/a_1.
template <class T>
std::vector<T> eval_minor0(const JacobiMatrix& A, T x) {
    const int n = A.n();
    using R = real_of<T>;
    std::vector<T> r(n + 1, T(0));
    if (n >= 1) r[1] = T(1) / R(A.a_at(1));
    for (int l = 1; l < n; ++l)
        r[l + 1] = ((x - R(A.b_at(l + 1))) * r[l] - R(A.a_at(l)) * r[l - 1]) / R(A.a_at(l + 1));
    return r;
}

// General shift through p_l^{(j)} = p_j p_l^{(0)} - p_l p_j^{(0)} for l >= j.
template <class T>
MinorTable<T> eval_minor_polynomials(const OPBasisEval<T>& basis, std::span<const T> minor0, int j) {
    const int n = basis.n();
    if (j < 0 || j > n - 1) throw ParameterError("eval_minor_polynomials: shift out of range");
    MinorTable<T> m;
    m.j = j;
    m.x = basis.x;
    m.values.assign(n + 1, T(0));
    if (j == 0) {
        for (int l = 0; l <= n; ++l) m.values[l] = minor0[l];
        return m;
    }
    for (int l = j + 1; l <= n; ++l) m.values[l] = basis.p[j] * minor0[l] - basis.p[l] * minor0[j];
    return m;
}

template <class T>
MinorTable<T> eval_minor_polynomials(const JacobiMatrix& A, T x, int j) {
    const auto basis = eval_polynomials<T>(A, x, 0);
    const auto r0 = eval_minor0<T>(A, x);
    return eval_minor_polynomials<T>(basis, std::span<const T>(r0), j);
}

// (p_l(x) - p_l(y))/(x - y), switching to p_l'(x) when |x - y| is within the confluence threshold.
inline double difference_quotient(const JacobiMatrix& A, int l, double x, double y) {
    if (l < 0 || l > A.n()) throw ParameterError("difference_quotient: degree out of range");
    if (std::abs(x - y) <= 1e-8 * A.scale()) return eval_polynomials<double>(A, x, 1).dp[l];
    const auto ex = eval_polynomials<double>(A, x, 0);
    const auto ey = eval_polynomials<double>(A, y, 0);
    return (ex.p[l] - ey.p[l]) / (x - y);
}

// U_k by U_{k+1} = 2x U_k - U_{k-1}; the derivative through U_k' = sum_j 2(k-2j) U_{k-2j-1}.
template <class T>
T chebyshev_u(int k, T x, int deriv = 0) {
    if (k < 0) return T(0);
    if (deriv == 0) {
        T um = T(0), u = T(1);
        for (int i = 0; i < k; ++i) {
            T up = T(2) * x * u - um;
            um = u;
            u = up;
        }
        return u;
    }
    if (deriv != 1) throw ParameterError("chebyshev_u: deriv must be 0 or 1");
    T s = T(0);
    for (int j = 0; 2 * j + 1 <= k; ++j) s += T(2.0 * (k - 2 * j)) * chebyshev_u<T>(k - 2 * j - 1, x, 0);
    return s;
}

namespace detail {

struct TridiagonalEigen {
    std::vector<double> w, z;  // eigenvalues ascending; eigenvectors column-major
};

inline TridiagonalEigen dstevr(const JacobiMatrix& A) {
    const int n = A.n();
    std::vector<double> d(A.b().data(), A.b().data() + n);
    std::vector<double> e(std::max(n, 1), 0.0);
    for (int k = 0; k + 1 < n; ++k) e[k] = A.a()[k];
    TridiagonalEigen r{std::vector<double>(n), std::vector<double>(static_cast<std::size_t>(n) * n)};
    std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
    lapack_int m = 0;
    const lapack_int info = LAPACKE_dstevr(LAPACK_COL_MAJOR, 'V', 'A', n, d.data(), e.data(), 0.0, 0.0, 0, 0, 0.0, &m,
                                           r.w.data(), r.z.data(), n, isuppz.data());
    if (info != 0 || m != n) throw ConditioningError("tridiagonal eigensolver failed");
    return r;
}

}  // namespace detail

// Eigenvalues ascending with positive first eigenvector components (LAPACK dstevr).
inline SpectralData spectral_decompose(const JacobiMatrix& A) {
    const int n = A.n();
    const auto r = detail::dstevr(A);
    SpectralData S;
    S.lambda = Eigen::Map<const Vec>(r.w.data(), n);
    S.qsq.resize(n);
    for (int i = 0; i < n; ++i) {
        const double q0 = r.z[static_cast<std::size_t>(i) * n];
        S.qsq[i] = q0 * q0;
    }
    const double diameter = n > 1 ? std::max(S.lambda[n - 1] - S.lambda[0], 1e-300) : 1.0;
    for (int i = 0; i + 1 < n; ++i)
        if (S.lambda[i + 1] - S.lambda[i] < 1e-12 * diameter)
            throw DegenerateSpectrumError("spectral_decompose: eigenvalue multiplicity detected");
    S.qsq /= S.qsq.sum();
    return S;
}

// Eigenvector matrix O with O^T A O = diag(lambda); row 0 holds q_i > 0.
inline Mat eigenvector_matrix(const JacobiMatrix& A) {
    const int n = A.n();
    const auto r = detail::dstevr(A);
    Mat O = Eigen::Map<const Mat>(r.z.data(), n, n);
    for (int i = 0; i < n; ++i)
        if (O(0, i) < 0) O.col(i) *= -1.0;
    return O;
}

// Lanczos on diag(lambda) started from q, with full reorthogonalization.
inline JacobiMatrix reconstruct_jacobi(const SpectralData& S) {
    const int n = S.n();
    if (S.lambda.size() != S.qsq.size()) throw ShapeError("reconstruct_jacobi: size mismatch");
    for (int i = 0; i < n; ++i)
        if (!(S.qsq[i] >= 1e-300)) throw ConditioningError("reconstruct_jacobi: weight underflow");
    Mat Q = Mat::Zero(n, n);
    Q.col(0) = S.qsq.array().sqrt().matrix();
    Q.col(0) /= Q.col(0).norm();
    Vec b(n), a(std::max(n - 1, 0));
    for (int j = 0; j < n; ++j) {
        Vec v = S.lambda.cwiseProduct(Q.col(j));
        b[j] = Q.col(j).dot(v);
        if (j + 1 == n) break;
        for (int pass = 0; pass < 2; ++pass) v -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * v);
        const double beta = v.norm();
        if (!(beta > 1e-300)) throw ConditioningError("reconstruct_jacobi: Lanczos breakdown");
        a[j] = beta;
        Q.col(j + 1) = v / beta;
    }
    return {b, a};
}

enum class ChiRule { printed, calibrated };

inline const char* to_string(ChiRule r) { return r == ChiRule::printed ? "printed" : "calibrated"; }

// printed:    b ~ N(0,2), a_k ~ chi_{beta(n-k)/4}.
// calibrated: b ~ N(0,1/(2 beta)), a_k ~ chi_{beta(n-k)} / (2 sqrt(beta)); eigenvalue law
//             prod|l_i - l_j|^beta exp(-beta sum l^2), i.e. the V(x) = 2x^2 ensemble.
inline JacobiMatrix sample_dumitriu_edelman(int n, double beta, Rng& rng, ChiRule rule = ChiRule::printed) {
    if (n < 1) throw ParameterError("sample_dumitriu_edelman: n must be >= 1");
    if (!(beta > 0)) throw ParameterError("sample_dumitriu_edelman: beta must be positive");
    Vec b(n), a(n - 1);
    const double bsd = rule == ChiRule::printed ? std::sqrt(2.0) : std::sqrt(1.0 / (2.0 * beta));
    for (int k = 0; k < n; ++k) b[k] = bsd * standard_normal(rng);
    for (int k = 1; k < n; ++k) {
        if (rule == ChiRule::printed)
            a[k - 1] = chi(beta * (n - k) / 4.0, rng);
        else
            a[k - 1] = chi(beta * (n - k), rng) / (2.0 * std::sqrt(beta));
    }
    return {b, a};
}

// Dirichlet(beta/2, ..., beta/2) as normalized Gamma(beta/2, 1) variates.
inline Vec sample_dirichlet_weights(int n, double beta, Rng& rng) {
    std::gamma_distribution<double> g(beta / 2.0, 1.0);
    Vec w(n);
    for (int i = 0; i < n; ++i) w[i] = g(rng);
    return w / w.sum();
}

}  // namespace tridyson
