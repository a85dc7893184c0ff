#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <type_traits>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "structure.hpp"

namespace tridyson {

using CMat = MatT<cplx>;

// Positively oriented circle with trapezoid weights; (1/2 pi i) oint f dz ~ sum f(z_k)(z_k - c)/N.
struct Contour {
    cplx center{0.0, 0.0};
    double radius = 1.5;
    int nodes = 512;

    cplx node(int k) const {
        const double th = 2.0 * std::numbers::pi * k / nodes;
        return center + radius * cplx(std::cos(th), std::sin(th));
    }
    cplx weight(int k) const { return (node(k) - center) / static_cast<double>(nodes); }

    // extended-precision nodes for integrands with heavy cancellation
    std::complex<long double> node_ext(int k) const {
        const long double th = 2.0L * std::numbers::pi_v<long double> * k / nodes;
        return std::complex<long double>(center) + static_cast<long double>(radius) * std::complex<long double>(std::cos(th), std::sin(th));
    }
    std::complex<long double> weight_ext(int k) const {
        return (node_ext(k) - std::complex<long double>(center)) / static_cast<long double>(nodes);
    }

    // Must enclose [-K, K] with clearance 0.2.
    void validate(double K) const {
        if (nodes < 256 || (nodes & (nodes - 1)) != 0) throw ContourError("contour: nodes must be a power of two >= 256");
        if (!(radius > 0)) throw ContourError("contour: radius must be positive");
        const double reach = std::max(std::abs(cplx(K, 0) - center), std::abs(cplx(-K, 0) - center));
        if (radius - reach < 0.2) throw ContourError("contour: clearance from the spectrum below 0.2");
    }
};

// (1/2 pi i) oint f dz for scalar- or matrix-valued f.
template <class F>
auto contour_integral(const Contour& c, F&& f) {
    using R = std::decay_t<decltype(f(c.node(0)))>;
    R acc = f(c.node(0)) * c.weight(0);
    for (int k = 1; k < c.nodes; ++k) acc += f(c.node(k)) * c.weight(k);
    return acc;
}

inline Vec scaled_spectrum(const SpectralData& S) { return S.lambda / std::sqrt(static_cast<double>(S.n())); }

// 2(-z + sqrt(z^2 - 1)) with the branch cut on [-1,1].
inline cplx semicircle_stieltjes(cplx z) { return 2.0 * (-z + std::sqrt(z - 1.0) * std::sqrt(z + 1.0)); }

inline double semicircle_density(double x) { return std::abs(x) < 1 ? 2.0 / std::numbers::pi * std::sqrt(1 - x * x) : 0.0; }

inline double semicircle_cdf(double x) {
    if (x <= -1) return 0.0;
    if (x >= 1) return 1.0;
    return 0.5 + (x * std::sqrt(1 - x * x) + std::asin(x)) / std::numbers::pi;
}

// s(z) = (1/n) sum 1/(l_i/sqrt n - z), or with weights q_i^2 in place of 1/n.
inline cplx stieltjes(const SpectralData& S, cplx z, bool weighted) {
    const Vec x = scaled_spectrum(S);
    const double flat = 1.0 / S.n();
    cplx s = 0;
    for (int i = 0; i < S.n(); ++i) {
        const cplx d = x[i] - z;
        if (std::abs(d) < 1e-8) throw PoleError("stieltjes: z on an eigenvalue");
        s += (weighted ? S.qsq[i] : flat) / d;
    }
    return s;
}

// Kolmogorov-Smirnov distance between the empirical law of l_i/sqrt n and the semicircle.
inline double ks_semicircle(const SpectralData& S) {
    const Vec x = scaled_spectrum(S);
    std::vector<double> v(x.data(), x.data() + x.size());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double F = semicircle_cdf(v[i]);
        d = std::max({d, std::abs(F - i / n), std::abs((i + 1) / n - F)});
    }
    return d;
}

inline cplx eval_poly(std::span<const double> coef, cplx z) {
    cplx v = 0;
    for (auto it = coef.rbegin(); it != coef.rend(); ++it) v = v * z + *it;
    return v;
}

inline double eval_poly_derivative(std::span<const double> coef, double x) {
    double v = 0;
    for (std::size_t d = coef.size(); d-- > 1;) v = v * x + d * coef[d];
    return v;
}

inline double spectrum_reach(const SpectralData& S) { return scaled_spectrum(S).cwiseAbs().maxCoeff(); }

// Both residue identities for the weighted-minus-flat Stieltjes transform against a polynomial f.
struct ResidueCheck {
    cplx first_contour, second_contour;
    double first_direct = 0, second_direct = 0;
    double first_residual = 0, second_residual = 0;
};

inline ResidueCheck residue_identity_check(const SpectralData& S, std::span<const double> f, const Contour& c) {
    c.validate(spectrum_reach(S));
    const int n = S.n();
    const Vec x = scaled_spectrum(S);
    const Vec w = S.qsq.array() - 1.0 / n;
    ResidueCheck r;
    r.first_contour = contour_integral(c, [&](cplx z) { return (stieltjes(S, z, true) - stieltjes(S, z, false)) * eval_poly(f, z); });
    r.second_contour = contour_integral(c, [&](cplx z) {
        return (stieltjes(S, z, true) - stieltjes(S, z, false)) * stieltjes(S, z, false) * eval_poly(f, z);
    });
    for (int i = 0; i < n; ++i) {
        const double fi = eval_poly(f, x[i]).real();
        r.first_direct -= w[i] * fi;
        double inner = eval_poly_derivative(f, x[i]);
        for (int j = 0; j < n; ++j)
            if (j != i) inner += (fi - eval_poly(f, x[j]).real()) / (x[i] - x[j]);
        r.second_direct += w[i] * inner / n;
    }
    const double scale = std::max(1.0, std::abs(r.first_direct));
    r.first_residual = std::abs(r.first_contour - r.first_direct) / scale;
    r.second_residual = std::abs(r.second_contour - r.second_direct) / std::max(1.0, std::abs(r.second_direct));
    return r;
}

// d/dy G(y) = -1/2 (B(p'',p) + 2 B(p',p') + B(p,p'')).
template <class T>
MatT<T> build_dG(const JacobiMatrix& A, const OPBasisEval<T>& Y) {
    const auto a = [&](int k) { return A.a_at(k); };
    const auto p = [&](int i) { return Y.p_at(i); };
    const auto dp = [&](int i) { return Y.dp_at(i); };
    const auto ddp = [&](int i) { return Y.ddp_at(i); };
    return T(-0.5) * (b_table<T>(A.n(), a, ddp, p) + T(2) * b_table<T>(A.n(), a, dp, dp) + b_table<T>(A.n(), a, p, ddp));
}

// Contour forms of the weighted fluctuation sums against G^{(0)} and G, each next to its residue sum.
struct FluctuationContourReport {
    Mat g0_sum;           // sum_j (q_j^2 - 1/n) G^{(0)}(l_j)
    Mat g0_contour;       // (1/2 pi i) oint (s^A - s) G^{(0)}(sqrt n z) dz
    Mat single_contour;   // (1/2 pi i) oint (s^A - s) s G(sqrt n z) dz
    Mat single_residue;
    Mat double_contour;   // (1/2 pi i)^2 oint oint (s^A - s)(z) s(y) (G(sqrt n z) - G(sqrt n y))/(z - y) dz dy
    Mat double_residue;
    Mat antisymmetric_sum;  // sum_{i != j} (G(l_j) + G(l_i))/(l_i - l_j) q_i^2
    double first_residual = 0, single_residual = 0, double_residual = 0;
    double antisymmetric_residual = 0;  // antisymmetric_sum against -sqrt n double + 2 sqrt n single
};

inline FluctuationContourReport fluctuation_contour_check(const EigenBasis& eb, const Contour& c) {
    const auto& S = eb.S;
    c.validate(spectrum_reach(S));
    const int n = eb.n();
    const double rn = std::sqrt(static_cast<double>(n));
    const Vec x = scaled_spectrum(S);
    const Vec w = S.qsq.array() - 1.0 / n;
    const auto& A = eb.A;
    FluctuationContourReport r;

    std::vector<Mat> G(n), dG(n);
    r.g0_sum = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        G[i] = build_G(A, eb.at[i]);
        dG[i] = build_dG(A, eb.at[i]);
        r.g0_sum += w[i] * build_G0<double>(A, eb.at[i], std::span<const double>(eb.minor0[i]));
    }
    r.single_residue = Mat::Zero(n, n);
    r.double_residue = Mat::Zero(n, n);
    r.antisymmetric_sum = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        Mat inner = rn * dG[i];
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const Mat dq = (G[i] - G[j]) / (x[i] - x[j]);
            inner += dq;
            r.antisymmetric_sum += S.qsq[i] * (G[j] + G[i]) / (S.lambda[i] - S.lambda[j]);
        }
        r.single_residue += w[i] * inner / n;
        r.double_residue += w[i] * inner / n;
    }

    // G(sqrt n z) reaches ~|p_n|^2 on the contour while the sums are O(1), so the quadratures run in long double
    using xc = std::complex<long double>;
    using XMat = MatT<xc>;
    const auto st = [&](xc z, bool weighted) {
        xc acc = 0;
        for (int i = 0; i < n; ++i) acc += static_cast<long double>(weighted ? S.qsq[i] : 1.0 / n) / (static_cast<long double>(x[i]) - z);
        return acc;
    };
    const xc rnx = std::sqrt(static_cast<long double>(n));
    const auto Gz = [&](xc z) { return build_G<xc>(A, eval_polynomials<xc>(A, rnx * z, 1)); };
    const auto to_real = [](const XMat& M) -> Mat { return M.real().cast<double>(); };
    XMat g0 = XMat::Zero(n, n), single = XMat::Zero(n, n);
    std::vector<XMat> Gzk(c.nodes);
    std::vector<xc> fz(c.nodes);
    for (int k = 0; k < c.nodes; ++k) {
        const xc z = c.node_ext(k), w = c.weight_ext(k);
        const xc flat = st(z, false), f = st(z, true) - flat;
        Gzk[k] = Gz(z);
        g0 += (f * w) * build_G0<xc>(A, rnx * z);
        single += (f * flat * w) * Gzk[k];
        fz[k] = f * w;
    }
    r.g0_contour = to_real(g0);
    r.single_contour = to_real(single);

    // y runs on a wider concentric circle so z - y never vanishes
    Contour cy = c;
    cy.radius = 1.25 * c.radius;
    std::vector<XMat> Gyl(cy.nodes);
    std::vector<xc> fy(cy.nodes), ny(cy.nodes);
    for (int l = 0; l < cy.nodes; ++l) {
        ny[l] = cy.node_ext(l);
        Gyl[l] = Gz(ny[l]);
        fy[l] = st(ny[l], false) * cy.weight_ext(l);
    }
    XMat dbl = XMat::Zero(n, n);
    for (int k = 0; k < c.nodes; ++k) {
        const xc z = c.node_ext(k);
        for (int l = 0; l < cy.nodes; ++l) dbl += (fz[k] * fy[l] / (z - ny[l])) * (Gzk[k] - Gyl[l]);
    }
    r.double_contour = to_real(dbl);

    const auto relerr = [](const Mat& got, const Mat& want) {
        return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
    };
    r.first_residual = relerr(r.g0_contour, -r.g0_sum);
    r.single_residual = relerr(r.single_contour, r.single_residue);
    r.double_residual = relerr(r.double_contour, r.double_residue);
    r.antisymmetric_residual = relerr(r.antisymmetric_sum, -rn * r.double_contour + 2 * rn * r.single_contour);
    return r;
}

// Top corner of A, enough to evaluate p_0..p_m exactly.
inline JacobiMatrix corner_matrix(const JacobiMatrix& A, int m) {
    const int size = std::min(m + 1, A.n());
    return {A.b().head(size), A.a().head(size - 1)};
}

// Sup-errors of the scaled corner polynomials against their Chebyshev limits, per degree k = 0..k_max.
struct ChebReport {
    std::vector<double> poly, minor, deriv;
    double max_poly() const { return *std::max_element(poly.begin(), poly.end()); }
    double max_minor() const { return *std::max_element(minor.begin(), minor.end()); }
    double max_deriv() const { return *std::max_element(deriv.begin(), deriv.end()); }
    double max_all() const { return std::max({max_poly(), max_minor(), max_deriv()}); }
};

inline ChebReport cheb_convergence_report(const JacobiMatrix& A, int k_max, int grid = 181) {
    const int n = A.n();
    if (k_max < 0 || k_max + 1 > n) throw ParameterError("cheb_convergence_report: k_max must be below n");
    if (grid < 2) throw ParameterError("cheb_convergence_report: grid needs two points");
    const double rn = std::sqrt(static_cast<double>(n));
    const JacobiMatrix C = corner_matrix(A, k_max + 1);
    ChebReport r;
    r.poly.assign(k_max + 1, 0.0);
    r.minor.assign(k_max + 1, 0.0);
    r.deriv.assign(k_max + 1, 0.0);
    for (int g = 0; g < grid; ++g) {
        const double x = -0.9 + 1.8 * g / (grid - 1);
        const auto P = eval_polynomials<double>(C, rn * x, 1);
        const auto r0 = eval_minor0<double>(C, rn * x);
        for (int k = 0; k <= k_max; ++k) {
            r.poly[k] = std::max(r.poly[k], std::abs(P.p[k] - chebyshev_u(k, x)));
            r.deriv[k] = std::max(r.deriv[k], std::abs(rn * P.dp[k] - chebyshev_u(k, x, 1)));
            for (int j = 0; j < k; ++j) {
                const double mk = j == 0 ? r0[k] : P.p[j] * r0[k] - P.p[k] * r0[j];
                r.minor[k] = std::max(r.minor[k], std::abs(C.a_at(j + 1) * mk - chebyshev_u(k - j - 1, x)));
            }
        }
    }
    return r;
}

// H_{k,j} = sum_{l=1}^{min(j, k-j-1)} 2(k - 2l) for 1 <= j < k-1, zero otherwise.
inline double h_array(int k, int j) {
    if (j < 1 || j >= k - 1) return 0.0;
    double s = 0;
    for (int l = 1; l <= std::min(j, k - j - 1); ++l) s += 2.0 * (k - 2 * l);
    return s;
}

// Indices of the U_i in U_k U_l (k >= l): k-l, k-l+2, ..., k+l.
inline std::vector<int> chebyshev_product_indices(int k, int l) {
    if (k < l) std::swap(k, l);
    std::vector<int> idx;
    for (int j = 0; j <= l; ++j) idx.push_back(k - l + 2 * j);
    return idx;
}

// Spectral sums of p_k^{(0)} against p_k', p_{k+1}', p_{k-1}', with leading predictions and
// the n^{-3/2} correction terms.
struct MpevalSums {
    double same = 0, up = 0, down = 0;
    double lead_same = 0, lead_up = 0, lead_down = 0;
    double corr_same = 0, corr_up = 0, corr_down = 0;
};

// Low-degree values come from the corner recurrence, so this stays stable at large n.
inline MpevalSums mpeval_sums(const JacobiMatrix& A, const SpectralData& S, int k) {
    const int n = A.n();
    if (k < 1 || 2 * k > n) throw ParameterError("mpeval_sums: need 1 <= k and 2k <= n");
    const JacobiMatrix C = corner_matrix(A, k + 1);
    MpevalSums m;
    for (int i = 0; i < n; ++i) {
        const auto P = eval_polynomials<double>(C, S.lambda[i], 1);
        const double r = eval_minor0<double>(C, S.lambda[i])[k], q2 = S.qsq[i];
        m.same += r * P.dp[k] * q2;
        m.up += r * P.dp[k + 1] * q2;
        m.down += r * P.dp[k - 1] * q2;
    }
    double bsum = 0;
    for (int j = 1; j <= k; ++j) bsum += A.b_at(j);
    m.lead_same = k / (A.a_at(1) * A.a_at(k));
    m.lead_up = (bsum - k * A.b_at(k + 1)) / (A.a_at(1) * A.a_at(k) * A.a_at(k + 1));
    const double rn = std::sqrt(static_cast<double>(n)), s = std::pow(n, -1.5);
    for (int j = 1; j <= k - 1; ++j) m.corr_same += 16.0 * (A.a_at(j) - rn / 2) * (k - 2 * j);
    m.corr_same = s * (m.corr_same + 8.0 * k * (A.a_at(1) - A.a_at(k)));
    for (int j = 1; j <= k; ++j) m.corr_up += 8.0 * A.b_at(j) * (k + 1 - 2 * j);
    m.corr_up *= s;
    m.corr_down = m.corr_up;
    return m;
}

inline MpevalSums mpeval_sums(const EigenBasis& eb, int k) { return mpeval_sums(eb.A, eb.S, k); }

// Tridiagonal m x m corner of X.
inline Mat corner(const Mat& X, int m) { return X.topLeftCorner(m, m); }

// m x m corner of -2A + (n/2) sum_{i,j} Delta dB q_i^2 q_j^2 - calF(A - sqrt n D). The double sum is
// -sum_j q_j^2 G^{(0)}(l_j); only p_0..p_m enter the corner, so they come from the corner recurrence.
inline Mat corner_residual(const JacobiMatrix& A, const SpectralData& S, int m, CalFTable table = CalFTable::derived) {
    const int n = A.n();
    if (m < 1 || m >= n) throw ParameterError("corner_residual: corner order must be in 1..n-1");
    const double rn = std::sqrt(static_cast<double>(n));
    const JacobiMatrix C = corner_matrix(A, m);
    const auto a = [&](int k) { return C.a_at(k); };
    Mat sum = Mat::Zero(m, m);
    for (int j = 0; j < n; ++j) {
        const auto P = eval_polynomials<double>(C, S.lambda[j], 1);
        const auto r0 = eval_minor0<double>(C, S.lambda[j]);
        const auto r = [&](int i) { return i < 0 ? 0.0 : r0[i]; };
        const auto dp = [&](int i) { return P.dp_at(i); };
        sum += S.qsq[j] * b_table<double>(m, a, r, dp);  // -G^{(0)}
    }
    const Mat Am = corner(A.dense(), m);
    return -2.0 * Am + 0.5 * n * sum - apply_calF(Am - rn * build_D(m), table);
}

// White noise on a uniform grid of [-1,1]; dQ over each cell has variance equal to its width.
struct GaussianFieldSample {
    std::vector<double> grid;  // left endpoints
    std::vector<double> dQ;
    double spacing = 0;
    double beta = 2;
};

inline GaussianFieldSample sample_gaussian_field(double beta, double spacing, Rng& rng) {
    if (!(spacing > 0) || spacing > 1e-3) throw ResolutionError("gaussian field: grid spacing must be in (0, 1e-3]");
    GaussianFieldSample Q;
    Q.beta = beta;
    const int cells = static_cast<int>(std::round(2.0 / spacing));
    Q.spacing = 2.0 / cells;
    const double sd = std::sqrt(Q.spacing);
    for (int c = 0; c < cells; ++c) {
        Q.grid.push_back(-1.0 + c * Q.spacing);
        Q.dQ.push_back(sd * standard_normal(rng));
    }
    return Q;
}

inline GaussianFieldSample zero_field(double beta, double spacing = 1e-3) {
    Rng rng = make_stream(0);
    auto Q = sample_gaussian_field(beta, spacing, rng);
    std::fill(Q.dQ.begin(), Q.dQ.end(), 0.0);
    return Q;
}

// derived: sqrt(2/beta) [int sqrt(s) dQ/(x - z) - s^s(z) int sqrt(s) dQ], the limit of
// sqrt(n)(s^A - s) under Dirichlet weights. printed: sqrt(beta) [s^s(z) int dQ + int sqrt(s) dQ/(x - z)].
enum class SQConvention { derived, printed };

inline const char* to_string(SQConvention c) { return c == SQConvention::derived ? "derived" : "printed"; }

inline cplx stieltjes_field(const GaussianFieldSample& Q, cplx z, SQConvention conv) {
    cplx resolvent = 0;
    double mass = 0, root_mass = 0;
    for (std::size_t c = 0; c < Q.dQ.size(); ++c) {
        const double x = Q.grid[c];
        const double rs = std::sqrt(semicircle_density(x));
        resolvent += rs * Q.dQ[c] / (x - z);
        mass += Q.dQ[c];
        root_mass += rs * Q.dQ[c];
    }
    const cplx ss = semicircle_stieltjes(z);
    if (conv == SQConvention::derived) return std::sqrt(2.0 / Q.beta) * (resolvent - ss * root_mass);
    return std::sqrt(Q.beta) * (ss * mass + resolvent);
}

// (1/4 pi i) oint s^Q(z) s^s(z) d/dz U(z,z) dz, truncated to order m.
inline Mat limit_gaussian_drift(const GaussianFieldSample& Q, const Contour& c, int m,
                                SQConvention conv = SQConvention::derived) {
    c.validate(1.0);
    if (Q.spacing > 1e-3) throw ResolutionError("limit_gaussian_drift: grid too coarse");
    bool flat = true;
    for (double d : Q.dQ) flat = flat && d == 0.0;
    if (flat) return Mat::Zero(m, m);
    const CMat I = contour_integral(c, [&](cplx z) -> CMat {
        return stieltjes_field(Q, z, conv) * semicircle_stieltjes(z) * build_U_matrix<cplx>(z, z, m, true);
    });
    return 0.5 * I.real();
}

// (1/2 pi i) oint s^s(y) [dU(y,z) - dU(y,y)]/(z - y) dy with dU the derivative in the second slot.
// Each entry pairs U_a(y) with a difference quotient of U_b' of lower degree, so the integral vanishes.
inline CMat semicircle_difference_integral(cplx z, const Contour& c, int m) {
    c.validate(1.0);
    const auto one = [](int) { return 1.0; };
    const auto dU2 = [&](cplx y, cplx w) -> CMat {
        const auto uy = [&](int i) { return chebyshev_u<cplx>(i, y, 0); };
        const auto dw = [&](int i) { return chebyshev_u<cplx>(i, w, 1); };
        return cplx(0.5) * b_table<cplx>(m, one, uy, dw);
    };
    return contour_integral(c, [&](cplx y) -> CMat {
        if (std::abs(y - z) < 1e-12) throw ContourError("semicircle_difference_integral: z on the contour");
        return semicircle_stieltjes(y) * (dU2(y, z) - dU2(y, y)) / (z - y);
    });
}

// Limit of A - sqrt(n) D on an m x m corner, driven by dA = calF(A) - drift.
struct LimitState {
    int m = 0;
    Mat A_offset;
    Mat drift;
    CalFTable table = CalFTable::derived;
};

enum class OdeMethod { euler, expm };

namespace detail {

inline Vec pack_tridiagonal(const Mat& X) {
    const auto m = X.rows();
    Vec v(2 * m - 1);
    for (Eigen::Index i = 0; i < m; ++i) v[i] = X(i, i);
    for (Eigen::Index i = 0; i + 1 < m; ++i) v[m + i] = X(i + 1, i);
    return v;
}

inline Mat unpack_tridiagonal(const Vec& v, Eigen::Index m) {
    Mat X = Mat::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) X(i, i) = v[i];
    for (Eigen::Index i = 0; i + 1 < m; ++i) X(i + 1, i) = X(i, i + 1) = v[m + i];
    return X;
}

}  // namespace detail

inline LimitState integrate_limit_ode(LimitState L, double t_end, OdeMethod method = OdeMethod::expm, double dt = 1e-4) {
    if (t_end < 0) throw ParameterError("integrate_limit_ode: negative time");
    const auto m = L.m;
    if (method == OdeMethod::euler) {
        const int steps = static_cast<int>(std::ceil(t_end / dt - 1e-9));
        const double h = steps ? t_end / steps : 0.0;
        for (int s = 0; s < steps; ++s) L.A_offset += h * (apply_calF(L.A_offset, L.table) - L.drift);
        return L;
    }
    // linear map on packed entries, augmented by the constant forcing
    const int d = 2 * m - 1;
    Mat Aug = Mat::Zero(d + 1, d + 1);
    for (int e = 0; e < d; ++e) {
        Vec u = Vec::Zero(d);
        u[e] = 1.0;
        Aug.col(e).head(d) = detail::pack_tridiagonal(apply_calF(detail::unpack_tridiagonal(u, m), L.table));
    }
    Aug.col(d).head(d) = -detail::pack_tridiagonal(L.drift);
    Vec v(d + 1);
    v << detail::pack_tridiagonal(L.A_offset), 1.0;
    const Mat E = (t_end * Aug).exp();
    L.A_offset = detail::unpack_tridiagonal((E * v).head(d), m);
    return L;
}

struct StoppingMonitor {
    bool tau_R_hit = false, sigma_K_hit = false;
    double corner_deviation = 0;  // max |A_ij - sqrt n D_ij| over the corner
    double spectral_reach = 0;    // max |l_i| / sqrt n
    double qbound = 0;            // n max q_i^2 / log n
};

inline StoppingMonitor monitor_stopping(const JacobiMatrix& A, const SpectralData& S, double R, double K, int m) {
    const int n = A.n();
    m = std::min(m, n);
    StoppingMonitor s;
    const double rn = std::sqrt(static_cast<double>(n));
    s.corner_deviation = (corner(A.dense(), m) - rn * build_D(m)).cwiseAbs().maxCoeff();
    s.spectral_reach = spectrum_reach(S);
    s.tau_R_hit = s.corner_deviation > R;
    s.sigma_K_hit = s.spectral_reach > K;
    s.qbound = n > 1 ? n * S.qsq.maxCoeff() / std::log(static_cast<double>(n)) : 0.0;
    return s;
}

}  // namespace tridyson
