#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "commutator.hpp"

namespace tridyson {

enum class Potential { quadratic, zero, custom };
enum class StepControl { fixed, adaptive };
enum class Route { A, B };
enum class RouteBScheme { milstein, euler };

struct FlowConfig {
    int n = 0;
    double beta = 2.0;
    Potential potential = Potential::quadratic;
    std::function<double(double)> custom_dV;  // V' when potential == custom
    double dt = 0.0;                           // 0 selects 1e-3/n
    double t_end = 0.0;
    std::uint64_t seed = 0;
    StepControl step_control = StepControl::fixed;
    RouteBScheme scheme = RouteBScheme::milstein;
    int max_halvings = 20;
    int route_b_max_n = 64;
    double route_b_weight_tol = 1e-2;  // largest accepted change of any q_i^2 in one route B step

    double step() const { return dt > 0 ? dt : 1e-3 / std::max(n, 1); }

    double dV(double x) const {
        switch (potential) {
            case Potential::quadratic: return 4.0 * x;
            case Potential::zero: return 0.0;
            case Potential::custom:
                if (!custom_dV) throw ParameterError("FlowConfig: custom potential without V'");
                return custom_dV(x);
        }
        return 0.0;
    }

    void validate() const {
        if (n < 1) throw ParameterError("FlowConfig: n must be >= 1");
        if (!(beta >= 1.0)) throw ParameterError("FlowConfig: beta must be >= 1");
        if (!(step() > 0)) throw ParameterError("FlowConfig: dt must be positive");
        if (t_end < 0) throw ParameterError("FlowConfig: t_end must be nonnegative");
    }
};

struct NoiseRecord {
    double t = 0;
    double dt = 0;
    Vec dZ;
};

struct FlowState {
    double t = 0;
    SpectralData S;
    JacobiMatrix A;
    std::vector<NoiseRecord> noise_log;

    static FlowState from_matrix(const JacobiMatrix& A) { return {0.0, spectral_decompose(A), A, {}}; }
};

inline std::string dump_state(const FlowState& s) {
    std::ostringstream os;
    os.precision(17);
    os << "t=" << s.t << " lambda=[";
    for (int i = 0; i < s.S.n(); ++i) os << (i ? "," : "") << s.S.lambda[i];
    os << "] qsq=[";
    for (int i = 0; i < s.S.n(); ++i) os << (i ? "," : "") << s.S.qsq[i];
    os << "]";
    return os.str();
}

// -V'(l_i)/2 + sum_{j != i} 1/(l_i - l_j)
inline Vec dbm_drift(const Vec& lambda, const FlowConfig& cfg) {
    const auto n = lambda.size();
    Vec mu(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = -0.5 * cfg.dV(lambda[i]);
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) s += 1.0 / (lambda[i] - lambda[j]);
        mu[i] = s;
    }
    return mu;
}

inline bool strictly_increasing(const Vec& x) {
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i)
        if (!(x[i] < x[i + 1])) return false;
    return true;
}

inline double min_gap(const Vec& x) {
    double g = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i) g = std::min(g, x[i + 1] - x[i]);
    return g;
}

namespace detail {

// Splits an increment dZ over [0,dt] into two halves by the Brownian bridge.
inline std::pair<Vec, Vec> bridge_split(const Vec& dZ, double dt, Rng& rng) {
    Vec first(dZ.size());
    const double sd = std::sqrt(dt / 4.0);
    for (Eigen::Index i = 0; i < dZ.size(); ++i) first[i] = 0.5 * dZ[i] + sd * standard_normal(rng);
    return {first, dZ - first};
}

}  // namespace detail

// Euler-Maruyama for the eigenvalues with a given increment; an ordering violation splits the
// step by the Brownian bridge, down to max_halvings levels. Accepted sub-steps go to the noise log.
inline void dbm_advance(Vec& lambda, double& t, const Vec& dZ, double dt, const FlowConfig& cfg, Rng& rng,
                        std::vector<NoiseRecord>& log, int depth = 0) {
    const double c = std::sqrt(2.0 / cfg.beta);
    Vec next = lambda + c * dZ + dbm_drift(lambda, cfg) * dt;
    if (strictly_increasing(next)) {
        log.push_back({t, dt, dZ});
        lambda = next;
        t += dt;
        return;
    }
    if (depth >= cfg.max_halvings) {
        std::ostringstream os;
        os.precision(17);
        os << "t=" << t << " dt=" << dt << " lambda=[";
        for (Eigen::Index i = 0; i < lambda.size(); ++i) os << (i ? "," : "") << lambda[i];
        os << "]";
        throw StiffnessError("dbm_step: ordering violation persists after maximum step halving", os.str());
    }
    const auto [d1, d2] = detail::bridge_split(dZ, dt, rng);
    dbm_advance(lambda, t, d1, dt / 2, cfg, rng, log, depth + 1);
    dbm_advance(lambda, t, d2, dt / 2, cfg, rng, log, depth + 1);
}

inline double adaptive_dt(const Vec& lambda, const FlowConfig& cfg) {
    double dt = cfg.step();
    if (cfg.step_control == StepControl::adaptive && lambda.size() > 1) {
        const double drift = dbm_drift(lambda, cfg).cwiseAbs().maxCoeff();
        if (drift > 0) dt = std::min(dt, 0.1 * min_gap(lambda) / drift);
    }
    return dt;
}

inline Vec draw_increment(int n, double dt, Rng& rng) {
    Vec dZ(n);
    const double s = std::sqrt(dt);
    for (int i = 0; i < n; ++i) dZ[i] = s * standard_normal(rng);
    return dZ;
}

// One step of the eigenvalue SDE; the matrix is left untouched.
inline FlowState dbm_step(FlowState state, const FlowConfig& cfg, Rng& rng) {
    const double dt = adaptive_dt(state.S.lambda, cfg);
    const Vec dZ = draw_increment(state.S.n(), dt, rng);
    dbm_advance(state.S.lambda, state.t, dZ, dt, cfg, rng, state.noise_log);
    return state;
}

// Per-noise coefficient matrices -sqrt(2/beta) q_i^2 G(l_i) of the martingale part.
inline std::vector<Mat> martingale_part_eval(const EigenBasis& eb, double beta) {
    std::vector<Mat> out;
    out.reserve(eb.n());
    const double c = std::sqrt(2.0 / beta);
    for (int i = 0; i < eb.n(); ++i) out.push_back(-c * eb.S.qsq[i] * build_G(eb.A, eb.at[i]));
    return out;
}

inline std::vector<Mat> martingale_part_eval(const FlowState& s, double beta) {
    return martingale_part_eval(make_eigen_basis(s.A, s.S), beta);
}

// Finite-variation terms per unit time. P is the Ito correction matrix
// (1/beta) sum_i q_i^4 [-E^+(l_i,l_i) + G(l_i), F(l_i)], and the four pieces sum to its image
// under the Lanczos derivative.
struct FVTerms {
    Mat dS, dR1, dR2, dR3, dP;
    Mat dS_derivative_form;  // (1/beta) sum_i q_i^2 B(p'(l_i), p'(l_i)); equals dS where 2 max(k,l) <= n+1
    Mat total() const { return dS + dR1 + dR2 + dR3; }
};

inline FVTerms fv_terms_eval(const EigenBasis& eb, double beta) {
    const int n = eb.n();
    Mat xS = Mat::Zero(n, n), xR1 = Mat::Zero(n, n), xR2 = Mat::Zero(n, n), xR3 = Mat::Zero(n, n);
    FVTerms fv;
    fv.dS_derivative_form = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        const auto& Y = eb.at[i];
        const double q2 = eb.S.qsq[i], q4 = q2 * q2;
        const auto r = build_commutator_remainders(eb.A, Y);
        for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l) xS(k, l) += q2 * (Y.p[k] * Y.dp[l] + Y.dp[k] * Y.p[l]);
        xR1 += q4 * r.calH;
        xR2 += q4 * r.corrections;
        xR3 -= q4 * r.calE;
        OPBasisEval<double> D;
        D.x = Y.x;
        D.p = Y.dp;
        fv.dS_derivative_form += q2 * build_B(eb.A, D, D);
    }
    const double s = 1.0 / beta;
    fv.dP = s * (xS + xR1 + xR2 + xR3);
    fv.dS = s * lanczos_derivative(eb, xS);
    fv.dR1 = s * lanczos_derivative(eb, xR1);
    fv.dR2 = s * lanczos_derivative(eb, xR2);
    fv.dR3 = s * lanczos_derivative(eb, xR3);
    fv.dS_derivative_form *= s;
    return fv;
}

inline FVTerms fv_terms_eval(const FlowState& st, double beta) { return fv_terms_eval(make_eigen_basis(st.A, st.S), beta); }

// Drift of the tridiagonal flow with frozen weights: -sum_i mu_i q_i^2 G(l_i) + FV.
inline Mat frozen_drift(const EigenBasis& eb, const FlowConfig& cfg) {
    const Vec mu = dbm_drift(eb.S.lambda, cfg);
    Mat b = Mat::Zero(eb.n(), eb.n());
    for (int i = 0; i < eb.n(); ++i) b -= mu[i] * eb.S.qsq[i] * build_G(eb.A, eb.at[i]);
    return b + fv_terms_eval(eb, cfg.beta).total();
}

namespace detail {

inline JacobiMatrix tridiagonal_from(const Mat& X, double t) {
    for (Eigen::Index k = 0; k + 1 < X.rows(); ++k)
        if (!(X(k + 1, k) > 0.0)) {
            std::ostringstream os;
            os << "t=" << t << " off-diagonal " << k + 1 << " = " << X(k + 1, k);
            throw StiffnessError("route B: off-diagonal left the positive cone", os.str());
        }
    return JacobiMatrix::from_dense(X);
}

// Route B increment for noise dZ over dt (Euler-Maruyama or derivative-free Milstein).
inline Mat route_b_increment(const JacobiMatrix& A, const Vec& dZ, double dt, const FlowConfig& cfg) {
    const auto eb = make_eigen_basis(A);
    const Mat b = frozen_drift(eb, cfg);
    const auto sigma = martingale_part_eval(eb, cfg.beta);
    const int n = A.n();
    Mat dA = b * dt;
    for (int i = 0; i < n; ++i) dA += sigma[i] * dZ[i];
    if (cfg.scheme == RouteBScheme::euler) return dA;
    const double sq = std::sqrt(dt);
    const Mat base = A.dense() + b * dt;
    for (int j = 0; j < n; ++j) {
        const auto Yj = tridiagonal_from(base + sigma[j] * sq, 0.0);
        const auto sj = martingale_part_eval(make_eigen_basis(Yj), cfg.beta);
        for (int k = 0; k < n; ++k) {
            const double w = dZ[j] * dZ[k] - (j == k ? dt : 0.0);
            dA += (sj[k] - sigma[k]) * (w / (2.0 * sq));
        }
    }
    return dA;
}

// The exact flow keeps the weights; a step that moves them by more than the tolerance has let two
// eigenvalues trade places and is split by the Brownian bridge.
inline FlowState route_b_advance(FlowState state, const FlowConfig& cfg, const Vec& dZ, double dt, Rng& rng,
                                 int depth = 0) {
    bool ok = true;
    JacobiMatrix A;
    SpectralData S;
    try {
        A = tridiagonal_from(state.A.dense() + route_b_increment(state.A, dZ, dt, cfg), state.t);
        S = spectral_decompose(A);
        ok = (S.qsq - state.S.qsq).cwiseAbs().maxCoeff() <= cfg.route_b_weight_tol;
    } catch (const StiffnessError&) {
        ok = false;
    } catch (const DegenerateSpectrumError&) {
        ok = false;
    }
    if (!ok) {
        if (depth >= cfg.max_halvings)
            throw StiffnessError("route B: step rejected after maximum halving", dump_state(state));
        const auto [d1, d2] = bridge_split(dZ, dt, rng);
        state = route_b_advance(std::move(state), cfg, d1, dt / 2, rng, depth + 1);
        return route_b_advance(std::move(state), cfg, d2, dt / 2, rng, depth + 1);
    }
    state.A = std::move(A);
    state.S = std::move(S);
    state.noise_log.push_back({state.t, dt, dZ});
    state.t += dt;
    return state;
}

}  // namespace detail

// Frozen-weight flow. Route A moves the eigenvalues and rebuilds A from the frozen weights;
// route B integrates the matrix SDE directly with the same increments.
inline FlowState frozen_flow_advance(FlowState state, const FlowConfig& cfg, Route route, const Vec& dZ, double dt,
                                     Rng& rng) {
    if (route == Route::A) {
        dbm_advance(state.S.lambda, state.t, dZ, dt, cfg, rng, state.noise_log);
        state.A = reconstruct_jacobi(state.S);
        return state;
    }
    if (state.A.n() > cfg.route_b_max_n) throw ParameterError("route B: full-matrix integration refused for n > 64");
    return detail::route_b_advance(std::move(state), cfg, dZ, dt, rng);
}

inline FlowState frozen_flow_step(FlowState state, const FlowConfig& cfg, Rng& rng, Route route) {
    const double dt = adaptive_dt(state.S.lambda, cfg);
    const Vec dZ = draw_increment(state.S.n(), dt, rng);
    return frozen_flow_advance(std::move(state), cfg, route, dZ, dt, rng);
}

// Smooth-weight flow: frozen dynamics plus weights driven by dR (per unit time) through
// dq_i = dR_i - q_i sum_j dR_j q_j; A picks up sum_i dR_i q_i B(l_i,l_i) dt.
inline FlowState smooth_weight_advance(FlowState state, const Vec& dR, const FlowConfig& cfg, Route route,
                                       const Vec& dZ, double dt, Rng& rng, int depth = 0) {
    const int n = state.S.n();
    if (dR.size() != n) throw ShapeError("smooth_weight_step: dR has wrong size");
    const Vec q = state.S.q();
    const Vec dq = (dR - q * dR.dot(q)) * dt;
    const Vec qn = q + dq;
    if ((qn.array() <= 0.0).any()) {
        if (depth >= cfg.max_halvings)
            throw StiffnessError("smooth_weight_step: weights leave the simplex", dump_state(state));
        const auto [d1, d2] = detail::bridge_split(dZ, dt, rng);
        state = smooth_weight_advance(std::move(state), dR, cfg, route, d1, dt / 2, rng, depth + 1);
        return smooth_weight_advance(std::move(state), dR, cfg, route, d2, dt / 2, rng, depth + 1);
    }
    if (route == Route::A) {
        dbm_advance(state.S.lambda, state.t, dZ, dt, cfg, rng, state.noise_log);
        state.S.qsq = qn.cwiseAbs2();
        state.S.qsq /= state.S.qsq.sum();
        state.A = reconstruct_jacobi(state.S);
        return state;
    }
    if (n > cfg.route_b_max_n) throw ParameterError("route B: full-matrix integration refused for n > 64");
    const auto eb = make_eigen_basis(state.A, state.S);
    Mat next = state.A.dense() + detail::route_b_increment(state.A, dZ, dt, cfg);
    for (int i = 0; i < n; ++i) next += dR[i] * q[i] * dt * build_B(state.A, eb.at[i], eb.at[i]);
    state.A = detail::tridiagonal_from(next, state.t);
    state.S = spectral_decompose(state.A);
    state.noise_log.push_back({state.t, dt, dZ});
    state.t += dt;
    return state;
}

inline FlowState smooth_weight_step(FlowState state, const Vec& dR, const FlowConfig& cfg, Rng& rng,
                                    Route route = Route::A) {
    const double dt = adaptive_dt(state.S.lambda, cfg);
    const Vec dZ = draw_increment(state.S.n(), dt, rng);
    return smooth_weight_advance(std::move(state), dR, cfg, route, dZ, dt, rng);
}

}  // namespace tridyson
