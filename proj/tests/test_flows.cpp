#include <gtest/gtest.h>

#include <tridyson/flows.hpp>

#include "oracles.hpp"

using namespace tridyson;
using oracle::max_abs;
using oracle::random_jacobi;

namespace {

FlowConfig config(int n, double beta, double dt, Potential pot = Potential::quadratic) {
    FlowConfig c;
    c.n = n;
    c.beta = beta;
    c.dt = dt;
    c.potential = pot;
    return c;
}

Mat rebuild(const Vec& lambda, const Vec& qsq) { return reconstruct_jacobi(SpectralData{lambda, qsq}).dense(); }

}  // namespace

TEST(Config, Validation) {
    auto c = config(3, 0.5, 1e-3);
    EXPECT_THROW(c.validate(), ParameterError);
    c.beta = 2;
    c.n = 0;
    EXPECT_THROW(c.validate(), ParameterError);
    c.n = 4;
    c.dt = 0;
    EXPECT_DOUBLE_EQ(c.step(), 2.5e-4);
    c.potential = Potential::custom;
    EXPECT_THROW(c.dV(1.0), ParameterError);
}

TEST(Dbm, ScalarStationaryVariance) {
    // d lambda = sqrt(2/beta) dZ - 2 lambda dt has stationary variance 1/(2 beta)
    const auto cfg = config(1, 2.0, 1e-2);
    Rng rng = make_stream(1);
    FlowState s{0.0, SpectralData{Vec::Zero(1), Vec::Ones(1)}, JacobiMatrix(Vec::Zero(1), Vec(0)), {}};
    double sum = 0, ss = 0;
    const int N = 100000;
    for (int k = 0; k < N + 1000; ++k) {
        s = dbm_step(std::move(s), cfg, rng);
        s.noise_log.clear();
        if (k >= 1000) {
            sum += s.S.lambda[0];
            ss += s.S.lambda[0] * s.S.lambda[0];
        }
    }
    const double var = ss / N - (sum / N) * (sum / N);
    // Euler-Maruyama bias (1 - dt)^{-1} is well inside the 5% band at dt = 1e-2
    EXPECT_NEAR(var, 0.25, 0.05 * 0.25);
}

TEST(Dbm, GapStaysPositiveWithoutPotential) {
    const auto cfg = config(2, 1.0, 1e-4, Potential::zero);
    Rng rng = make_stream(2);
    FlowState s{0.0, SpectralData{Vec(2), Vec::Constant(2, 0.5)}, JacobiMatrix(Vec::Zero(2), Vec::Ones(1)), {}};
    s.S.lambda << -0.1, 0.1;
    for (int k = 0; k < 100000; ++k) {
        s = dbm_step(std::move(s), cfg, rng);
        ASSERT_GT(s.S.lambda[1] - s.S.lambda[0], 0.0);
        if (s.noise_log.size() > 64) s.noise_log.clear();
    }
}

TEST(Dbm, StrongSelfConvergence) {
    // successive differences under dt halving on a shared path shrink at first order (additive noise)
    const int n = 4, reps = 64, levels = 4;
    const double T = 0.02, h = 1.0 / 51200;
    const int steps = static_cast<int>(std::round(T / h));
    std::vector<double> diff(levels - 1, 0.0);
    for (int r = 0; r < reps; ++r) {
        Rng rng = make_stream(3, r);
        std::vector<Vec> dz;
        for (int k = 0; k < steps; ++k) dz.push_back(draw_increment(n, h, rng));
        Vec start(n);
        start << -1.2, -0.4, 0.4, 1.2;
        auto run = [&](int m) {
            const auto cfg = config(n, 2.0, h * m);
            Vec lam = start;
            double t = 0;
            std::vector<NoiseRecord> log;
            for (int k = 0; k < steps; k += m) {
                Vec inc = Vec::Zero(n);
                for (int j = 0; j < m; ++j) inc += dz[k + j];
                dbm_advance(lam, t, inc, h * m, cfg, rng, log);
            }
            return lam;
        };
        std::vector<Vec> sol;
        for (int lvl = 0; lvl < levels; ++lvl) sol.push_back(run(32 >> lvl));
        for (int lvl = 0; lvl + 1 < levels; ++lvl) diff[lvl] += (sol[lvl] - sol[lvl + 1]).squaredNorm();
    }
    for (int lvl = 0; lvl + 2 < levels; ++lvl) {
        const double ratio = std::sqrt(diff[lvl] / diff[lvl + 1]);
        EXPECT_GE(ratio, 1.5) << lvl;
        EXPECT_LE(ratio, 3.0) << lvl;
    }
}

TEST(Dbm, StiffnessErrorCarriesDump) {
    auto cfg = config(2, 1.0, 1.0, Potential::zero);
    cfg.max_halvings = 0;
    Rng rng = make_stream(4);
    Vec lam(2);
    lam << 0.0, 1.0;
    double t = 0;
    std::vector<NoiseRecord> log;
    Vec dz(2);
    dz << 3.0, -3.0;
    try {
        dbm_advance(lam, t, dz, 1.0, cfg, rng, log);
        FAIL();
    } catch (const StiffnessError& e) {
        EXPECT_NE(e.state_dump().find("lambda="), std::string::npos);
    }
}

TEST(Dbm, RejectionRecordsSubsteps) {
    auto cfg = config(2, 1.0, 1e-2, Potential::zero);
    Rng rng = make_stream(5);
    Vec lam(2);
    lam << 0.0, 1.0;
    double t = 0;
    std::vector<NoiseRecord> log;
    Vec dz(2);
    dz << 3.0, -3.0;
    dbm_advance(lam, t, dz, 1e-2, cfg, rng, log);
    EXPECT_GT(log.size(), 1u);
    Vec total = Vec::Zero(2);
    double tt = 0;
    for (const auto& r : log) {
        total += r.dZ;
        tt += r.dt;
    }
    EXPECT_LT((total - dz).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(tt, 1e-2, 1e-15);
    EXPECT_TRUE(strictly_increasing(lam));
}

TEST(Frozen, ScalarRouteBIsDbm) {
    auto cfg = config(1, 2.0, 1e-3);
    cfg.scheme = RouteBScheme::euler;
    Rng rng = make_stream(6);
    const auto A = JacobiMatrix(Vec::Constant(1, 0.3), Vec(0));
    auto sa = FlowState::from_matrix(A), sb = sa;
    for (int k = 0; k < 50; ++k) {
        const Vec dz = draw_increment(1, 1e-3, rng);
        sa = frozen_flow_advance(std::move(sa), cfg, Route::A, dz, 1e-3, rng);
        sb = frozen_flow_advance(std::move(sb), cfg, Route::B, dz, 1e-3, rng);
    }
    EXPECT_NEAR(sa.A.b_at(1), sb.A.b_at(1), 1e-13);
}

TEST(Frozen, RouteAWeightsExactlyFrozen) {
    const auto cfg = config(8, 2.0, 1e-4);
    Rng rng = make_stream(7);
    auto s = FlowState::from_matrix(sample_dumitriu_edelman(8, 2.0, rng, ChiRule::calibrated));
    const Vec q0 = s.S.qsq;
    for (int k = 0; k < 100; ++k) s = frozen_flow_step(std::move(s), cfg, rng, Route::A);
    EXPECT_EQ(s.S.qsq, q0);
    EXPECT_LT((spectral_decompose(s.A).qsq - q0).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((spectral_decompose(s.A).lambda - s.S.lambda).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Frozen, RouteBWeightDriftVanishesWithStep) {
    // exact dynamics keep the weights; the integrator's drift of them shrinks under refinement
    const auto drift = [](double dt) {
        auto cfg = config(6, 2.0, dt);
        double tot = 0;
        for (int r = 0; r < 8; ++r) {
            Rng rng = make_stream(8, r);
            auto s = FlowState::from_matrix(sample_dumitriu_edelman(6, 2.0, rng, ChiRule::calibrated));
            const Vec q0 = s.S.qsq;
            const int steps = static_cast<int>(std::round(0.01 / dt));
            for (int k = 0; k < steps; ++k) s = frozen_flow_step(std::move(s), cfg, rng, Route::B);
            tot += (s.S.qsq - q0).squaredNorm();
        }
        return std::sqrt(tot / 8);
    };
    EXPECT_GT(drift(1e-4) / drift(1.25e-5), 4.0);
}

TEST(Frozen, RouteBSplitsStepsThatMoveWeights) {
    auto cfg = config(6, 2.0, 1e-4);
    Rng rng = make_stream(23);
    const auto s0 = FlowState::from_matrix(sample_dumitriu_edelman(6, 2.0, rng, ChiRule::calibrated));
    const Vec dz = draw_increment(6, 1e-4, rng);
    const auto one = frozen_flow_advance(s0, cfg, Route::B, dz, 1e-4, rng);
    EXPECT_EQ(one.noise_log.size(), 1u);
    cfg.route_b_weight_tol = 0.5 * (one.S.qsq - s0.S.qsq).cwiseAbs().maxCoeff();
    const auto split = frozen_flow_advance(s0, cfg, Route::B, dz, 1e-4, rng);
    ASSERT_GE(split.noise_log.size(), 2u);
    Vec sum = Vec::Zero(6);
    for (const auto& r : split.noise_log) sum += r.dZ;
    EXPECT_LT((sum - dz).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(split.t, 1e-4, 1e-18);
    cfg.route_b_weight_tol = 0.0;
    cfg.max_halvings = 2;
    EXPECT_THROW(frozen_flow_advance(s0, cfg, Route::B, dz, 1e-4, rng), StiffnessError);
}

TEST(Frozen, RouteBRefusedForLargeN) {
    const auto cfg = config(65, 2.0, 1e-4);
    Rng rng = make_stream(9);
    auto s = FlowState::from_matrix(sample_dumitriu_edelman(65, 2.0, rng, ChiRule::calibrated));
    EXPECT_THROW(frozen_flow_step(s, cfg, rng, Route::B), ParameterError);
}

TEST(FV, GeneratorOracle) {
    // drift of A = Phi(lambda) under the eigenvalue SDE, by finite differences of the reconstruction
    Rng rng = make_stream(10);
    for (double beta : {1.0, 2.0, 4.0}) {
        const int n = 6;
        const auto A = random_jacobi(n, rng);
        const auto eb = make_eigen_basis(A);
        const auto cfg = config(n, beta, 1e-3);
        const Vec mu = dbm_drift(eb.S.lambda, cfg);
        const double h = 1e-4;
        Mat gen = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            Vec lp = eb.S.lambda, lm = eb.S.lambda;
            lp[i] += h;
            lm[i] -= h;
            const Mat P = rebuild(lp, eb.S.qsq), M = rebuild(lm, eb.S.qsq);
            gen += mu[i] * (P - M) / (2 * h) + (1.0 / beta) * (P + M - 2 * A.dense()) / (h * h);
        }
        EXPECT_LT(max_abs(frozen_drift(eb, cfg) - gen), 1e-5 * (1 + max_abs(gen))) << beta;
    }
}

TEST(FV, IndependentDerivationOfItoCorrection) {
    // second-order expansion of Phi along each eigenvalue direction gives the correction directly
    Rng rng = make_stream(11);
    const int n = 6;
    const auto A = random_jacobi(n, rng);
    const auto eb = make_eigen_basis(A);
    const double h = 1e-4, beta = 2.0;
    Mat second = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        Vec lp = eb.S.lambda, lm = eb.S.lambda;
        lp[i] += h;
        lm[i] -= h;
        second += (rebuild(lp, eb.S.qsq) + rebuild(lm, eb.S.qsq) - 2 * A.dense()) / (h * h);
    }
    const auto fv = fv_terms_eval(eb, beta);
    EXPECT_LT(max_abs(fv.total() - second / beta), 1e-5 * (1 + max_abs(second)));
    EXPECT_LT(max_abs(fv.total() - lanczos_derivative(eb, fv.dP)), 1e-9 * (1 + max_abs(fv.total())));
}

TEST(FV, DerivativeFormOfSymmetricPiece) {
    Rng rng = make_stream(12);
    for (int n = 2; n <= 12; ++n) {
        const auto eb = make_eigen_basis(random_jacobi(n, rng));
        const auto fv = fv_terms_eval(eb, 2.0);
        for (int k = 1; k <= n; ++k)
            for (int l = 1; l <= n; ++l)
                if (2 * std::max(k, l) <= n + 1) {
                    EXPECT_NEAR(fv.dS(k - 1, l - 1), fv.dS_derivative_form(k - 1, l - 1),
                                1e-7 * (1 + std::abs(fv.dS_derivative_form(k - 1, l - 1))))
                        << n << ":" << k << "," << l;
                }
    }
}

TEST(FV, QuadratureIdentityForDerivatives) {
    // sum_u D(l_u,l_i) p(l_u) q_u^2 = p'(l_i) with D(x,y) = sum_l p_{l-1}(x) p'_{l-1}(y)
    Rng rng = make_stream(13);
    const int n = 9;
    const auto eb = make_eigen_basis(random_jacobi(n, rng));
    const auto& lam = eb.S.lambda;
    std::normal_distribution<double> nd;
    std::vector<double> coef(n);
    for (auto& c : coef) c = nd(rng);
    const auto poly = [&](double x) {
        double v = 0;
        for (int d = n - 1; d >= 0; --d) v = v * x + coef[d];
        return v;
    };
    const auto dpoly = [&](double x) {
        double v = 0;
        for (int d = n - 1; d >= 1; --d) v = v * x + d * coef[d];
        return v;
    };
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int u = 0; u < n; ++u) {
            double kern = 0;
            for (int l = 0; l < n; ++l) kern += eb.at[u].p[l] * eb.at[i].dp[l];
            s += kern * poly(lam[u]) * eb.S.qsq[u];
        }
        EXPECT_LT(oracle::rel(s, dpoly(lam[i])), 1e-8);
    }
}

TEST(Martingale, HandCaseAndShape) {
    const JacobiMatrix A(Vec::Zero(2), Vec::Ones(1));
    const auto eb = make_eigen_basis(A);
    const auto m = martingale_part_eval(eb, 2.0);
    Mat Gm(2, 2), Gp(2, 2);
    Gm << -1, 1, 1, -1;
    Gp << -1, -1, -1, -1;
    EXPECT_LT(max_abs(m[0] + 0.5 * Gm), 1e-13);
    EXPECT_LT(max_abs(m[1] + 0.5 * Gp), 1e-13);
    Rng rng = make_stream(14);
    for (const auto& c : martingale_part_eval(make_eigen_basis(random_jacobi(9, rng)), 2.0))
        EXPECT_TRUE(check_symmetry(c, Symmetry::tridiagonal));
}

TEST(Martingale, QuadraticVariationOfCorner) {
    Rng rng = make_stream(15);
    const int n = 5;
    const double beta = 2.0, dt = 1e-6;
    const auto A0 = random_jacobi(n, rng);
    const auto eb = make_eigen_basis(A0);
    double want = 0;
    for (int i = 0; i < n; ++i) {
        const double g = build_G(A0, eb.at[i])(0, 0);
        want += (2.0 / beta) * eb.S.qsq[i] * eb.S.qsq[i] * g * g;
    }
    auto cfg = config(n, beta, dt);
    cfg.scheme = RouteBScheme::euler;
    auto s = FlowState::from_matrix(A0);
    double qv = 0;
    const int steps = 10000;
    for (int k = 0; k < steps; ++k) {
        const double before = s.A.b_at(1);
        s = frozen_flow_step(std::move(s), cfg, rng, Route::B);
        qv += std::pow(s.A.b_at(1) - before, 2);
    }
    EXPECT_NEAR(qv / (steps * dt), want, 0.1 * want);
}

TEST(Smooth, ZeroPerturbationIsFrozen) {
    const auto cfg = config(6, 2.0, 1e-4);
    Rng r1 = make_stream(16), r2 = make_stream(16);
    Rng init = make_stream(17);
    const auto s0 = FlowState::from_matrix(sample_dumitriu_edelman(6, 2.0, init, ChiRule::calibrated));
    auto a = s0, b = s0;
    for (int k = 0; k < 20; ++k) {
        a = smooth_weight_step(std::move(a), Vec::Zero(6), cfg, r1, Route::A);
        b = frozen_flow_step(std::move(b), cfg, r2, Route::A);
    }
    EXPECT_LT(max_abs(a.A.dense() - b.A.dense()), 1e-12);
}

TEST(Smooth, ProportionalPerturbationKeepsWeights) {
    const auto cfg = config(5, 2.0, 1e-4);
    Rng rng = make_stream(18);
    auto s = FlowState::from_matrix(sample_dumitriu_edelman(5, 2.0, rng, ChiRule::calibrated));
    const Vec q0 = s.S.qsq;
    s = smooth_weight_step(std::move(s), 0.7 * s.S.q(), cfg, rng);
    EXPECT_LT((s.S.qsq - q0).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Smooth, ProjectionPreservesNorm) {
    Rng rng = make_stream(19);
    const auto S = spectral_decompose(random_jacobi(7, rng));
    const Vec q = S.q();
    std::normal_distribution<double> nd;
    Vec dR(7);
    for (int i = 0; i < 7; ++i) dR[i] = nd(rng);
    const Vec dq = dR - q * dR.dot(q);
    EXPECT_NEAR(q.dot(dq), 0.0, 1e-12);
}

TEST(Smooth, WeightDirectionOfMatrix) {
    // d/de of the reconstruction along dq = dR - q (dR.q) equals sum_i dR_i q_i B(l_i,l_i)
    Rng rng = make_stream(20);
    const int n = 6;
    const auto A = random_jacobi(n, rng);
    const auto eb = make_eigen_basis(A);
    std::normal_distribution<double> nd;
    Vec dR(n);
    for (int i = 0; i < n; ++i) dR[i] = nd(rng);
    const Vec q = eb.S.q();
    const Vec dq = dR - q * dR.dot(q);
    const double h = 1e-6;
    const auto rb = [&](double e) {
        Vec qq = q + e * dq;
        Vec w = qq.cwiseAbs2();
        return rebuild(eb.S.lambda, w / w.sum());
    };
    const Mat fd = (rb(h) - rb(-h)) / (2 * h);
    Mat want = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) want += dR[i] * q[i] * build_B(A, eb.at[i], eb.at[i]);
    EXPECT_LT(max_abs(fd - want), 1e-6 * (1 + max_abs(want)));
}

TEST(Smooth, RouteBTracksRouteA) {
    const int n = 5;
    const auto cfg = config(n, 2.0, 1e-5);
    Rng init = make_stream(21);
    const auto s0 = FlowState::from_matrix(sample_dumitriu_edelman(n, 2.0, init, ChiRule::calibrated));
    Vec dR = Vec::LinSpaced(n, -0.5, 0.5);
    auto a = s0, b = s0;
    Rng rng = make_stream(22);
    for (int k = 0; k < 200; ++k) {
        const Vec dz = draw_increment(n, 1e-5, rng);
        a = smooth_weight_advance(std::move(a), dR, cfg, Route::A, dz, 1e-5, rng);
        b = smooth_weight_advance(std::move(b), dR, cfg, Route::B, dz, 1e-5, rng);
    }
    EXPECT_LT(max_abs(a.A.dense() - b.A.dense()), 1e-3);
}
