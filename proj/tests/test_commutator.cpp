#include <gtest/gtest.h>

#include <tridyson/commutator.hpp>

#include "oracles.hpp"

using namespace tridyson;
using oracle::max_abs;
using oracle::random_jacobi;
using oracle::random_symmetric;

namespace {

Mat tridiagonal_part(const Mat& X) {
    Mat T = Mat::Zero(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = std::max<Eigen::Index>(0, i - 1); j <= std::min<Eigen::Index>(X.cols() - 1, i + 1); ++j)
            T(i, j) = X(i, j);
    return T;
}

Mat tridiag_fd(const JacobiMatrix& A, const Mat& G, double eps) {
    const Mat Ap = retridiagonalize(A.dense() + eps * G).A.dense();
    const Mat Am = retridiagonalize(A.dense() - eps * G).A.dense();
    return (Ap - Am) / (2 * eps);
}

}  // namespace

TEST(Solve, RandomDirectionGivesTridiagonalResidual) {
    Rng rng = make_stream(1);
    for (int n = 2; n <= 16; ++n) {
        const auto A = random_jacobi(n, rng);
        const Mat W = random_symmetric(n, rng);
        const auto sol = solve_commutator(A, W);
        const Mat R = commutator<double>(A.dense(), sol.M) - W;
        EXPECT_LT(off_tridiagonal_max(R), 1e-8 * max_abs(W)) << n;
        for (int u = 0; u < n; ++u) EXPECT_EQ(sol.M(u, 0), 0.0);
        EXPECT_TRUE(check_symmetry(sol.M, Symmetry::antisymmetric));
        EXPECT_LT(max_abs(sol.T - R), 1e-12 * (1 + max_abs(R)));
    }
}

TEST(Solve, ResidualFormulaMatchesDirect) {
    Rng rng = make_stream(2);
    for (int n : {3, 7, 12}) {
        const auto A = random_jacobi(n, rng);
        const auto eb = make_eigen_basis(A);
        const Mat W = random_symmetric(n, rng);
        const auto sol = solve_commutator(eb, W);
        EXPECT_LT(max_abs(commutator_residual_formula(eb, W) - tridiagonal_part(sol.T)), 1e-8 * max_abs(W)) << n;
    }
}

TEST(Solve, SubdiagonalDirectionNeedsNoRotation) {
    Rng rng = make_stream(3);
    const auto A = random_jacobi(8, rng);
    const auto eb = make_eigen_basis(A);
    for (int l = 1; l < 8; ++l) {
        const auto sol = solve_commutator(eb, w_basis(8, l + 1, l));
        EXPECT_LT(max_abs(sol.M), 1e-9);
        EXPECT_LT(max_abs(sol.T + w_basis(8, l + 1, l)), 1e-9);
    }
}

TEST(Solve, TridiagonalDirectionOrthogonalityRule) {
    Rng rng = make_stream(4);
    for (int n : {4, 9, 16}) {
        const auto A = random_jacobi(n, rng);
        const auto eb = make_eigen_basis(A);
        const Mat W = tridiagonal_part(random_symmetric(n, rng));
        const auto sol = solve_commutator(eb, W);
        EXPECT_LT(max_abs(sol.M), 1e-8 * max_abs(W));
        // W + sum_i C_ii q_i^2 G(l_i) = sum_{i>j} C_ij q_i q_j (B_i - B_j)/(l_i - l_j)
        EXPECT_LT(max_abs(W + commutator_residual_formula(eb, W)), 1e-8 * max_abs(W));
    }
}

TEST(Solve, UniquenessWithZeroFirstColumn) {
    Rng rng = make_stream(5);
    const auto A = random_jacobi(9, rng);
    const auto eb = make_eigen_basis(A);
    const Mat W = random_symmetric(9, rng);
    const auto s1 = solve_commutator(eb, W);
    // a second solution from the permuted-sum order of the same spectral expansion
    Mat M2 = Mat::Zero(9, 9);
    const Mat O = eigenvector_matrix(A);
    const Mat C = O.transpose() * W * O;
    for (int i = 8; i >= 0; --i) {
        for (int j = 8; j > i; --j)
            M2 += C(j, i) * std::sqrt(eb.S.qsq[i] * eb.S.qsq[j]) * build_H0minus(eb.at[j], eb.at[i]);
        M2 += C(i, i) * eb.S.qsq[i] * build_F(eb.at[i]);
    }
    EXPECT_LT(max_abs(s1.M - M2), 1e-8 * max_abs(s1.M));
    // adding span elements keeps the residual tridiagonal
    const auto basis = span_basis(eb);
    const Mat R = commutator<double>(A.dense(), s1.M + 0.7 * basis[2] - 1.3 * basis[5]) - W;
    EXPECT_LT(off_tridiagonal_max(R), 1e-8 * max_abs(W));
}

TEST(Span, RankAndKernel) {
    Rng rng = make_stream(6);
    for (int n = 3; n <= 16; ++n) {
        const auto A = random_jacobi(n, rng);
        const auto eb = make_eigen_basis(A);
        const auto r = span_rank(eb);
        EXPECT_EQ(r.rank, n - 1) << n;
        EXPECT_GE(r.gap, 1e6) << n;
        const Vec qsq = eb.S.qsq;
        const double cosine = std::abs(r.kernel.dot(qsq)) / (r.kernel.norm() * qsq.norm());
        EXPECT_LE(1.0 - cosine, 1e-6);
        for (const auto& v : span_basis(eb)) EXPECT_LT(off_tridiagonal_max(commutator<double>(A.dense(), v)), 1e-9);
    }
}

TEST(Lanczos, TridiagonalDirectionIsItself) {
    Rng rng = make_stream(7);
    const auto A = random_jacobi(8, rng);
    EXPECT_LT(max_abs(lanczos_derivative(A, A.dense()) - A.dense()), 1e-9);
    const auto eb = make_eigen_basis(A);
    for (int l = 1; l < 8; ++l) EXPECT_EQ(lanczos_derivative_by_entries(eb, w_basis(8, l + 1, l)), w_basis(8, l + 1, l));
}

TEST(Lanczos, MatchesCentralDifferences) {
    Rng rng = make_stream(8);
    for (int trial = 0; trial < 5; ++trial) {
        const auto A = random_jacobi(8, rng);
        const Mat G = random_symmetric(8, rng);
        const Mat D = lanczos_derivative(A, G);
        const double e1 = max_abs(tridiag_fd(A, G, 1e-4) - D);
        const double e2 = max_abs(tridiag_fd(A, G, 1e-5) - D);
        EXPECT_LT(e1, 1e-3 * (1 + max_abs(D)));
        EXPECT_GE(e1 / e2, 50.0);
        EXPECT_LE(e1 / e2, 200.0);
    }
}

TEST(Lanczos, EntryAssemblyAgreesWithSolver) {
    Rng rng = make_stream(9);
    const auto A = random_jacobi(7, rng);
    const auto eb = make_eigen_basis(A);
    const Mat G = random_symmetric(7, rng);
    EXPECT_LT(max_abs(lanczos_derivative_by_entries(eb, G) - lanczos_derivative(eb, G)), 1e-8);
}

TEST(Lanczos, Linear) {
    Rng rng = make_stream(10);
    const auto A = random_jacobi(8, rng);
    const auto eb = make_eigen_basis(A);
    const Mat X = random_symmetric(8, rng), Y = random_symmetric(8, rng);
    const Mat lhs = lanczos_derivative(eb, 2.0 * X - 3.0 * Y);
    const Mat rhs = 2.0 * lanczos_derivative(eb, X) - 3.0 * lanczos_derivative(eb, Y);
    EXPECT_LT(max_abs(lhs - rhs), 1e-10 * max_abs(lhs));
}

TEST(Lanczos, InBasisWrapper) {
    Rng rng = make_stream(11);
    const auto A = random_jacobi(6, rng);
    const auto eb = make_eigen_basis(A);
    Mat Q = Mat::Identity(6, 6);
    Q.bottomRightCorner(5, 5) = Eigen::HouseholderQR<Mat>(random_symmetric(5, rng)).householderQ();
    const Mat X = Q * A.dense() * Q.transpose();
    const Mat G = random_symmetric(6, rng);
    const double eps = 1e-5;
    const Mat fd = (retridiagonalize(X + eps * G).A.dense() - retridiagonalize(X - eps * G).A.dense()) / (2 * eps);
    EXPECT_LT(max_abs(lanczos_derivative_in_basis(eb, Q, G) - fd), 1e-6);
}

TEST(Lanczos, LowerEntriesOnlyContribute) {
    // G^{k,l} for k < l is zero: the upper triangle of a direction carries no information
    Rng rng = make_stream(12);
    const auto A = random_jacobi(7, rng);
    const auto eb = make_eigen_basis(A);
    for (int k = 1; k <= 7; ++k)
        for (int l = k + 1; l <= 7; ++l) {
            const Mat R = remark_table_Gkl(eb, k, l);
            EXPECT_LT(max_abs(R), 1e-8) << k << "," << l;
        }
}

TEST(Retridiagonalize, FixedPointAndSpectrum) {
    Rng rng = make_stream(13);
    const auto A = random_jacobi(9, rng);
    const auto r = retridiagonalize(A.dense());
    EXPECT_LT(max_abs(r.A.dense() - A.dense()), 1e-12);
    const Mat Q = Eigen::HouseholderQR<Mat>(random_symmetric(9, rng)).householderQ();
    Vec lam(9);
    for (int i = 0; i < 9; ++i) lam[i] = i - 4.0 + 0.1 * i * i;
    const auto s = spectral_decompose(retridiagonalize(Q * lam.asDiagonal() * Q.transpose()).A);
    EXPECT_LT((s.lambda - lam).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Retridiagonalize, BijectionConsistency) {
    Rng rng = make_stream(14);
    const auto A = random_jacobi(8, rng);
    const auto S = spectral_decompose(A);
    const Mat O = eigenvector_matrix(A);
    const auto r = retridiagonalize(O * S.lambda.asDiagonal() * O.transpose());
    EXPECT_LT(max_abs(r.A.dense() - A.dense()), 1e-10);
    // diagonal spectrum seen from q: first basis vector q
    Mat V = Mat::Identity(8, 8);
    V.col(0) = S.q();
    const Mat Qr = Eigen::HouseholderQR<Mat>(V).householderQ();
    Mat Qs = Qr;
    if (Qs(0, 0) * S.q()[0] < 0) Qs *= -1;
    const Mat X = Qs.transpose() * Mat(S.lambda.asDiagonal()) * Qs;
    EXPECT_LT(max_abs(retridiagonalize(X).A.dense() - A.dense()), 1e-10);
}

TEST(Retridiagonalize, DegenerateRefused) {
    Mat X = Mat::Identity(3, 3);
    EXPECT_THROW(retridiagonalize(X), DegenerateSpectrumError);
}

TEST(HalfFV, ResidualVanishesOnUpperLeftTriangle) {
    Rng rng = make_stream(15);
    for (int n = 4; n <= 10; ++n) {
        const auto eb = make_eigen_basis(random_jacobi(n, rng));
        for (int i = 0; i < n; ++i) {
            const auto h = half_fv_coefficients(eb, i);
            double worst = 0;
            for (int k = 1; k <= n; ++k)
                for (int l = 1; l <= n; ++l)
                    if (k + l <= n) worst = std::max(worst, std::abs(h.residual(k - 1, l - 1)));
            EXPECT_LE(worst, 1e-8 * (1 + max_abs(build_F(eb.at[i])))) << n << "," << i;
            EXPECT_EQ(h.c[i], 0.0);
        }
    }
}

TEST(HalfFV, LeastSquaresAgreementAtTwo) {
    Rng rng = make_stream(16);
    const auto eb = make_eigen_basis(random_jacobi(2, rng));
    for (int i = 0; i < 2; ++i) {
        const auto h = half_fv_coefficients(eb, i);
        EXPECT_EQ(build_F(eb.at[i])(0, 0), 0.0);
        EXPECT_NEAR(h.residual(0, 0), 0.0, 1e-14);
    }
}

TEST(HalfFV, KernelShiftLeavesResidual) {
    Rng rng = make_stream(17);
    const auto eb = make_eigen_basis(random_jacobi(7, rng));
    const auto h = half_fv_coefficients(eb, 3);
    Mat shifted = h.target;
    const Vec c = h.c + 0.8 * eb.S.qsq;
    for (int j = 0; j < 7; ++j) shifted -= c[j] * build_Em(eb.at[j], eb.at[j]);
    EXPECT_LT(max_abs(shifted - h.residual), 1e-10);
}
