#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "recindial/tensor.hpp"

using namespace recindial;

TEST_CASE("matmul kernels agree with the triple loop") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng() % 6, k = 1 + rng() % 6, m = 1 + rng() % 6;
        const Matrix a = oracle::random_matrix(n, k, rng), b = oracle::random_matrix(k, m, rng);
        const Matrix want = oracle::naive_matmul(a, b);

        Matrix out;
        matmul(a, b, out);
        CHECK(oracle::max_abs_diff(out, want) < 1e-12);

        Matrix acc(n, m, 1.0);
        matmul_acc(a, b, acc);
        Matrix shifted = want;
        for (double& v : shifted.flat()) v += 1.0;
        CHECK(oracle::max_abs_diff(acc, shifted) < 1e-12);

        Matrix nt;
        matmul_nt(a, b.transposed(), nt);
        CHECK(oracle::max_abs_diff(nt, want) < 1e-12);

        Matrix tn(n, m);
        matmul_tn_acc(a.transposed(), b, tn);
        CHECK(oracle::max_abs_diff(tn, want) < 1e-12);
    }
}

TEST_CASE("softmax keeps masked entries at exactly zero") {
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> v{1.0, ninf, 2.0, ninf};
    softmax_inplace(v);
    CHECK(v[1] == 0.0);
    CHECK(v[3] == 0.0);
    CHECK(v[0] + v[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(v[2] / v[0] == doctest::Approx(std::exp(1.0)));

    std::vector<double> lv{1.0, ninf, 2.0};
    log_softmax_inplace(lv);
    CHECK(std::isinf(lv[1]));
    CHECK(std::exp(lv[0]) + std::exp(lv[2]) == doctest::Approx(1.0));

    std::vector<double> dead{ninf, ninf};
    CHECK_THROWS_AS(softmax_inplace(dead), std::domain_error);
}

TEST_CASE("softmax is shift invariant and matches the oracle") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 30.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(1 + rng() % 12);
        for (double& x : z) x = nd(rng);
        auto want = oracle::softmax(z);
        auto got = z;
        softmax_inplace(got);
        for (std::size_t i = 0; i < z.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("matrix basics") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
    const Matrix i3 = Matrix::identity(3);
    CHECK(i3(1, 1) == 1.0);
    CHECK(i3(0, 1) == 0.0);
    Matrix a(1, 2, std::vector<double>{1, 2});
    Matrix b(2, 1);
    CHECK_THROWS_AS(a += b, std::invalid_argument);
    CHECK(a.transposed().rows() == 2);
    CHECK(dot(a.row(0), a.row(0)) == 5.0);
}
