#include <catch2/catch_amalgamated.hpp>

#include <htrise/tensor.hpp>

#include "oracles.hpp"

#include <random>

using namespace htrise;

namespace {
std::mt19937_64 rng(20240901);
}

TEST_CASE("unfold of a matrix along mode 0 is itself") {
    Matrix id = Matrix::Identity(2, 2);
    DenseTensor t = DenseTensor::from_matrix(id);
    REQUIRE((unfold(t, 0) - id).norm() == 0.0);
}

TEST_CASE("unfold places elements by canonical column enumeration") {
    DenseTensor t = oracle::random_tensor({2, 3, 4}, rng);
    Matrix m = unfold(t, 1);
    REQUIRE(m.rows() == 3);
    REQUIRE(m.cols() == 8);
    for (Index a = 0; a < 2; ++a)
        for (Index b = 0; b < 3; ++b)
            for (Index c = 0; c < 4; ++c)
                REQUIRE(m(b, a + 2 * c) == t({a, b, c}));
}

TEST_CASE("fold inverts unfold exactly") {
    DenseTensor t = oracle::random_tensor({3, 3, 3}, rng);
    for (Index mode = 0; mode < 3; ++mode) {
        DenseTensor back = fold(unfold(t, mode), t.shape(), mode);
        REQUIRE(back == t);
    }
}

TEST_CASE("fold of a 1x1 matrix gives the scalar tensor") {
    Matrix m(1, 1);
    m(0, 0) = 7.0;
    DenseTensor t = fold(m, {1}, 0);
    REQUIRE(t.shape() == Shape{1});
    REQUIRE(t({0}) == 7.0);
}

TEST_CASE("fold rejects inconsistent dimensions") {
    Matrix m(2, 5);
    REQUIRE_THROWS_AS(fold(m, {2, 3}, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(unfold(DenseTensor({2, 2}), 2), std::invalid_argument);
}

TEST_CASE("reshape keeps element order") {
    DenseTensor t({2, 2}, (Vector(4) << 1, 2, 3, 4).finished());
    DenseTensor r = reshape(t, {4});
    for (Index i = 0; i < 4; ++i) REQUIRE(r({i}) == double(i + 1));
    REQUIRE_THROWS_AS(reshape(t, {3}), std::invalid_argument);
}

TEST_CASE("reshape groups adjacent pairs like the layer index sets") {
    DenseTensor t = oracle::random_tensor({2, 2, 2, 2, 2}, rng);
    DenseTensor g = reshape(t, {4, 4, 2});
    for (Index i1 = 0; i1 < 2; ++i1)
        for (Index i2 = 0; i2 < 2; ++i2)
            for (Index i3 = 0; i3 < 2; ++i3)
                for (Index i4 = 0; i4 < 2; ++i4)
                    for (Index n = 0; n < 2; ++n)
                        REQUIRE(g({i1 + 2 * i2, i3 + 2 * i4, n}) ==
                                t({i1, i2, i3, i4, n}));
}

TEST_CASE("reshape never changes the norm") {
    DenseTensor t = oracle::random_tensor({3, 4, 5}, rng);
    REQUIRE(frobenius_norm(reshape(t, {60})) == frobenius_norm(t));
}

TEST_CASE("contract with the identity returns the other factor") {
    DenseTensor id = DenseTensor::from_matrix(Matrix::Identity(2, 2));
    DenseTensor b = oracle::random_tensor({2, 3}, rng);
    DenseTensor c = contract(id, 1, b, 0);
    REQUIRE(c == b);
}

TEST_CASE("contracting two vectors gives their inner product") {
    DenseTensor a = oracle::random_tensor({5}, rng);
    DenseTensor b = oracle::random_tensor({5}, rng);
    DenseTensor c = contract(a, 0, b, 0);
    REQUIRE(c.shape() == Shape{1});
    REQUIRE(c({0}) == Catch::Approx(a.values().dot(b.values())).epsilon(1e-13));
}

TEST_CASE("contract matches the loop oracle") {
    DenseTensor a = oracle::random_tensor({2, 3, 4}, rng);
    DenseTensor b = oracle::random_tensor({4, 5}, rng);
    DenseTensor c = contract(a, 2, b, 0);
    DenseTensor ref = oracle::naive_contract(a, 2, b, 0);
    REQUIRE(c.shape() == ref.shape());
    REQUIRE((c.values() - ref.values()).norm() <=
            1e-13 * std::max(1.0, ref.values().norm()));

    REQUIRE_THROWS_AS(contract(a, 1, b, 0), std::invalid_argument);
}

TEST_CASE("contract agrees with the oracle on random small tensors") {
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<Index> ext(1, 5);
        Shape sa = {ext(rng), ext(rng), ext(rng)};
        Shape sb = {ext(rng), ext(rng)};
        std::uniform_int_distribution<Index> ma(0, 2), mb(0, 1);
        Index da = ma(rng), db = mb(rng);
        sb[static_cast<std::size_t>(db)] = sa[static_cast<std::size_t>(da)];
        DenseTensor a = oracle::random_tensor(sa, rng);
        DenseTensor b = oracle::random_tensor(sb, rng);
        DenseTensor c = contract(a, da, b, db);
        DenseTensor ref = oracle::naive_contract(a, da, b, db);
        REQUIRE(c.shape() == ref.shape());
        REQUIRE((c.values() - ref.values()).norm() <=
                1e-13 * std::max(1.0, ref.values().norm()));
    }
}

TEST_CASE("multi_contract with identity factors is the identity") {
    DenseTensor t = oracle::random_tensor({2, 3, 4}, rng);
    std::vector<ModeFactor> factors;
    for (Index m = 0; m < 3; ++m) {
        factors.push_back({DenseTensor::from_matrix(Matrix::Identity(t.extent(m), t.extent(m))), m, 1});
    }
    REQUIRE(multi_contract(t, factors) == t);
}

TEST_CASE("multi_contract expands a mode in place for 3-way factors") {
    // a 1x1xn all-ones factor sums out the targeted mode and leaves a
    // singleton pair in its place
    DenseTensor t = oracle::random_tensor({2, 2, 2}, rng);
    DenseTensor ones({1, 1, 2}, Vector::Ones(2));
    DenseTensor c = multi_contract(t, {{ones, 0, 2}});
    REQUIRE(c.shape() == Shape{1, 1, 2, 2});
    for (Index j = 0; j < 2; ++j)
        for (Index k = 0; k < 2; ++k)
            REQUIRE(c({0, 0, j, k}) ==
                    Catch::Approx(t({0, j, k}) + t({1, j, k})).epsilon(1e-13));
}

TEST_CASE("multi_contract mixes 2- and 3-way factors like the loop oracle") {
    DenseTensor t = oracle::random_tensor({3, 4, 2}, rng);
    Matrix m = oracle::random_tensor({2, 3}, rng).as_matrix();  // contract axis 1
    DenseTensor f3 = oracle::random_tensor({2, 2, 4}, rng);

    DenseTensor c = multi_contract(
        t, {{DenseTensor::from_matrix(m), 0, 1}, {f3, 1, 2}});
    REQUIRE(c.shape() == Shape{2, 2, 2, 2});

    // oracle: apply factors one at a time with explicit loops
    DenseTensor step = oracle::naive_mode_multiply(t, 0, m);
    // 3-way factor: flatten the two free axes, multiply, then split the mode
    Matrix flat = Eigen::Map<const Matrix>(f3.data(), 4, 4);
    DenseTensor step2 = oracle::naive_mode_multiply(step, 1, flat);
    DenseTensor ref = reshape(step2, {2, 2, 2, 2});
    REQUIRE((c.values() - ref.values()).norm() <= 1e-13 * ref.values().norm());

    REQUIRE_THROWS_AS(
        multi_contract(t, {{f3, 1, 2}, {f3, 1, 2}}), std::invalid_argument);
}

TEST_CASE("concat of vectors and zero padding") {
    DenseTensor a({1}, Vector::Constant(1, 1.0));
    DenseTensor b({1}, Vector::Constant(1, 2.0));
    DenseTensor c = concat(a, b, 0);
    REQUIRE(c.shape() == Shape{2});
    REQUIRE(c({0}) == 1.0);
    REQUIRE(c({1}) == 2.0);

    DenseTensor t = oracle::random_tensor({2, 3, 2}, rng);
    DenseTensor padded = pad_zeros(t, 1, 3);
    REQUIRE(padded.shape() == Shape{2, 6, 2});
    REQUIRE(frobenius_norm(padded) == frobenius_norm(t));
    for (Index i = 0; i < 2; ++i)
        for (Index j = 3; j < 6; ++j)
            for (Index k = 0; k < 2; ++k) REQUIRE(padded({i, j, k}) == 0.0);
}

TEST_CASE("concat then slice returns the originals") {
    for (Index mode = 0; mode < 3; ++mode) {
        DenseTensor a = oracle::random_tensor({2, 3, 4}, rng);
        Shape bs = a.shape();
        bs[static_cast<std::size_t>(mode)] = 2;
        DenseTensor b = oracle::random_tensor(bs, rng);
        DenseTensor c = concat(a, b, mode);
        REQUIRE(slice(c, mode, 0, a.extent(mode)) == a);
        REQUIRE(slice(c, mode, a.extent(mode), 2) == b);

        const double n2 = std::pow(frobenius_norm(a), 2) + std::pow(frobenius_norm(b), 2);
        REQUIRE(std::pow(frobenius_norm(c), 2) == Catch::Approx(n2).epsilon(1e-13));
    }
    DenseTensor a = oracle::random_tensor({2, 3}, rng);
    DenseTensor bad = oracle::random_tensor({3, 3}, rng);
    REQUIRE_THROWS_AS(concat(a, bad, 1), std::invalid_argument);
}

TEST_CASE("frobenius norm basics") {
    REQUIRE(frobenius_norm(DenseTensor({3, 3})) == 0.0);
    DenseTensor e({4}, Vector::Unit(4, 2));
    REQUIRE(frobenius_norm(e) == 1.0);
}

TEST_CASE("permute_axes round-trips through the inverse permutation") {
    DenseTensor t = oracle::random_tensor({2, 3, 4, 2}, rng);
    std::vector<Index> perm = {2, 0, 3, 1};
    std::vector<Index> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k)
        inv[static_cast<std::size_t>(perm[k])] = static_cast<Index>(k);
    DenseTensor p = permute_axes(t, perm);
    REQUIRE(p.shape() == Shape{4, 2, 2, 3});
    REQUIRE(permute_axes(p, inv) == t);
    REQUIRE(p({1, 0, 1, 2}) == t({0, 2, 1, 1}));

    REQUIRE_THROWS_AS(permute_axes(t, {0, 0, 1, 2}), std::invalid_argument);
}

TEST_CASE("tensor construction validates its invariants") {
    REQUIRE_THROWS_AS(DenseTensor({2, 0}), std::invalid_argument);
    REQUIRE_THROWS_AS(DenseTensor({2, 2}, Vector::Zero(3)), std::invalid_argument);
}
