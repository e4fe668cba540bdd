// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "aukit/common/rng.hpp"
#include "aukit/num/ops.hpp"
#include "aukit/num/serialize.hpp"
#include "support/fd_check.hpp"

using namespace aukit;
using namespace aukit::num;
using aukit::testing::fd_check;
using aukit::testing::FdOptions;

namespace {

Var random_leaf(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.flat()) v = rng.normal() * scale;
    return Var(std::move(t));
}

/// FD-check a loss over named parameters and REQUIRE agreement.
void check_grads(const std::function<Var()>& loss,
                 std::vector<std::pair<std::string, Var>> params) {
    auto res = fd_check(loss, params);
    CAPTURE(res.worst);
    CAPTURE(res.max_rel_err);
    REQUIRE(res.checked > 0);
    REQUIRE(res.ok);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

TEST_CASE("tensor shape and access invariants") {
    Tensor t({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.at(1, 2) == 6.0);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);

    CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS((Tensor{{1.0, 2.0}, {3.0}}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::scalar(1.0).rows() + Tensor(Shape{2, 2, 2}).rows(), ShapeError);
    CHECK(Tensor::scalar(7.5).item() == 7.5);
    CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("rng streams are deterministic and well-ranged") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) {
        double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng c(1);
    for (int i = 0; i < 1000; ++i) CHECK(c.below(7) < 7);
    // Forked streams diverge from the parent.
    Rng p(42);
    Rng child = p.fork();
    CHECK(child.uniform() != p.uniform());
}

// ---------------------------------------------------------------------------
// Graph mechanics

TEST_CASE("backward accumulates until zeroed and respects requires_grad") {
    Var x(Tensor::scalar(3.0));
    Var c(Tensor::scalar(2.0), /*requires_grad=*/false);
    Var y = mul(x, x);  // shared-parent diamond: dy/dx = 2x
    y.backward();
    CHECK(x.grad().item() == doctest::Approx(6.0).epsilon(1e-12));
    y.backward();  // second sweep accumulates
    CHECK(x.grad().item() == doctest::Approx(12.0).epsilon(1e-12));
    x.zero_grad();
    mul(x, c).backward();
    CHECK(x.grad().item() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(c.grad().item() == 0.0);  // no gradient flows into constants

    Rng rng(5);
    Var m = random_leaf(rng, {2, 2});
    CHECK_THROWS_AS(m.backward(), ContractError);  // non-scalar root
}

TEST_CASE("ops with no differentiable parents stay off the tape") {
    Var a(Tensor::scalar(1.0), false);
    Var b(Tensor::scalar(2.0), false);
    Var y = add(a, b);
    CHECK(!y.requires_grad());
}

// ---------------------------------------------------------------------------
// Forward values against hand math

TEST_CASE("softmax matches hand-computed values and sums to one") {
    Var x(Tensor(Shape{3}, {1.0, 2.0, 3.0}));
    Var y = softmax(x);
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(y.value().at(0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
    CHECK(y.value().at(2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-14));
    double s = y.value().at(0) + y.value().at(1) + y.value().at(2);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));

    // Stability: huge logits must not overflow.
    Var big(Tensor(Shape{2}, {1000.0, 1000.0}));
    CHECK(softmax(big).value().at(0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("cross entropy of uniform logits is ln V") {
    for (std::size_t v : {2u, 11u, 97u}) {
        Tensor logits(Shape{v});
        logits.fill(0.7);  // any constant vector is uniform after softmax
        double loss = cross_entropy(Var(std::move(logits)), v / 2).item();
        CHECK(std::fabs(loss - std::log(static_cast<double>(v))) < 1e-12);
    }
}

TEST_CASE("masked ntp averages per-position ce over masked slots only") {
    Rng rng(11);
    Var logits = random_leaf(rng, {4, 5});
    std::vector<int> targets = {1, 2, 3, 4};
    std::vector<std::uint8_t> mask = {0, 1, 0, 1};
    double got = masked_ntp(logits, targets, mask).item();

    auto row_ce = [&](std::size_t r, std::size_t t) {
        std::vector<double> row(5);
        for (std::size_t c = 0; c < 5; ++c) row[c] = logits.value().at(r, c);
        auto p = softmax_values(row);
        return -std::log(p[t]);
    };
    double want = 0.5 * (row_ce(1, 2) + row_ce(3, 4));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(masked_ntp(logits, targets, std::vector<std::uint8_t>{0, 0, 0, 0}),
                    ContractError);
    std::vector<int> bad = {1, 9, 3, 4};
    CHECK_THROWS_AS(masked_ntp(logits, bad, mask), IndexError);
}

TEST_CASE("layer norm normalizes rows before the affine map") {
    Rng rng(3);
    Tensor x(Shape{4, 8});
    for (auto& v : x.flat()) v = rng.normal() * 250.0 + 40.0;  // large spread: eps negligible
    Tensor nrm = layer_norm_normalized(x, 1e-5);
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 8; ++c) mu += nrm.at(r, c);
        mu /= 8.0;
        for (std::size_t c = 0; c < 8; ++c) var += (nrm.at(r, c) - mu) * (nrm.at(r, c) - mu);
        var /= 8.0;
        CHECK(std::fabs(mu) < 1e-9);
        CHECK(std::fabs(var - 1.0) < 1e-9);
    }
}

TEST_CASE("causal softmax zeroes the future and normalizes the past") {
    Rng rng(4);
    Var s = random_leaf(rng, {3, 3});
    Var a = causal_row_softmax(s);
    CHECK(a.value().at(0, 1) == 0.0);
    CHECK(a.value().at(0, 2) == 0.0);
    CHECK(a.value().at(1, 2) == 0.0);
    CHECK(a.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c <= r; ++c) sum += a.value().at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

// ---------------------------------------------------------------------------
// Gradient fidelity of each op against central differences

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(100);
    Var a = random_leaf(rng, {3, 4});
    Var b = random_leaf(rng, {3, 4});
    // Keep divisor away from zero.
    for (auto& v : b.mutable_value().flat()) v = (v >= 0 ? v + 1.5 : v - 1.5);

    check_grads([&] { return sum(add(a, b)); }, {{"a", a}, {"b", b}});
    check_grads([&] { return sum(sub(a, b)); }, {{"a", a}, {"b", b}});
    check_grads([&] { return sum(mul(a, b)); }, {{"a", a}, {"b", b}});
    check_grads([&] { return sum(div(a, b)); }, {{"a", a}, {"b", b}});
    check_grads([&] { return sum(scale(a, -2.5)); }, {{"a", a}});
    check_grads([&] { return sum(silu(a)); }, {{"a", a}});

    Var bias = random_leaf(rng, {4});
    check_grads([&] { return sum(add_bias_rows(a, bias)); }, {{"a", a}, {"bias", bias}});
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(101);
    Var a = random_leaf(rng, {3, 5});
    Var b = random_leaf(rng, {5, 2});
    Var bt = random_leaf(rng, {2, 5});
    Var w = random_leaf(rng, {3, 2});
    // Weighted sum so the gradient is not uniform across the output.
    auto weighted = [&](const Var& y) { return sum(mul(y, w)); };
    check_grads([&] { return weighted(matmul(a, b)); }, {{"a", a}, {"b", b}});
    check_grads([&] { return weighted(matmul_nt(a, bt)); }, {{"a", a}, {"bt", bt}});
}

TEST_CASE("softmax family gradients match finite differences") {
    Rng rng(102);
    Var x = random_leaf(rng, {5});
    Var wx = random_leaf(rng, {5});
    check_grads([&] { return dot_const(softmax(x), wx.value()); }, {{"x", x}});

    Var m = random_leaf(rng, {4, 6});
    Var wm = random_leaf(rng, {4, 6});
    check_grads([&] { return sum(mul(row_softmax(m), wm)); }, {{"m", m}});

    Var s = random_leaf(rng, {4, 4});
    Var ws = random_leaf(rng, {4, 4});
    check_grads([&] { return sum(mul(causal_row_softmax(s), ws)); }, {{"s", s}});
}

TEST_CASE("layer norm gradients match finite differences") {
    Rng rng(103);
    Var x = random_leaf(rng, {3, 6}, 2.0);
    Var gamma = random_leaf(rng, {6});
    Var beta = random_leaf(rng, {6});
    Var w = random_leaf(rng, {3, 6});
    check_grads([&] { return sum(mul(layer_norm(x, gamma, beta, 1e-5), w)); },
                {{"x", x}, {"gamma", gamma}, {"beta", beta}});
}

TEST_CASE("indexing op gradients match finite differences") {
    Rng rng(104);
    Var x = random_leaf(rng, {5, 3});
    Var w4 = random_leaf(rng, {4, 3});
    std::vector<std::size_t> idx = {4, 0, 2, 0};  // repeats exercise accumulation
    check_grads([&] { return sum(mul(gather_rows(x, idx), w4)); }, {{"x", x}});

    Var y = random_leaf(rng, {4, 3});
    Var w6 = random_leaf(rng, {6, 3});
    check_grads([&] { return sum(mul(scatter_add_rows(y, {1, 5, 1, 0}, 6), w6)); }, {{"y", y}});

    Var v = random_leaf(rng, {8});
    Var wg = random_leaf(rng, {5});
    check_grads([&] { return dot_const(gather_elems(v, {7, 1, 1, 3, 0}), wg.value()); },
                {{"v", v}});

    Var r = random_leaf(rng, {3});
    Var wr = random_leaf(rng, {6});
    check_grads([&] { return dot_const(repeat_each(r, 2), wr.value()); }, {{"r", r}});

    Var g = random_leaf(rng, {6});
    Var wgr = random_leaf(rng, {3});
    check_grads([&] { return dot_const(sum_groups(g, 2), wgr.value()); }, {{"g", g}});

    Var rows = random_leaf(rng, {4, 3});
    Var rw = random_leaf(rng, {4});
    Var wrw = random_leaf(rng, {4, 3});
    check_grads([&] { return sum(mul(scale_rows(rows, rw), wrw)); },
                {{"rows", rows}, {"rw", rw}});
}

TEST_CASE("concat and slice gradients match finite differences") {
    Rng rng(105);
    Var a = random_leaf(rng, {2, 3});
    Var b = random_leaf(rng, {4, 3});
    Var w = random_leaf(rng, {6, 3});
    check_grads([&] { return sum(mul(concat_rows(a, b), w)); }, {{"a", a}, {"b", b}});

    Var x = random_leaf(rng, {3, 7});
    Var ws = random_leaf(rng, {3, 4});
    check_grads([&] { return sum(mul(slice_cols(x, 2, 6), ws)); }, {{"x", x}});

    Var c1 = random_leaf(rng, {3, 2});
    Var c2 = random_leaf(rng, {3, 4});
    Var c3 = random_leaf(rng, {3, 1});
    Var wc = random_leaf(rng, {3, 7});
    check_grads([&] { return sum(mul(concat_cols({c1, c2, c3}), wc)); },
                {{"c1", c1}, {"c2", c2}, {"c3", c3}});
}

TEST_CASE("reduction and loss gradients match finite differences") {
    Rng rng(106);
    Var m = random_leaf(rng, {5, 3});
    Var wc = random_leaf(rng, {3});
    check_grads([&] { return dot_const(col_mean(m), wc.value()); }, {{"m", m}});

    Var logits = random_leaf(rng, {7});
    check_grads([&] { return cross_entropy(logits, 3); }, {{"logits", logits}});

    Var seq = random_leaf(rng, {5, 6});
    std::vector<int> targets = {0, 5, 2, 1, 4};
    std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};
    check_grads(
        [&] {
            return masked_ntp(seq, std::span<const int>(targets),
                              std::span<const std::uint8_t>(mask));
        },
        {{"seq", seq}});
}

TEST_CASE("composite graph with shared subexpressions differentiates correctly") {
    Rng rng(107);
    Var x = random_leaf(rng, {4, 4});
    Var w = random_leaf(rng, {4, 4}, 0.5);
    check_grads(
        [&] {
            Var h = silu(matmul(x, w));
            Var y = add(mul(h, h), scale_rows(h, col_mean(h)));  // h reused three times
            return sum(y);
        },
        {{"x", x}, {"w", w}});
}

// ---------------------------------------------------------------------------
// Shape errors

TEST_CASE("ops reject mismatched shapes with descriptive errors") {
    Var a(Tensor(Shape{2, 3}));
    Var b(Tensor(Shape{3, 2}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(causal_row_softmax(a), ShapeError);
    CHECK_THROWS_AS(gather_rows(a, {5}), IndexError);
    CHECK_THROWS_AS(slice_cols(a, 2, 2), IndexError);
    CHECK_THROWS_AS(cross_entropy(Var(Tensor(Shape{4})), 4), IndexError);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2x3]"), ShapeError);
}

// ---------------------------------------------------------------------------
// Serialization

TEST_CASE("binary tensor files round-trip exactly") {
    auto dir = std::filesystem::temp_directory_path() / "aukit_ser_test";
    std::filesystem::create_directories(dir);
    Rng rng(200);
    Tensor t(Shape{3, 4, 2});
    for (auto& v : t.flat()) v = rng.normal() * 1e6;
    t.at(0) = 0.1;  // not exactly representable; must still round-trip bit-for-bit
    save_tensor(dir / "t.bin", t);
    Tensor back = load_tensor(dir / "t.bin");
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.at(i) == t.at(i));

    save_tensor_text(dir / "t.txt", t);
    Tensor tback = load_tensor_text(dir / "t.txt");
    REQUIRE(tback.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(tback.at(i) == t.at(i));

    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt tensor files are rejected") {
    auto dir = std::filesystem::temp_directory_path() / "aukit_ser_corrupt";
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "junk.bin", std::ios::binary);
        os << "NOTATENSOR";
    }
    CHECK_THROWS_AS(load_tensor(dir / "junk.bin"), DataError);
    CHECK_THROWS_AS(load_tensor(dir / "missing.bin"), DataError);

    Tensor t(Shape{4});
    save_tensor(dir / "t.bin", t);
    std::filesystem::resize_file(dir / "t.bin", 20);  // truncate mid-data
    CHECK_THROWS_AS(load_tensor(dir / "t.bin"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints preserve names shapes and bytes") {
    auto dir = std::filesystem::temp_directory_path() / "aukit_ckpt_test";
    std::filesystem::remove_all(dir);
    Rng rng(201);
    std::map<std::string, Tensor> params;
    params.emplace("adapter.router.w", [&] {
        Tensor t(Shape{6, 4});
        for (auto& v : t.flat()) v = rng.normal();
        return t;
    }());
    params.emplace("backbone.tok_emb", [&] {
        Tensor t(Shape{16, 8});
        for (auto& v : t.flat()) v = rng.normal();
        return t;
    }());
    save_checkpoint(dir, params);
    auto back = load_checkpoint(dir);
    REQUIRE(back.size() == params.size());
    for (const auto& [name, t] : params) {
        REQUIRE(back.count(name) == 1);
        REQUIRE(back.at(name).shape() == t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.at(name).at(i) == t.at(i));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "nope"), DataError);
    std::filesystem::remove_all(dir);
}
