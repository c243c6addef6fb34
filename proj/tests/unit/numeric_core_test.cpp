#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "h2m/checkpoint.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/optim.hpp"
#include "h2m/rng.hpp"

using namespace h2m;
using h2m::testing::gradcheck;

namespace {

Tensor rand_leaf(const Shape& s, Rng& rng) { return randn(s, rng).clone().set_requires_grad(true); }

// Weighted sum so that gradients of every output element differ.
Tensor probe(const Tensor& y, Rng rng) { return sum(mul(y, randn(y.shape(), rng))); }

// Direct-loop convolution; independent of the im2col path.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, std::size_t s, std::size_t p) {
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
    const auto Ho = (H + 2 * p - K) / s + 1, Wo = (W + 2 * p - K) / s + 1;
    std::vector<double> out(B * O * Ho * Wo, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xx = 0; xx < Wo; ++xx) {
                    double acc = 0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t i = 0; i < K; ++i)
                            for (std::size_t j = 0; j < K; ++j) {
                                const long iy = long(y * s + i) - long(p), ix = long(xx * s + j) - long(p);
                                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                                acc += x[((b * C + c) * H + iy) * W + ix] * w[((o * C + c) * K + i) * K + j];
                            }
                    out[((b * O + o) * Ho + y) * Wo + xx] = acc;
                }
    return out;
}

}  // namespace

TEST_SUITE("numeric-core") {
    TEST_CASE("matmul hand cases") {
        auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
        auto a = Tensor::from({2, 2}, {3, -1, 2.5, 7});
        auto r = matmul(eye, a);
        for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == a[i]);

        auto m = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {0, 1}));
        CHECK(m.shape() == Shape{2, 1});
        CHECK(m[0] == 2.0);
        CHECK(m[1] == 4.0);
    }

    TEST_CASE("matmul shape mismatch names both shapes") {
        try {
            matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}));
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2x3]") != std::string::npos);
            CHECK(msg.find("[2x2]") != std::string::npos);
        }
    }

    TEST_CASE("matmul gradient matches finite differences") {
        Rng rng(11);
        auto a = rand_leaf({3, 4}, rng), b = rand_leaf({4, 2}, rng);
        CHECK(gradcheck({a, b}, [&] { return sum(matmul(a, b)); }) < 1e-6);
    }

    TEST_CASE("bmm gradients for every transpose combination") {
        for (int mode = 0; mode < 4; ++mode) {
            Rng rng(100 + mode);
            const bool ta = mode & 1, tb = mode & 2;
            auto a = rand_leaf(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
            auto b = rand_leaf(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
            CHECK(gradcheck({a, b}, [&] { return probe(bmm(a, b, ta, tb), Rng(7)); }) < 1e-6);
        }
    }

    TEST_CASE("softmax rows") {
        auto s = softmax_rows(Tensor::from({3}, {0, 0, 0}));
        for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        auto big = softmax_rows(Tensor::from({2}, {1000, 0}));
        CHECK(std::isfinite(big[0]));
        CHECK(big[0] == doctest::Approx(1.0));
        CHECK(big[1] < 1e-300);

        Rng rng(3);
        auto x = rand_leaf({5}, rng);
        CHECK(gradcheck({x}, [&] { return probe(softmax_rows(x), Rng(9)); }) < 1e-6);

        auto rows = softmax_rows(randn({7, 13}, rng, 4.0));
        for (std::size_t r = 0; r < 7; ++r) {
            double acc = 0;
            for (std::size_t j = 0; j < 13; ++j) {
                CHECK(rows[r * 13 + j] >= 0.0);
                acc += rows[r * 13 + j];
            }
            CHECK(std::abs(acc - 1.0) < 1e-12);
        }
    }

    TEST_CASE("layer norm") {
        auto one = Tensor::full({4}, 1.0), zero = Tensor::zeros({4});
        auto c = layer_norm(Tensor::full({4}, 5.0), one, zero);
        for (int i = 0; i < 4; ++i) CHECK(c[i] == 0.0);
        auto pm = layer_norm(Tensor::from({2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
        CHECK(pm[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)));
        CHECK(pm[1] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)));

        Rng rng(5);
        auto x = rand_leaf({8}, rng), g = rand_leaf({8}, rng), b = rand_leaf({8}, rng);
        CHECK(gradcheck({x, g, b}, [&] { return probe(layer_norm(x, g, b), Rng(1)); }) < 1e-5);
        CHECK_THROWS_AS(layer_norm(Tensor::zeros({3, 1}), Tensor(), Tensor()), DimensionError);
    }

    TEST_CASE("backward basics") {
        Rng rng(8);
        auto x = rand_leaf({6}, rng);
        sum(x).backward();
        for (double g : x.grad()) CHECK(g == 1.0);
        x.zero_grad();
        scale(sum(mul(x, x)), 0.5).backward();
        for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(x[i]));
        // No reset: a second sweep accumulates.
        scale(sum(mul(x, x)), 0.5).backward();
        for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]));
        CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
    }

    TEST_CASE("no-grad mode records nothing") {
        auto x = Tensor::full({3}, 2.0, true);
        NoGradGuard g;
        auto y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
        CHECK(grad_enabled() == false);
    }

    TEST_CASE("adam") {
        ParamSet ps;
        auto w = ps.add("w", Tensor::from({1}, {1.0}));
        AdamState st;
        square(w).backward();
        adam_step(ps, st, 0.1);
        CHECK(std::abs(w[0]) < 1.0);
        CHECK(st.step == 1);

        ParamSet ps2;
        auto z = ps2.add("z", Tensor::from({2}, {0.3, -0.7}));
        AdamState st2;
        scale(sum(z), 0.0).backward();
        adam_step(ps2, st2, 0.1);
        CHECK(z[0] == 0.3);
        CHECK(z[1] == -0.7);

        ParamSet missing;
        missing.add("orphan", Tensor::zeros({2}));
        AdamState st3;
        try {
            adam_step(missing, st3, 0.1);
            FAIL("expected ContractError");
        } catch (const ContractError& e) {
            CHECK(std::string(e.what()).find("orphan") != std::string::npos);
        }
    }

    TEST_CASE("adam solves a small least-squares problem") {
        // Closed-form optimum of ||A w - y||^2 with A invertible: w* = A^{-1} y, loss 0.
        auto A = Tensor::from({3, 2}, {1, 2, 0.5, -1, 2, 0.25});
        auto y = Tensor::from({3, 1}, {5.0, -1.5, 2.5});  // A * (1, 2)
        ParamSet ps;
        auto w = ps.add("w", Tensor::zeros({2, 1}));
        AdamState st;
        double loss = 0;
        for (int i = 0; i < 500; ++i) {
            ps.zero_grad();
            auto l = mean(square(sub(matmul(A, w), y)));
            loss = l.item();
            l.backward();
            adam_step(ps, st, 0.05);
        }
        loss = mean(square(sub(matmul(A, w), y))).item();
        CHECK(loss < 1e-6);
        CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(w[1] == doctest::Approx(2.0).epsilon(1e-3));
    }

    TEST_CASE("reshape and transpose invert exactly") {
        Rng rng(21);
        for (int trial = 0; trial < 10; ++trial) {
            auto x = randn({2, 3, 5}, rng);
            auto back = reshape(reshape(x, {5, 6}), {2, 3, 5});
            auto tt = transpose(transpose(x));
            auto pp = permute(permute(x, {2, 0, 1}), {1, 2, 0});
            for (std::size_t i = 0; i < x.numel(); ++i) {
                CHECK(back[i] == x[i]);
                CHECK(tt[i] == x[i]);
                CHECK(pp[i] == x[i]);
            }
        }
    }

    TEST_CASE("differentiable ops pass finite-difference checks across seeds") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(seed);
            auto a = rand_leaf({2, 3, 4}, rng), b = rand_leaf({3, 1}, rng), c = rand_leaf({4}, rng);
            CHECK(gradcheck({a, b}, [&] { return probe(mul(a, b), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a, c}, [&] { return probe(sub(a, c), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(silu(a), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(tanh(a), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(sigmoid(a), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(exp(scale(a, 0.3)), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(permute(a, {2, 0, 1}), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a}, [&] { return probe(slice(a, 1, 1, 3), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a, c}, [&] { return probe(concat({slice(a, 0, 0, 1), reshape(c, {1, 1, 4})}, 1), Rng(seed)); }) < 1e-4);
            CHECK(gradcheck({a, c}, [&] { return mean(square(linear(a, reshape(c, {4, 1}), Tensor()))); }) < 1e-4);
            auto table = rand_leaf({5, 3}, rng);
            const int idx[] = {4, 0, 4, 2};
            CHECK(gradcheck({table}, [&] { return probe(embedding(table, idx), Rng(seed)); }) < 1e-4);
            auto logits = rand_leaf({4, 5}, rng);
            CHECK(gradcheck({logits}, [&] { return cross_entropy(logits, idx); }) < 1e-4);
        }
    }

    TEST_CASE("conv2d agrees with direct loops and has correct gradients") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(seed + 40);
            const std::size_t stride = 1 + seed % 2, pad = seed % 3 == 0 ? 0 : 1;
            auto x = rand_leaf({2, 3, 6, 6}, rng), w = rand_leaf({4, 3, 3, 3}, rng), b = rand_leaf({4}, rng);
            auto y = conv2d(x, w, Tensor(), stride, pad);
            const auto ref = naive_conv(x, w, stride, pad);
            REQUIRE(ref.size() == y.numel());
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
            CHECK(gradcheck({x, w, b}, [&] { return probe(conv2d(x, w, b, stride, pad), Rng(seed)); }) < 1e-4);
        }
    }

    TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
        // <conv(x), y> == <x, convT(y)> for shared weights.
        Rng rng(77);
        auto x = randn({1, 3, 8, 8}, rng), w = randn({4, 3, 4, 4}, rng);
        auto y = randn({1, 4, 4, 4}, rng);
        const double lhs = sum(mul(conv2d(x, w, Tensor(), 2, 1), y)).item();
        const double rhs = sum(mul(x, conv_transpose2d(y, w, Tensor(), 2, 1))).item();
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng r2(seed + 90);
            auto xi = rand_leaf({2, 3, 3, 3}, r2), wi = rand_leaf({3, 2, 4, 4}, r2), bi = rand_leaf({2}, r2);
            auto out = conv_transpose2d(xi, wi, bi, 2, 1);
            CHECK(out.shape() == Shape{2, 2, 6, 6});
            CHECK(gradcheck({xi, wi, bi}, [&] { return probe(conv_transpose2d(xi, wi, bi, 2, 1), Rng(seed)); }) < 1e-4);
        }
    }

    TEST_CASE("sinusoidal embedding") {
        const double pos[] = {0.0, 3.0};
        auto e = sinusoidal_embedding(pos, 6);
        CHECK(e.shape() == Shape{2, 6});
        CHECK(e[0] == 0.0);
        CHECK(e[3] == 1.0);
        CHECK(e[6] == doctest::Approx(std::sin(3.0)));
        CHECK_FALSE(e.requires_grad());
    }

    TEST_CASE("rng reproducibility and split uniformity") {
        Rng a(42), b(42);
        for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng parent(42);
        auto c1 = parent.split(3);
        parent.next_u64();
        auto c2 = parent.split(3);
        CHECK(c1.next_u64() == c2.next_u64());
        CHECK(Rng(42).split(1).next_u64() != Rng(42).split(2).next_u64());

        for (std::uint64_t child = 0; child < 4; ++child) {
            auto s = Rng(9).split(child);
            const int n = 100000;
            double acc = 0;
            for (int i = 0; i < n; ++i) acc += s.uniform();
            const double sd = std::sqrt(1.0 / 12.0 / n);
            CHECK(std::abs(acc / n - 0.5) < 3 * sd);
        }
        Rng g(5);
        double m = 0, v = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const double z = g.normal();
            m += z;
            v += z * z;
        }
        CHECK(std::abs(m / n) < 0.02);
        CHECK(std::abs(v / n - 1.0) < 0.02);
    }

    TEST_CASE("checkpoint layout and round trip") {
        auto bytes = encode_checkpoint({{"ab", Tensor::from({2}, {1.0, -2.0})}});
        // magic + version + count
        REQUIRE(bytes.size() == 4 + 4 + 4 + 2 + 2 + 1 + 4 + 16);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "H2MC");
        CHECK(bytes[4] == 1);
        CHECK(bytes[8] == 1);
        CHECK(bytes[12] == 2);
        CHECK(bytes[13] == 0);
        CHECK(bytes[16] == 1);  // rank
        CHECK(bytes[17] == 2);  // dim
        CHECK(bytes[21 + 7] == 0x3F);  // 1.0 little-endian high byte

        Rng rng(1);
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<NamedTensor> recs;
            for (int k = 0; k < 4; ++k)
                recs.push_back({"t" + std::to_string(k), randn({1 + rng.below(3), 1 + rng.below(4)}, rng)});
            auto back = decode_checkpoint(encode_checkpoint(recs));
            REQUIRE(back.size() == recs.size());
            for (std::size_t k = 0; k < recs.size(); ++k) {
                CHECK(back[k].name == recs[k].name);
                CHECK(back[k].tensor.shape() == recs[k].tensor.shape());
                for (std::size_t i = 0; i < recs[k].tensor.numel(); ++i) CHECK(back[k].tensor[i] == recs[k].tensor[i]);
            }
        }
        bytes[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bytes), ValidationError);
    }
}
