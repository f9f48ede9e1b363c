#include <catch2/catch_amalgamated.hpp>

#include "testing.hpp"
#include "unimove/tensor.hpp"

using namespace unimove;
using testing_util::fd_max_rel_err;
using testing_util::random_const;
using testing_util::random_param;

TEST_CASE("softmax matches direct evaluation") {
    Tensor x = Tensor::constant({2}, {2.0, 1.0});
    Tensor y = softmax(x);
    CHECK(y.values()[0] == Catch::Approx(0.73106).margin(1e-5));
    CHECK(y.values()[1] == Catch::Approx(0.26894).margin(1e-5));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(11);
    Tensor x = random_const({5, 7}, rng, 3.0);
    Tensor y = softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < 7; ++i) s += y.values()[r * 7 + i];
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    Tensor shifted = softmax(add_const(x, 17.5));
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(std::abs(shifted.values()[i] - y.values()[i]) <= 1e-10);
}

TEST_CASE("matmul with identity is identity") {
    Rng rng(3);
    Tensor a = random_const({3, 3}, rng);
    Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.values()[i] == a.values()[i]);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                        Catch::Matchers::ContainsSubstring("[4x2]"));
}

TEST_CASE("topk_mask selects the k largest and blocks the rest") {
    Tensor x = Tensor::constant({3}, {0.1, 0.9, 0.5});
    auto [vals, idx] = topk_mask(x, 2);
    CHECK(idx.v == std::vector<std::int64_t>{1, 2});
    CHECK(vals.values()[0] == kNegInf);
    CHECK(vals.values()[1] == 0.9);
    CHECK(vals.values()[2] == 0.5);
    CHECK_THROWS_AS(topk_mask(x, 4), Error);
}

TEST_CASE("concat then slice round-trips bit-exactly") {
    Rng rng(5);
    Tensor a = random_const({2, 3}, rng);
    Tensor b = random_const({2, 5}, rng);
    Tensor cat = concat({a, b}, 1);
    Tensor a2 = slice(cat, 1, 0, 3);
    Tensor b2 = slice(cat, 1, 3, 5);
    CHECK(a2.values() == a.values());
    CHECK(b2.values() == b.values());
}

TEST_CASE("backward requires a scalar and accumulates across calls") {
    Tensor x = Tensor::param({2}, {1.0, 2.0});
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), Error);
    Tensor loss = sum_all(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == Catch::Approx(2.0));
    Tensor loss2 = sum_all(mul(x, x));
    backward(loss2);  // accumulates by contract
    CHECK(x.grad()[0] == Catch::Approx(4.0));
}

TEST_CASE("gradients match central finite differences per primitive") {
    Rng rng(42);
    auto check = [&](const std::function<Tensor()>& fwd, std::vector<Tensor> params) {
        CHECK(fd_max_rel_err(fwd, std::move(params)) < 1e-4);
    };

    SECTION("add with broadcasting over leading axes") {
        Tensor a = random_param({2, 3, 4}, rng);
        Tensor b = random_param({4}, rng);
        check([&] { return sum_all(add(a, b)); }, {a, b});
    }
    SECTION("sub and div") {
        Tensor a = random_param({3, 4}, rng);
        Tensor b = random_param({3, 4}, rng);
        for (auto& v : b.values()) v += v < 0 ? -1.5 : 1.5;  // keep away from 0
        check([&] { return sum_all(div(sub(a, b), b)); }, {a, b});
    }
    SECTION("mul with trailing broadcast") {
        Tensor a = random_param({2, 3, 4}, rng);
        Tensor b = random_param({2, 3, 1}, rng);
        check([&] { return sum_all(mul(a, b)); }, {a, b});
    }
    SECTION("matmul 2d and batched") {
        Tensor a = random_param({3, 4}, rng);
        Tensor b = random_param({4, 2}, rng);
        check([&] { return sum_all(matmul(a, b)); }, {a, b});
        Tensor c = random_param({2, 2, 3, 4}, rng);
        Tensor d = random_param({2, 2, 4, 2}, rng);
        check([&] { return sum_all(matmul(c, d)); }, {c, d});
        check([&] { return sum_all(matmul(c, b)); }, {c, b});
    }
    SECTION("softmax and log_softmax") {
        Tensor a = random_param({3, 5}, rng);
        Tensor w = random_const({3, 5}, rng);
        check([&] { return sum_all(mul(softmax(a), w)); }, {a});
        check([&] { return sum_all(mul(log_softmax(a), w)); }, {a});
    }
    SECTION("gelu and softplus") {
        Tensor a = random_param({4, 4}, rng);
        check([&] { return sum_all(gelu(a)); }, {a});
        check([&] { return sum_all(softplus(a)); }, {a});
    }
    SECTION("concat, slice, transpose, reshape") {
        Tensor a = random_param({2, 3}, rng);
        Tensor b = random_param({2, 2}, rng);
        check([&] { return sum_all(mul(concat({a, b}, 1), concat({a, b}, 1))); }, {a, b});
        check([&] { return sum_all(mul(slice(a, 1, 1, 2), slice(a, 1, 0, 2))); }, {a});
        Tensor c = random_param({2, 3, 4, 5}, rng);
        check([&] { return sum_all(mul(transpose(c, 1, 2), transpose(c, 1, 2))); }, {c});
        check([&] { return mean_all(reshape(mul(c, c), {6, 20})); }, {c});
    }
    SECTION("embedding_lookup") {
        Tensor table = random_param({6, 3}, rng);
        IntArray idx({2, 2});
        idx.v = {0, 5, 2, 2};  // repeated index exercises accumulation
        check([&] { return sum_all(mul(embedding_lookup(table, idx),
                                       embedding_lookup(table, idx))); },
              {table});
    }
    SECTION("masked_fill") {
        Tensor a = random_param({2, 4}, rng);
        BoolArray mask({2, 4});
        mask.v = {0, 1, 0, 1, 1, 0, 0, 0};
        check([&] { return sum_all(mul(masked_fill(a, mask, -3.0), a)); }, {a});
    }
    SECTION("sum and mean along axes") {
        Tensor a = random_param({2, 3, 4}, rng);
        check([&] { return sum_all(mul(sum(a, 1), sum(a, 1))); }, {a});
        check([&] { return sum_all(mul(mean(a, 2, true), a)); }, {a});
    }
    SECTION("topk_mask away from ties") {
        Tensor a = Tensor::param({2, 4}, {0.3, 1.2, -0.7, 0.9, 2.0, -1.0, 0.5, 0.1});
        check([&] { return sum_all(softmax(topk_mask(a, 2).values)); }, {a});
    }
    SECTION("layer_norm") {
        Tensor a = random_param({3, 6}, rng);
        Tensor g = random_param({6}, rng, 0.5);
        for (auto& v : g.values()) v += 1.0;
        Tensor b = random_param({6}, rng, 0.1);
        Tensor w = random_const({3, 6}, rng);
        check([&] { return sum_all(mul(layer_norm(a, g, b), w)); }, {a, g, b});
    }
    SECTION("gather_last with ignored rows") {
        Tensor a = random_param({4, 5}, rng);
        IntArray t({4});
        t.v = {2, -1, 0, 4};
        check([&] { return sum_all(gather_last(log_softmax(a), t, -1)); }, {a});
    }
}

TEST_CASE("topk gradient flows only through selected entries") {
    Tensor a = Tensor::param({4}, {0.1, 0.9, 0.5, 0.2});
    Tensor out = topk_mask(a, 2).values;
    backward(sum_all(out));
    // kNegInf entries contribute constants to the sum but carry no gradient
    CHECK(a.grad()[0] == 0.0);
    CHECK(a.grad()[1] == 1.0);
    CHECK(a.grad()[2] == 1.0);
    CHECK(a.grad()[3] == 0.0);
}

TEST_CASE("gradients stay finite after backward") {
    Rng rng(9);
    Tensor a = random_param({3, 8}, rng);
    Tensor g = Tensor::full({8}, 1.0, true);
    Tensor b = Tensor::zeros({8}, true);
    backward(mean_all(softmax(layer_norm(gelu(a), g, b))));
    for (double v : a.grad()) CHECK(std::isfinite(v));
}
