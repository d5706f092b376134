#include <doctest.h>

#include <cmath>

#include "taco/gradcheck.hpp"
#include "taco/params.hpp"
#include "taco/tensor.hpp"

using namespace taco;

namespace {

// Deterministic scalarization: weighted sum with fixed pseudo-random weights,
// so every output coordinate carries gradient signal.
Tensor weighted_sum(const Tensor& t) {
    Rng rng(0xABCD);
    std::vector<double> w(static_cast<std::size_t>(t.numel()));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    Tensor weights = Tensor::from_data(t.shape(), std::move(w));
    return sum_all(mul(t, weights));
}

double max_rel_err_fd(const std::function<Tensor()>& loss, ModelParams& params) {
    return grad_check(loss, params, 1e-3).max_rel_err;
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor x = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor y = matmul(i2, x);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("softmax symmetry and simplex invariants") {
    Tensor s = softmax_lastdim(Tensor::from_data({2}, {0.0, 0.0}));
    CHECK(s.values()[0] == doctest::Approx(0.5));
    CHECK(s.values()[1] == doctest::Approx(0.5));

    Rng rng(7);
    Tensor x = Tensor::randn({5, 9}, rng, 3.0);
    Tensor p = softmax_lastdim(x);
    for (std::int64_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 9; ++c) {
            const double v = p.at({r, c});
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax is stable under large offsets") {
    Tensor p = softmax_lastdim(Tensor::from_data({3}, {1000.0, 1000.0, 1000.0}));
    for (std::int64_t i = 0; i < 3; ++i) CHECK(p.values()[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("layer_norm constant input maps to beta") {
    Tensor g = Tensor::full({3}, 1.0);
    Tensor b = Tensor::zeros({3});
    Tensor y = layer_norm(Tensor::from_data({3}, {1, 1, 1}), g, b);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(std::abs(y.values()[i]) < 1e-12);
}

TEST_CASE("backward of sum is all ones, d(x*x) = 2x") {
    ModelParams params;
    Tensor& x = params.add("x", Tensor::from_data({4}, {1, -2, 0.5, 3}));
    GradMap g = collect_gradients(sum_all(x), params);
    for (double v : g.at("x")) CHECK(v == doctest::Approx(1.0));

    ModelParams params2;
    Tensor& y = params2.add("y", Tensor::from_data({1}, {3.0}));
    GradMap g2 = collect_gradients(sum_all(mul(y, y)), params2);
    CHECK(g2.at("y")[0] == doctest::Approx(6.0));
}

TEST_CASE("non-scalar loss rejected") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
}

TEST_CASE("unreachable parameters get zero gradients") {
    ModelParams params;
    Tensor& used = params.add("used", Tensor::from_data({2}, {1, 2}));
    params.add("unused", Tensor::from_data({3}, {1, 2, 3}));
    GradMap g = collect_gradients(sum_all(used), params);
    CHECK(g.at("unused").size() == 3);
    for (double v : g.at("unused")) CHECK(v == 0.0);
}

TEST_CASE("shape errors name the op and shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("no graph is recorded without requires_grad or under NoGradGuard") {
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor b = Tensor::from_data({2}, {3, 4});
    CHECK_FALSE(add(a, b).requires_grad());

    a.set_requires_grad(true);
    CHECK(add(a, b).requires_grad());
    {
        autograd::NoGradGuard guard;
        CHECK_FALSE(add(a, b).requires_grad());
        CHECK(add(a, b).node()->inputs.empty());
    }
}

TEST_CASE("compute graph is topologically ordered") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor y = mul(add(x, x), x);
    Tensor loss = sum_all(y);
    autograd::ComputeGraph graph(loss);
    const auto& order = graph.nodes();
    for (std::size_t i = 0; i < order.size(); ++i)
        for (const auto& input : order[i]->inputs) {
            const auto pos = std::find(order.begin(), order.end(), input.get()) - order.begin();
            CHECK(static_cast<std::size_t>(pos) < i);
        }
}

TEST_CASE("forward and backward are deterministic given a seed") {
    auto run = [] {
        Rng rng(42);
        ModelParams params;
        Tensor& w = params.add("w", Tensor::randn({6, 6}, rng));
        Tensor x = Tensor::randn({4, 6}, rng);
        Tensor loss = mean_all(gelu(matmul(x, w)));
        GradMap g = collect_gradients(loss, params);
        return std::make_pair(loss.item(), g.at("w"));
    };
    const auto [l1, g1] = run();
    const auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("finite differences validate every primitive") {
    // Random inputs in [-2,2]; per-primitive relative error < 1e-4 at h=1e-3.
    Rng rng(11);
    auto uniform_tensor = [&](Shape shape) {
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        for (double& v : data) v = rng.uniform(-2.0, 2.0);
        return Tensor::from_data(std::move(shape), std::move(data));
    };

    SUBCASE("matmul") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({3, 4}));
        Tensor& b = p.add("b", uniform_tensor({4, 2}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(matmul(a, b)); }, p) < 1e-4);
    }
    SUBCASE("bmm") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({2, 3, 4}));
        Tensor& b = p.add("b", uniform_tensor({2, 4, 3}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(bmm(a, b)); }, p) < 1e-4);
    }
    SUBCASE("add with broadcast") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({3, 5}));
        Tensor& b = p.add("b", uniform_tensor({5}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(add(a, b)); }, p) < 1e-4);
    }
    SUBCASE("sub and mul and scale") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({4, 3}));
        Tensor& b = p.add("b", uniform_tensor({4, 3}));
        CHECK(max_rel_err_fd(
                  [&] { return weighted_sum(scale(mul(sub(a, b), b), -1.7)); }, p) < 1e-4);
    }
    SUBCASE("softmax") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({3, 6}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(softmax_lastdim(a)); }, p) < 1e-4);
    }
    SUBCASE("layer_norm") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({4, 8}));
        Tensor& g = p.add("g", uniform_tensor({8}));
        Tensor& b = p.add("b", uniform_tensor({8}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(layer_norm(a, g, b)); }, p) < 1e-4);
    }
    SUBCASE("gelu") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({5, 5}));
        CHECK(max_rel_err_fd([&] { return weighted_sum(gelu(a)); }, p) < 1e-4);
    }
    SUBCASE("embedding_lookup") {
        ModelParams p;
        Tensor& table = p.add("table", uniform_tensor({6, 4}));
        const std::vector<std::int64_t> ids{0, 3, 3, 5, 1};
        CHECK(max_rel_err_fd([&] { return weighted_sum(embedding_lookup(table, ids)); }, p) < 1e-4);
    }
    SUBCASE("concat slice reshape permute") {
        ModelParams p;
        Tensor& a = p.add("a", uniform_tensor({2, 3, 4}));
        Tensor& b = p.add("b", uniform_tensor({2, 2, 4}));
        auto loss = [&] {
            Tensor cat = concat({a, b}, 1);                       // [2,5,4]
            Tensor sl = slice(cat, 1, 1, 3);                      // [2,3,4]
            Tensor pm = permute(sl, {1, 0, 2});                   // [3,2,4]
            return weighted_sum(reshape(pm, {6, 4}));
        };
        CHECK(max_rel_err_fd(loss, p) < 1e-4);
    }
    SUBCASE("mean and cross entropy") {
        ModelParams p;
        Tensor& logits = p.add("logits", uniform_tensor({5, 3}));
        const std::vector<int> labels{0, 2, 1, 2, 0};
        CHECK(max_rel_err_fd(
                  [&] { return mean_all(cross_entropy_with_logits(logits, labels)); }, p) < 1e-4);
    }
}

TEST_CASE("grad_check report on linear layer and frozen group") {
    Rng rng(3);
    ModelParams params;
    Tensor& w = params.add("w", Tensor::randn({4, 4}, rng));
    params.add("frozen", Tensor::randn({3}, rng));
    Tensor x = Tensor::randn({4, 4}, rng);
    GradCheckReport report = grad_check([&] { return sum_all(matmul(x, w)); }, params, 1e-3);
    for (const auto& e : report.entries) {
        if (e.name == "w") CHECK(e.max_rel_err < 1e-6);  // linear: central FD is exact
        if (e.name == "frozen") CHECK(e.max_rel_err == 0.0);  // both sides zero
    }
}

TEST_CASE("softmax cross-entropy head gradcheck") {
    Rng rng(5);
    ModelParams params;
    Tensor& w = params.add("w", Tensor::randn({6, 3}, rng));
    Tensor x = Tensor::randn({7, 6}, rng);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 1};
    GradCheckReport report = grad_check(
        [&] { return mean_all(cross_entropy_with_logits(matmul(x, w), labels)); }, params, 1e-3);
    CHECK(report.max_rel_err < 1e-4);
}
