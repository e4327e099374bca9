#include "mfas/adam.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mfas/rng.hpp"

using namespace mfas;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor p = Tensor::row_vector({0.5, -1.5});
    p.set_requires_grad(true);
    sum(scale(p, 0.0)).backward();  // accumulates exact zeros
    std::vector<NamedParam> params{{"p", p}};
    AdamState opt(0.1);
    opt.step(params);
    EXPECT_DOUBLE_EQ(p.value()[0], 0.5);
    EXPECT_DOUBLE_EQ(p.value()[1], -1.5);
}

TEST(Adam, FirstStepWithUnitGradient) {
    // hand evaluation: m_hat = v_hat = 1 at step 1, so the update is
    // lr / (1 + eps) which is 0.1 up to 1e-9
    Tensor p = Tensor::scalar(2.0);
    p.set_requires_grad(true);
    sum(p).backward();  // gradient exactly 1
    std::vector<NamedParam> params{{"p", p}};
    AdamState opt(0.1);
    opt.step(params);
    EXPECT_NEAR(p.value()[0], 2.0 - 0.1, 2e-9);
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, DeterministicAcrossRuns) {
    auto run = [](std::uint64_t seed) {
        RngStream rng(seed);
        Tensor p = Tensor::row_vector({1.0, -1.0, 0.5});
        p.set_requires_grad(true);
        std::vector<NamedParam> params{{"p", p}};
        AdamState opt(0.01);
        for (int step = 0; step < 50; ++step) {
            std::vector<double> target(3);
            for (double& t : target) t = rng.next_gaussian();
            p.zero_grad();
            Tensor diff = sub(p, Tensor::row_vector(target));
            sum(mul(diff, diff)).backward();
            opt.step(params);
        }
        return p.value();
    };
    EXPECT_EQ(run(77), run(77));
}

TEST(Adam, NanGradientNamesParameter) {
    Tensor p = Tensor::scalar(1.0);
    p.set_requires_grad(true);
    sum(p).backward();
    p.node()->grad[0] = std::nan("");
    std::vector<NamedParam> params{{"layer3.weight", p}};
    AdamState opt(0.1);
    try {
        opt.step(params);
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("layer3.weight"), std::string::npos);
    }
}

TEST(Adam, GradScaleScalesTheUpdateDirection) {
    // with fresh moments the first step is invariant to positive scaling,
    // but a zero scale must produce a zero step
    Tensor p = Tensor::scalar(1.0);
    p.set_requires_grad(true);
    sum(p).backward();
    std::vector<NamedParam> params{{"p", p}};
    AdamState opt(0.1);
    opt.step(params, 0.0);
    EXPECT_DOUBLE_EQ(p.value()[0], 1.0);
}
