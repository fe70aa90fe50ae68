#include "doctest.h"

#include <cmath>

#include "dsan/optimizer.hpp"

using namespace dsan;

TEST_CASE("warm-up schedule branches meet at the crossover step") {
    const double at_warmup = warmup_learning_rate(4000, 64, 4000);
    CHECK(at_warmup == doctest::Approx(std::pow(64.0, -0.5) * std::pow(4000.0, -0.5))
                           .epsilon(1e-15));
    // strictly rising before, strictly falling after
    CHECK(warmup_learning_rate(3999, 64, 4000) < at_warmup);
    CHECK(warmup_learning_rate(4001, 64, 4000) < at_warmup);
}

TEST_CASE("first step of the default schedule") {
    const double lr = warmup_learning_rate(1, 64, 4000);
    CHECK(lr == doctest::Approx(0.125 * std::pow(4000.0, -1.5)).epsilon(1e-12));
    CHECK(lr == doctest::Approx(4.94e-7).epsilon(1e-2));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    const std::vector<double> before = p.data();
    AdamConfig cfg;
    cfg.model_dim = 8;
    cfg.warmup_steps = 10;
    WarmupAdam opt({p}, cfg);
    opt.zero_grad();
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.data() == before);
    CHECK(opt.steps_taken() == 5);
}

TEST_CASE("a constant gradient moves parameters against it") {
    Tensor p = Tensor::from({2}, {1.0, 1.0}, true);
    AdamConfig cfg;
    cfg.model_dim = 4;
    cfg.warmup_steps = 2;
    WarmupAdam opt({p}, cfg);
    backward(sum(mul(p, Tensor::from({2}, {3.0, -3.0}))));
    opt.step();
    CHECK(p.data()[0] < 1.0);
    CHECK(p.data()[1] > 1.0);
    CHECK(opt.last_learning_rate() == doctest::Approx(warmup_learning_rate(1, 4, 2)));
}

TEST_CASE("schedule rejects a zero step") {
    CHECK_THROWS_AS(warmup_learning_rate(0, 64, 4000), std::invalid_argument);
}
