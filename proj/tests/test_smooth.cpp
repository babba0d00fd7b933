#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cobra/smooth.hpp"
#include "support.hpp"

using namespace cobra;
using testing_support::make_agg;
using testing_support::row;

namespace {

SmoothingParams params(double beta, KernelVariant v) { return {beta, v}; }

struct Instance {
    oracle::Rows agg_preds;
    std::vector<double> responses;
    oracle::Rows tune_preds;
    std::vector<double> targets;
};

Instance random_instance(std::mt19937_64& rng, std::size_t l, std::size_t M, std::size_t n)
{
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Instance in;
    in.agg_preds = oracle::random_rows(rng, l, M, 0.0, 1.0);
    in.tune_preds = oracle::random_rows(rng, n, M, 0.0, 1.0);
    for (std::size_t i = 0; i < l; ++i) {
        in.responses.push_back(u(rng));
    }
    for (std::size_t j = 0; j < n; ++j) {
        in.targets.push_back(u(rng));
    }
    return in;
}

TuningSet tuning_of(const Instance& in)
{
    return {testing_support::to_matrix(in.tune_preds), testing_support::to_vector(in.targets), {}};
}

} // namespace

TEST(Phi, SymmetricAtBoundary)
{
    for (double beta : {0.5, 3.0, 80.0}) {
        const std::vector<double> d{0.7};
        EXPECT_NEAR(phi_beta(d, 0.7, beta, KernelVariant::SumExp), 0.5, 1e-15);
        EXPECT_NEAR(phi_beta(d, 0.7, beta, KernelVariant::MaxExp), 0.5, 1e-15);
    }
}

TEST(Phi, FrozenValues)
{
    EXPECT_NEAR(phi_beta(std::vector<double>{0.0, 0.0}, 0.0, 1.0, KernelVariant::SumExp), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(phi_beta(std::vector<double>{0.5}, 1.0, 10.0, KernelVariant::MaxExp), 0.9933071490757151444,
                1e-15);
    EXPECT_NEAR(phi_beta(std::vector<double>{0.1, 0.4}, 0.3, 2.0, KernelVariant::SumExp),
                0.3458146121575096656597624683826, 1e-15);
}

TEST(Phi, ExtremeArgumentsStayFinite)
{
    const std::vector<double> d{1e6, 0.0};
    EXPECT_EQ(phi_beta(d, 0.0, 1e4, KernelVariant::MaxExp), 0.0);
    EXPECT_NEAR(phi_beta(std::vector<double>{0.0}, 1e6, 1e4, KernelVariant::SumExp), 1.0, 1e-15);
    EXPECT_TRUE(std::isfinite(phi_beta(d, 3.0, 1e4, KernelVariant::SumExp)));
}

TEST(SmoothWeights, IdenticalRow)
{
    const auto agg = make_agg({{1.0, 2.0}}, {5.0});
    const Vector w = smooth_weights(agg, row({1.0, 2.0}), 0.0, params(1.0, KernelVariant::SumExp));
    EXPECT_NEAR(w(0), 1.0 / 3.0, 1e-15);
    const Vector w2 = smooth_weights(agg, row({1.0, 2.0}), 0.4, params(3.0, KernelVariant::SumExp));
    EXPECT_NEAR(w2(0), std::exp(1.2) / (std::exp(1.2) + 2.0), 1e-15);
}

TEST(SmoothWeights, IncreaseWithEpsilon)
{
    std::mt19937_64 rng(4);
    const auto agg = make_agg(oracle::random_rows(rng, 10, 3, 0.0, 1.0), std::vector<double>(10, 0.0));
    const auto q = row({0.5, 0.5, 0.5});
    for (auto v : {KernelVariant::SumExp, KernelVariant::MaxExp}) {
        const Vector a = smooth_weights(agg, q, 0.2, params(5.0, v));
        const Vector b = smooth_weights(agg, q, 0.25, params(5.0, v));
        EXPECT_TRUE((b.array() > a.array()).all());
    }
}

TEST(SmoothWeights, SharpLimitMatchesIndicator)
{
    std::mt19937_64 rng(5);
    int checked = 0;
    while (checked < 100) {
        const auto preds = oracle::random_rows(rng, 5, 2, 0.0, 1.0);
        const auto q = oracle::random_rows(rng, 1, 2, 0.0, 1.0).front();
        const double eps = 0.3;
        bool margin_ok = true;
        for (const auto& r : preds) {
            const double worst = std::max(std::abs(r[0] - q[0]), std::abs(r[1] - q[1]));
            margin_ok = margin_ok && std::abs(worst - eps) >= 0.01;
        }
        if (!margin_ok) {
            continue;
        }
        ++checked;
        const auto agg = make_agg(preds, std::vector<double>(5, 1.0));
        const Vector w = smooth_weights(agg, row(q), eps, params(1e4, KernelVariant::MaxExp));
        const auto hit = oracle::cobra_weights(preds, q, eps, 2);
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_NEAR(w(static_cast<Index>(i)), hit[i] > 0.0 ? 1.0 : 0.0, 1e-6);
        }
    }
}

TEST(SmoothPredict, EquidistantRowsGiveMean)
{
    const auto agg = make_agg({{1.0, 0.0}, {0.0, -1.0}, {0.5, 1.0}}, {3, 6, 12});
    const double p = smooth_predict(agg, row({0.0, 0.0}), 0.2, params(7.0, KernelVariant::MaxExp));
    EXPECT_NEAR(p, 7.0, 1e-12);
}

TEST(SmoothPredict, SingleRowReturnsItsResponse)
{
    const auto agg = make_agg({{0.3, 9.0}}, {-4.25});
    for (double beta : {1e-3, 1.0, 1e4}) {
        EXPECT_EQ(smooth_predict(agg, row({100.0, -100.0}), 0.7, params(beta, KernelVariant::SumExp)), -4.25);
    }
}

TEST(SmoothPredict, MatchesLongDoubleOracle)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        const auto in = random_instance(rng, 8, 3, 1);
        const auto agg = make_agg(in.agg_preds, in.responses);
        for (auto v : {KernelVariant::SumExp, KernelVariant::MaxExp}) {
            const double got = smooth_predict(agg, row(in.tune_preds[0]), 0.35, params(10.0, v));
            const long double want = oracle::smooth_predict(in.agg_preds, in.responses, in.tune_preds[0], 0.35L,
                                                            10.0L, v == KernelVariant::MaxExp);
            EXPECT_NEAR(got, static_cast<double>(want), 1e-12);
        }
    }
}

TEST(SmoothPredict, SharpLimitMatchesDiscrete)
{
    const auto agg = make_agg({{1.2, 2.1}, {3.0, 2.0}, {0.9, 1.8}}, {10, 99, 20});
    const double p = smooth_predict(agg, row({1.0, 2.0}), 0.5, params(1e4, KernelVariant::MaxExp));
    EXPECT_NEAR(p, 15.0, 1e-5);
}

TEST(Loss, ZeroWhenTargetsArePredictions)
{
    std::mt19937_64 rng(7);
    auto in = random_instance(rng, 6, 2, 4);
    const auto agg = make_agg(in.agg_preds, in.responses);
    const auto sm = params(3.0, KernelVariant::SumExp);
    for (std::size_t j = 0; j < in.targets.size(); ++j) {
        in.targets[j] = smooth_predict(agg, row(in.tune_preds[j]), 0.4, sm);
    }
    const auto lg = loss_and_gradient(tuning_of(in), agg, 0.4, sm);
    EXPECT_EQ(lg.loss, 0.0);
    EXPECT_EQ(lg.gradient, 0.0);
}

TEST(Loss, SingleRowIsSquaredResidual)
{
    const auto agg = make_agg({{0.0}, {1.0}}, {2.0, 4.0});
    const TuningSet t{testing_support::to_matrix({{0.5}}), testing_support::to_vector({1.0}), {}};
    // Equidistant query: prediction is the plain mean 3, residual 2.
    EXPECT_NEAR(squared_loss(t, agg, 0.1, params(4.0, KernelVariant::SumExp)), 4.0, 1e-14);
}

TEST(Loss, EqualsSumOfPerRowCalls)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto in = random_instance(rng, 8, 3, 8);
        const auto agg = make_agg(in.agg_preds, in.responses);
        for (auto v : {KernelVariant::SumExp, KernelVariant::MaxExp}) {
            const auto sm = params(10.0, v);
            double naive = 0.0;
            for (std::size_t j = 0; j < in.targets.size(); ++j) {
                const double r = smooth_predict(agg, row(in.tune_preds[j]), 0.3, sm) - in.targets[j];
                naive += r * r;
            }
            EXPECT_EQ(squared_loss(tuning_of(in), agg, 0.3, sm), naive);
            const long double ld = oracle::squared_loss(in.agg_preds, in.responses, in.tune_preds, in.targets, 0.3L,
                                                        10.0L, v == KernelVariant::MaxExp);
            EXPECT_NEAR(naive, static_cast<double>(ld), 1e-12 * std::max(1.0, naive));
        }
    }
}

TEST(Gradient, MatchesFiniteDifferences)
{
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> size(1, 8);
    std::uniform_int_distribution<std::size_t> machines(1, 3);
    std::uniform_real_distribution<double> eps_draw(0.0, 0.8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t l = std::max<std::size_t>(2, size(rng));
        const auto in = random_instance(rng, l, machines(rng), size(rng));
        const auto agg = make_agg(in.agg_preds, in.responses);
        const double beta = trial % 2 == 0 ? 1.0 : 10.0;
        const auto v = trial % 4 < 2 ? KernelVariant::SumExp : KernelVariant::MaxExp;
        const double eps = eps_draw(rng);
        const double g = loss_gradient(tuning_of(in), agg, eps, params(beta, v));
        const double fd = oracle::central_difference(
            [&](long double e) {
                return oracle::squared_loss(in.agg_preds, in.responses, in.tune_preds, in.targets, e, beta,
                                            v == KernelVariant::MaxExp);
            },
            eps, 1e-5L);
        EXPECT_NEAR(g, fd, 1e-5 * std::max(1.0, std::abs(g))) << "trial " << trial;
    }
}

TEST(Gradient, FlatKernelHasZeroGradient)
{
    std::mt19937_64 rng(10);
    const auto in = random_instance(rng, 8, 3, 5);
    const auto agg = make_agg(in.agg_preds, in.responses);
    const auto sm = params(1e-9, KernelVariant::SumExp);
    EXPECT_NEAR(loss_gradient(tuning_of(in), agg, 0.5, sm), 0.0, 1e-7);
    EXPECT_NEAR(smooth_predict(agg, row(in.tune_preds[0]), 0.5, sm), agg.responses.mean(), 1e-8);
}

TEST(Gradient, ThreadCountDoesNotChangeResult)
{
    std::mt19937_64 rng(11);
    const auto in = random_instance(rng, 40, 3, 37);
    const auto agg = make_agg(in.agg_preds, in.responses);
    const auto sm = params(10.0, KernelVariant::SumExp);
    const auto a = loss_and_gradient(tuning_of(in), agg, 0.2, sm, 1);
    const auto b = loss_and_gradient(tuning_of(in), agg, 0.2, sm, 4);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.gradient, b.gradient);
}

TEST(LeaveOneOut, ExcludesOwnRow)
{
    const auto agg = make_agg({{0.0}, {0.0}, {5.0}}, {1.0, 3.0, 100.0});
    const TuningSet t = leave_one_out_tuning_set(agg);
    EXPECT_EQ(t.excluded_for(2), 2);
    const auto sm = params(10.0, KernelVariant::SumExp);
    const auto p0 = smooth_predict_with_derivative(agg, t.machine_preds.row(0), 0.1, sm, 0);
    // Row 1 sits at distance 0, row 2 at distance 5: the prediction is ~3.
    EXPECT_NEAR(p0.value, 3.0, 1e-12);
    EXPECT_THROW(leave_one_out_tuning_set(make_agg({{0.0}}, {1.0})), InputError);
}

TEST(Tuner, StartsAtStationaryPoint)
{
    std::mt19937_64 rng(12);
    auto in = random_instance(rng, 6, 2, 4);
    const auto agg = make_agg(in.agg_preds, in.responses);
    const auto sm = params(3.0, KernelVariant::SumExp);
    for (std::size_t j = 0; j < in.targets.size(); ++j) {
        in.targets[j] = smooth_predict(agg, row(in.tune_preds[j]), 0.4, sm);
    }
    GradientDescentConfig cfg;
    cfg.epsilon_init = 0.4;
    const TuneTrace tr = tune_epsilon(tuning_of(in), agg, sm, cfg);
    EXPECT_EQ(tr.reason, Termination::GradTol);
    EXPECT_EQ(tr.records.size(), 1u);
    EXPECT_EQ(tr.epsilon_star, 0.4);
}

TEST(Tuner, FindsDenseGridArgmin)
{
    // One machine predicting x; the truth is smooth in x and the tuning rows
    // are noisy, so neither ε = 0 nor ε = ∞ is optimal.
    oracle::Rows agg_preds, tune_preds;
    std::vector<double> responses, targets;
    std::mt19937_64 rng(13);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (int i = 0; i < 40; ++i) {
        const double x = i / 39.0;
        agg_preds.push_back({x});
        responses.push_back(std::sin(6.0 * x) + noise(rng));
    }
    for (int j = 0; j < 25; ++j) {
        const double x = (j + 0.5) / 25.0;
        tune_preds.push_back({x});
        targets.push_back(std::sin(6.0 * x) + noise(rng));
    }
    const auto agg = make_agg(agg_preds, responses);
    const TuningSet t{testing_support::to_matrix(tune_preds), testing_support::to_vector(targets), {}};
    const auto sm = params(40.0, KernelVariant::SumExp);

    const double step = 5e-4;
    double best_eps = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 2000; ++k) {
        const double e = k * step;
        const double loss = squared_loss(t, agg, e, sm);
        if (loss < best_loss) {
            best_loss = loss;
            best_eps = e;
        }
    }
    ASSERT_GT(best_eps, 10 * step);
    ASSERT_LT(best_eps, 1.0 - 10 * step);

    GradientDescentConfig cfg;
    cfg.epsilon_init = default_epsilon_init(t, agg);
    cfg.max_iters = 2000;
    const TuneTrace tr = tune_epsilon(t, agg, sm, cfg);
    EXPECT_NE(tr.reason, Termination::MaxIters);
    EXPECT_NEAR(tr.epsilon_star, best_eps, step);
    EXPECT_LE(tr.records.back().loss, tr.records.front().loss);
}

TEST(Tuner, LossNeverIncreasesAlongTrace)
{
    std::mt19937_64 rng(14);
    const auto in = random_instance(rng, 30, 3, 20);
    const auto agg = make_agg(in.agg_preds, in.responses);
    GradientDescentConfig cfg;
    cfg.epsilon_init = 0.9;
    cfg.learning_rate = 5.0;
    const TuneTrace tr = tune_epsilon(tuning_of(in), agg, params(10.0, KernelVariant::SumExp), cfg);
    for (std::size_t k = 1; k < tr.records.size(); ++k) {
        EXPECT_LE(tr.records[k].loss, tr.records[k - 1].loss);
        EXPECT_GE(tr.records[k].epsilon, 0.0);
    }
}

TEST(Tuner, DefaultInitIsHalfWidestDeviation)
{
    const auto agg = make_agg({{0.0, 1.0}, {2.0, 1.5}}, {0, 0});
    const TuningSet t{testing_support::to_matrix({{-1.0, 1.2}}), testing_support::to_vector({0.0}), {}};
    EXPECT_DOUBLE_EQ(default_epsilon_init(t, agg), 1.5);
}

TEST(Tuner, TraceCsvHeader)
{
    TuneTrace tr;
    tr.records.push_back({0, 0.5, 2.0, -0.25});
    std::ostringstream out;
    write_trace_csv(tr, out);
    EXPECT_EQ(out.str(), "iteration,epsilon,loss,gradient\n0,0.5,2,-0.25\n");
}
