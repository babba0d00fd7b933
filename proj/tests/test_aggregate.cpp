#include <random>

#include <gtest/gtest.h>

#include "cobra/aggregate.hpp"
#include "support.hpp"

using namespace cobra;
using testing_support::make_agg;
using testing_support::row;

namespace {

AggregationSet example_set() { return make_agg({{1.2, 2.1}, {3.0, 2.0}, {0.9, 1.8}}, {10, 99, 20}); }

void expect_weights(const Vector& got, const std::vector<double>& want)
{
    ASSERT_EQ(got.size(), static_cast<Index>(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_NEAR(got(static_cast<Index>(i)), want[i], 1e-15) << "row " << i;
    }
}

} // namespace

TEST(Discrete, WorkedExample)
{
    const auto agg = example_set();
    expect_weights(discrete_weights(agg, row({1.0, 2.0}), CobraParams::unanimous(0.5)), {0.5, 0.0, 0.5});
    EXPECT_DOUBLE_EQ(predict_discrete(agg, row({1.0, 2.0}), CobraParams::unanimous(0.5)), 15.0);
}

TEST(Discrete, HalfAgreementIncludesPartialMatch)
{
    const auto agg = example_set();
    expect_weights(discrete_weights_alpha(agg, row({1.0, 2.0}), CobraParams::fraction(0.5, 0.5)),
                   {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
}

TEST(Discrete, ExactMatchAtZeroEpsilon)
{
    const auto agg = example_set();
    expect_weights(discrete_weights(agg, row({3.0, 2.0}), CobraParams::unanimous(0.0)), {0.0, 1.0, 0.0});
}

TEST(Discrete, EmptyNeighbourhoodPredictsZero)
{
    const auto agg = example_set();
    const Vector w = discrete_weights(agg, row({50.0, 50.0}), CobraParams::unanimous(0.1));
    EXPECT_EQ(w.sum(), 0.0);
    EXPECT_EQ(predict_discrete(agg, row({50.0, 50.0}), CobraParams::unanimous(0.1)), 0.0);
}

TEST(Discrete, HugeEpsilonAveragesEverything)
{
    const auto agg = example_set();
    EXPECT_DOUBLE_EQ(predict_discrete(agg, row({0.0, 0.0}), CobraParams::unanimous(1e9)), 43.0);
}

TEST(Discrete, AlphaOneEqualsUnanimous)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto preds = oracle::random_rows(rng, 6, 3, 0.0, 1.0);
        const auto agg = make_agg(preds, std::vector<double>(6, 1.0));
        const auto q = oracle::random_rows(rng, 1, 3, 0.0, 1.0).front();
        const double eps = 0.4 * static_cast<double>(trial % 5) / 4.0;
        EXPECT_EQ(discrete_weights_alpha(agg, row(q), CobraParams::fraction(eps, 1.0)),
                  discrete_weights(agg, row(q), CobraParams::unanimous(eps)));
    }
}

TEST(Discrete, SingleMachineIgnoresAlpha)
{
    const auto agg = make_agg({{0.0}, {1.0}, {2.0}}, {1, 2, 3});
    EXPECT_EQ(discrete_weights_alpha(agg, row({0.9}), CobraParams::fraction(0.5, 1.0)),
              discrete_weights(agg, row({0.9}), CobraParams::unanimous(0.5)));
}

TEST(Discrete, AlphaOffGridRejected)
{
    const auto agg = example_set();
    EXPECT_THROW(discrete_weights_alpha(agg, row({1.0, 2.0}), CobraParams::fraction(0.5, 0.3)), InputError);
    EXPECT_THROW(discrete_weights(agg, row({1.0}), CobraParams::unanimous(0.5)), InputError);
}

TEST(Discrete, ExhaustiveOracleAgreement)
{
    // Values on a coarse lattice so that many differences land exactly on ε.
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> lattice(0, 4);
    for (std::size_t l = 1; l <= 6; ++l) {
        for (std::size_t M = 1; M <= 3; ++M) {
            for (int trial = 0; trial < 30; ++trial) {
                oracle::Rows preds(l, std::vector<double>(M));
                for (auto& r : preds) {
                    for (auto& v : r) {
                        v = 0.25 * lattice(rng);
                    }
                }
                std::vector<double> q(M);
                for (auto& v : q) {
                    v = 0.25 * lattice(rng);
                }
                const auto agg = make_agg(preds, std::vector<double>(l, 0.0));
                for (double eps : {0.0, 0.25, 0.5, 1.0}) {
                    const Vector uni = discrete_weights(agg, row(q), CobraParams::unanimous(eps));
                    const auto want_uni = oracle::cobra_weights(preds, q, eps, M);
                    for (std::size_t i = 0; i < l; ++i) {
                        ASSERT_EQ(uni(static_cast<Index>(i)), want_uni[i]);
                    }
                    for (std::size_t k = 1; k <= M; ++k) {
                        const double alpha = static_cast<double>(k) / static_cast<double>(M);
                        const Vector w = discrete_weights_alpha(agg, row(q), CobraParams::fraction(eps, alpha));
                        const auto want = oracle::cobra_weights(preds, q, eps, k);
                        for (std::size_t i = 0; i < l; ++i) {
                            ASSERT_EQ(w(static_cast<Index>(i)), want[i]);
                        }
                    }
                }
            }
        }
    }
}

TEST(Batch, MatchesPerRowCalls)
{
    std::mt19937_64 rng(3);
    const auto agg = make_agg(oracle::random_rows(rng, 40, 3, 0.0, 1.0), std::vector<double>(40, 2.0));
    PredictionMatrix q = testing_support::to_matrix(oracle::random_rows(rng, 102, 3, 0.0, 1.0));
    q.row(7) = q.row(3);
    const auto params = CobraParams::unanimous(0.3);
    const auto out = predict_batch(agg, q, params);
    ASSERT_EQ(out.values.size(), 102);
    for (Index r = 0; r < q.rows(); ++r) {
        EXPECT_EQ(out.values(r), predict_discrete(agg, q.row(r), params));
        EXPECT_EQ(out.empty_neighbourhood[static_cast<std::size_t>(r)], out.values(r) == 0.0);
    }
    EXPECT_EQ(out.values(7), out.values(3));
    EXPECT_EQ(predict_batch(agg, q.topRows(1), params).values.size(), 1);
}

TEST(Batch, SpreadIsWidestColumnRange)
{
    EXPECT_DOUBLE_EQ(max_prediction_spread(example_set()), 2.1);
}

TEST(Json, AggregationSetRoundTrip)
{
    const auto agg = example_set();
    const auto back = aggregation_set_from_json(nlohmann::json::parse(to_json(agg).dump()));
    EXPECT_EQ(back.machine_preds, agg.machine_preds);
    EXPECT_EQ(back.responses, agg.responses);
}
