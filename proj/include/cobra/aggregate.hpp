#ifndef COBRA_AGGREGATE_HPP
#define COBRA_AGGREGATE_HPP

// Discrete COBRA: a query is predicted by averaging the responses of the
// aggregation rows whose machine predictions lie within epsilon of the
// query's machine predictions, either for every machine (unanimous) or for
// at least a fraction alpha of them. An empty neighbourhood predicts 0.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cobra/core.hpp"
#include "cobra/learners.hpp"

namespace cobra {

/// l × M machine predictions on the aggregation rows plus their responses.
struct AggregationSet {
    Matrix machine_preds;
    Vector responses;

    Index size() const { return machine_preds.rows(); }
    Index machines() const { return machine_preds.cols(); }

    void validate() const
    {
        require(machine_preds.rows() >= 1 && machine_preds.cols() >= 1, "aggregation set is empty");
        require(responses.size() == machine_preds.rows(), "aggregation set: responses/predictions length mismatch");
        require(machine_preds.allFinite() && responses.allFinite(), "aggregation set has non-finite entries");
    }
};

inline AggregationSet make_aggregation_set(const Machines& machines, const Dataset& d_l)
{
    AggregationSet agg{machines.predict(d_l.features), d_l.targets};
    agg.validate();
    return agg;
}

struct CobraParams {
    double epsilon = 0.0;
    std::optional<double> alpha; // unset means unanimous

    static CobraParams unanimous(double eps) { return {eps, std::nullopt}; }
    static CobraParams fraction(double eps, double alpha) { return {eps, alpha}; }
};

/// Number of agreeing machines needed out of `machines`. Alpha must be on
/// the grid {1/M, 2/M, ..., 1}.
inline Index required_agreement(const CobraParams& params, Index machines)
{
    if (!params.alpha) {
        return machines;
    }
    const double scaled = *params.alpha * static_cast<double>(machines);
    const double k = std::round(scaled);
    require(std::abs(scaled - k) < 1e-9 && k >= 1.0 && k <= static_cast<double>(machines),
            "alpha must be one of {1/M, ..., 1} for M = " + std::to_string(machines));
    return static_cast<Index>(k);
}

namespace detail {

inline Vector normalize_indicator(Vector w)
{
    const double count = w.sum();
    if (count > 0.0) {
        w /= count;
    }
    return w;
}

inline Vector accepted_rows(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                            double epsilon, Index needed)
{
    require(query.size() == agg.machines(), "query has " + std::to_string(query.size())
                                                + " machine predictions, aggregation set has "
                                                + std::to_string(agg.machines()));
    Vector hit(agg.size());
    for (Index i = 0; i < agg.size(); ++i) {
        Index agree = 0;
        for (Index m = 0; m < agg.machines(); ++m) {
            if (std::abs(query(m) - agg.machine_preds(i, m)) <= epsilon) {
                ++agree;
            }
        }
        hit(i) = agree >= needed ? 1.0 : 0.0;
    }
    return hit;
}

} // namespace detail

/// Unanimous rule; the alpha field of `params` is ignored.
inline Vector discrete_weights(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                               const CobraParams& params)
{
    return detail::normalize_indicator(detail::accepted_rows(agg, query, params.epsilon, agg.machines()));
}

/// At least M·alpha machines must agree (weak inequality).
inline Vector discrete_weights_alpha(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                                     const CobraParams& params)
{
    const Index needed = required_agreement(params, agg.machines());
    return detail::normalize_indicator(detail::accepted_rows(agg, query, params.epsilon, needed));
}

inline Vector weights_for(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                          const CobraParams& params)
{
    return params.alpha ? discrete_weights_alpha(agg, query, params) : discrete_weights(agg, query, params);
}

inline double predict_discrete(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                               const CobraParams& params)
{
    return weights_for(agg, query, params).dot(agg.responses);
}

struct BatchPrediction {
    Vector values;
    std::vector<bool> empty_neighbourhood;

    std::size_t empty_count() const
    {
        std::size_t n = 0;
        for (bool e : empty_neighbourhood) {
            n += e ? 1 : 0;
        }
        return n;
    }
};

inline BatchPrediction predict_batch(const AggregationSet& agg, const PredictionMatrix& queries,
                                     const CobraParams& params)
{
    BatchPrediction out;
    out.values.resize(queries.rows());
    out.empty_neighbourhood.resize(static_cast<std::size_t>(queries.rows()));
    for (Index r = 0; r < queries.rows(); ++r) {
        const Vector w = weights_for(agg, queries.row(r), params);
        out.values(r) = w.dot(agg.responses);
        out.empty_neighbourhood[static_cast<std::size_t>(r)] = !(w.sum() > 0.0);
    }
    return out;
}

/// Largest |r_m(x) − r_m(X_i)| achievable between two aggregation rows.
inline double max_prediction_spread(const AggregationSet& agg)
{
    double spread = 0.0;
    for (Index m = 0; m < agg.machines(); ++m) {
        spread = std::max(spread, agg.machine_preds.col(m).maxCoeff() - agg.machine_preds.col(m).minCoeff());
    }
    return spread;
}

// AggregationSet JSON: {"machine_preds": [[...], ...], "responses": [...]}
inline nlohmann::json to_json(const AggregationSet& agg)
{
    auto rows = nlohmann::json::array();
    for (Index i = 0; i < agg.size(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(agg.machines()));
        for (Index m = 0; m < agg.machines(); ++m) {
            row[static_cast<std::size_t>(m)] = agg.machine_preds(i, m);
        }
        rows.push_back(std::move(row));
    }
    return {{"machine_preds", std::move(rows)},
            {"responses", std::vector<double>(agg.responses.data(), agg.responses.data() + agg.responses.size())}};
}

inline AggregationSet aggregation_set_from_json(const nlohmann::json& j)
{
    const auto rows = j.at("machine_preds").get<std::vector<std::vector<double>>>();
    const auto resp = j.at("responses").get<std::vector<double>>();
    require(!rows.empty() && rows.size() == resp.size(), "aggregation set JSON: inconsistent lengths");
    AggregationSet agg;
    agg.machine_preds.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == rows.front().size(), "aggregation set JSON: ragged machine_preds");
        for (std::size_t m = 0; m < rows[i].size(); ++m) {
            agg.machine_preds(static_cast<Index>(i), static_cast<Index>(m)) = rows[i][m];
        }
    }
    agg.responses = Eigen::Map<const Vector>(resp.data(), static_cast<Index>(resp.size()));
    agg.validate();
    return agg;
}

} // namespace cobra

#endif // COBRA_AGGREGATE_HPP
