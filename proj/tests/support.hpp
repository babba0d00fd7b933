// Small builders shared by the test files.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cobra/aggregate.hpp"
#include "cobra/data.hpp"
#include "oracles.hpp"

#ifndef COBRA_DATA_DIR
#define COBRA_DATA_DIR "data"
#endif

namespace testing_support {

inline std::string data_file(const std::string& name)
{
    return (std::filesystem::path(COBRA_DATA_DIR) / name).string();
}

inline cobra::Matrix to_matrix(const oracle::Rows& rows)
{
    cobra::Matrix m(static_cast<cobra::Index>(rows.size()), static_cast<cobra::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<cobra::Index>(r), static_cast<cobra::Index>(c)) = rows[r][c];
        }
    }
    return m;
}

inline cobra::Vector to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const cobra::Vector>(v.data(), static_cast<cobra::Index>(v.size()));
}

inline cobra::Dataset make_dataset(const oracle::Rows& x, const std::vector<double>& y)
{
    cobra::Dataset ds;
    ds.features = to_matrix(x);
    ds.targets = to_vector(y);
    for (std::size_t c = 0; c < x.front().size(); ++c) {
        ds.feature_names.push_back("x" + std::to_string(c));
    }
    ds.target_name = "y";
    return ds;
}

inline cobra::AggregationSet make_agg(const oracle::Rows& preds, const std::vector<double>& y)
{
    cobra::AggregationSet agg;
    agg.machine_preds = to_matrix(preds);
    agg.responses = to_vector(y);
    return agg;
}

inline Eigen::RowVectorXd row(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<cobra::Index>(v.size()));
}

} // namespace testing_support
