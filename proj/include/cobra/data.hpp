#ifndef COBRA_DATA_HPP
#define COBRA_DATA_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "cobra/core.hpp"
#include "cobra/random.hpp"

namespace cobra {

/// Feature matrix plus target vector, with column names kept for output.
struct Dataset {
    Matrix features;
    Vector targets;
    std::vector<std::string> feature_names;
    std::string target_name;

    Index rows() const { return features.rows(); }
    Index cols() const { return features.cols(); }

    Dataset select_rows(std::span<const std::size_t> rows) const
    {
        Dataset out;
        out.features.resize(static_cast<Index>(rows.size()), features.cols());
        out.targets.resize(static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto src = static_cast<Index>(rows[r]);
            out.features.row(static_cast<Index>(r)) = features.row(src);
            out.targets(static_cast<Index>(r)) = targets(src);
        }
        out.feature_names = feature_names;
        out.target_name = target_name;
        return out;
    }

    bool operator==(const Dataset& other) const
    {
        return features.rows() == other.features.rows() && features.cols() == other.features.cols()
            && features == other.features && targets == other.targets
            && feature_names == other.feature_names && target_name == other.target_name;
    }
};

// Shortest decimal text that parses back to exactly the same double.
inline std::string format_real(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

inline bool parse_real(std::string_view text, double& out)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    if (text.empty()) {
        return false;
    }
    const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc() && res.ptr == text.data() + text.size() && std::isfinite(out);
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        if (!field.empty() && field.back() == '\r') {
            field.pop_back();
        }
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

inline std::string unquote(std::string s)
{
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) {
        s.pop_back();
    }
    while (!s.empty() && s.front() == ' ') {
        s.erase(s.begin());
    }
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

} // namespace detail

/// Parses a header-first numeric CSV. `source` only labels error messages.
/// Rows are reported 1-based counting the header as row 1.
inline Dataset parse_csv(std::istream& in, const std::string& target_column,
                         const std::string& source = "<stream>")
{
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError(source + ": missing header row");
    }
    std::vector<std::string> header = detail::split_fields(line);
    for (auto& h : header) {
        h = detail::unquote(h);
    }
    const auto target_it = std::find(header.begin(), header.end(), target_column);
    if (target_it == header.end()) {
        throw InputError(source + ": target column '" + target_column + "' not found in header");
    }
    require(header.size() >= 2, source + ": need at least one feature column besides the target");
    const auto target_idx = static_cast<std::size_t>(target_it - header.begin());

    std::vector<double> cells;
    std::size_t n_rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto fields = detail::split_fields(line);
        if (fields.size() != header.size()) {
            throw InputError(source + ": row " + std::to_string(line_no) + " has "
                             + std::to_string(fields.size()) + " fields, expected "
                             + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            double v = 0.0;
            if (!parse_real(fields[c], v)) {
                throw InputError(source + ": row " + std::to_string(line_no) + ", column '"
                                 + header[c] + "': cannot parse '" + fields[c]
                                 + "' as a finite real");
            }
            cells.push_back(v);
        }
        ++n_rows;
    }
    require(n_rows >= 1, source + ": no data rows");

    const std::size_t width = header.size();
    Dataset ds;
    ds.target_name = target_column;
    for (std::size_t c = 0; c < width; ++c) {
        if (c != target_idx) {
            ds.feature_names.push_back(header[c]);
        }
    }
    ds.features.resize(static_cast<Index>(n_rows), static_cast<Index>(width - 1));
    ds.targets.resize(static_cast<Index>(n_rows));
    for (std::size_t r = 0; r < n_rows; ++r) {
        Index f = 0;
        for (std::size_t c = 0; c < width; ++c) {
            const double v = cells[r * width + c];
            if (c == target_idx) {
                ds.targets(static_cast<Index>(r)) = v;
            } else {
                ds.features(static_cast<Index>(r), f++) = v;
            }
        }
    }
    return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& target_column)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open dataset file '" + path + "'");
    }
    return parse_csv(in, target_column, path);
}

/// Features first, target last; values use format_real so parsing is exact.
inline void write_csv(const Dataset& ds, std::ostream& out)
{
    for (const auto& name : ds.feature_names) {
        out << name << ',';
    }
    out << ds.target_name << '\n';
    for (Index r = 0; r < ds.rows(); ++r) {
        for (Index c = 0; c < ds.cols(); ++c) {
            out << format_real(ds.features(r, c)) << ',';
        }
        out << format_real(ds.targets(r)) << '\n';
    }
}

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

/// A row partition. `first_rows` / `second_rows` index into the input dataset.
struct Partition {
    Dataset first;
    Dataset second;
    std::vector<std::size_t> first_rows;
    std::vector<std::size_t> second_rows;
};

/// Shuffles row indices under `seed` and puts floor(fraction * n) rows on
/// the first side. Throws if either side would be empty.
inline Partition partition_rows(const Dataset& ds, double first_fraction, std::uint64_t seed,
                                const std::string& what)
{
    require(first_fraction > 0.0 && first_fraction <= 1.0,
            what + ": fraction must lie in (0, 1], got " + format_real(first_fraction));
    const auto n = static_cast<std::size_t>(ds.rows());
    const auto n_first = static_cast<std::size_t>(std::floor(first_fraction * static_cast<double>(n) + 1e-9));
    require(n_first >= 1 && n_first < n,
            what + ": split of " + std::to_string(n) + " rows at fraction " + format_real(first_fraction)
                + " leaves an empty side");

    const auto order = shuffled_indices(n, seed);
    Partition p;
    p.first_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_first));
    p.second_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_first), order.end());
    p.first = ds.select_rows(p.first_rows);
    p.second = ds.select_rows(p.second_rows);
    return p;
}

/// first = train, second = test.
inline Partition train_test_split(const Dataset& ds, const SplitSpec& spec)
{
    return partition_rows(ds, spec.train_fraction, spec.seed, "train/test split");
}

/// first = machine-training part D_k, second = aggregation part D_l.
inline Partition split_for_cobra(const Dataset& train, double machine_fraction, std::uint64_t seed)
{
    return partition_rows(train, machine_fraction, seed, "machine/aggregation split");
}

inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed)
{
    const auto total = static_cast<std::size_t>(ds.rows());
    require(n >= 1 && n <= total,
            "subsample size " + std::to_string(n) + " outside [1, " + std::to_string(total) + "]");
    auto order = shuffled_indices(total, seed);
    order.resize(n);
    return ds.select_rows(order);
}

struct Standardization {
    Vector means;
    Vector stds;
};

/// Population standard deviation; constant columns get std 1 so they map to 0.
inline Standardization standardize_fit(const Matrix& x)
{
    require(x.rows() >= 1, "standardize_fit: empty matrix");
    Standardization s;
    s.means = x.colwise().mean().transpose();
    s.stds.resize(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        if (x.col(c).minCoeff() == x.col(c).maxCoeff()) {
            s.means(c) = x(0, c);
            s.stds(c) = 1.0;
            continue;
        }
        const double var = (x.col(c).array() - s.means(c)).square().mean();
        const double sd = std::sqrt(var);
        s.stds(c) = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;
    }
    return s;
}

inline Standardization standardize_fit(const Dataset& ds) { return standardize_fit(ds.features); }

inline Matrix standardize_apply(const Matrix& x, const Standardization& s)
{
    require(x.cols() == s.means.size(), "standardize_apply: column count mismatch");
    return ((x.rowwise() - s.means.transpose()).array().rowwise() / s.stds.transpose().array()).matrix();
}

inline Dataset standardize_apply(const Dataset& ds, const Standardization& s)
{
    Dataset out = ds;
    out.features = standardize_apply(ds.features, s);
    return out;
}

inline Matrix standardize_invert(const Matrix& z, const Standardization& s)
{
    require(z.cols() == s.means.size(), "standardize_invert: column count mismatch");
    return ((z.array().rowwise() * s.stds.transpose().array()).matrix().rowwise() + s.means.transpose());
}

} // namespace cobra

#endif // COBRA_DATA_HPP
