#ifndef COBRA_SEARCH_HPP
#define COBRA_SEARCH_HPP

// Baseline epsilon selection by k-fold cross-validation: exhaustive grid
// search and randomized search. Every cv_score call refits the weak
// learners on each fold, as a cross-validated search over an estimator
// whose parameters include epsilon would.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cobra/aggregate.hpp"
#include "cobra/core.hpp"
#include "cobra/data.hpp"
#include "cobra/learners.hpp"
#include "cobra/metrics.hpp"
#include "cobra/parallel.hpp"
#include "cobra/random.hpp"

namespace cobra {

struct FoldPlan {
    std::size_t n = 0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> assignment; // fold index per row

    std::vector<std::size_t> fold_sizes() const
    {
        std::vector<std::size_t> sizes(k, 0);
        for (auto f : assignment) {
            ++sizes[f];
        }
        return sizes;
    }
};

/// Shuffled balanced assignment: the row at shuffled position p goes to
/// fold p mod k.
inline FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed)
{
    require(k >= 2 && k <= n, "make_folds: need 2 <= k <= n (k = " + std::to_string(k) + ", n = "
                                  + std::to_string(n) + ")");
    FoldPlan plan{n, k, seed, std::vector<std::size_t>(n)};
    const auto order = shuffled_indices(n, seed);
    for (std::size_t p = 0; p < n; ++p) {
        plan.assignment[order[p]] = p % k;
    }
    return plan;
}

/// Everything cv_score needs besides the COBRA parameters.
struct CvSetup {
    std::vector<LearnerSpec> learners = default_learner_specs();
    double machine_fraction = 0.5;
    std::uint64_t split_seed = 0; // fold f splits with splitmix64(split_seed + f)
    bool standardize = true;
};

/// One fold's data. Row vectors index into the dataset given to fold_data.
struct FoldData {
    Dataset d_k;
    Dataset d_l;
    Dataset held_out;
    std::vector<std::size_t> d_k_rows;
    std::vector<std::size_t> d_l_rows;
    std::vector<std::size_t> held_out_rows;
};

inline FoldData fold_data(const Dataset& train, const FoldPlan& folds, std::size_t fold, const CvSetup& setup)
{
    require(folds.n == static_cast<std::size_t>(train.rows()), "fold plan built for a different row count");
    require(fold < folds.k, "fold index out of range");
    std::vector<std::size_t> in_rows;
    FoldData fd;
    for (std::size_t r = 0; r < folds.n; ++r) {
        (folds.assignment[r] == fold ? fd.held_out_rows : in_rows).push_back(r);
    }
    const Dataset in_fold = train.select_rows(in_rows);
    Partition p = split_for_cobra(in_fold, setup.machine_fraction, splitmix64(setup.split_seed + fold));
    for (auto r : p.first_rows) {
        fd.d_k_rows.push_back(in_rows[r]);
    }
    for (auto r : p.second_rows) {
        fd.d_l_rows.push_back(in_rows[r]);
    }
    fd.d_k = std::move(p.first);
    fd.d_l = std::move(p.second);
    fd.held_out = train.select_rows(fd.held_out_rows);
    return fd;
}

/// Mean over folds of the discrete-COBRA test MSE on the held-out fold.
inline double cv_score(const Dataset& train, const CvSetup& setup, const CobraParams& params, const FoldPlan& folds)
{
    double total = 0.0;
    for (std::size_t f = 0; f < folds.k; ++f) {
        const FoldData fd = fold_data(train, folds, f, setup);
        const Machines machines = fit_machines(fd.d_k, setup.learners, setup.standardize);
        const AggregationSet agg = make_aggregation_set(machines, fd.d_l);
        const BatchPrediction pred = predict_batch(agg, machines.predict(fd.held_out.features), params);
        total += mse(fd.held_out.targets, pred.values);
    }
    return total / static_cast<double>(folds.k);
}

struct SearchSpace {
    std::vector<double> epsilon_grid; // grid search
    double lo = 0.0;                  // randomized search range
    double hi = 0.0;
    std::size_t draws = 0;
    std::uint64_t seed = 0;
    std::vector<double> alphas; // empty: unanimous rule only

    static SearchSpace grid(std::vector<double> eps, std::vector<double> alphas = {})
    {
        SearchSpace s;
        std::sort(eps.begin(), eps.end());
        s.epsilon_grid = std::move(eps);
        s.alphas = std::move(alphas);
        return s;
    }

    static SearchSpace random(double lo, double hi, std::size_t draws, std::uint64_t seed,
                              std::vector<double> alphas = {})
    {
        SearchSpace s;
        s.lo = lo;
        s.hi = hi;
        s.draws = draws;
        s.seed = seed;
        s.alphas = std::move(alphas);
        return s;
    }
};

/// `count` values evenly spaced over [lo, hi], endpoints included.
inline std::vector<double> linspace(double lo, double hi, std::size_t count)
{
    std::vector<double> out;
    out.reserve(count);
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(i + 1 == count ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return out;
}

/// {1/M, 2/M, ..., 1}
inline std::vector<double> alpha_grid(std::size_t machines)
{
    std::vector<double> out;
    for (std::size_t k = 1; k <= machines; ++k) {
        out.push_back(static_cast<double>(k) / static_cast<double>(machines));
    }
    return out;
}

struct Candidate {
    double epsilon = 0.0;
    std::optional<double> alpha;
    double cv_mse = 0.0;
};

struct SearchResult {
    double best_epsilon = 0.0;
    std::optional<double> best_alpha;
    double cv_mse = 0.0;
    std::vector<Candidate> table;
    double wall_time = 0.0;
};

namespace detail {

inline bool better(const Candidate& a, const Candidate& b)
{
    if (a.cv_mse != b.cv_mse) {
        return a.cv_mse < b.cv_mse;
    }
    if (a.epsilon != b.epsilon) {
        return a.epsilon < b.epsilon;
    }
    return a.alpha.value_or(1.0) < b.alpha.value_or(1.0);
}

inline SearchResult evaluate_candidates(const Dataset& train, const CvSetup& setup, std::vector<Candidate> table,
                                        const FoldPlan& folds, std::size_t threads)
{
    require(!table.empty(), "search space has no candidates");
    parallel_for(table.size(), threads, [&](std::size_t c) {
        table[c].cv_mse = cv_score(train, setup, CobraParams{table[c].epsilon, table[c].alpha}, folds);
    });
    SearchResult res;
    const Candidate* best = &table.front();
    for (const auto& c : table) {
        if (better(c, *best)) {
            best = &c;
        }
    }
    res.best_epsilon = best->epsilon;
    res.best_alpha = best->alpha;
    res.cv_mse = best->cv_mse;
    res.table = std::move(table);
    return res;
}

} // namespace detail

inline SearchResult grid_search(const Dataset& train, const CvSetup& setup, const SearchSpace& space,
                                const FoldPlan& folds, std::size_t threads = 1)
{
    require(!space.epsilon_grid.empty(), "grid_search: empty epsilon grid");
    auto run = [&] {
        std::vector<Candidate> table;
        for (double eps : space.epsilon_grid) {
            require(eps >= 0.0, "grid_search: epsilon candidates must be >= 0");
            if (space.alphas.empty()) {
                table.push_back({eps, std::nullopt, 0.0});
            }
            for (double a : space.alphas) {
                table.push_back({eps, a, 0.0});
            }
        }
        return detail::evaluate_candidates(train, setup, std::move(table), folds, threads);
    };
    auto t = timed(run);
    t.value.wall_time = t.seconds;
    return std::move(t.value);
}

inline SearchResult randomized_search(const Dataset& train, const CvSetup& setup, const SearchSpace& space,
                                      const FoldPlan& folds, std::size_t threads = 1)
{
    require(space.draws >= 1, "randomized_search: need at least one draw");
    require(space.lo >= 0.0 && space.lo <= space.hi, "randomized_search: need 0 <= lo <= hi");
    auto run = [&] {
        Rng rng(space.seed);
        std::vector<Candidate> table;
        for (std::size_t d = 0; d < space.draws; ++d) {
            Candidate c;
            c.epsilon = rng.uniform(space.lo, space.hi);
            if (!space.alphas.empty()) {
                c.alpha = space.alphas[static_cast<std::size_t>(rng.below(space.alphas.size()))];
            }
            table.push_back(c);
        }
        return detail::evaluate_candidates(train, setup, std::move(table), folds, threads);
    };
    auto t = timed(run);
    t.value.wall_time = t.seconds;
    return std::move(t.value);
}

/// epsilon,alpha,cv_mse (alpha blank for the unanimous rule)
inline void write_search_table_csv(const SearchResult& res, std::ostream& out)
{
    out << "epsilon,alpha,cv_mse\n";
    for (const auto& c : res.table) {
        out << format_real(c.epsilon) << ',' << (c.alpha ? format_real(*c.alpha) : std::string()) << ','
            << format_real(c.cv_mse) << '\n';
    }
}

} // namespace cobra

#endif // COBRA_SEARCH_HPP
