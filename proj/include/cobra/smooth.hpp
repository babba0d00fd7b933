#ifndef COBRA_SMOOTH_HPP
#define COBRA_SMOOTH_HPP

// Smooth surrogate for the COBRA indicator weight and gradient-descent
// tuning of the threshold epsilon.
//
// For a query x and aggregation row i let d_m = |r_m(x) − r_m(X_i)|. The
// indicator 1{max_m d_m < ε} is replaced by
//
//   SumExp:  φ = e^{βε} / (e^{βε} + Σ_m e^{β d_m})
//   MaxExp:  φ = e^{βε} / (e^{βε} + e^{β max_m d_m})
//
// and the prediction is the self-normalised mean with w_i = φ_i / e^{βε}:
//
//   p(ε) = Σ_i w_i Y_i / Σ_i w_i,   w_i' = −β e^{βε} w_i².
//
// Overflow policy: every exponent sum is evaluated as
// a_max + log Σ exp(a − a_max), weights are handled as log w_i and
// exponentiated only after subtracting max_i log w_i. The derivative uses
// the same shifted weights v_i = w_i / c with c = max_i w_i; the factor
// e^{βε}·c = max_i φ_i stays in (0, 1].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cobra/aggregate.hpp"
#include "cobra/core.hpp"
#include "cobra/data.hpp"
#include "cobra/parallel.hpp"

namespace cobra {

enum class KernelVariant { SumExp, MaxExp };

inline const char* to_string(KernelVariant v) { return v == KernelVariant::SumExp ? "sumexp" : "maxexp"; }

inline KernelVariant kernel_variant_from_string(const std::string& s)
{
    if (s == "sumexp") return KernelVariant::SumExp;
    if (s == "maxexp") return KernelVariant::MaxExp;
    throw InputError("unknown kernel variant '" + s + "' (expected sumexp or maxexp)");
}

struct SmoothingParams {
    double beta = 50.0;
    KernelVariant variant = KernelVariant::SumExp;

    void validate() const { require(beta > 0.0 && std::isfinite(beta), "beta must be finite and > 0"); }
};

namespace detail {

// log(e^{a} + Σ_k e^{b_k}) without overflow.
inline double log_sum_exp(double a, std::span<const double> b)
{
    double top = a;
    for (double v : b) {
        top = std::max(top, v);
    }
    double s = std::exp(a - top);
    for (double v : b) {
        s += std::exp(v - top);
    }
    return top + std::log(s);
}

inline double log_add_exp(double a, double b)
{
    const double top = std::max(a, b);
    return top + std::log(std::exp(a - top) + std::exp(b - top));
}

// ε-independent part of a kernel weight for one query/aggregation-row
// pair: log Σ_m e^{β d_m} (SumExp) or β max_m d_m (MaxExp). The weight is
// then w = 1 / (e^{βε} + e^{mass}).
inline double log_mass(const double* query, const AggregationSet& agg, Index row, const SmoothingParams& sm,
                       double* scratch)
{
    const Index M = agg.machines();
    if (sm.variant == KernelVariant::MaxExp) {
        double worst = 0.0;
        for (Index m = 0; m < M; ++m) {
            worst = std::max(worst, std::abs(query[m] - agg.machine_preds(row, m)));
        }
        return sm.beta * worst;
    }
    double top = -std::numeric_limits<double>::infinity();
    for (Index m = 0; m < M; ++m) {
        scratch[m] = sm.beta * std::abs(query[m] - agg.machine_preds(row, m));
        top = std::max(top, scratch[m]);
    }
    double s = 0.0;
    for (Index m = 0; m < M; ++m) {
        s += std::exp(scratch[m] - top);
    }
    return top + std::log(s);
}

} // namespace detail

/// φ_β(d_1..d_M; ε) in (0, 1).
inline double phi_beta(std::span<const double> diffs, double epsilon, double beta, KernelVariant variant)
{
    const double be = beta * epsilon;
    if (variant == KernelVariant::MaxExp) {
        double worst = -std::numeric_limits<double>::infinity();
        for (double d : diffs) {
            worst = std::max(worst, d);
        }
        const double t = be - beta * worst;
        return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    }
    std::vector<double> scaled(diffs.size());
    for (std::size_t k = 0; k < diffs.size(); ++k) {
        scaled[k] = beta * diffs[k];
    }
    return std::exp(be - detail::log_sum_exp(be, scaled));
}

inline double phi_beta(const Vector& diffs, double epsilon, double beta, KernelVariant variant)
{
    return phi_beta(std::span<const double>(diffs.data(), static_cast<std::size_t>(diffs.size())), epsilon, beta,
                    variant);
}

/// W_i^β for every aggregation row: φ_β of the per-machine absolute
/// differences to `query`. Not normalised.
inline Vector smooth_weights(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                             double epsilon, const SmoothingParams& smoothing)
{
    require(query.size() == agg.machines(), "smooth_weights: query length differs from machine count");
    Vector out(agg.size());
    Vector diffs(agg.machines());
    for (Index i = 0; i < agg.size(); ++i) {
        for (Index m = 0; m < agg.machines(); ++m) {
            diffs(m) = std::abs(query(m) - agg.machine_preds(i, m));
        }
        out(i) = phi_beta(diffs, epsilon, smoothing.beta, smoothing.variant);
    }
    return out;
}

/// Smoothed prediction and its derivative in epsilon for one query.
struct SmoothPoint {
    double value = 0.0;
    double derivative = 0.0;
};

namespace detail {

// `mass[i]` as returned by log_mass; row `exclude` is skipped. `buf` needs
// room for `l` values.
inline SmoothPoint smooth_point(const double* mass, Index l, const Vector& responses, double beta, double epsilon,
                                Index exclude, double* buf)
{
    const double be = beta * epsilon;
    double top = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < l; ++i) {
        if (i == exclude) {
            continue;
        }
        buf[i] = -log_add_exp(be, mass[i]);
        top = std::max(top, buf[i]);
    }

    // v_i = w_i / max w; A = Σ v, p = Σ v Y / A.
    double a_sum = 0.0;
    double vy_sum = 0.0;
    for (Index i = 0; i < l; ++i) {
        if (i == exclude) {
            continue;
        }
        const double v = std::exp(buf[i] - top);
        buf[i] = v;
        a_sum += v;
        vy_sum += v * responses(i);
    }
    const double p = vy_sum / a_sum;

    // p' = −β e^{βε} ((Σ w²Y)A − (Σ wY)D) / A²  with D = Σ w², rewritten on
    // the shifted weights as −β (e^{βε} c) Σ v²(Y − p) / A.
    double centred = 0.0;
    for (Index i = 0; i < l; ++i) {
        if (i == exclude) {
            continue;
        }
        centred += buf[i] * buf[i] * (responses(i) - p);
    }
    const double phi_top = std::exp(be + top);
    return {p, -beta * phi_top * centred / a_sum};
}

} // namespace detail

/// `exclude` names one aggregation row to leave out (leave-one-out tuning
/// when the tuning rows are the aggregation rows); pass -1 for none.
inline SmoothPoint smooth_predict_with_derivative(const AggregationSet& agg,
                                                  const Eigen::Ref<const Eigen::RowVectorXd>& query,
                                                  double epsilon, const SmoothingParams& smoothing,
                                                  Index exclude = -1)
{
    require(query.size() == agg.machines(), "smooth_predict: query length differs from machine count");
    const Index l = agg.size();
    require(l >= 1 && !(l == 1 && exclude == 0), "smooth_predict: no aggregation rows left");

    const Eigen::RowVectorXd q = query;
    std::vector<double> scratch(static_cast<std::size_t>(agg.machines()));
    std::vector<double> mass(static_cast<std::size_t>(l));
    std::vector<double> buf(static_cast<std::size_t>(l));
    for (Index i = 0; i < l; ++i) {
        mass[static_cast<std::size_t>(i)] = detail::log_mass(q.data(), agg, i, smoothing, scratch.data());
    }
    return detail::smooth_point(mass.data(), l, agg.responses, smoothing.beta, epsilon, exclude, buf.data());
}

inline double smooth_predict(const AggregationSet& agg, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                             double epsilon, const SmoothingParams& smoothing)
{
    return smooth_predict_with_derivative(agg, query, epsilon, smoothing).value;
}

/// Rows (X̃_j, Ỹ_j) on which SL(ε) is measured, given through their machine
/// predictions. `exclude[j]`, when non-empty, is the aggregation row to drop
/// for tuning row j (-1 keeps all rows).
struct TuningSet {
    Matrix machine_preds;
    Vector targets;
    std::vector<Index> exclude;

    Index size() const { return machine_preds.rows(); }

    Index excluded_for(Index j) const { return exclude.empty() ? -1 : exclude[static_cast<std::size_t>(j)]; }

    void validate(const AggregationSet& agg) const
    {
        require(machine_preds.rows() >= 1, "tuning set is empty");
        require(targets.size() == machine_preds.rows(), "tuning set: targets/predictions length mismatch");
        require(machine_preds.cols() == agg.machines(), "tuning set: machine count differs from aggregation set");
        require(exclude.empty() || exclude.size() == static_cast<std::size_t>(machine_preds.rows()),
                "tuning set: exclude list length mismatch");
        require(machine_preds.allFinite() && targets.allFinite(), "tuning set has non-finite entries");
    }
};

inline TuningSet make_tuning_set(const Machines& machines, const Dataset& rows)
{
    return {machines.predict(rows.features), rows.targets, {}};
}

/// The aggregation rows used as their own tuning rows, each one leaving
/// itself out of its own prediction.
inline TuningSet leave_one_out_tuning_set(const AggregationSet& agg)
{
    require(agg.size() >= 2, "leave-one-out tuning needs at least two aggregation rows");
    TuningSet t{agg.machine_preds, agg.responses, std::vector<Index>(static_cast<std::size_t>(agg.size()))};
    for (Index j = 0; j < agg.size(); ++j) {
        t.exclude[static_cast<std::size_t>(j)] = j;
    }
    return t;
}

struct LossAndGradient {
    double loss = 0.0;
    double gradient = 0.0;
};

/// log_mass for every (tuning row, aggregation row) pair. These terms do not
/// depend on epsilon, so one table serves every step of the tuner.
struct KernelTable {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mass;
    double beta = 0.0;
};

inline KernelTable make_kernel_table(const TuningSet& tuning, const AggregationSet& agg,
                                     const SmoothingParams& smoothing, std::size_t threads = 1)
{
    tuning.validate(agg);
    smoothing.validate();
    KernelTable table;
    table.beta = smoothing.beta;
    table.mass.resize(tuning.size(), agg.size());
    parallel_for(static_cast<std::size_t>(tuning.size()), threads, [&](std::size_t j) {
        const auto jj = static_cast<Index>(j);
        const Eigen::RowVectorXd q = tuning.machine_preds.row(jj);
        std::vector<double> scratch(static_cast<std::size_t>(agg.machines()));
        for (Index i = 0; i < agg.size(); ++i) {
            table.mass(jj, i) = detail::log_mass(q.data(), agg, i, smoothing, scratch.data());
        }
    });
    return table;
}

/// SL(ε) = Σ_j (p_j − Ỹ_j)² and dSL/dε = Σ_j 2 (p_j − Ỹ_j) p_j'. Per-row
/// terms may be computed on several threads; the reduction runs in row order.
inline LossAndGradient loss_and_gradient(const KernelTable& table, const TuningSet& tuning,
                                         const AggregationSet& agg, double epsilon, std::size_t threads = 1)
{
    const auto n = static_cast<std::size_t>(tuning.size());
    require(table.mass.rows() == tuning.size() && table.mass.cols() == agg.size(),
            "kernel table does not match the tuning/aggregation sets");
    std::vector<SmoothPoint> rows(n);
    parallel_for(n, threads, [&](std::size_t j) {
        const auto jj = static_cast<Index>(j);
        std::vector<double> buf(static_cast<std::size_t>(agg.size()));
        rows[j] = detail::smooth_point(table.mass.row(jj).data(), agg.size(), agg.responses, table.beta, epsilon,
                                       tuning.excluded_for(jj), buf.data());
    });
    LossAndGradient out;
    for (std::size_t j = 0; j < n; ++j) {
        const double r = rows[j].value - tuning.targets(static_cast<Index>(j));
        out.loss += r * r;
        out.gradient += 2.0 * r * rows[j].derivative;
    }
    return out;
}

inline LossAndGradient loss_and_gradient(const TuningSet& tuning, const AggregationSet& agg, double epsilon,
                                         const SmoothingParams& smoothing, std::size_t threads = 1)
{
    return loss_and_gradient(make_kernel_table(tuning, agg, smoothing, threads), tuning, agg, epsilon, threads);
}

inline double squared_loss(const TuningSet& tuning, const AggregationSet& agg, double epsilon,
                           const SmoothingParams& smoothing, std::size_t threads = 1)
{
    return loss_and_gradient(tuning, agg, epsilon, smoothing, threads).loss;
}

inline double loss_gradient(const TuningSet& tuning, const AggregationSet& agg, double epsilon,
                            const SmoothingParams& smoothing, std::size_t threads = 1)
{
    return loss_and_gradient(tuning, agg, epsilon, smoothing, threads).gradient;
}

// ---------------------------------------------------------------------------
// Gradient descent on epsilon

struct GradientDescentConfig {
    double epsilon_init = 0.0;
    double learning_rate = 0.1;
    std::size_t max_iters = 200;
    double grad_tol = 1e-6;
    double step_tol = 1e-8;
    std::size_t threads = 1;

    void validate() const
    {
        require(epsilon_init >= 0.0 && std::isfinite(epsilon_init), "epsilon_init must be finite and >= 0");
        require(learning_rate > 0.0, "learning_rate must be > 0");
        require(grad_tol > 0.0 && step_tol > 0.0, "grad_tol and step_tol must be > 0");
    }
};

enum class Termination { GradTol, StepTol, MaxIters };

inline const char* to_string(Termination t)
{
    switch (t) {
    case Termination::GradTol: return "grad_tol";
    case Termination::StepTol: return "step_tol";
    case Termination::MaxIters: return "max_iters";
    }
    return "?";
}

struct TraceRecord {
    std::size_t iteration = 0;
    double epsilon = 0.0;
    double loss = 0.0;
    double gradient = 0.0;
};

struct TuneTrace {
    std::vector<TraceRecord> records;
    double epsilon_star = 0.0;
    Termination reason = Termination::MaxIters;
    std::size_t evaluations = 0; // loss/gradient evaluations, including rejected steps
};

/// ε₀ = half the largest per-machine deviation between any tuning row and
/// any aggregation row.
inline double default_epsilon_init(const TuningSet& tuning, const AggregationSet& agg)
{
    double widest = 0.0;
    for (Index m = 0; m < agg.machines(); ++m) {
        const double a_lo = agg.machine_preds.col(m).minCoeff();
        const double a_hi = agg.machine_preds.col(m).maxCoeff();
        const double t_lo = tuning.machine_preds.col(m).minCoeff();
        const double t_hi = tuning.machine_preds.col(m).maxCoeff();
        widest = std::max({widest, std::abs(t_hi - a_lo), std::abs(a_hi - t_lo)});
    }
    return 0.5 * widest;
}

/// Projected gradient descent ε ← max(0, ε − lr·SL'(ε)). A step that
/// raises the loss is retried with the learning rate halved; the reduced
/// rate is kept for later iterations.
inline TuneTrace tune_epsilon(const TuningSet& tuning, const AggregationSet& agg, const SmoothingParams& smoothing,
                              const GradientDescentConfig& config)
{
    config.validate();
    constexpr int max_halvings = 60;

    const KernelTable table = make_kernel_table(tuning, agg, smoothing, config.threads);
    auto evaluate = [&](double e) { return loss_and_gradient(table, tuning, agg, e, config.threads); };

    TuneTrace trace;
    double eps = config.epsilon_init;
    double lr = config.learning_rate;
    LossAndGradient cur = evaluate(eps);
    ++trace.evaluations;
    trace.records.push_back({0, eps, cur.loss, cur.gradient});

    trace.reason = Termination::MaxIters;
    for (std::size_t it = 1; it <= config.max_iters; ++it) {
        if (std::abs(cur.gradient) < config.grad_tol) {
            trace.reason = Termination::GradTol;
            break;
        }
        double next_eps = std::max(0.0, eps - lr * cur.gradient);
        LossAndGradient next = evaluate(next_eps);
        ++trace.evaluations;
        for (int h = 0; h < max_halvings && next.loss > cur.loss; ++h) {
            lr *= 0.5;
            next_eps = std::max(0.0, eps - lr * cur.gradient);
            next = evaluate(next_eps);
            ++trace.evaluations;
        }
        const double step = next_eps - eps;
        eps = next_eps;
        cur = next;
        trace.records.push_back({it, eps, cur.loss, cur.gradient});
        if (std::abs(step) < config.step_tol) {
            trace.reason = Termination::StepTol;
            break;
        }
    }
    trace.epsilon_star = eps;
    return trace;
}

/// iteration,epsilon,loss,gradient
inline void write_trace_csv(const TuneTrace& trace, std::ostream& out)
{
    out << "iteration,epsilon,loss,gradient\n";
    for (const auto& r : trace.records) {
        out << r.iteration << ',' << format_real(r.epsilon) << ',' << format_real(r.loss) << ','
            << format_real(r.gradient) << '\n';
    }
}

} // namespace cobra

#endif // COBRA_SMOOTH_HPP
