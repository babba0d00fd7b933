#ifndef COBRA_PIPELINE_HPP
#define COBRA_PIPELINE_HPP

// End-to-end benchmark: split, fit the weak learners, build the aggregation
// set, choose epsilon with one or more tuners, and evaluate everything on the
// held-out test rows.
//
// Seeding: one master seed; each stage draws from derive_seed(master, stage)
// (see random.hpp), so equal configs give identical non-timing outputs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/aggregate.hpp"
#include "cobra/data.hpp"
#include "cobra/learners.hpp"
#include "cobra/metrics.hpp"
#include "cobra/random.hpp"
#include "cobra/search.hpp"
#include "cobra/smooth.hpp"

namespace cobra {

enum class Tuner { Controlled, Grid, Randomized };

inline const char* to_string(Tuner t)
{
    switch (t) {
    case Tuner::Controlled: return "controlled";
    case Tuner::Grid: return "grid";
    case Tuner::Randomized: return "random";
    }
    return "?";
}

inline Tuner tuner_from_string(const std::string& s)
{
    if (s == "controlled") return Tuner::Controlled;
    if (s == "grid") return Tuner::Grid;
    if (s == "random" || s == "randomized") return Tuner::Randomized;
    throw InputError("unknown tuner '" + s + "' (expected controlled, grid or random)");
}

struct RunConfig {
    std::string data_path;
    std::string target;
    std::optional<std::size_t> subsample;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    double machine_fraction = 0.5;
    bool standardize = true;
    std::vector<LearnerSpec> learners = default_learner_specs();
    std::vector<Tuner> tuners{Tuner::Controlled};

    // Controlled tuner. beta is applied to prediction differences measured
    // in units of the aggregation responses' standard deviation.
    SmoothingParams smoothing{50.0, KernelVariant::SumExp};
    double learning_rate = 0.1;
    std::size_t max_iters = 200;
    double grad_tol = 1e-6;
    double step_tol = 1e-8;
    // Unset: the aggregation rows double as tuning rows (leave-one-out).
    // Set: this fraction of D_l stays as aggregation rows, the rest tunes.
    std::optional<double> tuning_fraction;

    // Grid / randomized search.
    std::size_t grid_size = 60;
    std::size_t random_draws = 30;
    std::size_t folds = 5;
    bool alpha_search = false;

    std::size_t threads = 1;
    std::string out_dir;

    void validate() const
    {
        require(!data_path.empty(), "no dataset path given");
        require(!target.empty(), "no target column given");
        require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0, 1)");
        require(machine_fraction > 0.0 && machine_fraction < 1.0, "machine fraction must lie in (0, 1)");
        require(!learners.empty(), "no weak learners configured");
        require(!tuners.empty(), "no tuner selected");
        require(grid_size >= 1 && random_draws >= 1, "grid size and random draws must be >= 1");
        require(folds >= 2, "need at least 2 folds");
        require(threads >= 1, "threads must be >= 1");
        require(!tuning_fraction || (*tuning_fraction > 0.0 && *tuning_fraction < 1.0),
                "tuning fraction must lie in (0, 1)");
        smoothing.validate();
    }
};

/// Splits, fitted machines and their predictions shared by every tuner.
struct PreparedRun {
    Dataset data;
    Partition train_test;
    Partition machine_agg;
    Machines machines;
    AggregationSet agg;
    PredictionMatrix test_preds;
    std::vector<EvalReport> learner_reports;
};

inline Dataset load_for(const RunConfig& config)
{
    Dataset ds = load_csv(config.data_path, config.target);
    if (config.subsample) {
        ds = subsample(ds, *config.subsample, derive_seed(config.seed, Stage::Subsample));
    }
    return ds;
}

inline PreparedRun prepare_run(const RunConfig& config, Dataset data)
{
    PreparedRun run;
    run.data = std::move(data);
    run.train_test = train_test_split(run.data, {config.train_fraction, derive_seed(config.seed, Stage::TrainTest)});
    run.machine_agg = split_for_cobra(run.train_test.first, config.machine_fraction,
                                      derive_seed(config.seed, Stage::CobraSplit));
    run.machines = fit_machines(run.machine_agg.first, config.learners, config.standardize);
    run.agg = make_aggregation_set(run.machines, run.machine_agg.second);
    run.test_preds = run.machines.predict(run.train_test.second.features);
    for (Index m = 0; m < run.test_preds.cols(); ++m) {
        run.learner_reports.push_back(evaluate(run.train_test.second.targets, run.test_preds.col(m)));
    }
    return run;
}

struct TunerOutcome {
    Tuner tuner = Tuner::Controlled;
    CobraParams params;
    double seconds = 0.0;
    std::optional<TuneTrace> trace;
    std::optional<SearchResult> search;
    double beta_effective = 0.0;
    // Aggregation rows used for the final COBRA predictions. Differs from
    // PreparedRun::agg only with a disjoint tuning split.
    AggregationSet agg;
    BatchPrediction test_prediction;
    EvalReport report;
};

inline double response_scale(const AggregationSet& agg)
{
    const double sd = std::sqrt((agg.responses.array() - agg.responses.mean()).square().mean());
    return sd > 0.0 ? sd : 1.0;
}

inline TunerOutcome run_tuner(const PreparedRun& run, const RunConfig& config, Tuner tuner)
{
    TunerOutcome out;
    out.tuner = tuner;
    out.agg = run.agg;
    const Dataset& train = run.train_test.first;

    if (tuner == Tuner::Controlled) {
        auto work = [&] {
            AggregationSet agg = run.agg;
            TuningSet tuning;
            if (config.tuning_fraction) {
                const Partition p = split_for_cobra(run.machine_agg.second, *config.tuning_fraction,
                                                    derive_seed(config.seed, Stage::TuningSplit));
                agg = make_aggregation_set(run.machines, p.first);
                tuning = make_tuning_set(run.machines, p.second);
            } else {
                tuning = leave_one_out_tuning_set(agg);
            }
            SmoothingParams sm = config.smoothing;
            sm.beta = config.smoothing.beta / response_scale(agg);
            GradientDescentConfig gd;
            gd.epsilon_init = default_epsilon_init(tuning, agg);
            gd.learning_rate = config.learning_rate;
            gd.max_iters = config.max_iters;
            gd.grad_tol = config.grad_tol;
            gd.step_tol = config.step_tol;
            gd.threads = config.threads;
            TuneTrace trace = tune_epsilon(tuning, agg, sm, gd);
            return std::make_tuple(std::move(agg), std::move(trace), sm.beta);
        };
        auto t = timed(work);
        out.seconds = t.seconds;
        out.agg = std::move(std::get<0>(t.value));
        out.trace = std::move(std::get<1>(t.value));
        out.beta_effective = std::get<2>(t.value);
        out.params = CobraParams::unanimous(out.trace->epsilon_star);
    } else {
        const FoldPlan folds = make_folds(static_cast<std::size_t>(train.rows()), config.folds,
                                          derive_seed(config.seed, Stage::Folds));
        CvSetup setup;
        setup.learners = config.learners;
        setup.machine_fraction = config.machine_fraction;
        setup.split_seed = derive_seed(config.seed, Stage::FoldSplit);
        setup.standardize = config.standardize;
        const double hi = max_prediction_spread(run.agg);
        const std::vector<double> alphas =
            config.alpha_search ? alpha_grid(config.learners.size()) : std::vector<double>{};
        if (tuner == Tuner::Grid) {
            out.search = grid_search(train, setup, SearchSpace::grid(linspace(0.0, hi, config.grid_size), alphas),
                                     folds, config.threads);
        } else {
            out.search = randomized_search(
                train, setup,
                SearchSpace::random(0.0, hi, config.random_draws, derive_seed(config.seed, Stage::RandomSearch), alphas),
                folds, config.threads);
        }
        out.seconds = out.search->wall_time;
        out.params = CobraParams{out.search->best_epsilon, out.search->best_alpha};
    }

    out.test_prediction = predict_batch(out.agg, run.test_preds, out.params);
    out.report = evaluate(run.train_test.second.targets, out.test_prediction.values);
    return out;
}

struct BenchmarkReport {
    RunConfig config;
    PreparedRun run;
    std::vector<TunerOutcome> outcomes;
    double total_seconds = 0.0;
};

inline BenchmarkReport run_pipeline(const RunConfig& config)
{
    config.validate();
    auto t = timed([&] {
        BenchmarkReport rep;
        rep.config = config;
        rep.run = prepare_run(config, load_for(config));
        for (Tuner tuner : config.tuners) {
            try {
                rep.outcomes.push_back(run_tuner(rep.run, config, tuner));
            } catch (const std::exception& e) {
                throw std::runtime_error(std::string("tuner '") + to_string(tuner) + "' failed: " + e.what());
            }
        }
        return rep;
    });
    t.value.total_seconds = t.seconds;
    return std::move(t.value);
}

// ---------------------------------------------------------------------------
// Report rendering

/// Fixed-point text, used for the human-readable table.
inline std::string fixed(double v, int digits = 9)
{
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

/// One row of metrics.csv.
struct MetricsRow {
    std::string estimator;
    std::string kind;
    double mse = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;

    bool operator==(const MetricsRow&) const = default;
};

inline std::vector<MetricsRow> metrics_rows(const BenchmarkReport& rep, const TunerOutcome& outcome)
{
    std::vector<MetricsRow> rows;
    for (std::size_t m = 0; m < rep.run.learner_reports.size(); ++m) {
        const auto& r = rep.run.learner_reports[m];
        rows.push_back({"Estimator #" + std::to_string(m), to_string(rep.config.learners[m].kind), r.mse, r.r2, r.n});
    }
    rows.push_back({"COBRA", to_string(outcome.tuner), outcome.report.mse, outcome.report.r2, outcome.report.n});
    return rows;
}

// estimator,kind,mse,r2,n with shortest round-trip number formatting.
inline std::string render_metrics_csv(const std::vector<MetricsRow>& rows)
{
    std::ostringstream out;
    out << "estimator,kind,mse,r2,n\n";
    for (const auto& r : rows) {
        out << r.estimator << ',' << r.kind << ',' << format_real(r.mse) << ',' << format_real(r.r2) << ',' << r.n
            << '\n';
    }
    return out.str();
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == "estimator,kind,mse,r2,n",
            "metrics.csv: unexpected header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = detail::split_fields(line);
        require(f.size() == 5, "metrics.csv: expected 5 fields");
        MetricsRow r;
        r.estimator = f[0];
        r.kind = f[1];
        require(parse_real(f[2], r.mse) && parse_real(f[3], r.r2), "metrics.csv: bad number");
        r.n = static_cast<std::size_t>(std::stoull(f[4]));
        rows.push_back(r);
    }
    return rows;
}

inline std::string render_metrics_text(const std::vector<MetricsRow>& rows)
{
    std::ostringstream out;
    for (const auto& r : rows) {
        out << r.estimator << (r.estimator == "COBRA" ? "" : ":") << " (" << r.kind << ")  MSE = " << fixed(r.mse)
            << "  R2 = " << fixed(r.r2) << '\n';
    }
    return out.str();
}

inline std::string render_scatter_csv(const Vector& y_true, const Vector& y_pred)
{
    std::ostringstream out;
    out << "y_true,y_pred\n";
    for (Index i = 0; i < y_true.size(); ++i) {
        out << format_real(y_true(i)) << ',' << format_real(y_pred(i)) << '\n';
    }
    return out.str();
}

// tuner,wall_seconds,epsilon_star,alpha,test_mse,test_r2
inline std::string render_tuners_csv(const BenchmarkReport& rep)
{
    std::ostringstream out;
    out << "tuner,wall_seconds,epsilon_star,alpha,test_mse,test_r2\n";
    for (const auto& o : rep.outcomes) {
        out << to_string(o.tuner) << ',' << fixed(o.seconds, 3) << ',' << format_real(o.params.epsilon) << ','
            << (o.params.alpha ? format_real(*o.params.alpha) : std::string()) << ',' << format_real(o.report.mse)
            << ',' << format_real(o.report.r2) << '\n';
    }
    return out.str();
}

inline nlohmann::json learner_spec_json(const LearnerSpec& s)
{
    switch (s.kind) {
    case LearnerKind::Ridge: return {{"kind", "ridge"}, {"lambda", s.ridge_lambda}};
    case LearnerKind::Lasso:
        return {{"kind", "lasso"}, {"lambda", s.lasso_lambda}, {"max_sweeps", s.lasso_max_sweeps}, {"tol", s.lasso_tol}};
    case LearnerKind::Tree: return {{"kind", "tree"}, {"max_depth", s.tree_max_depth}, {"min_leaf", s.tree_min_leaf}};
    }
    return {};
}

/// Everything but the "timing" object is a pure function of the config.
inline nlohmann::json summary_json(const BenchmarkReport& rep)
{
    const RunConfig& c = rep.config;
    nlohmann::json j;
    j["data"] = {{"path", c.data_path},
                 {"target", c.target},
                 {"rows", rep.run.data.rows()},
                 {"features", rep.run.data.cols()},
                 {"subsample", c.subsample ? nlohmann::json(*c.subsample) : nlohmann::json(nullptr)}};
    j["seeds"] = {{"master", c.seed},
                  {"subsample", derive_seed(c.seed, Stage::Subsample)},
                  {"train_test", derive_seed(c.seed, Stage::TrainTest)},
                  {"cobra_split", derive_seed(c.seed, Stage::CobraSplit)},
                  {"folds", derive_seed(c.seed, Stage::Folds)},
                  {"fold_split", derive_seed(c.seed, Stage::FoldSplit)},
                  {"random_search", derive_seed(c.seed, Stage::RandomSearch)},
                  {"tuning_split", derive_seed(c.seed, Stage::TuningSplit)}};
    j["split"] = {{"train_fraction", c.train_fraction},
                  {"machine_fraction", c.machine_fraction},
                  {"train_rows", rep.run.train_test.first.rows()},
                  {"test_rows", rep.run.train_test.second.rows()},
                  {"machine_rows", rep.run.machine_agg.first.rows()},
                  {"aggregation_rows", rep.run.machine_agg.second.rows()},
                  {"standardize", c.standardize}};
    auto learners = nlohmann::json::array();
    for (std::size_t m = 0; m < c.learners.size(); ++m) {
        auto l = learner_spec_json(c.learners[m]);
        l["test_mse"] = rep.run.learner_reports[m].mse;
        l["test_r2"] = rep.run.learner_reports[m].r2;
        learners.push_back(std::move(l));
    }
    j["learners"] = std::move(learners);

    auto tuners = nlohmann::json::array();
    nlohmann::json timing;
    for (const auto& o : rep.outcomes) {
        nlohmann::json t;
        t["tuner"] = to_string(o.tuner);
        t["epsilon_star"] = o.params.epsilon;
        t["alpha"] = o.params.alpha ? nlohmann::json(*o.params.alpha) : nlohmann::json(nullptr);
        t["test_mse"] = o.report.mse;
        t["test_r2"] = o.report.r2;
        t["empty_neighbourhoods"] = o.test_prediction.empty_count();
        if (o.trace) {
            t["beta"] = c.smoothing.beta;
            t["beta_effective"] = o.beta_effective;
            t["variant"] = to_string(c.smoothing.variant);
            t["learning_rate"] = c.learning_rate;
            t["max_iters"] = c.max_iters;
            t["grad_tol"] = c.grad_tol;
            t["step_tol"] = c.step_tol;
            t["epsilon_init"] = o.trace->records.front().epsilon;
            t["iterations"] = o.trace->records.size() - 1;
            t["evaluations"] = o.trace->evaluations;
            t["termination"] = to_string(o.trace->reason);
            t["tuning"] = c.tuning_fraction ? "disjoint" : "leave_one_out";
        }
        if (o.search) {
            t["cv_mse"] = o.search->cv_mse;
            t["candidates"] = o.search->table.size();
            t["folds"] = c.folds;
            t["alpha_search"] = c.alpha_search;
        }
        tuners.push_back(std::move(t));
        timing[std::string(to_string(o.tuner)) + "_seconds"] = o.seconds;
    }
    j["tuners"] = std::move(tuners);
    timing["total_seconds"] = rep.total_seconds;
    j["timing"] = std::move(timing);
    return j;
}

/// Fitted state needed to predict new rows without refitting.
inline nlohmann::json models_json(const BenchmarkReport& rep, const TunerOutcome& outcome)
{
    nlohmann::json j;
    auto models = nlohmann::json::array();
    for (const auto& m : rep.run.machines.models) {
        models.push_back(to_json(m));
    }
    j["models"] = std::move(models);
    j["feature_names"] = rep.run.data.feature_names;
    j["target_name"] = rep.run.data.target_name;
    if (rep.run.machines.scaling) {
        const auto& s = *rep.run.machines.scaling;
        j["scaling"] = {{"means", std::vector<double>(s.means.data(), s.means.data() + s.means.size())},
                        {"stds", std::vector<double>(s.stds.data(), s.stds.data() + s.stds.size())}};
    } else {
        j["scaling"] = nullptr;
    }
    j["aggregation"] = to_json(outcome.agg);
    j["epsilon"] = outcome.params.epsilon;
    j["alpha"] = outcome.params.alpha ? nlohmann::json(*outcome.params.alpha) : nlohmann::json(nullptr);
    return j;
}

struct SavedEnsemble {
    Machines machines;
    AggregationSet agg;
    CobraParams params;
};

inline SavedEnsemble ensemble_from_json(const nlohmann::json& j)
{
    SavedEnsemble e;
    for (const auto& m : j.at("models")) {
        e.machines.models.push_back(learner_from_json(m));
    }
    if (!j.at("scaling").is_null()) {
        const auto means = j["scaling"].at("means").get<std::vector<double>>();
        const auto stds = j["scaling"].at("stds").get<std::vector<double>>();
        Standardization s;
        s.means = Eigen::Map<const Vector>(means.data(), static_cast<Index>(means.size()));
        s.stds = Eigen::Map<const Vector>(stds.data(), static_cast<Index>(stds.size()));
        e.machines.scaling = s;
    }
    e.agg = aggregation_set_from_json(j.at("aggregation"));
    e.params.epsilon = j.at("epsilon").get<double>();
    if (!j.at("alpha").is_null()) {
        e.params.alpha = j["alpha"].get<double>();
    }
    return e;
}

/// File name -> contents. Single tuner: metrics.csv, metrics.txt,
/// summary.json, scatter.csv, models.json and (controlled) trace.csv.
/// Several tuners: tuners.csv and summary.json.
inline std::map<std::string, std::string> render_outputs(const BenchmarkReport& rep)
{
    std::map<std::string, std::string> files;
    files["summary.json"] = summary_json(rep).dump(2) + "\n";
    if (rep.outcomes.size() >= 2) {
        files["tuners.csv"] = render_tuners_csv(rep);
        return files;
    }
    const TunerOutcome& o = rep.outcomes.front();
    const auto rows = metrics_rows(rep, o);
    files["metrics.csv"] = render_metrics_csv(rows);
    files["metrics.txt"] = render_metrics_text(rows);
    files["scatter.csv"] = render_scatter_csv(rep.run.train_test.second.targets, o.test_prediction.values);
    files["models.json"] = models_json(rep, o).dump(2) + "\n";
    if (o.trace) {
        std::ostringstream trace;
        write_trace_csv(*o.trace, trace);
        files["trace.csv"] = trace.str();
    }
    return files;
}

/// Writes every file or none: on failure the ones already written are removed.
inline void write_outputs(const std::filesystem::path& dir, const std::map<std::string, std::string>& files)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    try {
        for (const auto& [name, body] : files) {
            const auto path = dir / name;
            std::ofstream out(path, std::ios::binary);
            if (!out) {
                throw std::runtime_error("cannot write '" + path.string() + "'");
            }
            written.push_back(path);
            out << body;
            if (!out) {
                throw std::runtime_error("write failed for '" + path.string() + "'");
            }
        }
    } catch (...) {
        for (const auto& p : written) {
            std::error_code ec;
            std::filesystem::remove(p, ec);
        }
        throw;
    }
}

/// Single-tuner benchmark; returns the rendered files.
inline std::map<std::string, std::string> run_benchmark(const RunConfig& config)
{
    require(config.tuners.size() == 1, "run_benchmark takes exactly one tuner");
    return render_outputs(run_pipeline(config));
}

/// Runs every configured tuner on identical splits and search budgets.
inline BenchmarkReport compare_tuners(const RunConfig& config)
{
    require(config.tuners.size() >= 2, "tuner comparison needs at least two tuners");
    return run_pipeline(config);
}

} // namespace cobra

#endif // COBRA_PIPELINE_HPP
