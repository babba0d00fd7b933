#ifndef COBRA_LEARNERS_HPP
#define COBRA_LEARNERS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/core.hpp"
#include "cobra/data.hpp"

namespace cobra {

enum class LearnerKind { Ridge, Lasso, Tree };

inline const char* to_string(LearnerKind kind)
{
    switch (kind) {
    case LearnerKind::Ridge: return "ridge";
    case LearnerKind::Lasso: return "lasso";
    case LearnerKind::Tree: return "tree";
    }
    return "?";
}

inline LearnerKind learner_kind_from_string(const std::string& s)
{
    if (s == "ridge") return LearnerKind::Ridge;
    if (s == "lasso") return LearnerKind::Lasso;
    if (s == "tree") return LearnerKind::Tree;
    throw InputError("unknown learner kind '" + s + "'");
}

struct LearnerSpec {
    LearnerKind kind = LearnerKind::Ridge;
    double ridge_lambda = 1.0;
    double lasso_lambda = 0.1;
    std::size_t lasso_max_sweeps = 1000;
    double lasso_tol = 1e-6;
    std::size_t tree_max_depth = 6;
    std::size_t tree_min_leaf = 5;

    static LearnerSpec ridge(double lambda = 1.0)
    {
        LearnerSpec s;
        s.kind = LearnerKind::Ridge;
        s.ridge_lambda = lambda;
        return s;
    }
    static LearnerSpec lasso(double lambda = 0.1, std::size_t max_sweeps = 1000, double tol = 1e-6)
    {
        LearnerSpec s;
        s.kind = LearnerKind::Lasso;
        s.lasso_lambda = lambda;
        s.lasso_max_sweeps = max_sweeps;
        s.lasso_tol = tol;
        return s;
    }
    static LearnerSpec tree(std::size_t max_depth = 6, std::size_t min_leaf = 5)
    {
        LearnerSpec s;
        s.kind = LearnerKind::Tree;
        s.tree_max_depth = max_depth;
        s.tree_min_leaf = min_leaf;
        return s;
    }
};

/// Ridge, lasso, tree with the default hyperparameters.
inline std::vector<LearnerSpec> default_learner_specs()
{
    return {LearnerSpec::ridge(), LearnerSpec::lasso(), LearnerSpec::tree()};
}

struct LinearModel {
    double intercept = 0.0;
    Vector coef;
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0; // mean target of the training rows reaching this node
    int left = -1;
    int right = -1;
    std::size_t n_samples = 0;

    bool is_leaf() const { return feature < 0; }
};

struct TreeModel {
    std::vector<TreeNode> nodes; // nodes[0] is the root

    std::size_t depth() const { return depth_from(0); }

    std::size_t depth_from(int node) const
    {
        const auto& n = nodes[static_cast<std::size_t>(node)];
        if (n.is_leaf()) {
            return 0;
        }
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }

    double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const
    {
        int at = 0;
        while (!nodes[static_cast<std::size_t>(at)].is_leaf()) {
            const auto& n = nodes[static_cast<std::size_t>(at)];
            at = x(n.feature) <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(at)].value;
    }
};

struct FittedLearner {
    LearnerKind kind = LearnerKind::Ridge;
    Index n_features = 0;
    std::variant<LinearModel, TreeModel> params;

    const LinearModel& linear() const { return std::get<LinearModel>(params); }
    const TreeModel& tree() const { return std::get<TreeModel>(params); }
};

// ---------------------------------------------------------------------------
// Ridge

/// Solves (XcᵀXc + λI)β = Xcᵀyc on column-centred data; the intercept is
/// recovered from the column means and is never penalised.
inline FittedLearner fit_ridge(const Dataset& d_k, double lambda)
{
    require(d_k.rows() >= 1, "fit_ridge: empty dataset");
    require(lambda >= 0.0 && std::isfinite(lambda), "fit_ridge: lambda must be finite and >= 0");

    const Vector x_mean = d_k.features.colwise().mean().transpose();
    const double y_mean = d_k.targets.mean();
    const Matrix xc = d_k.features.rowwise() - x_mean.transpose();
    const Vector yc = d_k.targets.array() - y_mean;

    Matrix gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    const Vector rhs = xc.transpose() * yc;

    Vector beta;
    Eigen::LLT<Matrix> llt(gram);
    const bool ok = llt.info() == Eigen::Success && llt.rcond() > 1e-13;
    if (ok) {
        beta = llt.solve(rhs);
    } else if (lambda > 0.0) {
        beta = gram.completeOrthogonalDecomposition().solve(rhs);
    } else {
        throw NumericalError("fit_ridge: normal equations are singular at lambda = 0 "
                             "(collinear or constant features)");
    }

    LinearModel m;
    m.coef = beta;
    m.intercept = y_mean - x_mean.dot(beta);
    return {LearnerKind::Ridge, d_k.cols(), m};
}

// ---------------------------------------------------------------------------
// Lasso

inline double soft_threshold(double z, double gamma)
{
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

struct LassoFit {
    FittedLearner model;
    bool converged = false;
    std::size_t sweeps = 0;
    // objective (1/2n)||yc - Zβ||² + λ||β||₁ on the internal standardised
    // problem; entry 0 is the starting point β = 0, entry s follows sweep s.
    std::vector<double> objective;
    Vector standardized_coef;
};

/// Cyclic coordinate descent with soft-thresholding on standardised
/// features (population std). Coefficients are mapped back to raw units.
inline LassoFit fit_lasso(const Dataset& d_k, double lambda, std::size_t max_sweeps, double tol)
{
    require(d_k.rows() >= 1, "fit_lasso: empty dataset");
    require(lambda >= 0.0 && std::isfinite(lambda), "fit_lasso: lambda must be finite and >= 0");
    require(tol > 0.0, "fit_lasso: tol must be > 0");

    const Index n = d_k.rows();
    const Index d = d_k.cols();
    const auto nd = static_cast<double>(n);

    const Standardization st = standardize_fit(d_k.features);
    const Matrix z = standardize_apply(d_k.features, st);
    const double y_mean = d_k.targets.mean();
    Vector resid = d_k.targets.array() - y_mean;

    Vector col_sq(d);
    for (Index j = 0; j < d; ++j) {
        col_sq(j) = z.col(j).squaredNorm() / nd;
    }

    Vector beta = Vector::Zero(d);
    auto objective = [&]() { return 0.5 * resid.squaredNorm() / nd + lambda * beta.lpNorm<1>(); };

    LassoFit out;
    out.objective.push_back(objective());
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (Index j = 0; j < d; ++j) {
            if (col_sq(j) <= 0.0) {
                continue;
            }
            const double old = beta(j);
            const double rho = z.col(j).dot(resid) / nd + col_sq(j) * old;
            const double updated = soft_threshold(rho, lambda) / col_sq(j);
            const double delta = updated - old;
            if (delta != 0.0) {
                resid -= delta * z.col(j);
                beta(j) = updated;
            }
            max_delta = std::max(max_delta, std::abs(delta));
        }
        out.sweeps = sweep + 1;
        out.objective.push_back(objective());
        if (max_delta < tol) {
            out.converged = true;
            break;
        }
    }

    LinearModel m;
    m.coef = beta.array() / st.stds.array();
    m.intercept = y_mean - st.means.dot(m.coef);
    out.standardized_coef = beta;
    out.model = {LearnerKind::Lasso, d, m};
    return out;
}

// ---------------------------------------------------------------------------
// Regression tree (CART, squared error)

namespace detail {

class TreeBuilder {
public:
    TreeBuilder(const Dataset& ds, std::size_t max_depth, std::size_t min_leaf)
        : x_(ds.features), y_(ds.targets), max_depth_(max_depth), min_leaf_(min_leaf)
    {
    }

    TreeModel build()
    {
        std::vector<std::size_t> rows(static_cast<std::size_t>(y_.size()));
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        grow(rows, 0);
        return std::move(model_);
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double score = -std::numeric_limits<double>::infinity();
    };

    int grow(std::vector<std::size_t>& rows, std::size_t depth)
    {
        const int id = static_cast<int>(model_.nodes.size());
        model_.nodes.emplace_back();
        double sum = 0.0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (auto r : rows) {
            const double v = y_(static_cast<Index>(r));
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        model_.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(rows.size());
        model_.nodes[static_cast<std::size_t>(id)].n_samples = rows.size();

        if (depth >= max_depth_ || rows.size() < 2 * min_leaf_ || lo == hi) {
            return id;
        }
        const Split best = find_split(rows);
        if (best.feature < 0) {
            return id;
        }

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto r : rows) {
            (x_(static_cast<Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();

        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        auto& node = model_.nodes[static_cast<std::size_t>(id)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    // Minimising the children's summed squared error is the same as
    // maximising S_L²/n_L + S_R²/n_R. Features and thresholds are scanned in
    // ascending order and only a strictly better score replaces the
    // incumbent, so ties go to the lowest feature, then lowest threshold.
    Split find_split(const std::vector<std::size_t>& rows) const
    {
        Split best;
        const std::size_t n = rows.size();
        double total = 0.0;
        for (auto r : rows) {
            total += y_(static_cast<Index>(r));
        }
        std::vector<std::size_t> order(rows);
        for (Index f = 0; f < x_.cols(); ++f) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double va = x_(static_cast<Index>(a), f);
                const double vb = x_(static_cast<Index>(b), f);
                return va < vb || (va == vb && a < b);
            });
            double left_sum = 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left_sum += y_(static_cast<Index>(order[i]));
                const double here = x_(static_cast<Index>(order[i]), f);
                const double next = x_(static_cast<Index>(order[i + 1]), f);
                const std::size_t n_left = i + 1;
                const std::size_t n_right = n - n_left;
                if (here == next || n_left < min_leaf_ || n_right < min_leaf_) {
                    continue;
                }
                const double right_sum = total - left_sum;
                const double score = left_sum * left_sum / static_cast<double>(n_left)
                    + right_sum * right_sum / static_cast<double>(n_right);
                const double margin = 1e-12 * std::max(1.0, std::abs(best.score));
                if (best.feature < 0 || score > best.score + margin) {
                    best.feature = static_cast<int>(f);
                    best.threshold = here + 0.5 * (next - here);
                    best.score = score;
                }
            }
        }
        return best;
    }

    const Matrix& x_;
    const Vector& y_;
    std::size_t max_depth_;
    std::size_t min_leaf_;
    TreeModel model_;
};

} // namespace detail

inline FittedLearner fit_tree(const Dataset& d_k, std::size_t max_depth, std::size_t min_leaf)
{
    require(d_k.rows() >= 1, "fit_tree: empty dataset");
    require(min_leaf >= 1, "fit_tree: min_leaf must be >= 1");
    detail::TreeBuilder builder(d_k, max_depth, min_leaf);
    return {LearnerKind::Tree, d_k.cols(), builder.build()};
}

// ---------------------------------------------------------------------------

inline FittedLearner fit(const LearnerSpec& spec, const Dataset& d_k)
{
    switch (spec.kind) {
    case LearnerKind::Ridge: return fit_ridge(d_k, spec.ridge_lambda);
    case LearnerKind::Lasso: return fit_lasso(d_k, spec.lasso_lambda, spec.lasso_max_sweeps, spec.lasso_tol).model;
    case LearnerKind::Tree: return fit_tree(d_k, spec.tree_max_depth, spec.tree_min_leaf);
    }
    throw InputError("fit: unknown learner kind");
}

inline Vector predict(const FittedLearner& model, const Matrix& x)
{
    require(x.cols() == model.n_features,
            std::string("predict: ") + to_string(model.kind) + " model expects "
                + std::to_string(model.n_features) + " features, got " + std::to_string(x.cols()));
    if (model.kind == LearnerKind::Tree) {
        const auto& tree = model.tree();
        Vector out(x.rows());
        for (Index r = 0; r < x.rows(); ++r) {
            out(r) = tree.predict_row(x.row(r));
        }
        return out;
    }
    const auto& lin = model.linear();
    return (x * lin.coef).array() + lin.intercept;
}

/// n_points × M matrix; column m holds predict(models[m], x).
using PredictionMatrix = Matrix;

inline PredictionMatrix predict_all(const std::vector<FittedLearner>& models, const Matrix& x)
{
    require(!models.empty(), "predict_all: no models");
    PredictionMatrix out(x.rows(), static_cast<Index>(models.size()));
    for (std::size_t m = 0; m < models.size(); ++m) {
        out.col(static_cast<Index>(m)) = predict(models[m], x);
    }
    return out;
}

/// The committee of weak learners COBRA aggregates over, together with the
/// feature standardisation fitted on their training rows.
struct Machines {
    std::optional<Standardization> scaling;
    std::vector<FittedLearner> models;

    std::size_t size() const { return models.size(); }

    PredictionMatrix predict(const Matrix& x) const
    {
        if (scaling) {
            return predict_all(models, standardize_apply(x, *scaling));
        }
        return predict_all(models, x);
    }
};

inline Machines fit_machines(const Dataset& d_k, const std::vector<LearnerSpec>& specs, bool standardize)
{
    require(!specs.empty(), "fit_machines: no learner specs");
    Machines out;
    const Dataset* train = &d_k;
    Dataset scaled;
    if (standardize) {
        out.scaling = standardize_fit(d_k);
        scaled = standardize_apply(d_k, *out.scaling);
        train = &scaled;
    }
    out.models.reserve(specs.size());
    for (const auto& spec : specs) {
        out.models.push_back(fit(spec, *train));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON model schema
//
//   {"kind": "ridge"|"lasso", "n_features": d, "intercept": b, "coef": [...]}
//   {"kind": "tree", "n_features": d,
//    "nodes": [{"feature": f, "threshold": t, "value": v,
//               "left": l, "right": r, "n_samples": n}, ...]}
//
// Leaves have feature = -1; nodes[0] is the root.

inline nlohmann::json to_json(const FittedLearner& model)
{
    nlohmann::json j;
    j["kind"] = to_string(model.kind);
    j["n_features"] = model.n_features;
    if (model.kind == LearnerKind::Tree) {
        auto nodes = nlohmann::json::array();
        for (const auto& n : model.tree().nodes) {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"value", n.value},
                             {"left", n.left},
                             {"right", n.right},
                             {"n_samples", n.n_samples}});
        }
        j["nodes"] = std::move(nodes);
    } else {
        const auto& lin = model.linear();
        j["intercept"] = lin.intercept;
        j["coef"] = std::vector<double>(lin.coef.data(), lin.coef.data() + lin.coef.size());
    }
    return j;
}

inline FittedLearner learner_from_json(const nlohmann::json& j)
{
    FittedLearner model;
    model.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    model.n_features = j.at("n_features").get<Index>();
    if (model.kind == LearnerKind::Tree) {
        TreeModel tree;
        for (const auto& jn : j.at("nodes")) {
            TreeNode n;
            n.feature = jn.at("feature").get<int>();
            n.threshold = jn.at("threshold").get<double>();
            n.value = jn.at("value").get<double>();
            n.left = jn.at("left").get<int>();
            n.right = jn.at("right").get<int>();
            n.n_samples = jn.at("n_samples").get<std::size_t>();
            tree.nodes.push_back(n);
        }
        require(!tree.nodes.empty(), "tree model has no nodes");
        model.params = std::move(tree);
    } else {
        LinearModel lin;
        lin.intercept = j.at("intercept").get<double>();
        const auto coef = j.at("coef").get<std::vector<double>>();
        require(static_cast<Index>(coef.size()) == model.n_features, "coef length differs from n_features");
        lin.coef = Eigen::Map<const Vector>(coef.data(), static_cast<Index>(coef.size()));
        model.params = std::move(lin);
    }
    return model;
}

} // namespace cobra

#endif // COBRA_LEARNERS_HPP
