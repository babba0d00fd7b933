#ifndef COBRA_METRICS_HPP
#define COBRA_METRICS_HPP

#include <chrono>
#include <cstddef>
#include <type_traits>
#include <utility>

#include "cobra/core.hpp"

namespace cobra {

inline double mse(const Vector& y_true, const Vector& y_pred)
{
    require(y_true.size() == y_pred.size(), "mse: length mismatch");
    require(y_true.size() >= 1, "mse: empty input");
    return (y_true - y_pred).squaredNorm() / static_cast<double>(y_true.size());
}

// SS_tot is taken about the mean of y_true.
inline double r2(const Vector& y_true, const Vector& y_pred)
{
    require(y_true.size() == y_pred.size(), "r2: length mismatch");
    require(y_true.size() >= 2, "r2: need at least two points");
    const double ss_tot = (y_true.array() - y_true.mean()).square().sum();
    require(ss_tot > 0.0, "r2: target has zero variance");
    return 1.0 - (y_true - y_pred).squaredNorm() / ss_tot;
}

struct EvalReport {
    double mse = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

inline EvalReport evaluate(const Vector& y_true, const Vector& y_pred)
{
    return {mse(y_true, y_pred), r2(y_true, y_pred), static_cast<std::size_t>(y_true.size())};
}

template <typename T>
struct Timed {
    T value;
    double seconds = 0.0;
};

template <>
struct Timed<void> {
    double seconds = 0.0;
};

/// Runs `run` and measures it on the steady clock. Exceptions propagate.
template <typename F>
auto timed(F&& run) -> Timed<std::invoke_result_t<F>>
{
    using R = std::invoke_result_t<F>;
    const auto start = std::chrono::steady_clock::now();
    auto seconds_since = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    if constexpr (std::is_void_v<R>) {
        std::forward<F>(run)();
        return Timed<void>{seconds_since()};
    } else {
        R value = std::forward<F>(run)();
        const double s = seconds_since();
        return Timed<R>{std::move(value), s};
    }
}

} // namespace cobra

#endif // COBRA_METRICS_HPP
