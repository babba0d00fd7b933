#ifndef COBRA_RANDOM_HPP
#define COBRA_RANDOM_HPP

// Portable randomness.
//
// The standard distributions (std::shuffle, std::uniform_int_distribution, ...)
// are implementation-defined, so splits would differ between standard
// libraries. Everything here is built on std::mt19937_64, whose output
// sequence is fixed by the standard, plus explicitly specified reductions:
//
//   uniform index in [0, n):  rejection sampling on the raw 64-bit draw
//                             (reject draws >= the largest multiple of n,
//                             then take draw % n).
//   uniform real in [0, 1):   (draw >> 11) * 2^-53.
//   shuffle:                  Fisher-Yates, i from n-1 down to 1, swap(i, j)
//                             with j = uniform index in [0, i].
//   stage seeds:              splitmix64(master ^ (stage * 0x9E3779B97F4A7C15)).

#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace cobra {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Pipeline stages that consume randomness. Values are part of the on-disk
// reproducibility contract; never renumber.
enum class Stage : std::uint64_t {
    Subsample = 1,
    TrainTest = 2,
    CobraSplit = 3,
    Folds = 4,
    RandomSearch = 5,
    TuningSplit = 6,
    FoldSplit = 7,
};

inline std::uint64_t derive_seed(std::uint64_t master, Stage stage)
{
    return splitmix64(master ^ (static_cast<std::uint64_t>(stage) * 0x9E3779B97F4A7C15ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
        std::uint64_t draw = engine_();
        while (draw >= limit) {
            draw = engine_();
        }
        return draw % n;
    }

    // Uniform real in [0, 1).
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    return idx;
}

} // namespace cobra

#endif // COBRA_RANDOM_HPP
