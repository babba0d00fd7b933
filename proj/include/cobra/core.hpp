#ifndef COBRA_CORE_HPP
#define COBRA_CORE_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cobra {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Raised for malformed input: bad files, out-of-range sizes, shape mismatches.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a numerical procedure cannot produce a result (e.g. a singular system).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what)
{
    if (!ok) {
        throw InputError(what);
    }
}

} // namespace cobra

#endif // COBRA_CORE_HPP
