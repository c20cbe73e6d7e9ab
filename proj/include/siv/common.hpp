#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace siv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Support = std::vector<Index>;

// Error hierarchy. Every failure a caller may want to distinguish gets its own
// type; warnings never throw and are collected in Diagnostics instead.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class RankError : public Error {
public:
    using Error::Error;
};

class SizeError : public Error {
public:
    using Error::Error;
};

/// Free-form side channel attached to results: numeric values (condition
/// numbers, iteration counts), warnings, and textual notes.
struct Diagnostics {
    std::map<std::string, double> values;
    std::vector<std::string> warnings;
    std::map<std::string, std::string> notes;

    void warn(std::string message) { warnings.push_back(std::move(message)); }
    void merge(const Diagnostics& other, const std::string& prefix = {});
};

enum class ExecutionPolicy { Serial, Parallel };

/// Relative cutoff on singular values for every least-squares solve.
inline constexpr double kPinvTolerance = 1e-10;

/// Cutoff applied to eigenvalues of Gram matrices. Squaring the design loses
/// half the digits, so the singular-value cutoff squared is floored at a few
/// ulps of the largest eigenvalue.
inline constexpr double kGramEigenTolerance = 64.0 * 2.220446049250313e-16;

}  // namespace siv
