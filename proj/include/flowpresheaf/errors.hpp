#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowpresheaf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
public:
    SyntaxError(std::size_t line, std::size_t column, std::string expected)
        : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) +
                ": expected " + expected),
          line(line), column(column), expected(std::move(expected)) {}
    std::size_t line;
    std::size_t column;
    std::string expected;
};

struct DomainError : Error { using Error::Error; };
struct SingularMetric : Error { using Error::Error; };
struct NoPath : Error { using Error::Error; };
struct StepTooCoarse : Error { using Error::Error; };
struct BoundaryTooClose : Error { using Error::Error; };
struct QuadratureBudgetExceeded : Error { using Error::Error; };
struct NoAdmissibleWindow : Error { using Error::Error; };
struct NonContraction : Error { using Error::Error; };
struct MaxIterExceeded : Error { using Error::Error; };
struct GridIncompatible : Error { using Error::Error; };
struct NotInvertible : Error { using Error::Error; };
struct UnknownFormat : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

class EscapedPatch : public Error {
public:
    EscapedPatch(double t_escape, std::vector<double> point)
        : Error("trajectory left the patch at t = " + std::to_string(t_escape)),
          t_escape(t_escape), point(std::move(point)) {}
    double t_escape;
    std::vector<double> point;
};

// Witness is a (t1, t0, x...) sample that fails the admissibility test.
class NotAdmissible : public Error {
public:
    NotAdmissible(std::vector<double> witness, const std::string& why)
        : Error("region is not flow admissible: " + why), witness(std::move(witness)) {}
    std::vector<double> witness;
};

class OverlapViolation : public Error {
public:
    OverlapViolation(std::pair<std::size_t, std::size_t> pair, double residual)
        : Error("overlap residual " + std::to_string(residual) + " between records " +
                std::to_string(pair.first) + " and " + std::to_string(pair.second)),
          pair(pair), residual(residual) {}
    std::pair<std::size_t, std::size_t> pair;
    double residual;
};

class DomainViolation : public Error {
public:
    DomainViolation(std::size_t cube, std::vector<double> point)
        : Error("cube " + std::to_string(cube) + " is not inside the flow domain"),
          cube(cube), point(std::move(point)) {}
    std::size_t cube;
    std::vector<double> point;
};

class ConfigError : public Error {
public:
    ConfigError(std::string path, std::string message)
        : Error(path + ": " + message), path(std::move(path)), message(std::move(message)) {}
    std::string path;
    std::string message;
};

}  // namespace flowpresheaf
