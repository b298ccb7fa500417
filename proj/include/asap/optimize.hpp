#pragma once

#include <Eigen/Core>

#include <functional>

namespace asap {

struct PowellOptions {
    Eigen::VectorXd initial_step;  // per-parameter step for the first bracket
    Eigen::VectorXd tolerance;     // stop once every parameter moves less than this
    int max_iter = 100;
};

struct PowellResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
};

/// Derivative-free minimisation by Powell's direction-set method with a
/// golden-section bracket and Brent line search along each direction.
/// The objective may return +inf for infeasible points.
PowellResult powell_minimize(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                             const PowellOptions& opt);

}  // namespace asap
