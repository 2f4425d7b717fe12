#pragma once

#include <Eigen/Dense>
#include <functional>

namespace windadj {

/// Golden-section minimization on [a, b]; returns the minimizing x.
double golden_section(const std::function<double(double)>& f, double a, double b,
                      double tol = 1e-6, int max_iter = 200);

/// Nelder–Mead simplex minimization.  step gives the initial simplex spread
/// per coordinate.  Returns the best point found.
Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                            double ftol = 1e-7, int max_iter = 400);

}  // namespace windadj
