#include "windadj/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace windadj {

double golden_section(const std::function<double(double)>& f, double a, double b, double tol,
                      int max_iter) {
    const double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    return (f1 <= f2) ? x1 : x2;
}

Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x0, const Eigen::VectorXd& step, double ftol,
                            int max_iter) {
    const int d = static_cast<int>(x0.size());
    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d + 1), x0);
    std::vector<double> val(static_cast<std::size_t>(d + 1));
    for (int j = 0; j < d; ++j) pts[static_cast<std::size_t>(j + 1)](j) += step(j);
    for (int j = 0; j <= d; ++j) val[static_cast<std::size_t>(j)] = f(pts[static_cast<std::size_t>(j)]);

    std::vector<int> order(static_cast<std::size_t>(d + 1));
    for (int it = 0; it < max_iter; ++it) {
        for (int j = 0; j <= d; ++j) order[static_cast<std::size_t>(j)] = j;
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return val[static_cast<std::size_t>(a)] < val[static_cast<std::size_t>(b)]; });
        const int best = order[0], worst = order[static_cast<std::size_t>(d)],
                  second = order[static_cast<std::size_t>(d - 1)];
        if (std::fabs(val[static_cast<std::size_t>(worst)] - val[static_cast<std::size_t>(best)]) <=
            ftol * (std::fabs(val[static_cast<std::size_t>(best)]) + ftol))
            break;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
        for (int j = 0; j <= d; ++j)
            if (j != worst) centroid += pts[static_cast<std::size_t>(j)];
        centroid /= static_cast<double>(d);

        auto& pw = pts[static_cast<std::size_t>(worst)];
        auto& vw = val[static_cast<std::size_t>(worst)];
        Eigen::VectorXd xr = centroid + (centroid - pw);  // reflection
        const double fr = f(xr);
        if (fr < val[static_cast<std::size_t>(best)]) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - pw);  // expansion
            const double fe = f(xe);
            if (fe < fr) {
                pw = xe;
                vw = fe;
            } else {
                pw = xr;
                vw = fr;
            }
        } else if (fr < val[static_cast<std::size_t>(second)]) {
            pw = xr;
            vw = fr;
        } else {
            Eigen::VectorXd xc = centroid + 0.5 * (pw - centroid);  // contraction
            const double fc = f(xc);
            if (fc < vw) {
                pw = xc;
                vw = fc;
            } else {  // shrink toward the best point
                for (int j = 0; j <= d; ++j) {
                    if (j == best) continue;
                    auto& pj = pts[static_cast<std::size_t>(j)];
                    pj = pts[static_cast<std::size_t>(best)] + 0.5 * (pj - pts[static_cast<std::size_t>(best)]);
                    val[static_cast<std::size_t>(j)] = f(pj);
                }
            }
        }
    }
    int best = 0;
    for (int j = 1; j <= d; ++j)
        if (val[static_cast<std::size_t>(j)] < val[static_cast<std::size_t>(best)]) best = j;
    return pts[static_cast<std::size_t>(best)];
}

}  // namespace windadj
