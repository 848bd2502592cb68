#pragma once

// Small dense-numerics helpers shared by the zeros, obstruction and synthesis sources.

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include "cbflab/system.hpp"

namespace cbflab::numeric {

/// Least-squares solve with singular values below rel_cutoff * sigma_max dropped.
inline Vec lstsq(const Mat& a, const Vec& b, double rel_cutoff = 1e-10) {
    if (a.cols() == 0) return Vec(0);
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = s.size() ? rel_cutoff * s[0] : 0.0;
    Vec ub = svd.matrixU().transpose() * b;
    for (Eigen::Index i = 0; i < s.size(); ++i) ub[i] = s[i] > cutoff ? ub[i] / s[i] : 0.0;
    return svd.matrixV() * ub;
}

/// Central-difference Jacobian of f at p.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& p) {
    const Vec f0 = f(p);
    Mat j(f0.size(), p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        const double step = 1e-6 * (1.0 + std::fabs(p[k]));
        Vec a = p, b = p;
        a[k] += step;
        b[k] -= step;
        j.col(k) = (f(a) - f(b)) / (2.0 * step);
    }
    return j;
}

/// Damped Gauss-Newton on |f|^2. Returns the best point seen.
inline Vec gauss_newton(const std::function<Vec(const Vec&)>& f, Vec p, double target, int max_iter = 60) {
    Vec fp = f(p);
    double best = fp.norm();
    for (int it = 0; it < max_iter && best > target; ++it) {
        Mat j = fd_jacobian(f, p);
        Vec step = lstsq(j, -fp, 1e-12);
        if (!step.allFinite() || step.norm() == 0.0) break;
        double lambda = 1.0;
        bool improved = false;
        for (int k = 0; k < 30; ++k) {
            Vec trial = p + lambda * step;
            Vec ft;
            try {
                ft = f(trial);
            } catch (const std::exception&) {
                lambda *= 0.5;
                continue;
            }
            if (ft.allFinite() && ft.norm() < best) {
                p = trial;
                fp = ft;
                best = ft.norm();
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!improved) break;
    }
    return p;
}

}  // namespace cbflab::numeric
