#pragma once

// Hypersphere primitives: normalization, clamped cosine, pairwise squared
// distances. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xmodal/errors.hpp"

namespace xmodal {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kDefaultNormEps = 1e-12;

/// Returns v / ||v||. Throws NearZeroNorm when ||v|| <= eps.
inline Vec normalize(const Vec& v, double eps = kDefaultNormEps) {
    const double n = v.norm();
    if (!(n > eps)) {
        throw NearZeroNorm("vector norm " + std::to_string(n) + " <= " + std::to_string(eps));
    }
    return v / n;
}

/// Dot product of two unit vectors clamped to [-1, 1].
inline double cosine(const Vec& u, const Vec& v) {
    if (u.size() != v.size()) {
        throw DimensionMismatch("cosine of size " + std::to_string(u.size()) + " and " +
                                std::to_string(v.size()));
    }
    return std::clamp(u.dot(v), -1.0, 1.0);
}

/// Angle in radians between two unit vectors. Diagnostics only; the losses
/// work with cosines directly.
inline double angle(const Vec& u, const Vec& v) { return std::acos(cosine(u, v)); }

/// D[a][b] = ||x_a - x_b||^2 = 2 - 2 x_a.x_b for unit inputs. The diagonal is
/// exactly 0 and entries are clamped to [0, 4].
inline Mat pairwise_sq_dists(std::span<const Vec> xs) {
    const auto p = static_cast<Eigen::Index>(xs.size());
    Mat d = Mat::Zero(p, p);
    for (Eigen::Index a = 0; a < p; ++a) {
        if (xs[a].size() != xs[0].size()) {
            throw DimensionMismatch("pairwise_sq_dists: point " + std::to_string(a) +
                                    " has dimension " + std::to_string(xs[a].size()));
        }
        for (Eigen::Index b = a + 1; b < p; ++b) {
            const double v = std::clamp(2.0 - 2.0 * xs[a].dot(xs[b]), 0.0, 4.0);
            d(a, b) = v;
            d(b, a) = v;
        }
    }
    return d;
}

}  // namespace xmodal
