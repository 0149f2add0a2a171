#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace dsct {

using Scalar = double;
using Point3 = Eigen::Vector3d;
using Point2 = Eigen::Vector2d;
using Vec = Eigen::VectorXd;
using Image = Eigen::MatrixXd; // (row, col) = (y, x)

using Index = std::int64_t;

constexpr Scalar kPi = 3.14159265358979323846;

// Wraps x into [0, period).
inline Scalar positive_mod(Scalar x, Scalar period) {
    Scalar m = std::fmod(x, period);
    if (m < 0) m += period;
    return m;
}

// Wraps an angle into [-pi, pi).
inline Scalar wrap_to_pi(Scalar a) { return positive_mod(a + kPi, 2.0 * kPi) - kPi; }

inline Scalar deg_to_rad(Scalar d) { return d * kPi / 180.0; }
inline Scalar rad_to_deg(Scalar r) { return r * 180.0 / kPi; }

// CT number conversions. HU = 1000 (mu - mu_water) / mu_water.
inline Scalar hu_to_attenuation(Scalar hu, Scalar mu_water) { return mu_water * (1.0 + hu / 1000.0); }
inline Scalar attenuation_to_hu(Scalar mu, Scalar mu_water) { return 1000.0 * (mu - mu_water) / mu_water; }

} // namespace dsct
