#pragma once

#include "dsct/projector.hpp"
#include "dsct/types.hpp"

#include <vector>

namespace dsct {

// Diagonal statistical weights, one entry per sinogram sample.
struct WeightDiag {
    Vec d;
    Index clamped = 0; // samples that hit the count floor
};

// Weights from pre-log photon counts: d_i = lambda_i^2 / (lambda_i +
// sigma_e2), the inverse variance of the post-log measurement under a
// Poisson + electronic noise model. Nonpositive counts are clamped to
// `count_floor` and counted. With normalize, the result is scaled so
// max d_i = 1.
WeightDiag statistical_weights(const Vec& pre_log_counts, Scalar sigma_e2,
                               Scalar count_floor = 1.0, bool normalize = true);

// Idealized sigma_e = 0 weights from the post-log sinogram:
// d_i = i0 * exp(-y_i).
WeightDiag statistical_weights_ideal(const Vec& log_sinogram, Scalar i0, bool normalize = true);

// Convex generalized Gaussian MRF prior over the 26-neighborhood.
// Potential: rho(delta) = |delta/c|^p / (1 + |delta/c|^(p-q)),
// convex for 1 <= q <= p <= 2.
struct PriorParams {
    Scalar strength = 0.0;
    Scalar p = 2.0;
    Scalar q = 1.2;
    Scalar c = 10.0; // transition scale, same unit as the volume values

    void validate() const {
        if (!(1.0 <= q && q <= p && p <= 2.0))
            throw Error(ErrorCategory::config, "prior requires 1 <= q <= p <= 2");
        if (!(c > 0)) throw Error(ErrorCategory::config, "prior scale c must be positive");
        if (strength < 0) throw Error(ErrorCategory::config, "prior strength must be nonnegative");
    }
};

Scalar potential_value(Scalar delta, const PriorParams& params);
Scalar potential_derivative(Scalar delta, const PriorParams& params);
// Curvature of the symmetric quadratic majorizer, rho'(delta)/delta, with
// its delta -> 0 limit; used by the ICD surrogate.
Scalar potential_surrogate_curvature(Scalar delta, const PriorParams& params);

// 26-neighborhood offsets with inverse-physical-distance weights summing
// to one.
struct NeighborOffset {
    int dx, dy, dz;
    Scalar w;
};
std::vector<NeighborOffset> neighbor_weights(const VoxelGrid& grid);

enum class VolumeUnit : std::uint32_t { hounsfield = 0, attenuation = 1 };

struct Volume {
    VoxelGrid grid;
    Vec values;
    VolumeUnit unit = VolumeUnit::hounsfield;

    static Volume zero(const VoxelGrid& g, VolumeUnit u = VolumeUnit::hounsfield) {
        return Volume{g, Vec::Zero(g.size()), u};
    }
};

Volume volume_to_attenuation(const Volume& v, Scalar mu_water);
Volume volume_to_hounsfield(const Volume& v, Scalar mu_water);

// R(X) = strength * sum over ordered voxel/neighbor pairs of
// w_jn * rho(x_j - x_n).
Scalar prior_cost(const Volume& volume, const PriorParams& params);
// Exact gradient of prior_cost.
Vec prior_gradient(const Volume& volume, const PriorParams& params);

// One data block: system matrix, measured sinogram, diagonal weights.
struct BlockData {
    const SparseBlock* block = nullptr;
    const Vec* y = nullptr;
    const Vec* d = nullptr;
};

// 1/2 sum_k || Y^k - A^k X ||^2_{D^k} + R(X).
Scalar negative_log_posterior(const Volume& volume, const std::vector<BlockData>& blocks,
                              const PriorParams& params, int threads = 1);

// Gradient of the joint cost: sum_k A^kT D^k (A^k X - Y^k) + grad R.
Vec negative_log_posterior_gradient(const Volume& volume, const std::vector<BlockData>& blocks,
                                    const PriorParams& params, int threads = 1);

} // namespace dsct
