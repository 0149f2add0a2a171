#include "dsct/models.hpp"

#include <cmath>

namespace dsct {

WeightDiag statistical_weights(const Vec& pre_log_counts, Scalar sigma_e2, Scalar count_floor,
                               bool normalize) {
    if (sigma_e2 < 0) throw Error(ErrorCategory::config, "electronic variance must be nonnegative");
    WeightDiag w;
    w.d.resize(pre_log_counts.size());
    for (Index i = 0; i < pre_log_counts.size(); ++i) {
        Scalar lambda = pre_log_counts[i];
        if (!(lambda > 0)) {
            lambda = count_floor;
            ++w.clamped;
        }
        w.d[i] = lambda * lambda / (lambda + sigma_e2);
    }
    if (normalize && w.d.size() > 0) {
        const Scalar dmax = w.d.maxCoeff();
        if (dmax > 0) w.d /= dmax;
    }
    return w;
}

WeightDiag statistical_weights_ideal(const Vec& log_sinogram, Scalar i0, bool normalize) {
    if (!(i0 > 0)) throw Error(ErrorCategory::config, "incident photon count must be positive");
    WeightDiag w;
    w.d = (i0 * (-log_sinogram.array()).exp()).matrix();
    if (normalize && w.d.size() > 0) {
        const Scalar dmax = w.d.maxCoeff();
        if (dmax > 0) w.d /= dmax;
    }
    return w;
}

Scalar potential_value(Scalar delta, const PriorParams& params) {
    const Scalar t = std::abs(delta) / params.c;
    if (t == 0) return 0;
    return std::pow(t, params.p) / (1.0 + std::pow(t, params.p - params.q));
}

Scalar potential_derivative(Scalar delta, const PriorParams& params) {
    const Scalar t = std::abs(delta) / params.c;
    if (t == 0) return 0;
    const Scalar tpq = std::pow(t, params.p - params.q);
    const Scalar num = std::pow(t, params.p - 1.0) * (params.p + params.q * tpq);
    const Scalar den = (1.0 + tpq) * (1.0 + tpq);
    const Scalar mag = num / den / params.c;
    return delta > 0 ? mag : -mag;
}

Scalar potential_surrogate_curvature(Scalar delta, const PriorParams& params) {
    Scalar t = std::abs(delta) / params.c;
    // Clamp near zero; for p < 2 the curvature rho'(t)/t diverges there.
    t = std::max(t, Scalar(1e-8));
    const Scalar tpq = std::pow(t, params.p - params.q);
    const Scalar num = std::pow(t, params.p - 2.0) * (params.p + params.q * tpq);
    const Scalar den = (1.0 + tpq) * (1.0 + tpq);
    return num / den / (params.c * params.c);
}

std::vector<NeighborOffset> neighbor_weights(const VoxelGrid& grid) {
    std::vector<NeighborOffset> offsets;
    offsets.reserve(26);
    Scalar sum = 0;
    for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                const Scalar dist = std::sqrt((dx * dx + dy * dy) * grid.delta_xy * grid.delta_xy +
                                              dz * dz * grid.delta_z * grid.delta_z);
                offsets.push_back({dx, dy, dz, 1.0 / dist});
                sum += offsets.back().w;
            }
        }
    }
    for (auto& o : offsets) o.w /= sum;
    return offsets;
}

Volume volume_to_attenuation(const Volume& v, Scalar mu_water) {
    if (v.unit == VolumeUnit::attenuation) return v;
    Volume out = v;
    out.unit = VolumeUnit::attenuation;
    out.values = (mu_water * (1.0 + v.values.array() / 1000.0)).matrix();
    return out;
}

Volume volume_to_hounsfield(const Volume& v, Scalar mu_water) {
    if (v.unit == VolumeUnit::hounsfield) return v;
    Volume out = v;
    out.unit = VolumeUnit::hounsfield;
    out.values = (1000.0 * (v.values.array() - mu_water) / mu_water).matrix();
    return out;
}

namespace {

template <typename Fn>
void for_each_neighbor_pair(const VoxelGrid& g, const std::vector<NeighborOffset>& offsets,
                            Fn&& fn) {
    for (int iz = 0; iz < g.n_z; ++iz) {
        for (int iy = 0; iy < g.n_y; ++iy) {
            for (int ix = 0; ix < g.n_x; ++ix) {
                const Index j = g.index(ix, iy, iz);
                for (const auto& o : offsets) {
                    const int nx = ix + o.dx, ny = iy + o.dy, nz = iz + o.dz;
                    if (nx < 0 || nx >= g.n_x || ny < 0 || ny >= g.n_y || nz < 0 || nz >= g.n_z)
                        continue;
                    fn(j, g.index(nx, ny, nz), o.w);
                }
            }
        }
    }
}

} // namespace

Scalar prior_cost(const Volume& volume, const PriorParams& params) {
    params.validate();
    if (params.strength == 0) return 0;
    const auto offsets = neighbor_weights(volume.grid);
    Scalar cost = 0;
    for_each_neighbor_pair(volume.grid, offsets, [&](Index j, Index n, Scalar w) {
        cost += w * potential_value(volume.values[j] - volume.values[n], params);
    });
    return params.strength * cost;
}

Vec prior_gradient(const Volume& volume, const PriorParams& params) {
    params.validate();
    Vec g = Vec::Zero(volume.values.size());
    if (params.strength == 0) return g;
    const auto offsets = neighbor_weights(volume.grid);
    for_each_neighbor_pair(volume.grid, offsets, [&](Index j, Index n, Scalar w) {
        // Each unordered pair appears twice in the ordered sum.
        g[j] += 2.0 * params.strength * w *
                potential_derivative(volume.values[j] - volume.values[n], params);
    });
    return g;
}

Scalar negative_log_posterior(const Volume& volume, const std::vector<BlockData>& blocks,
                              const PriorParams& params, int threads) {
    Scalar cost = 0;
    for (const auto& b : blocks) {
        if (!b.block || !b.y || !b.d)
            throw Error(ErrorCategory::config, "incomplete block data");
        if (b.y->size() != b.block->rows || b.d->size() != b.block->rows)
            throw Error(ErrorCategory::dimension, "sinogram or weight size mismatch");
        const Vec r = *b.y - forward_project(*b.block, volume.values, threads);
        cost += 0.5 * (b.d->array() * r.array().square()).sum();
    }
    return cost + prior_cost(volume, params);
}

Vec negative_log_posterior_gradient(const Volume& volume, const std::vector<BlockData>& blocks,
                                    const PriorParams& params, int threads) {
    Vec g = prior_gradient(volume, params);
    for (const auto& b : blocks) {
        if (b.y->size() != b.block->rows || b.d->size() != b.block->rows)
            throw Error(ErrorCategory::dimension, "sinogram or weight size mismatch");
        const Vec r = forward_project(*b.block, volume.values, threads) - *b.y;
        BackprojectOptions opt;
        opt.threads = threads;
        g += back_project(*b.block, (b.d->array() * r.array()).matrix(), opt);
    }
    return g;
}

} // namespace dsct
