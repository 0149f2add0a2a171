#include "dsct/simulator.hpp"

#include "dsct/threading.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dsct {

namespace {

bool cylinder_contains(const CylinderPrim& c, const Point3& p) {
    const Scalar dx = p.x() - c.center.x();
    const Scalar dy = p.y() - c.center.y();
    if (dx * dx + dy * dy > c.radius * c.radius) return false;
    if (c.height > 0 && std::abs(p.z() - c.center.z()) > 0.5 * c.height) return false;
    return true;
}

bool box_contains(const BoxPrim& b, const Point3& p) {
    return std::abs(p.x() - b.center.x()) <= 0.5 * b.size.x() &&
           std::abs(p.y() - b.center.y()) <= 0.5 * b.size.y() &&
           std::abs(p.z() - b.center.z()) <= 0.5 * b.size.z();
}

// A stripe of width 1/(2f) repeating with period 1/f, centered on the
// pattern center.
bool bar_contains(const BarPatternPrim& b, const Point3& p) {
    BoxPrim box{b.center, b.size, b.value_hu};
    if (!box_contains(box, p)) return false;
    const Scalar period = 1.0 / b.frequency;
    const Scalar s = positive_mod(p.x() - b.center.x() + 0.25 * period, period);
    return s < 0.5 * period;
}

bool wire_contains(const WireRampPrim& w, const Point3& p) {
    for (int i = 0; i < w.n_wires; ++i) {
        const Scalar cy = w.start.y() + i * w.step_y;
        const Scalar cz = w.start.z() + i * w.step_z;
        if (std::abs(p.x() - w.start.x()) > 0.5 * w.length) continue;
        const Scalar dy = p.y() - cy;
        const Scalar dz = p.z() - cz;
        if (dy * dy + dz * dz <= w.wire_radius * w.wire_radius) return true;
    }
    return false;
}

struct BBox {
    Point3 lo, hi;
};

BBox primitive_bbox(const Primitive& prim) {
    return std::visit(
        [](const auto& p) -> BBox {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, CylinderPrim>) {
                const Scalar hz = p.height > 0 ? 0.5 * p.height : 1e30;
                return {p.center - Point3(p.radius, p.radius, hz),
                        p.center + Point3(p.radius, p.radius, hz)};
            } else if constexpr (std::is_same_v<T, BoxPrim>) {
                return {p.center - 0.5 * p.size, p.center + 0.5 * p.size};
            } else if constexpr (std::is_same_v<T, BarPatternPrim>) {
                return {p.center - 0.5 * p.size, p.center + 0.5 * p.size};
            } else {
                const Scalar ny = (p.n_wires - 1) * p.step_y;
                const Scalar nz = (p.n_wires - 1) * p.step_z;
                Point3 lo = p.start - Point3(0.5 * p.length, p.wire_radius, p.wire_radius);
                Point3 hi = p.start + Point3(0.5 * p.length, ny + p.wire_radius, nz + p.wire_radius);
                for (int a = 0; a < 3; ++a)
                    if (lo[a] > hi[a]) std::swap(lo[a], hi[a]);
                return {lo, hi};
            }
        },
        prim);
}

// SplitMix64 over the tuple keys: independent, reproducible per-view
// streams regardless of scheduling.
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace

Scalar phantom_value_at(const PhantomSpec& spec, const Point3& p) {
    for (auto it = spec.primitives.rbegin(); it != spec.primitives.rend(); ++it) {
        bool inside = false;
        Scalar value = 0;
        std::visit(
            [&](const auto& prim) {
                using T = std::decay_t<decltype(prim)>;
                if constexpr (std::is_same_v<T, CylinderPrim>)
                    inside = cylinder_contains(prim, p);
                else if constexpr (std::is_same_v<T, BoxPrim>)
                    inside = box_contains(prim, p);
                else if constexpr (std::is_same_v<T, BarPatternPrim>)
                    inside = bar_contains(prim, p);
                else
                    inside = wire_contains(prim, p);
                value = prim.value_hu;
            },
            *it);
        if (inside) return value;
    }
    return spec.background_hu;
}

Volume build_phantom(const PhantomSpec& spec, const VoxelGrid& grid, int samples_per_axis,
                     std::vector<std::string>* warnings) {
    grid.validate();
    if (samples_per_axis < 1)
        throw Error(ErrorCategory::config, "supersampling must be at least 1");

    if (warnings) {
        const Point3 glo = grid.origin - 0.5 * Point3(grid.delta_xy, grid.delta_xy, grid.delta_z);
        const Point3 ghi = glo + Point3(grid.n_x * grid.delta_xy, grid.n_y * grid.delta_xy,
                                        grid.n_z * grid.delta_z);
        for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
            const BBox bb = primitive_bbox(spec.primitives[i]);
            const bool inf_z = bb.hi.z() > 1e29;
            bool outside = bb.lo.x() < glo.x() || bb.lo.y() < glo.y() || bb.hi.x() > ghi.x() ||
                           bb.hi.y() > ghi.y();
            if (!inf_z) outside = outside || bb.lo.z() < glo.z() || bb.hi.z() > ghi.z();
            if (outside)
                warnings->push_back("phantom primitive " + std::to_string(i) +
                                    " reaches outside the grid; clipped");
        }
    }

    Volume vol = Volume::zero(grid, VolumeUnit::hounsfield);
    const int s = samples_per_axis;
    const Scalar inv = 1.0 / s;
    for (int iz = 0; iz < grid.n_z; ++iz) {
        for (int iy = 0; iy < grid.n_y; ++iy) {
            for (int ix = 0; ix < grid.n_x; ++ix) {
                const Point3 c = grid.voxel_center(ix, iy, iz);
                Scalar acc = 0;
                for (int a = 0; a < s; ++a) {
                    for (int b = 0; b < s; ++b) {
                        for (int e = 0; e < s; ++e) {
                            const Point3 q(c.x() + ((a + 0.5) * inv - 0.5) * grid.delta_xy,
                                           c.y() + ((b + 0.5) * inv - 0.5) * grid.delta_xy,
                                           c.z() + ((e + 0.5) * inv - 0.5) * grid.delta_z);
                            acc += phantom_value_at(spec, q);
                        }
                    }
                }
                vol.values[grid.index(ix, iy, iz)] = acc / (s * s * s);
            }
        }
    }
    return vol;
}

Scalar analytic_cylinder_projection(const CylinderPrim& cylinder, const Point3& source,
                                    const Point3& unit_center) {
    const Point3 dir = (unit_center - source).normalized();
    const Scalar ox = source.x() - cylinder.center.x();
    const Scalar oy = source.y() - cylinder.center.y();
    const Scalar a = dir.x() * dir.x() + dir.y() * dir.y();
    Scalar t0, t1;
    if (a < 1e-30) {
        // Vertical ray: inside or outside the circle for all t.
        if (ox * ox + oy * oy > cylinder.radius * cylinder.radius) return 0;
        t0 = -1e30;
        t1 = 1e30;
    } else {
        const Scalar bq = 2.0 * (ox * dir.x() + oy * dir.y());
        const Scalar cq = ox * ox + oy * oy - cylinder.radius * cylinder.radius;
        const Scalar disc = bq * bq - 4.0 * a * cq;
        if (disc <= 0) return 0;
        const Scalar sq = std::sqrt(disc);
        t0 = (-bq - sq) / (2.0 * a);
        t1 = (-bq + sq) / (2.0 * a);
    }
    if (cylinder.height > 0) {
        const Scalar z0 = cylinder.center.z() - 0.5 * cylinder.height;
        const Scalar z1 = cylinder.center.z() + 0.5 * cylinder.height;
        if (std::abs(dir.z()) < 1e-30) {
            if (source.z() < z0 || source.z() > z1) return 0;
        } else {
            Scalar ta = (z0 - source.z()) / dir.z();
            Scalar tb = (z1 - source.z()) / dir.z();
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
    }
    return std::max(t1 - t0, Scalar(0));
}

Scalar analytic_box_projection(const BoxPrim& box, const Point3& source,
                               const Point3& unit_center) {
    const Point3 dir = (unit_center - source).normalized();
    Scalar t0 = -1e30, t1 = 1e30;
    for (int a = 0; a < 3; ++a) {
        const Scalar lo = box.center[a] - 0.5 * box.size[a];
        const Scalar hi = box.center[a] + 0.5 * box.size[a];
        if (std::abs(dir[a]) < 1e-30) {
            if (source[a] < lo || source[a] > hi) return 0;
        } else {
            Scalar ta = (lo - source[a]) / dir[a];
            Scalar tb = (hi - source[a]) / dir[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
    }
    return std::max(t1 - t0, Scalar(0));
}

Scalar analytic_line_integral(const PhantomSpec& spec, const Point3& source,
                              const Point3& unit_center, Scalar mu_water) {
    if (spec.background_hu != -1000.0)
        throw Error(ErrorCategory::config,
                    "analytic projection requires a -1000 HU (vacuum) background");
    Scalar integral = 0;
    for (const auto& prim : spec.primitives) {
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                const Scalar mu = hu_to_attenuation(p.value_hu, mu_water);
                if constexpr (std::is_same_v<T, CylinderPrim>) {
                    integral += mu * analytic_cylinder_projection(p, source, unit_center);
                } else if constexpr (std::is_same_v<T, BoxPrim>) {
                    integral += mu * analytic_box_projection(p, source, unit_center);
                } else if constexpr (std::is_same_v<T, BarPatternPrim>) {
                    // Each bar is a box; enumerate the stripes inside the extent.
                    const Scalar period = 1.0 / p.frequency;
                    const Scalar width = 0.5 * period;
                    const Scalar x0 = p.center.x() - 0.5 * p.size.x();
                    const Scalar x1 = p.center.x() + 0.5 * p.size.x();
                    // Stripe m is centered at center.x + m * period.
                    const int m_lo = static_cast<int>(std::ceil((x0 - p.center.x()) / period - 0.5));
                    const int m_hi = static_cast<int>(std::floor((x1 - p.center.x()) / period + 0.5));
                    for (int m = m_lo; m <= m_hi; ++m) {
                        const Scalar cx = p.center.x() + m * period;
                        const Scalar lo = std::max(cx - 0.5 * width, x0);
                        const Scalar hi = std::min(cx + 0.5 * width, x1);
                        if (hi <= lo) continue;
                        BoxPrim bar;
                        bar.center = Point3(0.5 * (lo + hi), p.center.y(), p.center.z());
                        bar.size = Point3(hi - lo, p.size.y(), p.size.z());
                        integral += mu * analytic_box_projection(bar, source, unit_center);
                    }
                } else {
                    throw Error(ErrorCategory::config,
                                "analytic projection does not support wire ramps");
                }
            },
            prim);
    }
    return integral;
}

void apply_counting_noise(BlockRealization& block, const DoseParams& dose, std::uint64_t seed) {
    if (!(dose.i0 > 0)) throw Error(ErrorCategory::config, "incident photon count must be positive");
    const Index rows_per_view = static_cast<Index>(block.m_c) * block.m_r;
    block.counts.resize(block.y.size());
    block.n_floored = 0;
    for (std::size_t v = 0; v < block.view_time_indices.size(); ++v) {
        const std::uint64_t view_key =
            mix_key(mix_key(seed, 0x445346ull * (block.pair_index * 16 + block.spot_index + 1)),
                    static_cast<std::uint64_t>(block.view_time_indices[v]));
        std::mt19937_64 rng(view_key);
        for (Index i = v * rows_per_view; i < static_cast<Index>(v + 1) * rows_per_view; ++i) {
            const Scalar lambda_bar = dose.i0 * std::exp(-block.y[i]);
            if (!dose.noise) {
                block.counts[i] = lambda_bar;
                continue;
            }
            std::poisson_distribution<long long> poisson(lambda_bar);
            Scalar lambda = static_cast<Scalar>(poisson(rng));
            if (dose.sigma_e2 > 0) {
                std::normal_distribution<Scalar> gauss(0.0, std::sqrt(dose.sigma_e2));
                lambda += gauss(rng);
            }
            if (lambda < dose.count_floor) {
                lambda = dose.count_floor;
                ++block.n_floored;
            }
            block.counts[i] = lambda;
            block.y[i] = std::log(dose.i0 / lambda);
        }
    }
}

ScanRealization simulate_scan(const PhantomSpec& phantom, const ScanTrajectory& trajectory,
                              const SimulateOptions& options) {
    if (trajectory.samples.empty())
        throw Error(ErrorCategory::config, "simulation needs a nonempty schedule");

    ScanRealization real;
    real.seed = options.seed;
    real.dose = options.dose;

    std::optional<Volume> mu_volume;
    if (options.model == ProjectionModel::matrix) {
        Volume hu = build_phantom(phantom, options.sim_grid, options.supersampling);
        mu_volume = volume_to_attenuation(hu, options.mu_water);
    }

    for (std::size_t p = 0; p < trajectory.layout.pairs.size(); ++p) {
        const auto& pair = trajectory.layout.pairs[p];
        for (std::size_t s = 0; s < pair.spots.size(); ++s) {
            std::vector<ViewSample> views;
            for (const auto& sample : trajectory.samples)
                if (sample.pair_index == static_cast<int>(p) &&
                    sample.spot_index == static_cast<int>(s))
                    views.push_back(sample);
            if (views.empty()) continue;

            BlockRealization block;
            block.pair_index = static_cast<int>(p);
            block.spot_index = static_cast<int>(s);
            block.m_c = pair.geom.m_c;
            block.m_r = pair.geom.m_r;
            for (const auto& v : views) {
                block.view_time_indices.push_back(v.time_index);
                block.view_betas.push_back(v.beta);
            }

            const Index rows_per_view = static_cast<Index>(pair.geom.m_c) * pair.geom.m_r;
            block.y.resize(rows_per_view * static_cast<Index>(views.size()));

            if (options.model == ProjectionModel::matrix) {
                BuildOptions bopt;
                bopt.threads = options.threads;
                const SparseBlock sys =
                    build_system_block(pair.geom, pair.spots[s], views, options.sim_grid, bopt);
                block.y = forward_project(sys, mu_volume->values, options.threads);
            } else {
                parallel_for_tasks(static_cast<Index>(views.size()), options.threads, [&](Index vi) {
                    const auto& view = views[vi];
                    const Point3 src = view.source_pos;
                    for (int ir = 0; ir < pair.geom.m_r; ++ir) {
                        for (int ic = 0; ic < pair.geom.m_c; ++ic) {
                            const Point3 unit = detector_unit_center(pair.geom, pair.spots[s],
                                                                     view.beta, ic, ir);
                            block.y[(vi * pair.geom.m_r + ir) * pair.geom.m_c + ic] =
                                analytic_line_integral(phantom, src, unit, options.mu_water);
                        }
                    }
                });
            }
            apply_counting_noise(block, options.dose, options.seed);
            real.blocks.push_back(std::move(block));
        }
    }
    return real;
}

} // namespace dsct
