#include "dsct/projector.hpp"

#include "dsct/threading.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

namespace dsct {

namespace {

constexpr Scalar kMinXYDistance = 1e-9;

struct VoxelFootprintTerms {
    Scalar scale = 0.0; // delta_xy / (d_c d_r cos tf cos pf)
    Scalar half_dc_lc = 0.0;
    Scalar cap_c = 0.0;
    Scalar half_dr_lr = 0.0;
    Scalar cap_r = 0.0;
};

VoxelFootprintTerms entry_terms(const ScannerGeometry& geom, const RayAngles& angles,
                                const Footprint& fp, Scalar delta_xy) {
    VoxelFootprintTerms t;
    t.scale = delta_xy /
              (geom.d_c * geom.d_r * std::cos(angles.theta_fold) * std::cos(angles.phi_fold));
    t.half_dc_lc = 0.5 * (geom.d_c + fp.l_c);
    t.cap_c = std::min(fp.l_c, geom.d_c);
    t.half_dr_lr = 0.5 * (geom.d_r + fp.l_r);
    t.cap_r = std::min(fp.l_r, geom.d_r);
    return t;
}

} // namespace

RayAngles ray_angles(const Point3& source, const Point3& voxel_center) {
    const Scalar dx = source.x() - voxel_center.x();
    const Scalar dy = source.y() - voxel_center.y();
    const Scalar dz = source.z() - voxel_center.z();
    const Scalar rho = std::hypot(dx, dy);
    if (rho < kMinXYDistance)
        throw Error(ErrorCategory::numeric, "degenerate ray: source above voxel center in x-y");
    RayAngles a;
    a.theta = std::atan2(dy, dx);
    a.phi = std::atan2(dz, rho);
    a.theta_fold = fold_angle(a.theta);
    a.phi_fold = fold_angle(a.phi);
    return a;
}

Scalar channel_displacement(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            const RayAngles& angles, int i_c) {
    if (i_c < 0 || i_c >= geom.m_c)
        throw Error(ErrorCategory::dimension, "channel index out of range");
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Scalar gamma = spot_polar_angle(geom, spot, beta);
    const Scalar alpha = channel_offset_angle(geom, spot);
    const Scalar t = angles.theta - gamma - alpha + (geom.m_c - 1) * geom.d_c / (2.0 * r_arc) -
                     i_c * geom.d_c / r_arc;
    return wrap_to_pi(t) * r_arc;
}

Scalar row_displacement(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                        const Point3& voxel_center, int i_r) {
    if (i_r < 0 || i_r >= geom.m_r)
        throw Error(ErrorCategory::dimension, "row index out of range");
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar rho = std::hypot(s.x() - voxel_center.x(), s.y() - voxel_center.y());
    if (rho < kMinXYDistance)
        throw Error(ErrorCategory::numeric, "degenerate ray: zero x-y distance to spot");
    const Scalar r_arc = geom.r_sd + spot.dv;
    return r_arc / rho * (voxel_center.z() - s.z()) + (geom.m_r - 1) * 0.5 * geom.d_r + spot.dw -
           i_r * geom.d_r;
}

Footprint footprint_extents(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            const Point3& voxel_center, Scalar delta_xy, Scalar delta_z) {
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar rho = std::hypot(s.x() - voxel_center.x(), s.y() - voxel_center.y());
    if (rho < kMinXYDistance)
        throw Error(ErrorCategory::numeric, "degenerate footprint: zero x-y distance to spot");
    const Scalar r_arc = geom.r_sd + spot.dv;

    Footprint fp;
    fp.gamma = spot_polar_angle(geom, spot, beta);
    fp.alpha = channel_offset_angle(geom, spot);

    // Arc extent of the projections of the four x-y corners.
    const Scalar theta_c = std::atan2(s.y() - voxel_center.y(), s.x() - voxel_center.x());
    const Scalar h = 0.5 * delta_xy;
    Scalar lo = 0.0, hi = 0.0;
    for (int k = 0; k < 4; ++k) {
        const Scalar cx = voxel_center.x() + ((k & 1) ? h : -h);
        const Scalar cy = voxel_center.y() + ((k & 2) ? h : -h);
        const Scalar th = std::atan2(s.y() - cy, s.x() - cx);
        const Scalar rel = wrap_to_pi(th - theta_c);
        lo = std::min(lo, rel);
        hi = std::max(hi, rel);
    }
    fp.l_c = (hi - lo) * r_arc;
    // z extent of the two z faces projected through the center's x-y column.
    fp.l_r = delta_z * r_arc / rho;

    // Unit ranges with nonzero overlap: |delta| < (D + L) / 2, where the
    // per-unit displacement decreases by one pitch per index step.
    const Scalar t0 = theta_c - fp.gamma - fp.alpha + (geom.m_c - 1) * geom.d_c / (2.0 * r_arc);
    const Scalar dc0 = wrap_to_pi(t0) * r_arc; // channel 0 displacement
    const Scalar half_c = 0.5 * (geom.d_c + fp.l_c);
    int c_lo = static_cast<int>(std::ceil((dc0 - half_c) / geom.d_c));
    int c_hi = static_cast<int>(std::floor((dc0 + half_c) / geom.d_c));
    fp.c_lo = std::max(c_lo, 0);
    fp.c_hi = std::min(c_hi, geom.m_c - 1);

    const Scalar dr0 = r_arc / rho * (voxel_center.z() - s.z()) + (geom.m_r - 1) * 0.5 * geom.d_r +
                       spot.dw; // row 0 displacement
    const Scalar half_r = 0.5 * (geom.d_r + fp.l_r);
    int r_lo = static_cast<int>(std::ceil((dr0 - half_r) / geom.d_r));
    int r_hi = static_cast<int>(std::floor((dr0 + half_r) / geom.d_r));
    fp.r_lo = std::max(r_lo, 0);
    fp.r_hi = std::min(r_hi, geom.m_r - 1);

    if (fp.empty()) {
        fp.c_lo = fp.r_lo = 0;
        fp.c_hi = fp.r_hi = -1;
        return fp;
    }
    fp.delta_c.resize(fp.c_hi - fp.c_lo + 1);
    for (int i = fp.c_lo; i <= fp.c_hi; ++i) fp.delta_c[i - fp.c_lo] = dc0 - i * geom.d_c;
    fp.delta_r.resize(fp.r_hi - fp.r_lo + 1);
    for (int i = fp.r_lo; i <= fp.r_hi; ++i) fp.delta_r[i - fp.r_lo] = dr0 - i * geom.d_r;
    return fp;
}

Scalar system_entry(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                    const Point3& voxel_center, Scalar delta_xy, Scalar delta_z, int i_c, int i_r) {
    if (i_c < 0 || i_c >= geom.m_c || i_r < 0 || i_r >= geom.m_r)
        throw Error(ErrorCategory::dimension, "detector unit index out of range");
    const Point3 s = focal_spot_position(geom, spot, beta);
    const RayAngles angles = ray_angles(s, voxel_center);
    const Footprint fp = footprint_extents(geom, spot, beta, voxel_center, delta_xy, delta_z);
    const Scalar dc = channel_displacement(geom, spot, beta, angles, i_c);
    const Scalar dr = row_displacement(geom, spot, beta, voxel_center, i_r);
    const VoxelFootprintTerms t = entry_terms(geom, angles, fp, delta_xy);
    return t.scale * clip(0.0, t.half_dc_lc - std::abs(dc), t.cap_c) *
           clip(0.0, t.half_dr_lr - std::abs(dr), t.cap_r);
}

SparseBlock build_system_block(const ScannerGeometry& geom, const FocalSpotSpec& spot,
                               const std::vector<ViewSample>& views, const VoxelGrid& grid,
                               const BuildOptions& options) {
    if (views.empty())
        throw Error(ErrorCategory::config, "system block needs a nonempty view subset");
    grid.validate();
    for (const auto& v : views) {
        if (v.pair_index != views.front().pair_index || v.spot_index != views.front().spot_index)
            throw Error(ErrorCategory::config, "all views of a block must share pair and spot");
    }

    SparseBlock block;
    block.pair_index = views.front().pair_index;
    block.spot_index = views.front().spot_index;
    block.m_c = geom.m_c;
    block.m_r = geom.m_r;
    block.cols = grid.size();
    const Index rows_per_view = static_cast<Index>(geom.m_c) * geom.m_r;
    block.rows = rows_per_view * static_cast<Index>(views.size());
    block.view_time_indices.reserve(views.size());
    block.view_betas.reserve(views.size());
    for (const auto& v : views) {
        block.view_time_indices.push_back(v.time_index);
        block.view_betas.push_back(v.beta);
    }

    // One bucket of (row-local entries) per view; views are assembled in
    // parallel and concatenated in view order, so the result does not
    // depend on the thread count.
    struct ViewRows {
        std::vector<std::vector<std::pair<std::uint32_t, Scalar>>> rows;
        std::uint64_t nnz = 0;
    };
    std::vector<ViewRows> per_view(views.size());

    std::mutex budget_mutex;
    std::uint64_t nnz_done = 0;
    std::size_t views_done = 0;
    bool budget_hit = false;
    std::uint64_t budget_estimate = 0;

    parallel_for_tasks(static_cast<Index>(views.size()), options.threads, [&](Index vi) {
        {
            std::lock_guard<std::mutex> lock(budget_mutex);
            if (budget_hit) return;
        }
        ViewRows& out = per_view[vi];
        out.rows.resize(rows_per_view);
        const Scalar beta = views[vi].beta;
        for (int iz = 0; iz < grid.n_z; ++iz) {
            for (int iy = 0; iy < grid.n_y; ++iy) {
                for (int ix = 0; ix < grid.n_x; ++ix) {
                    const Point3 center = grid.voxel_center(ix, iy, iz);
                    const Footprint fp =
                        footprint_extents(geom, spot, beta, center, grid.delta_xy, grid.delta_z);
                    if (fp.empty()) continue;
                    const Point3 s = focal_spot_position(geom, spot, beta);
                    const RayAngles angles = ray_angles(s, center);
                    const VoxelFootprintTerms t = entry_terms(geom, angles, fp, grid.delta_xy);
                    const std::uint32_t j =
                        static_cast<std::uint32_t>(grid.index(ix, iy, iz));
                    for (int ir = fp.r_lo; ir <= fp.r_hi; ++ir) {
                        const Scalar wr =
                            clip(0.0, t.half_dr_lr - std::abs(fp.delta_r[ir - fp.r_lo]), t.cap_r);
                        if (wr <= 0) continue;
                        for (int ic = fp.c_lo; ic <= fp.c_hi; ++ic) {
                            const Scalar wc = clip(
                                0.0, t.half_dc_lc - std::abs(fp.delta_c[ic - fp.c_lo]), t.cap_c);
                            if (wc <= 0) continue;
                            out.rows[static_cast<std::size_t>(ir) * geom.m_c + ic].emplace_back(
                                j, t.scale * wc * wr);
                            ++out.nnz;
                        }
                    }
                }
            }
        }
        if (options.memory_budget_bytes > 0) {
            std::lock_guard<std::mutex> lock(budget_mutex);
            nnz_done += out.nnz;
            ++views_done;
            // 12 bytes per entry (u32 column + f64 value) plus row offsets.
            const std::uint64_t projected =
                nnz_done * 12ull * views.size() / std::max<std::size_t>(views_done, 1) +
                (static_cast<std::uint64_t>(block.rows) + 1) * 8ull;
            if (projected > options.memory_budget_bytes) {
                budget_hit = true;
                budget_estimate = projected;
            }
        }
    });

    if (budget_hit) {
        std::ostringstream msg;
        msg << "system block memory budget exceeded: needs about " << budget_estimate
            << " bytes, budget is " << options.memory_budget_bytes;
        throw Error(ErrorCategory::numeric, msg.str());
    }

    std::uint64_t nnz = 0;
    for (const auto& v : per_view) nnz += v.nnz;
    block.row_offsets.assign(static_cast<std::size_t>(block.rows) + 1, 0);
    block.col_indices.reserve(nnz);
    block.values.reserve(nnz);
    Index row = 0;
    for (const auto& v : per_view) {
        for (const auto& entries : v.rows) {
            for (const auto& [j, a] : entries) {
                block.col_indices.push_back(j);
                block.values.push_back(a);
            }
            block.row_offsets[static_cast<std::size_t>(row) + 1] = block.col_indices.size();
            ++row;
        }
    }
    return block;
}

Vec forward_project(const SparseBlock& block, const Vec& volume, int threads) {
    if (volume.size() != block.cols)
        throw Error(ErrorCategory::dimension, "forward projection: volume size mismatch");
    Vec y = Vec::Zero(block.rows);
    parallel_for_ranges(block.rows, threads, [&](Index begin, Index end) {
        for (Index i = begin; i < end; ++i) {
            Scalar acc = 0;
            for (std::uint64_t k = block.row_offsets[i]; k < block.row_offsets[i + 1]; ++k)
                acc += block.values[k] * volume[block.col_indices[k]];
            y[i] = acc;
        }
    });
    return y;
}

Vec back_project(const SparseBlock& block, const Vec& residual, const BackprojectOptions& options) {
    if (residual.size() != block.rows)
        throw Error(ErrorCategory::dimension, "back projection: residual size mismatch");
    Vec out = Vec::Zero(block.cols);
    const int threads = resolve_threads(options.threads);

    if (!options.strict_reduction) {
        std::vector<Vec> partial(threads, Vec::Zero(block.cols));
        parallel_for_tasks(threads, threads, [&](Index t) {
            const Index chunk = (block.rows + threads - 1) / threads;
            const Index begin = t * chunk;
            const Index end = std::min(begin + chunk, block.rows);
            Vec& acc = partial[t];
            for (Index i = begin; i < end; ++i) {
                const Scalar r = residual[i];
                if (r == 0) continue;
                for (std::uint64_t k = block.row_offsets[i]; k < block.row_offsets[i + 1]; ++k)
                    acc[block.col_indices[k]] += block.values[k] * r;
            }
        });
        for (const auto& p : partial) out += p;
        return out;
    }

    // Strict mode: one partial per view, accumulated in view order in waves
    // of `threads` buffers, so the bit pattern is identical for any thread
    // count.
    const Index n_views = block.n_views();
    const Index rows_per_view = static_cast<Index>(block.m_c) * block.m_r;
    std::vector<Vec> wave(std::min<Index>(threads, std::max<Index>(n_views, 1)),
                          Vec::Zero(block.cols));
    for (Index start = 0; start < n_views; start += static_cast<Index>(wave.size())) {
        const Index count = std::min<Index>(static_cast<Index>(wave.size()), n_views - start);
        parallel_for_tasks(count, threads, [&](Index w) {
            Vec& acc = wave[w];
            acc.setZero();
            const Index v = start + w;
            for (Index i = v * rows_per_view; i < (v + 1) * rows_per_view; ++i) {
                const Scalar r = residual[i];
                if (r == 0) continue;
                for (std::uint64_t k = block.row_offsets[i]; k < block.row_offsets[i + 1]; ++k)
                    acc[block.col_indices[k]] += block.values[k] * r;
            }
        });
        for (Index w = 0; w < count; ++w) out += wave[w];
    }
    return out;
}

} // namespace dsct
