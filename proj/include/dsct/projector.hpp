#pragma once

#include "dsct/geometry.hpp"
#include "dsct/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dsct {

// Reconstruction grid. Voxel (0,0,0) is centered at `origin`; linear index
// j = (iz * n_y + iy) * n_x + ix.
struct VoxelGrid {
    int n_x = 1, n_y = 1, n_z = 1;
    Scalar delta_xy = 1.0; // in-plane side length, mm
    Scalar delta_z = 1.0;  // z side length, mm
    Point3 origin = Point3::Zero();

    static VoxelGrid centered(int nx, int ny, int nz, Scalar dxy, Scalar dz) {
        VoxelGrid g;
        g.n_x = nx;
        g.n_y = ny;
        g.n_z = nz;
        g.delta_xy = dxy;
        g.delta_z = dz;
        g.origin = Point3(-(nx - 1) * 0.5 * dxy, -(ny - 1) * 0.5 * dxy, -(nz - 1) * 0.5 * dz);
        return g;
    }

    void validate() const {
        if (n_x < 1 || n_y < 1 || n_z < 1)
            throw Error(ErrorCategory::config, "voxel grid dimensions must be positive");
        if (!(delta_xy > 0 && delta_z > 0))
            throw Error(ErrorCategory::config, "voxel pitches must be positive");
    }

    Index size() const { return static_cast<Index>(n_x) * n_y * n_z; }
    Index index(int ix, int iy, int iz) const {
        return (static_cast<Index>(iz) * n_y + iy) * n_x + ix;
    }
    Point3 voxel_center(int ix, int iy, int iz) const {
        return origin + Point3(ix * delta_xy, iy * delta_xy, iz * delta_z);
    }
};

// Ray angles of a source -> voxel line: theta in the x-y plane, phi the
// elevation, and their pi/2-periodic folds into [-pi/4, pi/4].
struct RayAngles {
    Scalar theta = 0.0;
    Scalar phi = 0.0;
    Scalar theta_fold = 0.0;
    Scalar phi_fold = 0.0;
};

// Folds an angle into [-pi/4, pi/4] with period pi/2.
inline Scalar fold_angle(Scalar a) { return positive_mod(a + kPi / 4.0, kPi / 2.0) - kPi / 4.0; }

RayAngles ray_angles(const Point3& source, const Point3& voxel_center);

// Length of the ray's intersection with a voxel of in-plane side delta_xy:
// delta_xy / (cos theta_fold * cos phi_fold). The fold keeps the
// denominator in [1/2, 1].
inline Scalar chord_length(Scalar delta_xy, const RayAngles& angles) {
    return delta_xy / (std::cos(angles.theta_fold) * std::cos(angles.phi_fold));
}

// Arc-length displacement on the detector between the projection of a
// voxel center (ray angle `angles.theta`) and the center of channel i_c,
// wrapped to [-(r_sd+dv)*pi, (r_sd+dv)*pi).
Scalar channel_displacement(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            const RayAngles& angles, int i_c);

// z displacement on the detector between the projection of a voxel center
// and the center of row i_r.
Scalar row_displacement(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                        const Point3& voxel_center, int i_r);

// Detector footprint of one voxel: projection extents, the covered unit
// index ranges (inclusive), and the per-unit displacements.
struct Footprint {
    Scalar l_c = 0.0; // x-y projection extent on the detector, mm
    Scalar l_r = 0.0; // z projection extent on the detector, mm
    int c_lo = 0, c_hi = -1;
    int r_lo = 0, r_hi = -1;
    std::vector<Scalar> delta_c; // indexed by i_c - c_lo
    std::vector<Scalar> delta_r; // indexed by i_r - r_lo
    Scalar gamma = 0.0;
    Scalar alpha = 0.0;

    bool empty() const { return c_hi < c_lo || r_hi < r_lo; }
};

// Projects the voxel's four x-y corners (arc extent l_c) and two z faces
// (extent l_r, evaluated at the voxel center's x-y column) onto the
// detector. Voxels outside the detector's coverage yield an empty
// footprint.
Footprint footprint_extents(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            const Point3& voxel_center, Scalar delta_xy, Scalar delta_z);

inline Scalar clip(Scalar a, Scalar b, Scalar c) { return std::min(std::max(a, b), c); }

// Closed-form system matrix entry: footprint-normalized intersection
// length between the voxel and the rays feeding detector unit (i_c, i_r).
Scalar system_entry(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                    const Point3& voxel_center, Scalar delta_xy, Scalar delta_z, int i_c, int i_r);

// One system matrix block: all sinogram rows of one (pair, spot) over a
// view subset, stored CSR. Row index = (view_local * m_r + i_r) * m_c + i_c.
struct SparseBlock {
    int block_index = 0;
    int pair_index = 0;
    int spot_index = 0;
    int m_c = 0;
    int m_r = 0;
    Index rows = 0;
    Index cols = 0;
    std::vector<Index> view_time_indices;
    std::vector<Scalar> view_betas;
    std::vector<std::uint64_t> row_offsets;
    std::vector<std::uint32_t> col_indices;
    std::vector<Scalar> values;

    Index n_views() const { return static_cast<Index>(view_betas.size()); }
    std::uint64_t nnz() const { return values.size(); }
    Index row_index(Index view_local, int i_r, int i_c) const {
        return (view_local * m_r + i_r) * m_c + i_c;
    }
};

struct BuildOptions {
    std::uint64_t memory_budget_bytes = 0; // 0 = unlimited
    int threads = 1;
};

// Assembles the sparse block for one (pair, spot) over the given views.
// Views must all belong to the same pair and spot. Deterministic for any
// thread count.
SparseBlock build_system_block(const ScannerGeometry& geom, const FocalSpotSpec& spot,
                               const std::vector<ViewSample>& views, const VoxelGrid& grid,
                               const BuildOptions& options = {});

// y = A x.
Vec forward_project(const SparseBlock& block, const Vec& volume, int threads = 1);

struct BackprojectOptions {
    int threads = 1;
    // Ordered per-view reduction, bit-reproducible across thread counts.
    // When false, per-worker partials are reduced in worker order instead
    // (reproducible only for a fixed thread count).
    bool strict_reduction = true;
};

// v = A^T r, the exact adjoint of forward_project.
Vec back_project(const SparseBlock& block, const Vec& residual, const BackprojectOptions& options = {});

} // namespace dsct
