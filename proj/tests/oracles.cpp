#include "oracles.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace dsct::oracle {

namespace {

Scalar rect(Scalar t, Scalar width) { return std::abs(t) <= 0.5 * width ? 1.0 : 0.0; }

} // namespace

Scalar overlap_quadrature(Scalar l, Scalar d, Scalar delta) {
    // Panels split at every rect edge inside the integration range.
    std::vector<Scalar> bp = {-0.5 * l, 0.5 * l, delta - 0.5 * d, delta + 0.5 * d};
    std::sort(bp.begin(), bp.end());
    // 3-point Gauss-Legendre nodes on [-1, 1].
    const Scalar nodes[3] = {-std::sqrt(3.0 / 5.0), 0.0, std::sqrt(3.0 / 5.0)};
    const Scalar weights[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    Scalar integral = 0;
    for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
        const Scalar a = std::max(bp[p], -0.5 * l);
        const Scalar b = std::min(bp[p + 1], 0.5 * l);
        if (b <= a) continue;
        const Scalar mid = 0.5 * (a + b);
        const Scalar half = 0.5 * (b - a);
        for (int g = 0; g < 3; ++g) {
            const Scalar t = mid + half * nodes[g];
            integral += weights[g] * half * rect(t, l) * rect(delta - t, d) / d;
        }
    }
    return integral;
}

Scalar channel_displacement_points(const ScannerGeometry& geom, const FocalSpotSpec& spot,
                                   Scalar beta, const Point3& voxel_center, int i_c) {
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Point3 d = voxel_center - s;
    const Scalar rho = std::hypot(d.x(), d.y());
    const Point3 c = s + (r_arc / rho) * d; // ray hit on the arc
    const Point3 w = detector_unit_center(geom, spot, beta, i_c, 0);
    const Scalar angle_c = std::atan2(s.y() - c.y(), s.x() - c.x());
    const Scalar angle_w = std::atan2(s.y() - w.y(), s.x() - w.x());
    return wrap_to_pi(angle_c - angle_w) * r_arc;
}

Scalar row_displacement_points(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                               const Point3& voxel_center, int i_r) {
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Point3 d = voxel_center - s;
    const Scalar rho = std::hypot(d.x(), d.y());
    const Point3 c = s + (r_arc / rho) * d;
    const Point3 w = detector_unit_center(geom, spot, beta, 0, i_r);
    return c.z() - w.z();
}

Scalar footprint_arc_extent_points(const ScannerGeometry& geom, const FocalSpotSpec& spot,
                                   Scalar beta, const Point3& voxel_center, Scalar delta_xy) {
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Scalar h = 0.5 * delta_xy;
    std::vector<Scalar> angles;
    for (int k = 0; k < 4; ++k) {
        const Scalar cx = voxel_center.x() + ((k & 1) ? h : -h);
        const Scalar cy = voxel_center.y() + ((k & 2) ? h : -h);
        angles.push_back(std::atan2(s.y() - cy, s.x() - cx));
    }
    Scalar lo = 0, hi = 0;
    for (Scalar a : angles) {
        const Scalar rel = wrap_to_pi(a - angles[0]);
        lo = std::min(lo, rel);
        hi = std::max(hi, rel);
    }
    return (hi - lo) * r_arc;
}

Vec finite_difference_gradient(const std::function<Scalar(const Vec&)>& f, const Vec& x, Scalar h) {
    Vec g(x.size());
    Vec probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const Scalar fp = f(probe);
        probe[i] = x[i] - h;
        const Scalar fm = f(probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

namespace {

Eigen::MatrixXd dense_normal(const SparseBlock& block, const Vec& d) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(block.cols, block.cols);
    for (Index i = 0; i < block.rows; ++i) {
        for (std::uint64_t k1 = block.row_offsets[i]; k1 < block.row_offsets[i + 1]; ++k1) {
            for (std::uint64_t k2 = block.row_offsets[i]; k2 < block.row_offsets[i + 1]; ++k2) {
                h(block.col_indices[k1], block.col_indices[k2]) +=
                    d[i] * block.values[k1] * block.values[k2];
            }
        }
    }
    return h;
}

void add_quadratic_prior(Eigen::MatrixXd& h, const VoxelGrid& grid, const PriorParams& prior,
                         Scalar share) {
    if (prior.strength <= 0 || share <= 0) return;
    const Scalar scale = 2.0 * share * prior.strength / (prior.c * prior.c);
    const auto offsets = neighbor_weights(grid);
    for (int iz = 0; iz < grid.n_z; ++iz) {
        for (int iy = 0; iy < grid.n_y; ++iy) {
            for (int ix = 0; ix < grid.n_x; ++ix) {
                const Index j = grid.index(ix, iy, iz);
                for (const auto& o : offsets) {
                    const int nx = ix + o.dx, ny = iy + o.dy, nz = iz + o.dz;
                    if (nx < 0 || nx >= grid.n_x || ny < 0 || ny >= grid.n_y || nz < 0 ||
                        nz >= grid.n_z)
                        continue;
                    h(j, j) += scale * o.w;
                    h(j, grid.index(nx, ny, nz)) -= scale * o.w;
                }
            }
        }
    }
}

Vec dense_rhs(const SparseBlock& block, const Vec& y, const Vec& d) {
    Vec b = Vec::Zero(block.cols);
    for (Index i = 0; i < block.rows; ++i)
        for (std::uint64_t k = block.row_offsets[i]; k < block.row_offsets[i + 1]; ++k)
            b[block.col_indices[k]] += d[i] * block.values[k] * y[i];
    return b;
}

} // namespace

Vec dense_prox_solve(const SparseBlock& block, const Vec& y, const Vec& d, const VoxelGrid& grid,
                     const PriorParams& prior, Scalar prior_share, const Vec& anchor,
                     Scalar sigma) {
    Eigen::MatrixXd h = dense_normal(block, d);
    add_quadratic_prior(h, grid, prior, prior_share);
    const Scalar inv_sig2 = 1.0 / (sigma * sigma);
    for (Index j = 0; j < block.cols; ++j) h(j, j) += inv_sig2;
    Vec b = dense_rhs(block, y, d) + inv_sig2 * anchor;
    return h.ldlt().solve(b);
}

Vec dense_joint_solve(const std::vector<BlockData>& blocks, const VoxelGrid& grid,
                      const PriorParams& prior) {
    const Index n = grid.size();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    Vec b = Vec::Zero(n);
    for (const auto& blk : blocks) {
        h += dense_normal(*blk.block, *blk.d);
        b += dense_rhs(*blk.block, *blk.y, *blk.d);
    }
    add_quadratic_prior(h, grid, prior, 1.0);
    return h.ldlt().solve(b);
}

} // namespace dsct::oracle
