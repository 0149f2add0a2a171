// Shared miniature scan fixtures for the solver and acceptance suites.
#pragma once

#include "dsct/models.hpp"
#include "dsct/projector.hpp"
#include "dsct/simulator.hpp"
#include "dsct/solver.hpp"

#include <memory>
#include <vector>

namespace dsct::testing {

struct MiniScanParams {
    int n_pairs = 2;
    int n_spots = 2;
    int grid_nx = 8, grid_ny = 8, grid_nz = 4;
    Scalar voxel_xy = 1.5, voxel_z = 1.5;
    int m_c = 36, m_r = 12;
    int views_per_rotation = 32;
    int rotations = 2;
    Scalar pitch = 0.8;
};

struct MiniScan {
    ScanTrajectory trajectory;
    VoxelGrid grid;
    std::vector<std::shared_ptr<SparseBlock>> blocks;
    std::vector<Vec> sinograms; // noise-free A x
    std::vector<Vec> weights;
    Vec x_true;

    std::vector<BlockData> block_data() const {
        std::vector<BlockData> out;
        for (std::size_t k = 0; k < blocks.size(); ++k)
            out.push_back({blocks[k].get(), &sinograms[k], &weights[k]});
        return out;
    }

    std::vector<AgentProblem> agents(const PriorParams& prior) const {
        std::vector<AgentProblem> out;
        out.reserve(blocks.size());
        for (std::size_t k = 0; k < blocks.size(); ++k)
            out.emplace_back(*blocks[k], sinograms[k], weights[k], grid, prior,
                             1.0 / static_cast<Scalar>(blocks.size()));
        return out;
    }
};

inline DualSourceLayout mini_layout(const MiniScanParams& p) {
    DualSourceLayout layout;
    for (int pair_i = 0; pair_i < p.n_pairs; ++pair_i) {
        SourceDetectorPair pair;
        pair.geom.r_so = 595.0;
        pair.geom.r_sd = 1085.6;
        pair.geom.d_c = 1.0232;
        pair.geom.d_r = 1.094;
        pair.geom.m_c = pair_i == 1 ? p.m_c - 8 : p.m_c; // narrower second detector
        pair.geom.m_r = p.m_r;
        pair.geom.tau = 0.14;
        pair.geom.beta_0 = p.rotations * kPi; // scan z range centered on 0
        if (p.n_spots == 1) {
            pair.spots = {FocalSpotSpec::on_anode(0.0, 0.0, pair.geom.tau)};
        } else {
            const Scalar dv = 0.25 * pair.geom.d_r / std::tan(pair.geom.tau);
            pair.spots = {FocalSpotSpec::on_anode(0.25 * pair.geom.d_c, dv, pair.geom.tau),
                          FocalSpotSpec::on_anode(-0.25 * pair.geom.d_c, -dv, pair.geom.tau)};
        }
        layout.pairs.push_back(pair);
    }
    layout.dbeta_12 = deg_to_rad(95.0);
    layout.dz_12 = 0.88;
    return layout;
}

// Proximal scale balancing the per-agent data curvature: sigma^2 ~ K over
// the mean diagonal of sum_k A^kT D^k A^k.
inline Scalar balanced_sigma(const std::vector<AgentProblem>& agents) {
    Vec diag = Vec::Zero(agents.front().block().cols);
    for (const auto& a : agents) diag += a.col_weighted_sq();
    const Scalar mean = diag.mean();
    return std::sqrt(static_cast<Scalar>(agents.size()) / std::max(mean, Scalar(1e-12)));
}

// A smooth off-center cylinder phantom in attenuation units.
inline Vec mini_phantom_values(const VoxelGrid& grid) {
    PhantomSpec spec;
    spec.background_hu = -1000.0;
    CylinderPrim cyl;
    cyl.center = Point3(0.8, -0.5, 0.0);
    cyl.radius = 0.31 * grid.n_x * grid.delta_xy;
    cyl.height = 0.0;
    cyl.value_hu = 0.0;
    spec.primitives.push_back(cyl);
    BoxPrim box;
    box.center = Point3(-1.2, 1.0, 0.4);
    box.size = Point3(2.5, 2.0, 2.2);
    box.value_hu = 400.0;
    spec.primitives.push_back(box);
    const Volume hu = build_phantom(spec, grid, 2);
    return volume_to_attenuation(hu, 0.02).values;
}

// Builds blocks grouped by (pair, spot); `split_views` > 1 additionally
// partitions each group round-robin into that many blocks.
inline MiniScan make_mini_scan(const MiniScanParams& p = {}, int split_views = 1) {
    MiniScan scan;
    scan.grid = VoxelGrid::centered(p.grid_nx, p.grid_ny, p.grid_nz, p.voxel_xy, p.voxel_z);
    scan.trajectory =
        dual_source_view_schedule(mini_layout(p), p.views_per_rotation, p.rotations, p.pitch);
    scan.x_true = mini_phantom_values(scan.grid);

    for (int pair_i = 0; pair_i < p.n_pairs; ++pair_i) {
        const auto& pair = scan.trajectory.layout.pairs[pair_i];
        for (std::size_t spot_i = 0; spot_i < pair.spots.size(); ++spot_i) {
            std::vector<std::vector<ViewSample>> groups(split_views);
            int counter = 0;
            for (const auto& s : scan.trajectory.samples)
                if (s.pair_index == pair_i && s.spot_index == static_cast<int>(spot_i))
                    groups[counter++ % split_views].push_back(s);
            for (auto& views : groups) {
                if (views.empty()) continue;
                auto block = std::make_shared<SparseBlock>(
                    build_system_block(pair.geom, pair.spots[spot_i], views, scan.grid));
                block->block_index = static_cast<int>(scan.blocks.size());
                scan.sinograms.push_back(forward_project(*block, scan.x_true));
                // Mildly varying weights keyed to the physical measurement,
                // so any view partition sees the same D.
                Vec d(block->rows);
                const Index rows_per_view = static_cast<Index>(block->m_c) * block->m_r;
                for (Index i = 0; i < block->rows; ++i) {
                    const Index t = block->view_time_indices[i / rows_per_view];
                    const Index unit = i % rows_per_view;
                    d[i] = 0.5 + 0.5 / (1.0 + static_cast<Scalar>((t * 131 + unit) % 7));
                }
                scan.weights.push_back(d);
                scan.blocks.push_back(std::move(block));
            }
        }
    }
    return scan;
}

} // namespace dsct::testing
