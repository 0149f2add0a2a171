#include "dsct/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dsct {

Point3 default_source_position(const ScannerGeometry& geom, Scalar beta) {
    return Point3(geom.r_so * std::cos(beta), geom.r_so * std::sin(beta),
                  geom.h_r * (beta - geom.beta_0) / (2.0 * kPi));
}

Point3 focal_spot_position(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta) {
    const Scalar cb = std::cos(beta);
    const Scalar sb = std::sin(beta);
    return Point3(geom.r_so * cb + sb * spot.du + cb * spot.dv,
                  geom.r_so * sb - cb * spot.du + sb * spot.dv,
                  geom.h_r * (beta - geom.beta_0) / (2.0 * kPi) + spot.dw);
}

Scalar channel_direction_angle(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                               Scalar i_c) {
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Scalar gamma = spot_polar_angle(geom, spot, beta);
    const Scalar alpha = channel_offset_angle(geom, spot);
    return gamma + alpha - ((geom.m_c - 1) * 0.5 - i_c) * geom.d_c / r_arc;
}

Point3 detector_unit_center(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            int i_c, int i_r) {
    if (i_c < 0 || i_c >= geom.m_c || i_r < 0 || i_r >= geom.m_r)
        throw Error(ErrorCategory::dimension, "detector unit index out of range");
    const Scalar r_arc = geom.r_sd + spot.dv;
    const Point3 s = focal_spot_position(geom, spot, beta);
    const Scalar ang = channel_direction_angle(geom, spot, beta, static_cast<Scalar>(i_c));
    // Rows are fixed on the gantry: their z does not follow the spot's dw.
    const Scalar z = s.z() - spot.dw + (i_r - (geom.m_r - 1) * 0.5) * geom.d_r;
    return Point3(s.x() - r_arc * std::cos(ang), s.y() - r_arc * std::sin(ang), z);
}

ScanTrajectory dual_source_view_schedule(const DualSourceLayout& layout, int n_views_per_rotation,
                                         int n_rotations, Scalar pitch, Scalar beta_start) {
    layout.validate();
    if (n_views_per_rotation < 1)
        throw Error(ErrorCategory::config, "schedule needs at least one view per rotation");
    if (n_rotations < 1) throw Error(ErrorCategory::config, "schedule needs at least one rotation");
    if (!(pitch > 0)) throw Error(ErrorCategory::config, "pitch must be positive");

    ScanTrajectory traj;
    traj.layout = layout;
    traj.views_per_rotation = n_views_per_rotation;
    traj.rotations = n_rotations;
    traj.pitch = pitch;

    // The table advance is shared by both pairs; derive it from pair 0.
    const Scalar h_r = pitch_to_table_advance(layout.pairs[0].geom, pitch);
    for (std::size_t p = 0; p < traj.layout.pairs.size(); ++p) {
        auto& geom = traj.layout.pairs[p].geom;
        geom.h_r = h_r;
        if (p == 1) {
            // Pair 1 leads pair 0 by dbeta_12 in angle and dz_12 in z:
            // beta_0 shifted so z(beta + dbeta_12) = z0(beta) + dz_12.
            geom.beta_0 = traj.layout.pairs[0].geom.beta_0 + traj.layout.dbeta_12 -
                          2.0 * kPi * traj.layout.dz_12 / h_r;
        }
    }

    const Scalar dbeta = 2.0 * kPi / n_views_per_rotation;
    const Index n_views = static_cast<Index>(n_views_per_rotation) * n_rotations;
    traj.samples.reserve(static_cast<std::size_t>(n_views) * traj.layout.pairs.size());
    for (Index t = 0; t < n_views; ++t) {
        for (std::size_t p = 0; p < traj.layout.pairs.size(); ++p) {
            const auto& pair = traj.layout.pairs[p];
            ViewSample s;
            s.pair_index = static_cast<int>(p);
            s.spot_index = static_cast<int>(t % static_cast<Index>(pair.spots.size()));
            s.beta = beta_start + t * dbeta + (p == 1 ? traj.layout.dbeta_12 : 0.0);
            s.source_pos = focal_spot_position(pair.geom, pair.spots[s.spot_index], s.beta);
            s.time_index = t;
            traj.samples.push_back(s);
        }
    }
    return traj;
}

std::vector<ZInterval> merge_intervals(std::vector<ZInterval> intervals) {
    std::sort(intervals.begin(), intervals.end(),
              [](const ZInterval& a, const ZInterval& b) { return a.lo < b.lo; });
    std::vector<ZInterval> merged;
    for (const auto& iv : intervals) {
        if (!merged.empty() && iv.lo <= merged.back().hi)
            merged.back().hi = std::max(merged.back().hi, iv.hi);
        else
            merged.push_back(iv);
    }
    return merged;
}

CoverageReport z_coverage_intervals(const ScanTrajectory& trajectory, Scalar beta_query) {
    if (trajectory.samples.empty())
        throw Error(ErrorCategory::config, "coverage query needs a nonempty schedule");
    const std::size_t n_pairs = trajectory.layout.pairs.size();
    const Scalar dbeta = 2.0 * kPi / trajectory.views_per_rotation;

    CoverageReport report;
    report.per_pair.resize(n_pairs);
    report.per_pair_union_mm.assign(n_pairs, 0.0);

    for (const auto& s : trajectory.samples) {
        // The sample belongs to the queried view-angle class when its beta
        // is the closest one in its rotation (within half a view step).
        if (std::abs(wrap_to_pi(s.beta - beta_query)) > dbeta * 0.5) continue;
        const auto& geom = trajectory.layout.pairs[s.pair_index].geom;
        const Scalar half = 0.5 * collimated_z_extent(geom);
        report.per_pair[s.pair_index].push_back({s.source_pos.z() - half, s.source_pos.z() + half});
    }

    std::vector<ZInterval> all;
    bool any = false;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        auto merged = merge_intervals(report.per_pair[p]);
        report.per_pair_union_mm[p] = total_length(merged);
        for (const auto& iv : merged) {
            all.push_back(iv);
            if (!any) {
                report.z_min = iv.lo;
                report.z_max = iv.hi;
                any = true;
            } else {
                report.z_min = std::min(report.z_min, iv.lo);
                report.z_max = std::max(report.z_max, iv.hi);
            }
        }
    }
    auto merged_all = merge_intervals(all);
    report.union_mm = total_length(merged_all);
    report.gap_mm = (report.z_max - report.z_min) - report.union_mm;
    return report;
}

} // namespace dsct
