#pragma once

#include "dsct/error.hpp"
#include "dsct/types.hpp"

#include <vector>

namespace dsct {

// Static geometry of one source-detector pair. Distances in mm, angles in
// radians. The detector is an arc concentric to the X-ray source with
// channel pitch d_c (arc length) and row pitch d_r; channel 0 is the
// leftmost channel as seen from the source.
struct ScannerGeometry {
    Scalar r_so = 595.0;   // source to isocenter, mm
    Scalar r_sd = 1085.6;  // source to detector along the central ray, mm
    Scalar d_c = 1.0;      // channel arc pitch, mm
    Scalar d_r = 1.0;      // row pitch, mm
    int m_c = 1;           // channel count
    int m_r = 1;           // row count
    Scalar tau = 0.0;      // anode tilt angle, rad
    Scalar h_r = 0.0;      // table advance per 2*pi rotation, mm
    Scalar beta_0 = 0.0;   // view angle at which the source z is 0

    void validate() const {
        if (!(r_sd > r_so && r_so > 0))
            throw Error(ErrorCategory::config, "scanner geometry requires r_sd > r_so > 0");
        if (!(d_c > 0 && d_r > 0))
            throw Error(ErrorCategory::config, "detector pitches must be positive");
        if (m_c < 1 || m_r < 1)
            throw Error(ErrorCategory::config, "detector must have at least one channel and row");
        if (h_r < 0) throw Error(ErrorCategory::config, "table advance must be nonnegative");
    }
};

// One deflection state of a focal spot: (du, dv, dw) is the displacement
// from the default spot at the 90 degree view angle. Spots on the anode
// target plane satisfy dw = tan(tau) * dv.
struct FocalSpotSpec {
    Scalar du = 0.0;
    Scalar dv = 0.0;
    Scalar dw = 0.0;

    // Spot constrained to the anode target plane.
    static FocalSpotSpec on_anode(Scalar du, Scalar dv, Scalar tau) {
        return FocalSpotSpec{du, dv, std::tan(tau) * dv};
    }
    // Unconstrained spot (test hook); bypasses the target-plane invariant.
    static FocalSpotSpec unconstrained(Scalar du, Scalar dv, Scalar dw) {
        return FocalSpotSpec{du, dv, dw};
    }
};

struct SourceDetectorPair {
    ScannerGeometry geom;
    std::vector<FocalSpotSpec> spots;
};

// Dual-source layout: up to two source-detector pairs offset by a rotation
// angle dbeta_12 and a z translation dz_12 (applied pair 1 relative to
// pair 0).
struct DualSourceLayout {
    std::vector<SourceDetectorPair> pairs;
    Scalar dbeta_12 = 0.0; // rad
    Scalar dz_12 = 0.0;    // mm

    void validate() const {
        if (pairs.empty() || pairs.size() > 2)
            throw Error(ErrorCategory::config, "layout requires 1 or 2 source-detector pairs");
        for (const auto& p : pairs) {
            p.geom.validate();
            if (p.spots.empty())
                throw Error(ErrorCategory::config, "each pair needs at least one focal spot");
        }
    }
};

// One acquisition snapshot: which pair and spot fired, at which view angle.
struct ViewSample {
    int pair_index = 0;
    int spot_index = 0;
    Scalar beta = 0.0;
    Point3 source_pos = Point3::Zero();
    Index time_index = 0;
};

// A resolved scan: the layout with per-pair h_r/beta_0 fixed from the pitch
// and dual-source offsets, plus the time-ordered view samples.
struct ScanTrajectory {
    DualSourceLayout layout;
    std::vector<ViewSample> samples;
    int views_per_rotation = 0;
    int rotations = 0;
    Scalar pitch = 0.0;
};

// Default (undeflected) source position at view angle beta:
// (r_so cos b, r_so sin b, h_r (b - beta_0) / 2 pi).
Point3 default_source_position(const ScannerGeometry& geom, Scalar beta);

// Deflected focal spot position at view angle beta; reduces to
// default_source_position when du = dv = dw = 0.
Point3 focal_spot_position(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta);

// Polar angle of the deflected spot in the x-y plane.
inline Scalar spot_polar_angle(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta) {
    return beta - std::atan2(spot.du, geom.r_so + spot.dv);
}

// Channel offset angle between the ray through the isocenter and the ray
// to the detector arc center, as seen from the deflected spot.
inline Scalar channel_offset_angle(const ScannerGeometry& geom, const FocalSpotSpec& spot) {
    return std::atan2(geom.r_sd + spot.dv, spot.du) - std::atan2(geom.r_so + spot.dv, spot.du);
}

// Direction angle (toward the spot) of the line from channel i_c's center
// to the deflected spot, in the x-y plane. Channel centers sit on the arc
// of radius r_sd + dv around the spot at equal angular pitch
// d_c / (r_sd + dv); the center channel (m_c-1)/2 lies on the spot ->
// isocenter line when du = 0.
Scalar channel_direction_angle(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                               Scalar i_c);

// 3-D center of detector unit (i_c, i_r) for the given spot and view angle.
Point3 detector_unit_center(const ScannerGeometry& geom, const FocalSpotSpec& spot, Scalar beta,
                            int i_c, int i_r);

// Collimated beam z extent at the isocenter: m_r * d_r * r_so / r_sd.
inline Scalar collimated_z_extent(const ScannerGeometry& geom) {
    return geom.m_r * geom.d_r * geom.r_so / geom.r_sd;
}

// Helical pitch -> table advance per rotation against the collimated
// z extent at the isocenter.
inline Scalar pitch_to_table_advance(const ScannerGeometry& geom, Scalar pitch) {
    return pitch * collimated_z_extent(geom);
}

// Builds the interleaved dual-source schedule: per time step every pair
// fires once, pair 1 offset by dbeta_12 / dz_12; the focal spots of one
// source alternate round-robin (spot s fires when time_index mod n_spots
// == s). The returned trajectory's layout carries h_r and beta_0 resolved
// so that source_pos == focal_spot_position(pair geometry, spot, beta)
// for every sample.
ScanTrajectory dual_source_view_schedule(const DualSourceLayout& layout, int n_views_per_rotation,
                                         int n_rotations, Scalar pitch, Scalar beta_start = 0.0);

struct ZInterval {
    Scalar lo = 0.0;
    Scalar hi = 0.0;
    Scalar length() const { return hi - lo; }
};

struct CoverageReport {
    std::vector<std::vector<ZInterval>> per_pair; // raw illuminated intervals
    std::vector<Scalar> per_pair_union_mm;
    Scalar union_mm = 0.0;
    Scalar gap_mm = 0.0;
    Scalar z_min = 0.0;
    Scalar z_max = 0.0;
    Scalar gap_fraction() const {
        Scalar range = z_max - z_min;
        return range > 0 ? gap_mm / range : 0.0;
    }
};

// Sorts and merges intervals; returns the merged set. Total length of the
// result is the union measure.
std::vector<ZInterval> merge_intervals(std::vector<ZInterval> intervals);

inline Scalar total_length(const std::vector<ZInterval>& merged) {
    Scalar s = 0;
    for (const auto& iv : merged) s += iv.length();
    return s;
}

// For each pair, the z intervals illuminated at view angles congruent to
// beta_query (mod 2 pi), plus union and gap measures over the combined
// scanned z range.
CoverageReport z_coverage_intervals(const ScanTrajectory& trajectory, Scalar beta_query);

} // namespace dsct
