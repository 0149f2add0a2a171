#pragma once

#include "dsct/geometry.hpp"
#include "dsct/models.hpp"
#include "dsct/projector.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dsct {

// Phantom primitives. Later primitives override earlier ones where they
// overlap; values are in HU.
struct CylinderPrim {
    Point3 center = Point3::Zero();
    Scalar radius = 1.0;
    Scalar height = 0.0; // <= 0: infinite along z
    Scalar value_hu = 0.0;
};

struct BoxPrim {
    Point3 center = Point3::Zero();
    Point3 size = Point3::Ones(); // full edge lengths
    Scalar value_hu = 0.0;
};

// Resolution bars inside a box: stripes of width 1/(2 f) normal to x,
// alternating bar material and gaps; gaps are transparent (the material
// behind shows through).
struct BarPatternPrim {
    Point3 center = Point3::Zero();
    Point3 size = Point3::Ones();
    Scalar frequency = 0.5; // line pairs per mm
    Scalar value_hu = 0.0;
};

// A ramp of thin wires along x, advancing in y and z per wire.
struct WireRampPrim {
    Point3 start = Point3::Zero(); // center of the first wire
    Scalar length = 10.0;          // wire length along x
    Scalar wire_radius = 0.25;
    int n_wires = 1;
    Scalar step_y = 0.0;
    Scalar step_z = 0.5;
    Scalar value_hu = 1000.0;
};

using Primitive = std::variant<CylinderPrim, BoxPrim, BarPatternPrim, WireRampPrim>;

struct PhantomSpec {
    Scalar background_hu = -1000.0;
    std::vector<Primitive> primitives;
};

// HU at a point (later primitives override earlier ones).
Scalar phantom_value_at(const PhantomSpec& spec, const Point3& p);

// Voxelized phantom with antialiasing supersampling (samples_per_axis^3
// samples per voxel; the default 2 gives 8x supersampling). Primitives
// reaching outside the grid are clipped with a warning.
Volume build_phantom(const PhantomSpec& spec, const VoxelGrid& grid, int samples_per_axis = 2,
                     std::vector<std::string>* warnings = nullptr);

// Exact chord length of the ray from `source` through `unit_center` with a
// (finite or infinite) z-axis-aligned cylinder; 0 on miss.
Scalar analytic_cylinder_projection(const CylinderPrim& cylinder, const Point3& source,
                                    const Point3& unit_center);

// Exact chord with an axis-aligned box.
Scalar analytic_box_projection(const BoxPrim& box, const Point3& source, const Point3& unit_center);

// Exact line integral of attenuation over the phantom; requires background
// of -1000 HU (vacuum) and supports cylinder/box/bar primitives.
Scalar analytic_line_integral(const PhantomSpec& spec, const Point3& source,
                              const Point3& unit_center, Scalar mu_water);

struct DoseParams {
    Scalar i0 = 1e5;       // incident photons per detector unit per view
    Scalar sigma_e2 = 0.0; // electronic noise variance, counts^2
    bool noise = true;
    Scalar count_floor = 1.0;
};

struct BlockRealization {
    int pair_index = 0;
    int spot_index = 0;
    std::vector<Index> view_time_indices;
    std::vector<Scalar> view_betas;
    int m_c = 0;
    int m_r = 0;
    Vec y;      // post-log line integrals
    Vec counts; // pre-log photon counts
    Index n_floored = 0;
};

struct ScanRealization {
    std::vector<BlockRealization> blocks;
    std::uint64_t seed = 0;
    DoseParams dose;
};

enum class ProjectionModel { matrix, analytic };

struct SimulateOptions {
    ProjectionModel model = ProjectionModel::matrix;
    std::uint64_t seed = 0;
    DoseParams dose;
    Scalar mu_water = 0.02;
    int threads = 1;
    // Matrix path: voxelization grid and supersampling.
    VoxelGrid sim_grid;
    int supersampling = 2;
};

// Synthesizes one scan: per block, noise-free line integrals by the system
// matrix (phantom voxelized on sim_grid) or the analytic oracle, then
// counts lambda ~ Poisson(i0 exp(-ybar)) + N(0, sigma_e2) floored at
// count_floor, and y = ln(i0 / lambda). Bit-reproducible given the seed:
// each view draws from its own stream keyed by (seed, pair, spot,
// time_index).
ScanRealization simulate_scan(const PhantomSpec& phantom, const ScanTrajectory& trajectory,
                              const SimulateOptions& options);

// Noise step alone, for callers that already have noise-free sinograms.
void apply_counting_noise(BlockRealization& block, const DoseParams& dose, std::uint64_t seed);

} // namespace dsct
