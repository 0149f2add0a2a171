#pragma once

#include "dsct/geometry.hpp"
#include "dsct/models.hpp"
#include "dsct/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace dsct {

struct ScanConfig {
    DualSourceLayout layout;
    Scalar pitch = 1.0;
    int views_per_rotation = 64;
    int rotations = 1;
    Scalar beta_start = 0.0;
};

struct ReconConfig {
    PriorParams prior;        // c in HU here; converted at the solver boundary
    Scalar sigma = 0.0;       // <= 0: solver default
    Scalar rho = 0.8;
    Scalar tol_hu = 0.1;
    int max_outer = 100;
    int inner_iters = 10;
};

struct Config {
    ScanConfig scan;
    VoxelGrid grid;
    std::optional<VoxelGrid> sim_grid; // defaults to grid
    PhantomSpec phantom;
    DoseParams dose;
    ProjectionModel model = ProjectionModel::matrix;
    int supersampling = 2;
    Scalar mu_water = 0.02;
    ReconConfig recon;
    std::uint64_t seed = 0;
};

// Parses and validates a JSON config file; schema violations carry the
// offending field path.
Config parse_config_file(const std::filesystem::path& path);
Config parse_config_text(const std::string& text, const std::string& origin);

// Canonical serialization of the resolved config (sorted keys, fixed
// float formatting) and its FNV-1a hash. Two configs with the same
// resolved content hash identically.
std::string canonical_config(const Config& config);
std::uint64_t config_hash(const Config& config);

// Re-parseable schema serialization: parse(serialize(c)) resolves to the
// same canonical form as c.
std::string serialize_config(const Config& config);

// Schedule for the configured scan.
ScanTrajectory build_trajectory(const Config& config);

} // namespace dsct
