#pragma once

#include "dsct/models.hpp"
#include "dsct/projector.hpp"
#include "dsct/simulator.hpp"
#include "dsct/solver.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsct {

// All containers are little-endian with an 8-byte magic string and a u32
// version. Layouts are documented in the README.

// Volume container "DSCTVOL1": unit tag, dims, pitches, origin, values
// (f64, x fastest).
void write_volume(const std::filesystem::path& path, const Volume& volume);
Volume read_volume(const std::filesystem::path& path);

// Sinogram block container "DSCTSIN1": config hash, pair/spot, detector
// dims, per-view time index and beta, post-log values and pre-log counts.
void write_sinogram_block(const std::filesystem::path& path, const BlockRealization& block,
                          std::uint64_t config_hash, Scalar i0, Scalar sigma_e2);
struct SinogramFile {
    BlockRealization block;
    std::uint64_t config_hash = 0;
    Scalar i0 = 0;
    Scalar sigma_e2 = 0;
};
SinogramFile read_sinogram_block(const std::filesystem::path& path);

// System matrix block container "DSCTBLK1": dims and counts header, then
// row offsets (u64), column indices (u32), values (f64).
void write_sparse_block(const std::filesystem::path& path, const SparseBlock& block);
SparseBlock read_sparse_block(const std::filesystem::path& path);

// 16-bit portable graymap (P5, maxval 65535) of one axial slice with a
// JSON window/level sidecar at <path>.json.
void write_pgm16_slice(const std::filesystem::path& path, const Volume& volume, int iz,
                       Scalar window, Scalar level);

// CSV writers (header row + data rows).
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history,
                       bool suppress_wall_time);
void write_curve_csv(const std::filesystem::path& path, const std::string& x_name,
                     const std::string& y_name, const Vec& x, const Vec& y);

// Atomic text write: temp file in the same directory, then rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

// FNV-1a 64-bit, used for config hashes.
std::uint64_t fnv1a_hash(const std::string& bytes);

} // namespace dsct
