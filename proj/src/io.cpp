#include "dsct/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dsct {

namespace {

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* data, std::size_t n, const char* what) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw Error(ErrorCategory::io, std::string("short read while loading ") + what);
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    write_bytes(out, &v, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
    T v;
    read_bytes(in, &v, sizeof(T), what);
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCategory::io, "cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::io, "cannot open for reading: " + path.string());
    return in;
}

void check_magic(std::ifstream& in, const char expected[8], const std::filesystem::path& path) {
    char magic[8];
    read_bytes(in, magic, 8, "magic");
    if (std::memcmp(magic, expected, 8) != 0)
        throw Error(ErrorCategory::io, "bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != 1)
        throw Error(ErrorCategory::io, "unsupported container version in " + path.string());
}

} // namespace

void write_volume(const std::filesystem::path& path, const Volume& volume) {
    auto out = open_out(path);
    write_bytes(out, "DSCTVOL1", 8);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(volume.unit));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(volume.grid.n_x));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(volume.grid.n_y));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(volume.grid.n_z));
    write_pod<double>(out, volume.grid.delta_xy);
    write_pod<double>(out, volume.grid.delta_z);
    for (int a = 0; a < 3; ++a) write_pod<double>(out, volume.grid.origin[a]);
    write_bytes(out, volume.values.data(), sizeof(double) * volume.values.size());
    if (!out) throw Error(ErrorCategory::io, "write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
    auto in = open_in(path);
    check_magic(in, "DSCTVOL1", path);
    Volume v;
    v.unit = static_cast<VolumeUnit>(read_pod<std::uint32_t>(in, "unit"));
    v.grid.n_x = static_cast<int>(read_pod<std::uint32_t>(in, "nx"));
    v.grid.n_y = static_cast<int>(read_pod<std::uint32_t>(in, "ny"));
    v.grid.n_z = static_cast<int>(read_pod<std::uint32_t>(in, "nz"));
    v.grid.delta_xy = read_pod<double>(in, "delta_xy");
    v.grid.delta_z = read_pod<double>(in, "delta_z");
    for (int a = 0; a < 3; ++a) v.grid.origin[a] = read_pod<double>(in, "origin");
    v.grid.validate();
    v.values.resize(v.grid.size());
    read_bytes(in, v.values.data(), sizeof(double) * v.values.size(), "volume values");
    return v;
}

void write_sinogram_block(const std::filesystem::path& path, const BlockRealization& block,
                          std::uint64_t config_hash, Scalar i0, Scalar sigma_e2) {
    auto out = open_out(path);
    write_bytes(out, "DSCTSIN1", 8);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint64_t>(out, config_hash);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.pair_index));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.spot_index));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.m_c));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.m_r));
    write_pod<std::uint64_t>(out, block.view_time_indices.size());
    write_pod<double>(out, i0);
    write_pod<double>(out, sigma_e2);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(block.n_floored));
    for (auto t : block.view_time_indices) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t));
    for (auto b : block.view_betas) write_pod<double>(out, b);
    write_bytes(out, block.y.data(), sizeof(double) * block.y.size());
    write_bytes(out, block.counts.data(), sizeof(double) * block.counts.size());
    if (!out) throw Error(ErrorCategory::io, "write failed: " + path.string());
}

SinogramFile read_sinogram_block(const std::filesystem::path& path) {
    auto in = open_in(path);
    check_magic(in, "DSCTSIN1", path);
    SinogramFile f;
    f.config_hash = read_pod<std::uint64_t>(in, "config hash");
    f.block.pair_index = static_cast<int>(read_pod<std::uint32_t>(in, "pair"));
    f.block.spot_index = static_cast<int>(read_pod<std::uint32_t>(in, "spot"));
    f.block.m_c = static_cast<int>(read_pod<std::uint32_t>(in, "m_c"));
    f.block.m_r = static_cast<int>(read_pod<std::uint32_t>(in, "m_r"));
    const auto n_views = read_pod<std::uint64_t>(in, "view count");
    f.i0 = read_pod<double>(in, "i0");
    f.sigma_e2 = read_pod<double>(in, "sigma_e2");
    f.block.n_floored = static_cast<Index>(read_pod<std::uint64_t>(in, "floored counter"));
    f.block.view_time_indices.resize(n_views);
    for (auto& t : f.block.view_time_indices)
        t = static_cast<Index>(read_pod<std::uint64_t>(in, "time index"));
    f.block.view_betas.resize(n_views);
    for (auto& b : f.block.view_betas) b = read_pod<double>(in, "beta");
    const Index rows = static_cast<Index>(n_views) * f.block.m_c * f.block.m_r;
    f.block.y.resize(rows);
    read_bytes(in, f.block.y.data(), sizeof(double) * rows, "sinogram values");
    f.block.counts.resize(rows);
    read_bytes(in, f.block.counts.data(), sizeof(double) * rows, "counts");
    return f;
}

void write_sparse_block(const std::filesystem::path& path, const SparseBlock& block) {
    auto out = open_out(path);
    write_bytes(out, "DSCTBLK1", 8);
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.block_index));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.pair_index));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.spot_index));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.m_c));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block.m_r));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(block.rows));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(block.cols));
    write_pod<std::uint64_t>(out, block.nnz());
    write_pod<std::uint64_t>(out, block.view_time_indices.size());
    for (auto t : block.view_time_indices) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t));
    for (auto b : block.view_betas) write_pod<double>(out, b);
    write_bytes(out, block.row_offsets.data(), sizeof(std::uint64_t) * block.row_offsets.size());
    write_bytes(out, block.col_indices.data(), sizeof(std::uint32_t) * block.col_indices.size());
    write_bytes(out, block.values.data(), sizeof(double) * block.values.size());
    if (!out) throw Error(ErrorCategory::io, "write failed: " + path.string());
}

SparseBlock read_sparse_block(const std::filesystem::path& path) {
    auto in = open_in(path);
    check_magic(in, "DSCTBLK1", path);
    SparseBlock b;
    b.block_index = static_cast<int>(read_pod<std::uint32_t>(in, "block index"));
    b.pair_index = static_cast<int>(read_pod<std::uint32_t>(in, "pair"));
    b.spot_index = static_cast<int>(read_pod<std::uint32_t>(in, "spot"));
    b.m_c = static_cast<int>(read_pod<std::uint32_t>(in, "m_c"));
    b.m_r = static_cast<int>(read_pod<std::uint32_t>(in, "m_r"));
    b.rows = static_cast<Index>(read_pod<std::uint64_t>(in, "rows"));
    b.cols = static_cast<Index>(read_pod<std::uint64_t>(in, "cols"));
    const auto nnz = read_pod<std::uint64_t>(in, "nnz");
    const auto n_views = read_pod<std::uint64_t>(in, "view count");
    b.view_time_indices.resize(n_views);
    for (auto& t : b.view_time_indices)
        t = static_cast<Index>(read_pod<std::uint64_t>(in, "time index"));
    b.view_betas.resize(n_views);
    for (auto& beta : b.view_betas) beta = read_pod<double>(in, "beta");
    b.row_offsets.resize(static_cast<std::size_t>(b.rows) + 1);
    read_bytes(in, b.row_offsets.data(), sizeof(std::uint64_t) * b.row_offsets.size(),
               "row offsets");
    b.col_indices.resize(nnz);
    read_bytes(in, b.col_indices.data(), sizeof(std::uint32_t) * nnz, "column indices");
    b.values.resize(nnz);
    read_bytes(in, b.values.data(), sizeof(double) * nnz, "values");
    return b;
}

void write_pgm16_slice(const std::filesystem::path& path, const Volume& volume, int iz,
                       Scalar window, Scalar level) {
    if (iz < 0 || iz >= volume.grid.n_z)
        throw Error(ErrorCategory::config, "slice index out of range");
    if (!(window > 0)) throw Error(ErrorCategory::config, "window must be positive");
    auto out = open_out(path);
    const int nx = volume.grid.n_x, ny = volume.grid.n_y;
    out << "P5\n" << nx << " " << ny << "\n65535\n";
    const Scalar lo = level - 0.5 * window;
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const Scalar v = volume.values[volume.grid.index(ix, iy, iz)];
            Scalar t = (v - lo) / window;
            t = std::clamp(t, Scalar(0), Scalar(1));
            const auto g = static_cast<std::uint16_t>(std::lround(t * 65535.0));
            // PGM 16-bit samples are most-significant byte first.
            const unsigned char bytes[2] = {static_cast<unsigned char>(g >> 8),
                                            static_cast<unsigned char>(g & 0xff)};
            write_bytes(out, bytes, 2);
        }
    }
    std::ostringstream sidecar;
    sidecar << "{\n  \"window\": " << window << ",\n  \"level\": " << level
            << ",\n  \"slice\": " << iz << ",\n  \"nx\": " << nx << ",\n  \"ny\": " << ny
            << "\n}\n";
    write_text_atomic(path.string() + ".json", sidecar.str());
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history,
                       bool suppress_wall_time) {
    std::ostringstream out;
    out << "iteration,cost,max_disagreement,wall_time_s\n";
    out.precision(17);
    for (const auto& row : history) {
        out << row.iteration << "," << row.cost << "," << row.max_disagreement << ","
            << (suppress_wall_time ? 0.0 : row.wall_time_s) << "\n";
    }
    write_text_atomic(path, out.str());
}

void write_curve_csv(const std::filesystem::path& path, const std::string& x_name,
                     const std::string& y_name, const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw Error(ErrorCategory::dimension, "curve columns disagree");
    std::ostringstream out;
    out << x_name << "," << y_name << "\n";
    out.precision(17);
    for (Index i = 0; i < x.size(); ++i) out << x[i] << "," << y[i] << "\n";
    write_text_atomic(path, out.str());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCategory::io, "cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw Error(ErrorCategory::io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace dsct
