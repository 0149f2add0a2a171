// dsct: dual-source flying-focal-spot CT pipeline driver.
// Subcommands: simulate | reconstruct | metrics | coverage.
// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 non-convergence.

#include "dsct/config.hpp"
#include "dsct/io.hpp"
#include "dsct/metrics.hpp"
#include "dsct/models.hpp"
#include "dsct/simulator.hpp"
#include "dsct/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsct;

namespace {

constexpr const char* kToolVersion = "0.1.0";

int exit_code_for(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::config:
    case ErrorCategory::io:
    case ErrorCategory::dimension: return 2;
    case ErrorCategory::numeric: return 3;
    case ErrorCategory::nonconvergence: return 4;
    }
    return 3;
}

void print_error(ErrorCategory category, const std::string& message) {
    std::cerr << "DSCT-ERROR category=" << to_string(category) << " message=\"" << message
              << "\"\n";
}

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << "0x" << std::hex << v;
    return out.str();
}

int default_threads() {
    if (const char* env = std::getenv("DSCT_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 0; // hardware concurrency
}

struct ManifestWriter {
    json j;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    bool deterministic = true;

    ManifestWriter(const std::string& subcommand) {
        j["tool_version"] = kToolVersion;
        j["subcommand"] = subcommand;
        j["outputs"] = json::array();
    }
    void add_output(const fs::path& p) { j["outputs"].push_back(p.string()); }
    void write(const fs::path& dir) {
        j["deterministic"] = deterministic;
        j["wall_time_s"] =
            deterministic
                ? 0.0
                : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_text_atomic(dir / "manifest.json", j.dump(2) + "\n");
    }
};

std::vector<int> parse_int_list(const std::string& text, std::size_t expected,
                                const std::string& flag) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    } catch (const std::exception&) {
        throw Error(ErrorCategory::config, flag + ": not an integer list");
    }
    if (out.size() != expected)
        throw Error(ErrorCategory::config,
                    flag + " expects " + std::to_string(expected) + " comma-separated integers");
    return out;
}

std::vector<double> parse_double_list(const std::string& text, std::size_t expected,
                                      const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    try {
        while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    } catch (const std::exception&) {
        throw Error(ErrorCategory::config, flag + ": not a number list");
    }
    if (out.size() != expected)
        throw Error(ErrorCategory::config,
                    flag + " expects " + std::to_string(expected) + " comma-separated numbers");
    return out;
}

fs::path block_filename(int pair, int spot) {
    return "block_p" + std::to_string(pair) + "_s" + std::to_string(spot) + ".sino";
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const fs::path& config_path, std::optional<std::uint64_t> seed_flag,
                 const fs::path& out_dir, int threads, const std::string& model_flag,
                 bool deterministic) {
    Config cfg = parse_config_file(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (model_flag == "matrix") cfg.model = ProjectionModel::matrix;
    else if (model_flag == "analytic") cfg.model = ProjectionModel::analytic;
    else if (!model_flag.empty())
        throw Error(ErrorCategory::config, "--model must be 'matrix' or 'analytic'");

    fs::create_directories(out_dir);
    const std::uint64_t hash = config_hash(cfg);

    const ScanTrajectory traj = build_trajectory(cfg);
    SimulateOptions opt;
    opt.model = cfg.model;
    opt.seed = cfg.seed;
    opt.dose = cfg.dose;
    opt.mu_water = cfg.mu_water;
    opt.threads = threads;
    opt.sim_grid = cfg.sim_grid ? *cfg.sim_grid : cfg.grid;
    opt.supersampling = cfg.supersampling;

    const ScanRealization real = simulate_scan(cfg.phantom, traj, opt);

    ManifestWriter manifest("simulate");
    manifest.deterministic = deterministic;
    manifest.j["config_hash"] = hex64(hash);
    manifest.j["seed"] = cfg.seed;
    manifest.j["input_config"] = config_path.string();
    Index floored = 0;
    for (const auto& block : real.blocks) {
        const fs::path p = out_dir / block_filename(block.pair_index, block.spot_index);
        write_sinogram_block(p, block, hash, cfg.dose.i0, cfg.dose.sigma_e2);
        manifest.add_output(p);
        floored += block.n_floored;
    }
    manifest.j["counters"] = {{"floored_counts", floored},
                              {"blocks", real.blocks.size()},
                              {"views", traj.samples.size()}};
    write_text_atomic(out_dir / "config.json", serialize_config(cfg));
    manifest.add_output(out_dir / "config.json");
    manifest.write(out_dir);
    std::cout << "simulate: wrote " << real.blocks.size() << " sinogram blocks to "
              << out_dir.string() << " (config hash " << hex64(hash) << ")\n";
    return 0;
}

// ------------------------------------------------------------- reconstruct

int cmd_reconstruct(const fs::path& blocks_dir, const fs::path& out_dir, int threads,
                    bool deterministic, std::optional<double> strength, std::optional<double> p,
                    std::optional<double> q, std::optional<double> c_hu,
                    std::optional<double> sigma, std::optional<double> rho,
                    std::optional<double> tol_hu, std::optional<int> max_iters,
                    std::optional<int> inner_iters, bool export_pgm, double pgm_window,
                    double pgm_level) {
    Config cfg = parse_config_file(blocks_dir / "config.json");
    if (strength) cfg.recon.prior.strength = *strength;
    if (p) cfg.recon.prior.p = *p;
    if (q) cfg.recon.prior.q = *q;
    if (c_hu) cfg.recon.prior.c = *c_hu;
    cfg.recon.prior.validate();
    if (sigma) cfg.recon.sigma = *sigma;
    if (rho) cfg.recon.rho = *rho;
    if (tol_hu) cfg.recon.tol_hu = *tol_hu;
    if (max_iters) cfg.recon.max_outer = *max_iters;
    if (inner_iters) cfg.recon.inner_iters = *inner_iters;
    if (!(cfg.recon.tol_hu > 0)) throw Error(ErrorCategory::config, "tolerance must be positive");
    if (!(cfg.recon.rho > 0 && cfg.recon.rho <= 1))
        throw Error(ErrorCategory::config, "rho must be in (0, 1]");
    const std::uint64_t expected_hash = config_hash(cfg);

    // Load all sinogram blocks and check they belong to one config.
    std::vector<SinogramFile> files;
    for (const auto& entry : fs::directory_iterator(blocks_dir)) {
        if (entry.path().extension() == ".sino") files.push_back(read_sinogram_block(entry.path()));
    }
    if (files.empty())
        throw Error(ErrorCategory::config, "no .sino blocks found in " + blocks_dir.string());
    std::sort(files.begin(), files.end(), [](const SinogramFile& a, const SinogramFile& b) {
        return std::pair(a.block.pair_index, a.block.spot_index) <
               std::pair(b.block.pair_index, b.block.spot_index);
    });
    for (const auto& f : files)
        if (f.config_hash != files.front().config_hash)
            throw Error(ErrorCategory::dimension, "sinogram blocks carry mismatched config hashes");

    const ScanTrajectory traj = build_trajectory(cfg);

    // Rebuild the system blocks and assemble the agents.
    const Scalar mu_w = cfg.mu_water;
    PriorParams prior = cfg.recon.prior;
    prior.c = prior.c * mu_w / 1000.0; // HU -> attenuation units
    std::vector<std::shared_ptr<SparseBlock>> blocks;
    std::vector<Vec> sinos, weights;
    for (const auto& f : files) {
        if (f.block.pair_index >= static_cast<int>(traj.layout.pairs.size()))
            throw Error(ErrorCategory::dimension, "sinogram block pair index outside layout");
        const auto& pair = traj.layout.pairs[f.block.pair_index];
        if (f.block.spot_index >= static_cast<int>(pair.spots.size()))
            throw Error(ErrorCategory::dimension, "sinogram block spot index outside layout");
        if (f.block.m_c != pair.geom.m_c || f.block.m_r != pair.geom.m_r)
            throw Error(ErrorCategory::dimension, "sinogram block detector dims mismatch config");
        std::vector<ViewSample> views;
        std::size_t cursor = 0;
        for (const auto& s : traj.samples) {
            if (s.pair_index != f.block.pair_index || s.spot_index != f.block.spot_index) continue;
            if (cursor < f.block.view_time_indices.size() &&
                s.time_index == f.block.view_time_indices[cursor]) {
                views.push_back(s);
                ++cursor;
            }
        }
        if (cursor != f.block.view_time_indices.size())
            throw Error(ErrorCategory::dimension,
                        "sinogram block views not found in the configured schedule");
        BuildOptions bopt;
        bopt.threads = threads;
        auto block = std::make_shared<SparseBlock>(
            build_system_block(pair.geom, pair.spots[f.block.spot_index], views, cfg.grid, bopt));
        block->block_index = static_cast<int>(blocks.size());
        const WeightDiag w = statistical_weights(f.block.counts, f.sigma_e2);
        sinos.push_back(f.block.y);
        weights.push_back(w.d);
        blocks.push_back(std::move(block));
    }

    std::vector<AgentProblem> agents;
    agents.reserve(blocks.size());
    for (std::size_t k = 0; k < blocks.size(); ++k)
        agents.emplace_back(*blocks[k], sinos[k], weights[k], cfg.grid, prior,
                            1.0 / static_cast<Scalar>(blocks.size()));

    ReconstructOptions ropt;
    ropt.sigma = cfg.recon.sigma;
    ropt.rho = cfg.recon.rho;
    ropt.tol = cfg.recon.tol_hu * mu_w / 1000.0;
    ropt.max_outer = cfg.recon.max_outer;
    ropt.prox.inner_iters = cfg.recon.inner_iters;
    ropt.threads = threads;

    ReconstructResult result;
    if (ropt.max_outer == 0) {
        // Initialization only.
        CEState state = ce_initialize(agents, ropt.sigma, ropt.rho, threads);
        result.volume = Volume{cfg.grid, state.x, VolumeUnit::attenuation};
        result.state = std::move(state);
        result.state.converged = true;
    } else {
        result = reconstruct(agents, cfg.grid, ropt);
    }

    fs::create_directories(out_dir);
    const Volume hu = volume_to_hounsfield(result.volume, mu_w);
    write_volume(out_dir / "volume.vol", hu);
    write_history_csv(out_dir / "history.csv", result.state.history, deterministic);

    if (export_pgm) {
        for (int iz = 0; iz < hu.grid.n_z; ++iz) {
            std::ostringstream name;
            name << "slice_" << iz << ".pgm";
            write_pgm16_slice(out_dir / name.str(), hu, iz, pgm_window, pgm_level);
        }
    }

    ManifestWriter manifest("reconstruct");
    manifest.deterministic = deterministic;
    manifest.j["config_hash"] = hex64(expected_hash);
    manifest.j["data_config_hash"] = hex64(files.front().config_hash);
    manifest.j["blocks"] = files.size();
    manifest.j["input_dir"] = blocks_dir.string();
    manifest.j["convergence"] = {
        {"converged", result.state.converged},
        {"iterations", result.state.iteration},
        {"final_cost", result.state.history.empty() ? 0.0 : result.state.history.back().cost},
        {"final_disagreement",
         result.state.history.empty() ? 0.0 : result.state.history.back().max_disagreement},
        {"sigma", result.state.sigma},
        {"rho", result.state.rho}};
    manifest.add_output(out_dir / "volume.vol");
    manifest.add_output(out_dir / "history.csv");
    manifest.write(out_dir);

    std::cout << "reconstruct: " << (result.state.converged ? "converged" : "NOT converged")
              << " after " << result.state.iteration << " iterations\n";
    if (!result.state.converged && ropt.max_outer > 0) {
        print_error(ErrorCategory::nonconvergence,
                    "consensus did not reach tolerance within the iteration budget");
        return 4;
    }
    return 0;
}

// ----------------------------------------------------------------- metrics

int cmd_metrics(const fs::path& volume_path, const fs::path& out_dir,
                const std::string& mtf_roi_flag, const std::string& mtf_circle_flag,
                const std::string& nps_flag, const std::string& streak_flag,
                const std::string& variance_flag, bool deterministic) {
    if (mtf_roi_flag.empty() && nps_flag.empty() && streak_flag.empty() && variance_flag.empty())
        throw Error(ErrorCategory::config,
                    "no metric requested: pass --mtf-roi, --nps-roi, --streak-roi or --variance-roi");
    const Volume vol = read_volume(volume_path);
    fs::create_directories(out_dir);

    // Average the transaxial slices into one 2-D image.
    std::vector<Image> stack;
    for (int iz = 0; iz < vol.grid.n_z; ++iz) {
        Image slice(vol.grid.n_y, vol.grid.n_x);
        for (int iy = 0; iy < vol.grid.n_y; ++iy)
            for (int ix = 0; ix < vol.grid.n_x; ++ix)
                slice(iy, ix) = vol.values[vol.grid.index(ix, iy, iz)];
        stack.push_back(std::move(slice));
    }
    const Image mean_image = average_stack(stack);
    const Scalar pitch = vol.grid.delta_xy;

    ManifestWriter manifest("metrics");
    manifest.deterministic = deterministic;
    manifest.j["input_volume"] = volume_path.string();
    json results;

    if (!mtf_roi_flag.empty()) {
        const auto v = parse_int_list(mtf_roi_flag, 4, "--mtf-roi");
        MTFOptions mopt;
        if (!mtf_circle_flag.empty()) {
            const auto c = parse_double_list(mtf_circle_flag, 2, "--mtf-circle-center");
            mopt.edge = EdgeModel::circle;
            mopt.circle_center = Point2(c[0], c[1]);
        }
        const MTFCurve curve = mtf_task(mean_image, pitch, {v[0], v[1], v[2], v[3]}, mopt);
        write_curve_csv(out_dir / "mtf.csv", "frequency_per_mm", "mtf", curve.frequency, curve.mtf);
        manifest.add_output(out_dir / "mtf.csv");
        results["mtf_f10_per_mm"] = curve.f_10;
    }
    if (!nps_flag.empty()) {
        const auto v = parse_int_list(nps_flag, 6, "--nps-roi");
        NPSGrid grid;
        grid.x0 = v[0];
        grid.y0 = v[1];
        grid.roi_size = v[2];
        grid.step = v[3];
        grid.count_x = v[4];
        grid.count_y = v[5];
        const NPSCurve curve = nps(stack, pitch, grid);
        write_curve_csv(out_dir / "nps_radial.csv", "frequency_per_mm", "nps_hu2_mm2",
                        curve.radial_frequency, curve.radial_power);
        write_curve_csv(out_dir / "nps_axial.csv", "frequency_per_mm", "nps_hu2_mm2",
                        curve.axial_frequency, curve.axial_power);
        manifest.add_output(out_dir / "nps_radial.csv");
        manifest.add_output(out_dir / "nps_axial.csv");
        results["nps_integral_hu2"] = curve.integral;
        results["nps_roi_count"] = curve.roi_count;
    }
    if (!streak_flag.empty()) {
        const auto v = parse_double_list(streak_flag, 4, "--streak-roi");
        results["streak_energy_hu2"] = streak_energy(mean_image, {v[0], v[1], v[2], v[3]});
    }
    if (!variance_flag.empty()) {
        const auto v = parse_int_list(variance_flag, 4, "--variance-roi");
        results["noise_variance_hu2"] = noise_variance(mean_image, {v[0], v[1], v[2], v[3]});
    }
    manifest.j["results"] = results;
    write_text_atomic(out_dir / "metrics.json", results.dump(2) + "\n");
    manifest.add_output(out_dir / "metrics.json");
    manifest.write(out_dir);
    std::cout << "metrics: " << results.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------- coverage

int cmd_coverage(const fs::path& config_path, const fs::path& out_dir, double beta_query_deg,
                 bool deterministic) {
    const Config cfg = parse_config_file(config_path);
    const ScanTrajectory traj = build_trajectory(cfg);
    const CoverageReport report = z_coverage_intervals(traj, deg_to_rad(beta_query_deg));

    fs::create_directories(out_dir);
    json j;
    j["beta_query_deg"] = beta_query_deg;
    j["z_min_mm"] = report.z_min;
    j["z_max_mm"] = report.z_max;
    j["union_mm"] = report.union_mm;
    j["gap_mm"] = report.gap_mm;
    j["gap_fraction"] = report.gap_fraction();
    j["per_pair_union_mm"] = report.per_pair_union_mm;
    json intervals = json::array();
    for (const auto& pair : report.per_pair) {
        json list = json::array();
        for (const auto& iv : pair) list.push_back({iv.lo, iv.hi});
        intervals.push_back(list);
    }
    j["per_pair_intervals_mm"] = intervals;

    ManifestWriter manifest("coverage");
    manifest.deterministic = deterministic;
    manifest.j["config_hash"] = hex64(config_hash(cfg));
    manifest.j["coverage"] = j;
    write_text_atomic(out_dir / "coverage.json", j.dump(2) + "\n");
    manifest.add_output(out_dir / "coverage.json");
    manifest.write(out_dir);
    std::cout << "coverage: union " << report.union_mm << " mm, gaps " << report.gap_mm
              << " mm (fraction " << report.gap_fraction() << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-source flying-focal-spot CT toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    int threads = default_threads();
    bool deterministic = true;
    app.add_option("--threads", threads, "worker threads (0 = all cores; env DSCT_THREADS)");
    app.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "suppress wall times so reruns are byte-identical (default on)");

    auto* sim = app.add_subcommand("simulate", "synthesize a noisy DS-FFS scan");
    std::string sim_config, sim_out = "out", sim_model;
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("--config", sim_config, "scan config JSON")->required();
    sim->add_option("--seed", sim_seed, "RNG seed (overrides the config)");
    sim->add_option("--out", sim_out, "output directory");
    sim->add_option("--model", sim_model, "projection model override: matrix|analytic");

    auto* rec = app.add_subcommand("reconstruct", "MAP reconstruction via consensus equilibrium");
    std::string rec_blocks, rec_out = "recon";
    std::optional<double> rec_strength, rec_p, rec_q, rec_c, rec_sigma, rec_rho, rec_tol;
    std::optional<int> rec_max_iters, rec_inner;
    bool rec_pgm = false;
    double rec_window = 400.0, rec_level = 40.0;
    rec->add_option("--blocks", rec_blocks, "directory with .sino blocks and config.json")
        ->required();
    rec->add_option("--out", rec_out, "output directory");
    rec->add_option("--prior-strength", rec_strength, "prior strength override");
    rec->add_option("--prior-p", rec_p, "prior exponent p");
    rec->add_option("--prior-q", rec_q, "prior exponent q");
    rec->add_option("--prior-c", rec_c, "prior transition scale, HU");
    rec->add_option("--sigma", rec_sigma, "proximal scale (attenuation units; 0 = default)");
    rec->add_option("--rho", rec_rho, "consensus relaxation in (0, 1]");
    rec->add_option("--tol", rec_tol, "stopping tolerance, HU");
    rec->add_option("--max-iters", rec_max_iters, "outer iteration budget");
    rec->add_option("--inner-iters", rec_inner, "ICD sweeps per proximal solve");
    rec->add_flag("--export-pgm", rec_pgm, "write axial slices as 16-bit PGM");
    rec->add_option("--pgm-window", rec_window, "PGM window, HU");
    rec->add_option("--pgm-level", rec_level, "PGM level, HU");

    auto* met = app.add_subcommand("metrics", "image-quality metrics from a volume");
    std::string met_volume, met_out = "metrics", met_mtf, met_circle, met_nps, met_streak,
                             met_variance;
    met->add_option("--volume", met_volume, "volume container path")->required();
    met->add_option("--out", met_out, "output directory");
    met->add_option("--mtf-roi", met_mtf, "edge ROI: x0,y0,w,h (pixels)");
    met->add_option("--mtf-circle-center", met_circle, "circular edge center: cx,cy (pixels)");
    met->add_option("--nps-roi", met_nps, "ROI lattice: x0,y0,size,step,count_x,count_y");
    met->add_option("--streak-roi", met_streak, "annulus: cx,cy,r_in,r_out (pixels)");
    met->add_option("--variance-roi", met_variance, "rect ROI: x0,y0,w,h (pixels)");

    auto* cov = app.add_subcommand("coverage", "z-coverage intervals and gap measures");
    std::string cov_config, cov_out = "coverage";
    double cov_beta = 90.0;
    cov->add_option("--config", cov_config, "scan config JSON")->required();
    cov->add_option("--out", cov_out, "output directory");
    cov->add_option("--beta-query-deg", cov_beta, "view angle class to analyze, degrees");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return cmd_simulate(sim_config, sim_seed, sim_out, threads, sim_model, deterministic);
        if (rec->parsed())
            return cmd_reconstruct(rec_blocks, rec_out, threads, deterministic, rec_strength,
                                   rec_p, rec_q, rec_c, rec_sigma, rec_rho, rec_tol, rec_max_iters,
                                   rec_inner, rec_pgm, rec_window, rec_level);
        if (met->parsed())
            return cmd_metrics(met_volume, met_out, met_mtf, met_circle, met_nps, met_streak,
                               met_variance, deterministic);
        if (cov->parsed()) return cmd_coverage(cov_config, cov_out, cov_beta, deterministic);
    } catch (const Error& e) {
        print_error(e.category(), e.what());
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        print_error(ErrorCategory::numeric, e.what());
        return 3;
    }
    return 0;
}
