#include "dsct/config.hpp"

#include "dsct/io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace dsct {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw Error(ErrorCategory::config, path + ": " + why);
}

const json& require(const json& j, const std::string& parent, const std::string& key) {
    auto it = j.find(key);
    if (it == j.end()) fail(parent + "." + key, "missing required field");
    return *it;
}

double require_number(const json& j, const std::string& parent, const std::string& key) {
    const json& v = require(j, parent, key);
    if (!v.is_number()) fail(parent + "." + key, "must be a number");
    return v.get<double>();
}

double number_or(const json& j, const std::string& parent, const std::string& key, double dflt) {
    auto it = j.find(key);
    if (it == j.end()) return dflt;
    if (!it->is_number()) fail(parent + "." + key, "must be a number");
    return it->get<double>();
}

int int_or(const json& j, const std::string& parent, const std::string& key, int dflt) {
    auto it = j.find(key);
    if (it == j.end()) return dflt;
    if (!it->is_number_integer()) fail(parent + "." + key, "must be an integer");
    return it->get<int>();
}

bool bool_or(const json& j, const std::string& parent, const std::string& key, bool dflt) {
    auto it = j.find(key);
    if (it == j.end()) return dflt;
    if (!it->is_boolean()) fail(parent + "." + key, "must be a boolean");
    return it->get<bool>();
}

Point3 require_point(const json& j, const std::string& parent, const std::string& key) {
    const json& v = require(j, parent, key);
    if (!v.is_array() || v.size() != 3) fail(parent + "." + key, "must be an array of 3 numbers");
    return Point3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

VoxelGrid parse_grid(const json& j, const std::string& path) {
    VoxelGrid g;
    g.n_x = static_cast<int>(require_number(j, path, "n_x"));
    g.n_y = static_cast<int>(require_number(j, path, "n_y"));
    g.n_z = static_cast<int>(require_number(j, path, "n_z"));
    g.delta_xy = require_number(j, path, "delta_xy_mm");
    g.delta_z = require_number(j, path, "delta_z_mm");
    if (j.contains("origin_mm")) {
        g.origin = require_point(j, path, "origin_mm");
    } else {
        g = VoxelGrid::centered(g.n_x, g.n_y, g.n_z, g.delta_xy, g.delta_z);
    }
    g.validate();
    return g;
}

SourceDetectorPair parse_pair(const json& j, const std::string& path) {
    SourceDetectorPair pair;
    auto& g = pair.geom;
    g.r_so = require_number(j, path, "r_so_mm");
    g.r_sd = require_number(j, path, "r_sd_mm");
    g.m_c = static_cast<int>(require_number(j, path, "m_c"));
    g.m_r = static_cast<int>(require_number(j, path, "m_r"));
    if (j.contains("d_c_mm"))
        g.d_c = require_number(j, path, "d_c_mm");
    else
        g.d_c = deg_to_rad(require_number(j, path, "d_c_deg")) * g.r_sd;
    g.d_r = require_number(j, path, "d_r_mm");
    g.tau = j.contains("anode_tilt_rad") ? require_number(j, path, "anode_tilt_rad")
                                          : deg_to_rad(number_or(j, path, "anode_tilt_deg", 0.0));
    g.beta_0 = j.contains("beta0_rad") ? require_number(j, path, "beta0_rad")
                                       : deg_to_rad(number_or(j, path, "beta0_deg", 0.0));
    g.validate();

    if (j.contains("spots")) {
        const json& spots = j["spots"];
        if (!spots.is_array() || spots.empty()) fail(path + ".spots", "must be a nonempty array");
        for (std::size_t i = 0; i < spots.size(); ++i) {
            const std::string spath = path + ".spots[" + std::to_string(i) + "]";
            const json& s = spots[i];
            const double du = number_or(s, spath, "du_mm", 0.0);
            if (s.contains("dw_mm")) {
                // z deflection realized on the anode plane: dv = dw / tan(tau).
                const double dw = require_number(s, spath, "dw_mm");
                if (dw != 0.0 && std::tan(g.tau) == 0.0)
                    fail(spath + ".dw_mm", "z deflection needs a nonzero anode tilt");
                const double dv = dw == 0.0 ? 0.0 : dw / std::tan(g.tau);
                pair.spots.push_back(FocalSpotSpec::on_anode(du, dv, g.tau));
            } else {
                const double dv = number_or(s, spath, "dv_mm", 0.0);
                pair.spots.push_back(FocalSpotSpec::on_anode(du, dv, g.tau));
            }
        }
    } else {
        const int n = int_or(j, path, "n_default_spots", 1);
        if (n == 1) {
            pair.spots.push_back(FocalSpotSpec::on_anode(0.0, 0.0, g.tau));
        } else if (n == 2) {
            // Quarter-pitch interleave: +-d_c/4 in plane, +-d_r/4 in z.
            if (std::tan(g.tau) == 0.0)
                fail(path, "default 2-spot deflection needs a nonzero anode tilt");
            const double dv = 0.25 * g.d_r / std::tan(g.tau);
            pair.spots.push_back(FocalSpotSpec::on_anode(0.25 * g.d_c, dv, g.tau));
            pair.spots.push_back(FocalSpotSpec::on_anode(-0.25 * g.d_c, -dv, g.tau));
        } else {
            fail(path + ".n_default_spots", "supported values are 1 and 2");
        }
    }
    return pair;
}

Primitive parse_primitive(const json& j, const std::string& path) {
    const json& t = require(j, path, "type");
    if (!t.is_string()) fail(path + ".type", "must be a string");
    const std::string type = t.get<std::string>();
    if (type == "cylinder") {
        CylinderPrim p;
        p.center = require_point(j, path, "center_mm");
        p.radius = require_number(j, path, "radius_mm");
        p.height = number_or(j, path, "height_mm", 0.0);
        p.value_hu = require_number(j, path, "value_hu");
        if (!(p.radius > 0)) fail(path + ".radius_mm", "must be positive");
        return p;
    }
    if (type == "box") {
        BoxPrim p;
        p.center = require_point(j, path, "center_mm");
        p.size = require_point(j, path, "size_mm");
        p.value_hu = require_number(j, path, "value_hu");
        if (!(p.size.minCoeff() > 0)) fail(path + ".size_mm", "must be positive");
        return p;
    }
    if (type == "bar_pattern") {
        BarPatternPrim p;
        p.center = require_point(j, path, "center_mm");
        p.size = require_point(j, path, "size_mm");
        p.frequency = require_number(j, path, "frequency_per_mm");
        p.value_hu = require_number(j, path, "value_hu");
        if (!(p.frequency > 0)) fail(path + ".frequency_per_mm", "must be positive");
        if (!(p.size.minCoeff() > 0)) fail(path + ".size_mm", "must be positive");
        return p;
    }
    if (type == "wire_ramp") {
        WireRampPrim p;
        p.start = require_point(j, path, "start_mm");
        p.length = require_number(j, path, "length_mm");
        p.wire_radius = require_number(j, path, "wire_radius_mm");
        p.n_wires = static_cast<int>(require_number(j, path, "n_wires"));
        p.step_y = number_or(j, path, "step_y_mm", 0.0);
        p.step_z = number_or(j, path, "step_z_mm", 0.5);
        p.value_hu = require_number(j, path, "value_hu");
        if (p.n_wires < 1) fail(path + ".n_wires", "must be at least 1");
        if (!(p.wire_radius > 0)) fail(path + ".wire_radius_mm", "must be positive");
        return p;
    }
    fail(path + ".type", "unknown primitive type '" + type + "'");
}

} // namespace

Config parse_config_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCategory::config, origin + ": " + e.what());
    }

    Config cfg;
    const json& scan = require(j, origin, "scan");
    const json& pairs = require(scan, "scan", "pairs");
    if (!pairs.is_array() || pairs.empty() || pairs.size() > 2)
        fail("scan.pairs", "must be an array of 1 or 2 pairs");
    for (std::size_t i = 0; i < pairs.size(); ++i)
        cfg.scan.layout.pairs.push_back(
            parse_pair(pairs[i], "scan.pairs[" + std::to_string(i) + "]"));
    cfg.scan.layout.dbeta_12 = scan.contains("dbeta_12_rad")
                                   ? require_number(scan, "scan", "dbeta_12_rad")
                                   : deg_to_rad(number_or(scan, "scan", "dbeta_12_deg", 0.0));
    cfg.scan.layout.dz_12 = number_or(scan, "scan", "dz_12_mm", 0.0);
    cfg.scan.layout.validate();
    cfg.scan.pitch = require_number(scan, "scan", "pitch");
    cfg.scan.views_per_rotation = static_cast<int>(require_number(scan, "scan", "views_per_rotation"));
    cfg.scan.rotations = static_cast<int>(require_number(scan, "scan", "rotations"));
    cfg.scan.beta_start = scan.contains("beta_start_rad")
                              ? require_number(scan, "scan", "beta_start_rad")
                              : deg_to_rad(number_or(scan, "scan", "beta_start_deg", 0.0));
    if (!(cfg.scan.pitch > 0)) fail("scan.pitch", "must be positive");
    if (cfg.scan.views_per_rotation < 1) fail("scan.views_per_rotation", "must be at least 1");
    if (cfg.scan.rotations < 1) fail("scan.rotations", "must be at least 1");

    cfg.grid = parse_grid(require(j, origin, "grid"), "grid");
    if (j.contains("sim_grid")) cfg.sim_grid = parse_grid(j["sim_grid"], "sim_grid");

    if (j.contains("phantom")) {
        const json& ph = j["phantom"];
        cfg.phantom.background_hu = number_or(ph, "phantom", "background_hu", -1000.0);
        if (ph.contains("primitives")) {
            const json& prims = ph["primitives"];
            if (!prims.is_array()) fail("phantom.primitives", "must be an array");
            for (std::size_t i = 0; i < prims.size(); ++i)
                cfg.phantom.primitives.push_back(parse_primitive(
                    prims[i], "phantom.primitives[" + std::to_string(i) + "]"));
        }
    }

    if (j.contains("dose")) {
        const json& dose = j["dose"];
        cfg.dose.i0 = number_or(dose, "dose", "i0", 1e5);
        cfg.dose.sigma_e2 = number_or(dose, "dose", "sigma_e2", 0.0);
        cfg.dose.noise = bool_or(dose, "dose", "noise", true);
        cfg.dose.count_floor = number_or(dose, "dose", "count_floor", 1.0);
        if (!(cfg.dose.i0 > 0)) fail("dose.i0", "must be positive");
        if (cfg.dose.sigma_e2 < 0) fail("dose.sigma_e2", "must be nonnegative");
    }

    if (j.contains("projection_model")) {
        const std::string m = j["projection_model"].get<std::string>();
        if (m == "matrix")
            cfg.model = ProjectionModel::matrix;
        else if (m == "analytic")
            cfg.model = ProjectionModel::analytic;
        else
            fail("projection_model", "must be 'matrix' or 'analytic'");
    }
    cfg.supersampling = int_or(j, origin, "supersampling", 2);
    if (cfg.supersampling < 1) fail("supersampling", "must be at least 1");
    cfg.mu_water = number_or(j, origin, "mu_water_per_mm", 0.02);
    if (!(cfg.mu_water > 0)) fail("mu_water_per_mm", "must be positive");

    if (j.contains("recon")) {
        const json& rc = j["recon"];
        cfg.recon.prior.strength = number_or(rc, "recon", "strength", 0.0);
        cfg.recon.prior.p = number_or(rc, "recon", "p", 2.0);
        cfg.recon.prior.q = number_or(rc, "recon", "q", 1.2);
        cfg.recon.prior.c = number_or(rc, "recon", "c_hu", 10.0);
        cfg.recon.prior.validate();
        cfg.recon.sigma = number_or(rc, "recon", "sigma", 0.0);
        cfg.recon.rho = number_or(rc, "recon", "rho", 0.8);
        cfg.recon.tol_hu = number_or(rc, "recon", "tol_hu", 0.1);
        cfg.recon.max_outer = int_or(rc, "recon", "max_outer", 100);
        cfg.recon.inner_iters = int_or(rc, "recon", "inner_iters", 10);
        if (!(cfg.recon.rho > 0 && cfg.recon.rho <= 1)) fail("recon.rho", "must be in (0, 1]");
        if (!(cfg.recon.tol_hu > 0)) fail("recon.tol_hu", "must be positive");
        if (cfg.recon.max_outer < 0) fail("recon.max_outer", "must be nonnegative");
        if (cfg.recon.inner_iters < 1) fail("recon.inner_iters", "must be at least 1");
    }

    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
            fail("seed", "must be an integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    return cfg;
}

Config parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path.string());
}

std::string canonical_config(const Config& config) {
    json j;
    json pairs = json::array();
    for (const auto& p : config.scan.layout.pairs) {
        json spots = json::array();
        for (const auto& s : p.spots)
            spots.push_back({{"du", s.du}, {"dv", s.dv}, {"dw", s.dw}});
        pairs.push_back({{"r_so", p.geom.r_so},
                         {"r_sd", p.geom.r_sd},
                         {"d_c", p.geom.d_c},
                         {"d_r", p.geom.d_r},
                         {"m_c", p.geom.m_c},
                         {"m_r", p.geom.m_r},
                         {"tau", p.geom.tau},
                         {"beta_0", p.geom.beta_0},
                         {"spots", spots}});
    }
    j["scan"] = {{"pairs", pairs},
                 {"dbeta_12", config.scan.layout.dbeta_12},
                 {"dz_12", config.scan.layout.dz_12},
                 {"pitch", config.scan.pitch},
                 {"views_per_rotation", config.scan.views_per_rotation},
                 {"rotations", config.scan.rotations},
                 {"beta_start", config.scan.beta_start}};
    auto grid_json = [](const VoxelGrid& g) {
        return json{{"n_x", g.n_x},     {"n_y", g.n_y},         {"n_z", g.n_z},
                    {"dxy", g.delta_xy}, {"dz", g.delta_z},
                    {"origin", {g.origin.x(), g.origin.y(), g.origin.z()}}};
    };
    j["grid"] = grid_json(config.grid);
    if (config.sim_grid) j["sim_grid"] = grid_json(*config.sim_grid);
    json prims = json::array();
    for (const auto& prim : config.phantom.primitives) {
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, CylinderPrim>)
                    prims.push_back({{"type", "cylinder"},
                                     {"center", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"radius", p.radius},
                                     {"height", p.height},
                                     {"value", p.value_hu}});
                else if constexpr (std::is_same_v<T, BoxPrim>)
                    prims.push_back({{"type", "box"},
                                     {"center", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"size", {p.size.x(), p.size.y(), p.size.z()}},
                                     {"value", p.value_hu}});
                else if constexpr (std::is_same_v<T, BarPatternPrim>)
                    prims.push_back({{"type", "bar_pattern"},
                                     {"center", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"size", {p.size.x(), p.size.y(), p.size.z()}},
                                     {"frequency", p.frequency},
                                     {"value", p.value_hu}});
                else
                    prims.push_back({{"type", "wire_ramp"},
                                     {"start", {p.start.x(), p.start.y(), p.start.z()}},
                                     {"length", p.length},
                                     {"wire_radius", p.wire_radius},
                                     {"n_wires", p.n_wires},
                                     {"step_y", p.step_y},
                                     {"step_z", p.step_z},
                                     {"value", p.value_hu}});
            },
            prim);
    }
    j["phantom"] = {{"background", config.phantom.background_hu}, {"primitives", prims}};
    j["dose"] = {{"i0", config.dose.i0},
                 {"sigma_e2", config.dose.sigma_e2},
                 {"noise", config.dose.noise},
                 {"count_floor", config.dose.count_floor}};
    j["model"] = config.model == ProjectionModel::matrix ? "matrix" : "analytic";
    j["supersampling"] = config.supersampling;
    j["mu_water"] = config.mu_water;
    j["recon"] = {{"strength", config.recon.prior.strength},
                  {"p", config.recon.prior.p},
                  {"q", config.recon.prior.q},
                  {"c_hu", config.recon.prior.c},
                  {"sigma", config.recon.sigma},
                  {"rho", config.recon.rho},
                  {"tol_hu", config.recon.tol_hu},
                  {"max_outer", config.recon.max_outer},
                  {"inner_iters", config.recon.inner_iters}};
    j["seed"] = config.seed;
    return j.dump();
}

std::uint64_t config_hash(const Config& config) { return fnv1a_hash(canonical_config(config)); }

std::string serialize_config(const Config& config) {
    json j;
    json pairs = json::array();
    for (const auto& p : config.scan.layout.pairs) {
        json spots = json::array();
        // dw is implied by the anode-plane constraint; dv is enough.
        for (const auto& s : p.spots) spots.push_back({{"du_mm", s.du}, {"dv_mm", s.dv}});
        pairs.push_back({{"r_so_mm", p.geom.r_so},
                         {"r_sd_mm", p.geom.r_sd},
                         {"d_c_mm", p.geom.d_c},
                         {"d_r_mm", p.geom.d_r},
                         {"m_c", p.geom.m_c},
                         {"m_r", p.geom.m_r},
                         {"anode_tilt_rad", p.geom.tau},
                         {"beta0_rad", p.geom.beta_0},
                         {"spots", spots}});
    }
    j["scan"] = {{"pairs", pairs},
                 {"dbeta_12_rad", config.scan.layout.dbeta_12},
                 {"dz_12_mm", config.scan.layout.dz_12},
                 {"pitch", config.scan.pitch},
                 {"views_per_rotation", config.scan.views_per_rotation},
                 {"rotations", config.scan.rotations},
                 {"beta_start_rad", config.scan.beta_start}};
    auto grid_json = [](const VoxelGrid& g) {
        return json{{"n_x", g.n_x},
                    {"n_y", g.n_y},
                    {"n_z", g.n_z},
                    {"delta_xy_mm", g.delta_xy},
                    {"delta_z_mm", g.delta_z},
                    {"origin_mm", {g.origin.x(), g.origin.y(), g.origin.z()}}};
    };
    j["grid"] = grid_json(config.grid);
    if (config.sim_grid) j["sim_grid"] = grid_json(*config.sim_grid);
    json prims = json::array();
    for (const auto& prim : config.phantom.primitives) {
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, CylinderPrim>)
                    prims.push_back({{"type", "cylinder"},
                                     {"center_mm", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"radius_mm", p.radius},
                                     {"height_mm", p.height},
                                     {"value_hu", p.value_hu}});
                else if constexpr (std::is_same_v<T, BoxPrim>)
                    prims.push_back({{"type", "box"},
                                     {"center_mm", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"size_mm", {p.size.x(), p.size.y(), p.size.z()}},
                                     {"value_hu", p.value_hu}});
                else if constexpr (std::is_same_v<T, BarPatternPrim>)
                    prims.push_back({{"type", "bar_pattern"},
                                     {"center_mm", {p.center.x(), p.center.y(), p.center.z()}},
                                     {"size_mm", {p.size.x(), p.size.y(), p.size.z()}},
                                     {"frequency_per_mm", p.frequency},
                                     {"value_hu", p.value_hu}});
                else
                    prims.push_back({{"type", "wire_ramp"},
                                     {"start_mm", {p.start.x(), p.start.y(), p.start.z()}},
                                     {"length_mm", p.length},
                                     {"wire_radius_mm", p.wire_radius},
                                     {"n_wires", p.n_wires},
                                     {"step_y_mm", p.step_y},
                                     {"step_z_mm", p.step_z},
                                     {"value_hu", p.value_hu}});
            },
            prim);
    }
    j["phantom"] = {{"background_hu", config.phantom.background_hu}, {"primitives", prims}};
    j["dose"] = {{"i0", config.dose.i0},
                 {"sigma_e2", config.dose.sigma_e2},
                 {"noise", config.dose.noise},
                 {"count_floor", config.dose.count_floor}};
    j["projection_model"] = config.model == ProjectionModel::matrix ? "matrix" : "analytic";
    j["supersampling"] = config.supersampling;
    j["mu_water_per_mm"] = config.mu_water;
    j["recon"] = {{"strength", config.recon.prior.strength},
                  {"p", config.recon.prior.p},
                  {"q", config.recon.prior.q},
                  {"c_hu", config.recon.prior.c},
                  {"sigma", config.recon.sigma},
                  {"rho", config.recon.rho},
                  {"tol_hu", config.recon.tol_hu},
                  {"max_outer", config.recon.max_outer},
                  {"inner_iters", config.recon.inner_iters}};
    j["seed"] = config.seed;
    return j.dump(2) + "\n";
}

ScanTrajectory build_trajectory(const Config& config) {
    return dual_source_view_schedule(config.scan.layout, config.scan.views_per_rotation,
                                     config.scan.rotations, config.scan.pitch,
                                     config.scan.beta_start);
}

} // namespace dsct
