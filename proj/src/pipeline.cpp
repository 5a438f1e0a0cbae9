#include "lab/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace lab {

namespace {

constexpr const char* kVersion = "flowlab 0.1.0";

double param(const StageConfig& stage, const std::string& key, double fallback) {
    auto it = stage.num.find(key);
    return it == stage.num.end() ? fallback : it->second;
}

bool has_param(const StageConfig& stage, const std::string& key) {
    return stage.num.count(key) > 0;
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

// Mutable context threaded through the stages.
struct PipelineState {
    FlowSystem sys;
    IntegratorOptions integ;
    OrbitSegment orbit;
    bool has_orbit = false;
    SplittingField field;
    bool has_field = false;
    ScaledCocycleTrack track;
    bool has_track = false;
    PesinBlock block;
    bool has_block = false;
    std::vector<RecurrenceSeed> seeds;
    std::vector<PeriodicOrbitRecord> records;
    int vertex_budget = 1000000;
    int64_t sample_budget = 1000000000;
    bool budget_flag = false;
};

Vec default_start(const FlowSystem& sys) {
    Vec x = Vec::Constant(sys.dim, 1.0);
    if (sys.name == "lorenz") x << 2.0, 3.0, 24.0;
    if (sys.name == "saddle") x.setZero();  // equilibrium: constant cocycle
    return x;
}

Vec stage_start(const StageConfig& stage, const PipelineState& st) {
    if (has_param(stage, "x0")) {
        Vec x(st.sys.dim);
        for (int i = 0; i < st.sys.dim; ++i)
            x[i] = param(stage, "x" + std::to_string(i), 0.0);
        return x;
    }
    if (st.has_orbit) return st.orbit.samples.front();
    return default_start(st.sys);
}

struct ArtifactWriter {
    std::filesystem::path dir;
    StageRecord* record = nullptr;

    void write(const std::string& name, const std::string& content) const {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw InputError("pipeline: cannot write " + (dir / name).string());
        out << content;
        record->artifacts.push_back(name);
    }
};

void ensure_orbit(PipelineState& st, double T = 400.0, double h_out = 0.25,
                  double transient = 40.0) {
    if (st.has_orbit) return;
    Vec x0 = default_start(st.sys);
    if (transient > 0) x0 = flow(st.sys, x0, transient, st.integ);
    st.orbit = sample_orbit(st.sys, x0, 0.0, T, h_out, st.integ);
    st.has_orbit = true;
}

void ensure_field(PipelineState& st, double lookback = 25.0) {
    if (st.has_field) return;
    ensure_orbit(st);
    st.field = oseledets_directions(st.sys, st.orbit, lookback, 1, st.sys.dim - 1);
    st.has_field = true;
}

void ensure_track(PipelineState& st) {
    if (st.has_track) return;
    ensure_field(st);
    st.track = build_scaled_track(st.sys, st.field, st.integ);
    st.has_track = true;
}

void ensure_block(PipelineState& st, double N0 = 5.0, double a = -0.1) {
    if (st.has_block) return;
    ensure_track(st);
    st.block = pesin_block(st.track, N0, a);
    st.has_block = true;
}

void stage_orbit(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                 const ArtifactWriter& art) {
    double T = param(sc, "T", 400.0);
    double h_out = param(sc, "h_out", 0.25);
    double transient = param(sc, "transient", 40.0);
    Vec x0 = has_param(sc, "x0") ? stage_start(sc, st) : default_start(st.sys);
    if (transient > 0) x0 = flow(st.sys, x0, transient, st.integ);
    st.orbit = sample_orbit(st.sys, x0, 0.0, T, h_out, st.integ);
    st.has_orbit = true;
    st.has_field = st.has_track = st.has_block = false;

    std::ostringstream csv;
    csv << "t";
    for (int c = 0; c < st.sys.dim; ++c) csv << ",x" << c;
    csv << "\n";
    for (int i = 0; i < st.orbit.size(); ++i) {
        csv << st.orbit.times[i];
        for (int c = 0; c < st.sys.dim; ++c) csv << "," << st.orbit.samples[i][c];
        csv << "\n";
    }
    art.write("orbit.csv", csv.str());
    rec.summary = "orbit T=" + fmt(T) + " samples=" + std::to_string(st.orbit.size());
}

void stage_lyapunov(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                    const ArtifactWriter& art) {
    double T = param(sc, "T", 2000.0);
    double renorm = param(sc, "renorm", 0.5);
    Vec x0 = stage_start(sc, st);
    LyapunovReport rep = lyapunov_spectrum(st.sys, x0, T, renorm, st.integ);
    std::ostringstream csv;
    csv << "index,exponent,convergence\n";
    for (size_t i = 0; i < rep.exponents.size(); ++i)
        csv << i << "," << rep.exponents[i] << "," << rep.convergence[i] << "\n";
    art.write("exponents.csv", csv.str());
    std::ostringstream sum;
    sum << "exponents =";
    for (double e : rep.exponents) sum << " " << fmt(e);
    sum << " sum = " << fmt(rep.sum());
    rec.summary = sum.str();
    if (has_param(sc, "expect_sum")) {
        double expect = param(sc, "expect_sum", 0.0);
        rec.gate_passed = std::abs(rep.sum() - expect) <= 1e-3 * std::abs(expect);
    }
}

void stage_scaled_spectrum(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                           const ArtifactWriter& art) {
    double T = param(sc, "T", 1000.0);
    double renorm = param(sc, "renorm", 0.5);
    Vec x0 = stage_start(sc, st);
    LyapunovReport rep = scaled_poincare_spectrum(st.sys, x0, T, renorm, st.integ);
    std::ostringstream csv;
    csv << "index,exponent,convergence\n";
    for (size_t i = 0; i < rep.exponents.size(); ++i)
        csv << i << "," << rep.exponents[i] << "," << rep.convergence[i] << "\n";
    art.write("scaled_exponents.csv", csv.str());
    std::ostringstream sum;
    sum << "scaled exponents =";
    for (double e : rep.exponents) sum << " " << fmt(e);
    rec.summary = sum.str();
}

void stage_splitting(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                     const ArtifactWriter& art) {
    ensure_orbit(st, param(sc, "orbit_T", 400.0), param(sc, "h_out", 0.25));
    st.field = oseledets_directions(st.sys, st.orbit, param(sc, "lookback", 25.0),
                                    static_cast<int>(param(sc, "dim_E", 1)),
                                    static_cast<int>(param(sc, "dim_F", st.sys.dim - 1)));
    st.has_field = true;
    st.has_track = st.has_block = false;
    nlohmann::json j;
    j["dim_E"] = st.field.dim_E;
    j["dim_F"] = st.field.dim_F;
    j["first"] = st.field.first;
    j["last"] = st.field.last;
    j["convergence_angle"] = st.field.convergence_angle;
    j["converged"] = st.field.converged;
    art.write("splitting.json", j.dump(2));
    rec.gate_passed = st.field.converged;
    rec.summary = "splitting convergence angle = " + fmt(st.field.convergence_angle);
}

void stage_domination(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                      const ArtifactWriter& art, uint64_t seed) {
    ensure_field(st);
    int L = static_cast<int>(param(sc, "L", 2));
    double aperture = param(sc, "aperture", 0.2);
    int count = static_cast<int>(param(sc, "samples", 200));
    int steps = static_cast<int>(std::lround(L / st.orbit.h_out));
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> pick(st.field.first, st.field.last - steps);
    std::vector<int> idx(count);
    for (int& i : idx) i = pick(gen);
    DominationCertificate cert = check_dominated_splitting(st.sys, st.field, idx, L, aperture);
    nlohmann::json j;
    j["samples"] = cert.sample_count;
    j["violations"] = cert.violation_count;
    j["worst_ratio"] = cert.worst_ratio;
    j["contraction_factor"] = cert.contraction_factor;
    j["L"] = cert.L;
    j["aperture"] = cert.aperture;
    j["passed"] = cert.passed;
    art.write("domination.json", j.dump(2));
    rec.gate_passed = cert.passed;
    rec.summary = "domination worst ratio = " + fmt(cert.worst_ratio) + ", violations " +
                  std::to_string(cert.violation_count) + "/" + std::to_string(cert.sample_count);
}

void stage_sectional(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                     const ArtifactWriter& art, uint64_t seed) {
    ensure_field(st);
    int count = static_cast<int>(param(sc, "samples", 40));
    double t_max = param(sc, "t_max", 4.0);
    int t_points = static_cast<int>(param(sc, "t_points", 8));
    std::vector<double> T_grid;
    for (int i = 1; i <= t_points; ++i) T_grid.push_back(t_max * i / t_points);
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> pick(st.field.first, st.field.last);
    std::vector<int> idx(count);
    for (int& i : idx) i = pick(gen);
    SectionalExpansionCertificate cert = check_sectional_expansion(
        st.sys, st.field, idx, T_grid, param(sc, "lambda_min", 0.0), st.integ);
    nlohmann::json j;
    j["lambda_est"] = cert.lambda_est;
    j["K_est"] = cert.K_est;
    j["worst_plane_rate"] = cert.worst_plane_rate;
    j["samples"] = cert.sample_count;
    j["passed"] = cert.passed;
    art.write("sectional.json", j.dump(2));
    rec.gate_passed = cert.passed;
    rec.summary = "sectional rate mean " + fmt(cert.lambda_est) + ", worst " +
                  fmt(cert.worst_plane_rate);
}

void stage_singularity(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                       const ArtifactWriter& art) {
    Vec sigma = Vec::Zero(st.sys.dim);
    if (has_param(sc, "x0"))
        for (int i = 0; i < st.sys.dim; ++i) sigma[i] = param(sc, "x" + std::to_string(i), 0.0);
    SingularitySpectrum spec = singularity_analysis(st.sys, sigma);
    nlohmann::json j;
    for (int i = 0; i < spec.eigenvalues.size(); ++i)
        j["eigenvalues"].push_back({spec.eigenvalues[i].real(), spec.eigenvalues[i].imag()});
    j["n_stable"] = spec.n_stable;
    j["n_center"] = spec.n_center;
    j["n_unstable"] = spec.n_unstable;
    j["sectional_rate_cu"] = spec.sectional_rate_cu;
    j["degenerate"] = spec.degenerate;
    j["sectional_applicable"] = spec.sectional_applicable;
    art.write("singularity.json", j.dump(2));
    rec.gate_passed = !spec.degenerate;
    rec.summary = "singularity sectional rate = " + fmt(spec.sectional_rate_cu);
}

void stage_entropy(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                   const ArtifactWriter& art, PipelineState& budget_state, uint64_t seed) {
    ensure_orbit(st);
    int count = static_cast<int>(param(sc, "samples", 20000));
    double sample_dt = param(sc, "sample_dt", 0.05);
    double map_h = param(sc, "map_h", 0.01);
    int n_max = static_cast<int>(param(sc, "n_max", 8));
    std::vector<double> eps_grid;
    for (int i = 0;; ++i) {
        std::string key = "eps" + std::to_string(i);
        if (!has_param(sc, key)) break;
        eps_grid.push_back(param(sc, key, 0.0));
    }
    if (eps_grid.empty()) eps_grid = {0.5, 0.25, 0.125};
    std::vector<int> n_grid;
    for (int n = 1; n <= n_max; ++n) n_grid.push_back(n);

    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> pick(0, st.orbit.size() - 1);
    Vec start = st.orbit.samples[pick(gen)];
    OrbitSegment cloud = sample_orbit(st.sys, start, 0.0, count * sample_dt, sample_dt, st.integ);
    std::vector<Vec> K(cloud.samples.begin(), cloud.samples.begin() + count);
    FlowTimeOneMap map(st.sys, map_h);
    SpanningResult res =
        entropy_estimate(map, K, eps_grid, n_grid, seed, {.max_point_steps = st.sample_budget});
    if (res.budget_exceeded) budget_state.budget_flag = true;
    art.write("spanning.csv", spanning_csv(res));
    rec.gate_passed = res.lower_bracket > 0.0;
    rec.summary = "h_lower = " + fmt(res.lower_bracket) +
                  (res.lower_bracket > 0 ? " (> 0)" : " (not positive)") +
                  ", h_upper = " + fmt(res.upper_bracket);
}

void stage_volume(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                  const ArtifactWriter& art, uint64_t seed) {
    ensure_field(st);
    int i0 = (st.field.first + st.field.last) / 2;
    DiskMesh mesh = make_disk_mesh(st.orbit.samples[i0], st.field.F[i0].leftCols(2),
                                   param(sc, "radius", 0.15), param(sc, "target_edge", 0.05));
    FlowTimeOneMap map(st.sys, param(sc, "map_h", 0.01));
    VolumeExpansionOptions opt;
    opt.target_edge = param(sc, "target_edge", 0.05);
    opt.eps_clip = param(sc, "eps_clip", 0.5);
    opt.max_vertices = st.vertex_budget;
    opt.seed = seed;
    art.write("disk.off", mesh_to_off(mesh));
    VolumeExpansionReport rep =
        disk_volume_expansion(map, mesh, static_cast<int>(param(sc, "n_steps", 10)), opt);
    std::ostringstream csv;
    csv << "n,log_volume,max_clip\n";
    for (size_t i = 0; i < rep.log_volume.size(); ++i)
        csv << i << "," << rep.log_volume[i] << "," << rep.max_clip[i] << "\n";
    art.write("volume.csv", csv.str());
    rec.gate_passed = rep.v_f > 0.0 && rep.clip_slope < 0.02;
    rec.summary = "v_F = " + fmt(rep.v_f) + ", clip slope = " + fmt(rep.clip_slope) +
                  (rep.saturated ? " (saturated)" : "");
}

void stage_expansiveness(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                         const ArtifactWriter& art, uint64_t seed) {
    ensure_orbit(st);
    int probes = static_cast<int>(param(sc, "probes", 20));
    double delta = param(sc, "delta", 0.1);
    int n_max = static_cast<int>(param(sc, "n_max", 40));
    double eps_inner = param(sc, "eps_inner", 0.01);
    double pool_T = param(sc, "pool_T", 1000.0);
    double pool_dt = param(sc, "pool_dt", 0.05);
    double arc_s = param(sc, "arc_s", 2e-3);
    int arc_points = static_cast<int>(param(sc, "arc_points", 80));
    FlowTimeOneMap map(st.sys, param(sc, "map_h", 0.01));

    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> pick(0, st.orbit.size() - 1);
    OrbitSegment pool_orbit = sample_orbit(st.sys, st.orbit.samples[pick(gen)], 0.0, pool_T,
                                           pool_dt, {.tol = 1e-8});
    std::vector<Vec> base_pool = pool_orbit.samples;

    std::ostringstream csv;
    csv << "probe,candidates,survivors,slope,collapse\n";
    int ok_collapse = 0, ok_slope = 0, usable = 0;
    double collapse_tol = param(sc, "collapse_tol", 0.02);
    double slope_tol = param(sc, "slope_tol", 0.05);
    for (int p = 0; p < probes; ++p) {
        Vec x = base_pool[std::uniform_int_distribution<int>(
            0, static_cast<int>(base_pool.size()) - 1)(gen)];
        // the survivor set of a long dynamical ball is predicted to be a local
        // orbit arc, so the pool must resolve that arc around each probe point
        std::vector<Vec> pool = base_pool;
        for (int k = -arc_points / 2; k <= arc_points / 2; ++k) {
            if (k == 0) continue;
            double s = arc_s * (2.0 * k) / arc_points;
            pool.push_back(lab::flow(st.sys, x, s, st.integ));
        }
        ExpansivenessReport rep =
            expansiveness_probe(map, x, delta, n_max, eps_inner, pool, &st.sys);
        csv << p << "," << rep.candidates << "," << rep.survivors << "," << rep.slope << ","
            << rep.collapse << "\n";
        if (rep.low_confidence) continue;
        ++usable;
        if (rep.collapse <= collapse_tol) ++ok_collapse;
        if (rep.slope < slope_tol) ++ok_slope;
    }
    art.write("expansiveness.csv", csv.str());
    double frac = param(sc, "fraction", 0.95);
    rec.gate_passed = usable > 0 && ok_collapse >= frac * usable && ok_slope >= frac * usable;
    rec.summary = "expansiveness: " + std::to_string(ok_collapse) + "/" + std::to_string(usable) +
                  " probes collapse within " + fmt(collapse_tol);
}

void stage_pesin(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                 const ArtifactWriter& art) {
    ensure_track(st);
    st.block = pesin_block(st.track, param(sc, "N0", 5.0), param(sc, "a", -0.1));
    st.has_block = true;
    nlohmann::json j;
    j["N0"] = st.block.N0;
    j["threshold_a"] = st.block.threshold_a;
    j["block_measure"] = st.block.block_measure;
    j["block_count"] = st.block.block_indices.size();
    art.write("pesin.json", j.dump(2));
    rec.gate_passed = st.block.block_measure > 0.0;
    rec.summary = "pesin block measure = " + fmt(st.block.block_measure);
}

void stage_certify(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                   const ArtifactWriter& art) {
    ensure_block(st);
    double T0 = param(sc, "T0", 5.0);
    double lambda = param(sc, "lambda", 0.8);
    double arc_T = param(sc, "arc_T", 20.0);
    int max_arcs = static_cast<int>(param(sc, "arcs", 20));
    int arc_steps = static_cast<int>(std::lround(arc_T / st.orbit.h_out));
    int tried = 0, passed = 0;
    nlohmann::json arr = nlohmann::json::array();
    for (int i : st.block.block_indices) {
        if (tried >= max_arcs || i + arc_steps > st.track.last) break;
        ++tried;
        QuasiHyperbolicCertificate cert =
            certify_quasi_hyperbolic(st.track, i, i + arc_steps, T0, lambda);
        if (cert.passed) ++passed;
        nlohmann::json j;
        j["t_start"] = st.orbit.times[i];
        j["passed"] = cert.passed;
        j["fail_k"] = cert.fail_k;
        j["fail_condition"] = cert.fail_condition;
        arr.push_back(j);
    }
    art.write("certificates.json", arr.dump(2));
    rec.gate_passed = tried > 0 && passed >= param(sc, "fraction", 0.9) * tried;
    rec.summary = "quasi-hyperbolic arcs " + std::to_string(passed) + "/" + std::to_string(tried);
}

void stage_recurrence(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                      const ArtifactWriter& art) {
    ensure_block(st);
    st.seeds = find_recurrences(st.block, param(sc, "delta", 0.5), param(sc, "min_T", 1.4));
    nlohmann::json arr = nlohmann::json::array();
    for (const RecurrenceSeed& s : st.seeds) {
        nlohmann::json j;
        j["t_start"] = s.t_start;
        j["T"] = s.T;
        j["gap"] = s.gap;
        arr.push_back(j);
    }
    art.write("seeds.json", arr.dump(2));
    rec.gate_passed = !st.seeds.empty();
    rec.summary = "recurrence seeds = " + std::to_string(st.seeds.size());
}

void stage_shadow(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                  const ArtifactWriter& art) {
    if (st.seeds.empty()) throw InputError("shadow stage: no recurrence seeds available");
    int max_seeds = static_cast<int>(param(sc, "max_seeds", 20));
    ShootingOptions opt;
    opt.tol = param(sc, "tol", 1e-10);
    st.records.clear();
    nlohmann::json arr = nlohmann::json::array();
    int tried = 0;
    for (const RecurrenceSeed& s : st.seeds) {
        if (tried >= max_seeds) break;
        ++tried;
        PeriodicOrbitRecord r =
            shadow_periodic(st.sys, st.orbit.samples[s.i_start], s.T, opt);
        if (r.converged) st.records.push_back(r);
        arr.push_back(nlohmann::json::parse(record_to_json(r)));
    }
    art.write("records.json", arr.dump(2));
    rec.gate_passed = !st.records.empty();
    rec.summary = "periodic orbits refined " + std::to_string(st.records.size()) + "/" +
                  std::to_string(tried);
}

void stage_census(const StageConfig& sc, PipelineState& st, StageRecord& rec,
                  const ArtifactWriter& art) {
    if (st.records.empty()) throw InputError("census stage: no periodic-orbit records available");
    CensusResult census = horseshoe_census(st.records, param(sc, "T_max", 6.0),
                                           static_cast<int>(param(sc, "grid_points", 6)));
    art.write("census.csv", census_csv(census));
    rec.gate_passed = !census.insufficient && census.rate > param(sc, "min_rate", 0.0);
    rec.summary = "census rate = " + fmt(census.rate) +
                  (census.insufficient ? " (insufficient data)" : "");
}

}  // namespace

uint64_t stage_seed(uint64_t base_seed, const std::string& stage_name) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : stage_name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h ^ (base_seed * 0x9e3779b97f4a7c15ULL);
}

std::vector<std::string> system_names() { return {"lorenz", "saddle", "rotation"}; }

FlowSystem make_system(const ExperimentConfig& config) {
    auto p = [&](const std::string& key, double fallback) {
        auto it = config.system_params.find(key);
        return it == config.system_params.end() ? fallback : it->second;
    };
    if (config.system == "lorenz")
        return make_lorenz(p("sigma", 10.0), p("r", 28.0), p("b", 8.0 / 3.0));
    if (config.system == "saddle") {
        Mat A = Mat::Zero(2, 2);
        A(0, 0) = p("rate_u", 1.0);
        A(1, 1) = p("rate_s", -2.0);
        FlowSystem sys = make_linear(A);
        sys.name = "saddle";
        return sys;
    }
    if (config.system == "rotation") {
        Mat A = Mat::Zero(3, 3);
        A(0, 1) = -p("omega", 1.0);
        A(1, 0) = p("omega", 1.0);
        FlowSystem sys = make_linear(A);
        sys.name = "rotation";
        return sys;
    }
    throw InputError("unknown system '" + config.system + "'");
}

RunManifest run_pipeline(const ExperimentConfig& config) {
    RunManifest manifest;
    manifest.config_hash = config_hash(config);
    manifest.version = kVersion;
    manifest.seed = config.seed;
    manifest.tol = config.tol;
    manifest.output_dir = config.output_dir;
    std::filesystem::create_directories(config.output_dir);

    PipelineState st;
    st.sys = make_system(config);
    st.integ.tol = config.tol;
    st.vertex_budget = config.vertex_budget;
    st.sample_budget = config.sample_budget;

    auto t_run0 = std::chrono::steady_clock::now();
    for (const StageConfig& sc : config.pipeline) {
        StageRecord rec;
        rec.name = sc.name;
        ArtifactWriter art{config.output_dir, &rec};
        uint64_t seed = stage_seed(config.seed, sc.name);
        auto t0 = std::chrono::steady_clock::now();
        try {
            if (sc.name == "orbit") stage_orbit(sc, st, rec, art);
            else if (sc.name == "lyapunov") stage_lyapunov(sc, st, rec, art);
            else if (sc.name == "scaled_spectrum") stage_scaled_spectrum(sc, st, rec, art);
            else if (sc.name == "splitting") stage_splitting(sc, st, rec, art);
            else if (sc.name == "domination") stage_domination(sc, st, rec, art, seed);
            else if (sc.name == "sectional") stage_sectional(sc, st, rec, art, seed);
            else if (sc.name == "singularity") stage_singularity(sc, st, rec, art);
            else if (sc.name == "entropy") stage_entropy(sc, st, rec, art, st, seed);
            else if (sc.name == "volume") stage_volume(sc, st, rec, art, seed);
            else if (sc.name == "expansiveness") stage_expansiveness(sc, st, rec, art, seed);
            else if (sc.name == "pesin") stage_pesin(sc, st, rec, art);
            else if (sc.name == "certify") stage_certify(sc, st, rec, art);
            else if (sc.name == "recurrence") stage_recurrence(sc, st, rec, art);
            else if (sc.name == "shadow") stage_shadow(sc, st, rec, art);
            else if (sc.name == "census") stage_census(sc, st, rec, art);
            else throw InputError("unknown stage '" + sc.name + "'");
        } catch (const std::exception& e) {
            rec.gate_passed = false;
            rec.summary = std::string("stage error: ") + e.what();
        }
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!rec.gate_passed && manifest.failed_stage.empty()) manifest.failed_stage = rec.name;
        manifest.all_passed = manifest.all_passed && rec.gate_passed;
        manifest.stages.push_back(rec);

        double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_run0).count();
        if (elapsed > config.time_budget_s || st.budget_flag) {
            manifest.budget_exceeded = true;
            break;
        }
    }
    return manifest;
}

std::string manifest_to_json(const RunManifest& manifest) {
    nlohmann::json j;
    j["config_hash"] = manifest.config_hash;
    j["version"] = manifest.version;
    j["seed"] = manifest.seed;
    j["tol"] = manifest.tol;
    j["output_dir"] = manifest.output_dir;
    j["all_passed"] = manifest.all_passed;
    j["budget_exceeded"] = manifest.budget_exceeded;
    j["failed_stage"] = manifest.failed_stage;
    j["stages"] = nlohmann::json::array();
    for (const StageRecord& s : manifest.stages) {
        nlohmann::json js;
        js["name"] = s.name;
        js["wall_seconds"] = s.wall_seconds;
        js["gate_passed"] = s.gate_passed;
        js["summary"] = s.summary;
        js["artifacts"] = s.artifacts;
        j["stages"].push_back(js);
    }
    return j.dump(2);
}

RunManifest manifest_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.tol = j.at("tol").get<double>();
    m.output_dir = j.at("output_dir").get<std::string>();
    m.all_passed = j.at("all_passed").get<bool>();
    m.budget_exceeded = j.at("budget_exceeded").get<bool>();
    m.failed_stage = j.at("failed_stage").get<std::string>();
    for (const auto& js : j.at("stages")) {
        StageRecord s;
        s.name = js.at("name").get<std::string>();
        s.wall_seconds = js.at("wall_seconds").get<double>();
        s.gate_passed = js.at("gate_passed").get<bool>();
        s.summary = js.at("summary").get<std::string>();
        s.artifacts = js.at("artifacts").get<std::vector<std::string>>();
        m.stages.push_back(s);
    }
    return m;
}

std::string make_report(const RunManifest& manifest) {
    std::ostringstream out;
    out << "run " << manifest.config_hash << " (" << manifest.version << ", seed "
        << manifest.seed << ", tol " << manifest.tol << ")\n";
    if (manifest.stages.empty()) {
        out << "no stages\n";
        return out.str();
    }
    for (const StageRecord& s : manifest.stages) {
        out << (s.gate_passed ? "[pass] " : "[FAIL] ") << s.name << " (" << fmt(s.wall_seconds)
            << "s): " << s.summary << "\n";
        for (const std::string& a : s.artifacts) {
            std::filesystem::path p = std::filesystem::path(manifest.output_dir) / a;
            std::ifstream f(p);
            if (!f) {
                out << "  warning: missing artifact " << a << "\n";
                continue;
            }
            if (p.extension() == ".json") {
                std::ostringstream buf;
                buf << f.rdbuf();
                try {
                    auto parsed = nlohmann::json::parse(buf.str());
                    (void)parsed;
                    out << "  artifact " << a << "\n";
                } catch (const std::exception&) {
                    out << "  warning: corrupted artifact " << a << "\n";
                }
            } else {
                out << "  artifact " << a << "\n";
            }
        }
    }
    out << (manifest.all_passed ? "all gates passed\n"
                                : "gate failure in stage: " + manifest.failed_stage + "\n");
    if (manifest.budget_exceeded) out << "budget exceeded\n";
    return out.str();
}

}  // namespace lab
