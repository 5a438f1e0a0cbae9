#pragma once

#include "lab/flow.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>

namespace lab {

/// Discrete-time system driving the entropy estimators: either the time-one
/// map of a flow or a directly defined map (validation oracles).
struct MapSystem {
    virtual ~MapSystem() = default;
    virtual int dim() const = 0;
    virtual Vec apply(const Vec& x) const = 0;
    virtual double distance(const Vec& a, const Vec& b) const { return (a - b).norm(); }
    // spatial-hash pruning assumes the euclidean metric; non-euclidean maps
    // (circle metric) fall back to the exact quadratic scan
    virtual bool metric_is_euclidean() const { return true; }
    virtual std::string name() const = 0;
};

/// Time-one map of a flow, iterated with a fixed-step RK4 fast path (the
/// bulk-iteration hotspot does not need the adaptive integrator's accuracy).
struct FlowTimeOneMap final : MapSystem {
    const FlowSystem* sys;
    double h = 0.005;
    double guard = 1e4;
    explicit FlowTimeOneMap(const FlowSystem& s, double step_h = 0.005) : sys(&s), h(step_h) {}
    int dim() const override { return sys->dim; }
    Vec apply(const Vec& x) const override;
    std::string name() const override { return sys->name + "/time-one"; }
};

/// x -> 2x mod 1 on the circle, with the circle metric.
struct DoublingMap final : MapSystem {
    int dim() const override { return 1; }
    Vec apply(const Vec& x) const override {
        Vec y(1);
        y[0] = x[0] * 2.0 - std::floor(x[0] * 2.0);
        return y;
    }
    double distance(const Vec& a, const Vec& b) const override {
        double d = std::abs(a[0] - b[0]);
        return std::min(d, 1.0 - d);
    }
    bool metric_is_euclidean() const override { return false; }
    std::string name() const override { return "doubling"; }
};

struct DynamicalBallSpec {
    Vec center;
    int n = 1;
    double eps = 0.0;
};

/// true iff d(f^j(center), f^j(y)) <= eps for 0 <= j < n. Divergence while
/// iterating counts as non-membership (flagged).
bool ball_membership(const MapSystem& map, const DynamicalBallSpec& spec, const Vec& y,
                     bool* diverged = nullptr);

/// Precomputed forward trajectories of a point cloud (point-major layout).
struct TrajectoryTable {
    int dim = 0;
    int n_max = 0;  // stored iterates 0..n_max
    int count = 0;
    std::vector<double> data;  // count x (n_max+1) x dim
    std::vector<uint8_t> ok;   // 0 if the point diverged before n_max

    const double* at(int i, int j) const { return data.data() + (static_cast<size_t>(i) * (n_max + 1) + j) * dim; }
};

TrajectoryTable build_trajectories(const MapSystem& map, const std::vector<Vec>& K, int n_max);

struct SpanningCounts {
    int upper = 0;  // greedy cover by (n,eps) dynamical balls
    int lower = 0;  // maximal (n, 2 eps)-separated subset
};

/// Greedy spanning cover and maximal separated set, pruned with a uniform
/// spatial hash on the time-0 coordinates. Point order is seed-fixed.
SpanningCounts spanning_count(const MapSystem& map, const TrajectoryTable& table, int n,
                              double eps, uint64_t seed = 0);

/// Reference O(|K|^2 n) version without the spatial index; must agree exactly.
SpanningCounts spanning_count_bruteforce(const MapSystem& map, const TrajectoryTable& table, int n,
                                         double eps, uint64_t seed = 0);

struct SpanningResult {
    std::vector<int> n_grid;
    std::vector<double> eps_grid;
    std::vector<std::vector<SpanningCounts>> counts;  // [eps][n]
    std::vector<double> upper_slopes, lower_slopes;   // per eps
    std::vector<int> achieved_n;                      // per eps (budget cuts)
    double upper_bracket = 0.0, lower_bracket = 0.0;
    bool monotone_ok = true;
    bool budget_exceeded = false;
};

struct EntropyBudget {
    int64_t max_point_steps = std::numeric_limits<int64_t>::max();
};

SpanningResult entropy_estimate(const MapSystem& map, const std::vector<Vec>& K,
                                const std::vector<double>& eps_grid, const std::vector<int>& n_grid,
                                uint64_t seed = 0, const EntropyBudget& budget = {});

/// Triangulated embedded disk. Triangle-soup subdivision keeps parameter
/// coordinates so image pieces can be grouped by connectivity.
struct DiskMesh {
    std::vector<Vec> vertices;
    std::vector<Eigen::Vector2d> param;
    std::vector<std::array<int, 3>> tris;
    double tangent_check = 0.0;  // worst angle (rad) between simplices and the seed plane
    double worst_aspect = 1.0;
};

DiskMesh make_disk_mesh(const Vec& center, const Mat& plane_basis, double radius,
                        double target_edge);

struct VolumeExpansionReport {
    std::vector<double> log_volume;   // per iterate 0..n
    double v_f = 0.0;                 // fitted slope of log volume vs n
    std::vector<double> max_clip;     // max single connected piece volume in any eps ball, per n
    double clip_slope = 0.0;          // fitted growth of the clip bound (expect ~0)
    double worst_cone_angle = 0.0;    // only when an F-field callback is given
    int final_vertices = 0;
    bool saturated = false;           // vertex cap hit
    int achieved_n = 0;
};

struct VolumeExpansionOptions {
    double target_edge = 0.05;
    double eps_clip = 0.5;
    int max_vertices = 1000000;
    int clip_centers = 40;
    uint64_t seed = 0;
    // optional: local F-plane lookup for cone-tangency tracking
    std::function<Mat(const Vec&)> F_at;
    double max_aspect = 20.0;
};

VolumeExpansionReport disk_volume_expansion(const MapSystem& map, DiskMesh mesh, int n_steps,
                                            const VolumeExpansionOptions& opt = {});

struct ExpansivenessReport {
    int candidates = 0;
    int survivors = 0;          // points surviving all n_max steps
    double slope = 0.0;         // inner spanning slope of the survivor set
    double collapse = std::numeric_limits<double>::quiet_NaN();
    bool low_confidence = false;
};

/// Survivors of B_n(x, delta) drawn from a candidate pool, spanning-counted at
/// eps_inner. For flow-backed maps the survivor set is also compared, at the
/// mid-window image, against the local flow segment through the orbit of x
/// (the time-0 set trivially contains the stable disk, so the collapse of the
/// ball's core is measured on the mid-window image).
ExpansivenessReport expansiveness_probe(const MapSystem& map, const Vec& x, double delta,
                                        int n_max, double eps_inner,
                                        const std::vector<Vec>& candidate_pool,
                                        const FlowSystem* flow_sys = nullptr);

/// CSV rows (n, eps, upper, lower, slope), one per grid cell.
std::string spanning_csv(const SpanningResult& res);

/// OFF-format text (vertex list + triangle list).
std::string mesh_to_off(const DiskMesh& mesh);

}  // namespace lab
