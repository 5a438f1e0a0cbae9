#pragma once

#include "lab/splitting.hpp"

#include <optional>

namespace lab {

/// Per-step scaled Poincare cocycle matrices along an orbit, written in
/// chained normal frames (A[i] maps frame coordinates at sample i to sample
/// i+1), together with the E/F directions projected into those frames.
struct ScaledCocycleTrack {
    const OrbitSegment* orbit = nullptr;
    const SplittingField* field = nullptr;
    int first = 0, last = 0;   // index range with fields and regular speed
    std::vector<Mat> A;        // A[i]: psi*_{h_out} at x_i, (d-1)x(d-1)
    std::vector<Mat> En, Fn;   // orthonormal projected bases per sample
    std::vector<double> speed;

    bool defined_at(int i) const { return i >= first && i <= last; }
};

ScaledCocycleTrack build_scaled_track(const FlowSystem& sys, const SplittingField& field,
                                      const IntegratorOptions& opt = {},
                                      const SingularityThreshold& thr = {});

/// Sample times whose forward-E and backward-F window averages of the scaled
/// cocycle log-norms both fall below a negative threshold. The backward F
/// norm is evaluated through the forward window ending at the sample
/// (1/m of the forward product), which avoids backward integration.
struct PesinBlock {
    const ScaledCocycleTrack* track = nullptr;
    double N0 = 0.0;
    double threshold_a = 0.0;
    std::vector<int> block_indices;
    std::vector<double> block_times;
    double block_measure = 0.0;  // fraction of eligible samples
};

PesinBlock pesin_block(const ScaledCocycleTrack& track, double N0, double threshold_a);

struct QuasiHyperbolicStep {
    double t_start = 0.0, t_end = 0.0;
    double e_norm = 0.0;   // ||psi*|E|| over the step
    double f_conorm = 0.0; // m(psi*|F) over the step
    double ratio = 0.0;
};

struct QuasiHyperbolicCertificate {
    int arc_first = 0, arc_last = 0;
    double T0 = 0.0, lambda = 0.0;
    std::vector<double> partition;  // times, steps in [T0, 2T0]
    std::vector<QuasiHyperbolicStep> per_step;
    bool passed = false;
    int fail_k = -1;                // first violated step index
    std::string fail_condition;     // "E-product" | "F-coproduct" | "step-ratio"
};

/// Checks Definition A.4's three inequality families over a greedy partition
/// of the arc into steps of duration in [T0, 2T0].
QuasiHyperbolicCertificate certify_quasi_hyperbolic(const ScaledCocycleTrack& track,
                                                    int arc_first, int arc_last, double T0,
                                                    double lambda);

struct RecurrenceSeed {
    int i_start = 0, i_end = 0;
    double t_start = 0.0;
    double T = 0.0;    // return time
    double gap = 0.0;  // d(x_s, x_{s+T})
};

/// Pseudo-periodic seeds: pairs of Pesin-block times with small spatial gap
/// and return time at least min_T, deduplicated so accepted seeds differ in
/// start time or in return time by at least min_T/2.
std::vector<RecurrenceSeed> find_recurrences(const PesinBlock& block, double delta, double min_T);

struct PeriodicOrbitRecord {
    Vec seed_x;
    double seed_T = 0.0;
    double seed_gap = 0.0;
    Vec point;                      // p on the first section
    double period = 0.0;            // theta(T)
    std::vector<double> theta_t;    // section times of the seed orbit
    std::vector<double> theta_val;  // piecewise-linear theta at those times
    double c_bound = 0.0;           // max d(phi_t(x), phi_theta(t)(p)) / |X(phi_t(x))|
    double d_bound = 0.0;           // max d(phi_t(x), phi_t(p)) / seed gap
    double residual = 0.0;          // d(p, phi_period(p))
    std::string itinerary;          // lobe symbols, canonical rotation ("" if n/a)
    bool converged = false;
    bool itinerary_mismatch = false;
    std::vector<double> residual_history;
};

struct ShootingOptions {
    double section_dt = 0.5;  // target spacing of shooting sections
    double beta = 0.2;        // section radius as a fraction of local speed
    int max_iterations = 50;
    double tol = 1e-10;
    IntegratorOptions integ{.tol = 1e-11};
};

/// Multiple-shooting Newton on flow-orthogonal sections along the seed arc.
PeriodicOrbitRecord shadow_periodic(const FlowSystem& sys, const Vec& x, double T,
                                    const ShootingOptions& opt = {});

/// Left/right lobe itinerary of a Lorenz-like orbit: sign of x at successive
/// maxima of z over one period, canonical (lexicographically smallest)
/// rotation. System-specific labeling; empty when undefined.
std::string lorenz_itinerary(const FlowSystem& sys, const Vec& p, double period,
                             const IntegratorOptions& opt = {});

struct ShadowingReport {
    bool theta_ok = false;        // (a)
    bool periodic_ok = false;     // (b)
    bool c_bound_ok = false;      // (c)
    bool d_bound_ok = false;      // (d) finite
    bool hyperbolic_ok = false;   // (e) proxy via Floquet spectrum
    Eigen::VectorXcd floquet;     // eigenvalues of the period map at p
    double unit_eigen_error = 0.0;
    bool passed = false;
};

ShadowingReport verify_shadowing(const FlowSystem& sys, const PeriodicOrbitRecord& record,
                                 double epsilon, const IntegratorOptions& opt = {});

struct CensusResult {
    std::vector<double> T_grid;
    std::vector<int> N;        // distinct orbits with period <= T
    double rate = 0.0;         // fitted (1/T) log N growth
    bool insufficient = false; // fewer than 3 grid points with N > 0
};

/// Distinct-orbit counting function and its fitted exponential growth rate.
/// Records are deduplicated by itinerary and by period within 1e-6.
CensusResult horseshoe_census(const std::vector<PeriodicOrbitRecord>& records, double T_max,
                              int grid_points = 6);

std::string census_csv(const CensusResult& census);

std::string record_to_json(const PeriodicOrbitRecord& record);
PeriodicOrbitRecord record_from_json(const std::string& text);

}  // namespace lab
