#pragma once

#include "lab/flow.hpp"

namespace lab {

// The orbit came too close to a singularity for the normal-bundle
// constructions to be meaningful.
struct NearSingularityError : std::runtime_error {
    double offending_time;
    explicit NearSingularityError(double t)
        : std::runtime_error("orbit near singularity at t=" + std::to_string(t)),
          offending_time(t) {}
};

// Speeds below this fraction of a reference attractor-scale speed count as
// "near singularity".
struct SingularityThreshold {
    double reference_speed = 1.0;
    double fraction = 1e-4;
    double value() const { return reference_speed * fraction; }
};

/// Orthonormal basis of the normal space N_x (orthogonal complement of the
/// flow direction at a regular point).
struct NormalFrame {
    Vec base;
    Vec flow_dir;  // X(x)/|X(x)|
    Mat basis;     // dim x (dim-1), orthonormal, each column orthogonal to flow_dir
};

NormalFrame make_normal_frame(const FlowSystem& sys, const Vec& x,
                              const SingularityThreshold& thr = {});

/// Re-seed an orthonormal basis of N_y from a transported basis: Gram-Schmidt
/// against the flow direction at y, keeping the transported orientation.
NormalFrame reseed_normal_frame(const FlowSystem& sys, const Vec& y, const Mat& seed,
                                const SingularityThreshold& thr = {});

/// v minus its component along X(x).
Vec normal_project(const FlowSystem& sys, const Vec& x, const Vec& v,
                   const SingularityThreshold& thr = {});

/// Linear Poincare flow: psi_t(v) = projection of Phi_t(v) onto N_{phi_t(x)}.
Vec linear_poincare(const FlowSystem& sys, const Vec& x, const Vec& v, double t,
                    const IntegratorOptions& opt = {}, const SingularityThreshold& thr = {});

/// Scaled linear Poincare flow: psi*_t(v) = (|X(x)|/|X(phi_t(x))|) psi_t(v).
Vec scaled_poincare(const FlowSystem& sys, const Vec& x, const Vec& v, double t,
                    const IntegratorOptions& opt = {}, const SingularityThreshold& thr = {});

/// Matrix samples of psi_t and psi*_t in normal-frame coordinates at x and
/// phi_t(x).
struct CocycleSample {
    Vec x;
    double t = 0.0;
    NormalFrame frame_start, frame_end;
    Mat matrix_psi;       // (dim-1) x (dim-1)
    Mat matrix_psi_star;  // speed_ratio * matrix_psi
    double speed_ratio = 1.0;
};

CocycleSample cocycle_sample(const FlowSystem& sys, const Vec& x, double t,
                             const IntegratorOptions& opt = {},
                             const SingularityThreshold& thr = {});

/// Empirical C_tau: max operator norm of psi*_t over sampled points of the
/// orbit and t in [-tau, tau]. Reported as a sampled maximum, not a bound.
struct CocycleBoundEstimate {
    double tau = 0.0;
    double c_tau = 1.0;
    int samples = 0;
};

CocycleBoundEstimate cocycle_bound_probe(const FlowSystem& sys, const OrbitSegment& orbit,
                                         double tau, int time_subdiv = 8,
                                         const SingularityThreshold& thr = {});

}  // namespace lab
