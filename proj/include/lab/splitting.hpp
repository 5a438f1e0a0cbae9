#pragma once

#include "lab/poincare.hpp"

#include <optional>
#include <vector>

namespace lab {

/// Finite-time Lyapunov exponents from QR re-orthonormalization of a
/// transported full frame.
struct LyapunovReport {
    std::vector<double> exponents;    // sorted descending, per unit time
    double window = 0.0;              // total time T
    double renorm_step = 0.0;
    std::vector<double> convergence;  // per-exponent drift over the last half window
    bool singularity_flag = false;    // orbit passed near a singularity (run continues)
    double sum() const {
        double s = 0;
        for (double e : exponents) s += e;
        return s;
    }
};

LyapunovReport lyapunov_spectrum(const FlowSystem& sys, const Vec& x0, double T,
                                 double renorm_step, const IntegratorOptions& opt = {},
                                 unsigned seed = 0);

/// Same QR procedure driven by the scaled linear Poincare flow on the normal
/// bundle (dim-1 exponents).
LyapunovReport scaled_poincare_spectrum(const FlowSystem& sys, const Vec& x0, double T,
                                        double renorm_step, const IntegratorOptions& opt = {},
                                        const SingularityThreshold& thr = {});

/// Per-point E/F subspace estimates along an orbit, plus the one-step tangent
/// transitions used to build them.
struct SplittingField {
    const OrbitSegment* orbit = nullptr;
    int dim_E = 0, dim_F = 0;
    int first = 0, last = 0;      // index range where both E and F are defined
    std::vector<Mat> E, F;        // orthonormal bases, indexed like the orbit
    std::vector<Mat> step;        // step[i] = Phi_{h_out}(x_i), i < orbit.size()-1
    double lookback = 0.0;
    double convergence_angle = 0.0;  // max principal angle moved when lookback doubles
    bool converged = true;

    bool defined_at(int i) const { return i >= first && i <= last; }
};

/// Principal angle (largest) between the column spans of two orthonormal bases.
double principal_angle(const Mat& A, const Mat& B);

SplittingField oseledets_directions(const FlowSystem& sys, const OrbitSegment& orbit,
                                    double lookback, int dim_E, int dim_F, unsigned seed = 0);

/// Cone-field description used by the domination check.
struct ConeField {
    const SplittingField* splitting = nullptr;
    double aperture = 0.0;  // a > 0
    int step = 1;           // L, number of time-one iterates per check
};

struct DominationCertificate {
    int sample_count = 0;
    int violation_count = 0;
    double worst_ratio = 0.0;         // max (|D u|/|u|)/(|D v|/|v|), u in E, v in F
    double contraction_factor = 0.0;  // worst cone-aperture ratio after one L-step
    int L = 1;
    double aperture = 0.0;
    bool passed = false;
    int worst_index = -1;  // orbit index of the worst witness
    Vec worst_u, worst_v;
};

/// Tests the L-step domination ratio (factor 1/2) on a deterministic grid of
/// unit-vector pairs, plus forward F-cone / backward E-cone invariance with
/// strict aperture contraction.
DominationCertificate check_dominated_splitting(const FlowSystem& sys, const SplittingField& field,
                                                const std::vector<int>& sample_indices, int L,
                                                double aperture);

/// Same test for the projected splitting (pi(E), pi(F)) under the scaled
/// linear Poincare flow on the normal bundle.
DominationCertificate check_dominated_splitting_normal(const FlowSystem& sys,
                                                       const SplittingField& field,
                                                       const std::vector<int>& sample_indices,
                                                       int L, double aperture,
                                                       const SingularityThreshold& thr = {});

struct SectionalExpansionCertificate {
    double lambda_est = 0.0;       // fitted exponential rate (mean over samples)
    double K_est = 0.0;            // fitted prefactor
    double worst_plane_rate = 0.0; // min over samples and 2-planes
    double lambda_min_config = 0.0;
    int sample_count = 0;
    bool passed = false;
};

/// log|det(Phi_t restricted to 2-planes of F)| on a time grid, line fit per
/// plane; all planes when dim_F = 2, a 64-plane grid otherwise.
SectionalExpansionCertificate check_sectional_expansion(const FlowSystem& sys,
                                                        const SplittingField& field,
                                                        const std::vector<int>& sample_indices,
                                                        const std::vector<double>& T_grid,
                                                        double lambda_min,
                                                        const IntegratorOptions& opt = {});

struct SingularitySpectrum {
    Vec point;
    Eigen::VectorXcd eigenvalues;  // sorted by real part ascending
    Mat directions;                // real parts of eigenvectors, column-matched
    int n_stable = 0, n_center = 0, n_unstable = 0;
    double sectional_rate_cu = 0.0;  // min pairwise rate over the F_cu candidate
    bool degenerate = false;         // repeated eigenvalues within 1e-8
    bool sectional_applicable = true;
};

/// Eigenvalue classification of a hyperbolic equilibrium; the center slot is
/// the weakest-contracting eigenvalue of the time-one map.
SingularitySpectrum singularity_analysis(const FlowSystem& sys, const Vec& sigma);

}  // namespace lab
