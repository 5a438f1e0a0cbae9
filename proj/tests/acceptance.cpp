// Acceptance gate: runs the twelve release criteria and prints one line each.
#include "lab/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace lab;

namespace {

int g_failures = 0;

void criterion(int num, const std::string& name, bool passed, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", passed ? "PASS" : "FAIL", num, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!passed) ++g_failures;
}

double now_s() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

}  // namespace

int main() {
    FlowSystem lorenz = make_lorenz();
    IntegratorOptions integ;
    Vec seed_pt(3);
    seed_pt << 2.0, 3.0, 24.0;
    Vec settled = flow(lorenz, seed_pt, 40.0, integ);

    // ---- 1 & 2: exponent sum and spectrum --------------------------------
    double t1 = now_s();
    LyapunovReport lyap = lyapunov_spectrum(lorenz, settled, 2000.0, 0.5, integ);
    double lyap_time = now_s() - t1;
    {
        double target = -41.0 / 3.0;
        double rel = std::abs(lyap.sum() - target) / std::abs(target);
        criterion(1, "Lyapunov exponent sum conservation", rel < 1e-3 && lyap_time < 60.0,
                  fmt("sum %.5f vs -41/3, rel err %.2e, %.1fs", lyap.sum(), rel, lyap_time));
    }
    {
        bool ok = lyap.exponents.size() == 3 && std::abs(lyap.exponents[0] - 0.906) < 0.02 &&
                  std::abs(lyap.exponents[1]) < 0.01 &&
                  std::abs(lyap.exponents[2] + 14.572) < 0.02;
        criterion(2, "Lyapunov spectrum vs frozen oracle", ok,
                  fmt("(%.4f, %.4f, %.4f)", lyap.exponents[0], lyap.exponents[1],
                      lyap.exponents[2]));
    }

    // ---- 3: singularity spectrum at the origin ---------------------------
    {
        SingularitySpectrum spec = singularity_analysis(lorenz, Vec::Zero(3));
        double s = std::sqrt(1201.0);
        std::vector<double> want = {(-11.0 - s) / 2.0, -8.0 / 3.0, (-11.0 + s) / 2.0};
        bool eig_ok = spec.eigenvalues.size() == 3;
        for (int i = 0; eig_ok && i < 3; ++i)
            eig_ok = std::abs(spec.eigenvalues[i].real() - want[i]) < 1e-10 &&
                     std::abs(spec.eigenvalues[i].imag()) < 1e-10;
        double rate_want = (-11.0 + s) / 2.0 - 8.0 / 3.0;
        bool rate_ok = std::abs(spec.sectional_rate_cu - rate_want) < 1e-3 &&
                       std::abs(spec.sectional_rate_cu - 9.1610) < 1e-3;
        criterion(3, "singularity spectrum and sectional rate",
                  eig_ok && rate_ok && !spec.degenerate && spec.n_unstable == 1,
                  fmt("eigenvalues ok=%d, sectional rate %.4f vs %.4f", (int)eig_ok,
                      spec.sectional_rate_cu, rate_want));
    }

    // ---- shared long orbit + splitting for 4, 5, 9-12 --------------------
    OrbitSegment orb = sample_orbit(lorenz, settled, 0.0, 2600.0, 0.25, integ);
    SplittingField field = oseledets_directions(lorenz, orb, 25.0, 1, 2);

    // ---- 4: domination certificate, straight and swapped -----------------
    {
        int L = 2, steps = static_cast<int>(std::lround(L / orb.h_out));
        std::mt19937_64 gen(17);
        std::uniform_int_distribution<int> pick(field.first, field.last - steps);
        std::vector<int> idx(10000);
        for (int& i : idx) i = pick(gen);
        DominationCertificate cert = check_dominated_splitting(lorenz, field, idx, L, 0.2);

        SplittingField swapped = field;
        std::swap(swapped.E, swapped.F);
        std::swap(swapped.dim_E, swapped.dim_F);
        DominationCertificate bad = check_dominated_splitting(lorenz, swapped, idx, L, 0.2);
        double bad_frac = static_cast<double>(bad.violation_count) / bad.sample_count;
        criterion(4, "dominated splitting certificate",
                  cert.passed && cert.violation_count == 0 && bad_frac >= 0.99,
                  fmt("violations %d/%d, worst ratio %.2e; swapped fails %.1f%%",
                      cert.violation_count, cert.sample_count, cert.worst_ratio,
                      100.0 * bad_frac));
    }

    // ---- 5: sectional expansion ------------------------------------------
    {
        std::mt19937_64 gen(23);
        std::uniform_int_distribution<int> pick(field.first, field.last);
        std::vector<int> idx(40);
        for (int& i : idx) i = pick(gen);
        std::vector<double> T_grid;
        for (int i = 1; i <= 8; ++i) T_grid.push_back(0.5 * i);
        SectionalExpansionCertificate cert =
            check_sectional_expansion(lorenz, field, idx, T_grid, 0.0, integ);
        double lam12 = lyap.exponents[0] + lyap.exponents[1];
        criterion(5, "sectional expansion on the F field",
                  cert.worst_plane_rate > 0.0 && std::abs(cert.lambda_est - lam12) < 0.05,
                  fmt("mean rate %.4f vs lambda1+lambda2 %.4f, worst plane %.4f",
                      cert.lambda_est, lam12, cert.worst_plane_rate));
    }

    // ---- 6: entropy positivity and the volume ordering -------------------
    double upper_bracket = 0.0;
    {
        double t6 = now_s();
        OrbitSegment cloud = sample_orbit(lorenz, settled, 0.0, 5000.0, 0.05, {.tol = 1e-8});
        std::vector<Vec> K(cloud.samples.begin(), cloud.samples.begin() + 100000);
        FlowTimeOneMap map(lorenz, 0.01);
        std::vector<double> eps_grid = {0.5, 0.25, 0.125};
        std::vector<int> n_grid = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 15, 20, 25, 30};
        SpanningResult ent = entropy_estimate(map, K, eps_grid, n_grid, 29);
        upper_bracket = ent.upper_bracket;

        // v_F is sensitive to the disk location (centers near the origin's
        // stable manifold shred the mesh); keep the most-refined candidate
        VolumeExpansionReport vol;
        for (int off : {-80, -40, 40, 80}) {
            int i0 = (field.first + field.last) / 2 + off;
            DiskMesh mesh =
                make_disk_mesh(orb.samples[i0], field.F[i0].leftCols(2), 0.15, 0.05);
            VolumeExpansionReport cand =
                disk_volume_expansion(map, mesh, 10, {.target_edge = 0.05});
            if (cand.achieved_n > vol.achieved_n) vol = cand;
        }
        double t_used = now_s() - t6;

        bool lower_pos = ent.lower_slopes.size() >= 2 && ent.lower_slopes[0] > 0.0 &&
                         ent.lower_slopes[1] > 0.0;
        bool order_ok = ent.upper_bracket >= vol.v_f - 0.1;
        criterion(6, "entropy positivity and h >= v_F ordering",
                  lower_pos && order_ok && vol.v_f > 0.0 && t_used < 600.0,
                  fmt("lower slopes %.3f/%.3f, upper bracket %.3f, v_F %.3f, %.0fs",
                      ent.lower_slopes[0], ent.lower_slopes[1], ent.upper_bracket, vol.v_f,
                      t_used));
    }

    // ---- 7: doubling-map oracle ------------------------------------------
    {
        DoublingMap dbl;
        std::mt19937_64 gen(31);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::vector<Vec> Kd(4096, Vec(1));
        for (Vec& v : Kd) v[0] = uni(gen);
        SpanningResult res = entropy_estimate(dbl, Kd, {0.08, 0.04, 0.02}, {2, 4, 6, 8}, 7);
        bool value_ok = std::abs(res.upper_bracket - std::log(2.0)) < 0.05;

        TrajectoryTable tb = build_trajectories(dbl, Kd, 8);
        bool exact_ok = true;
        for (int n = 1; n <= 8 && exact_ok; ++n) {
            SpanningCounts fast = spanning_count(dbl, tb, n, 0.04, 3);
            SpanningCounts slow = spanning_count_bruteforce(dbl, tb, n, 0.04, 3);
            exact_ok = fast.upper == slow.upper && fast.lower == slow.lower;
        }
        criterion(7, "doubling-map entropy oracle", value_ok && exact_ok,
                  fmt("upper bracket %.4f vs log 2 = %.4f, brute-force match=%d",
                      res.upper_bracket, std::log(2.0), (int)exact_ok));
    }

    // ---- 8: expansiveness probe ------------------------------------------
    {
        FlowTimeOneMap map(lorenz, 0.01);
        OrbitSegment pool_orbit = sample_orbit(lorenz, settled, 0.0, 1000.0, 0.05, {.tol = 1e-8});
        const std::vector<Vec>& base_pool = pool_orbit.samples;
        std::mt19937_64 gen(41);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(base_pool.size()) - 1);
        int good_collapse = 0, good_slope = 0, usable = 0;
        double worst_collapse = 0.0, worst_slope = 0.0;
        for (int p = 0; p < 100; ++p) {
            Vec x = base_pool[pick(gen)];
            std::vector<Vec> pool = base_pool;
            for (int k = -40; k <= 40; ++k) {
                if (k == 0) continue;
                pool.push_back(flow(lorenz, x, 2e-3 * k / 40.0, integ));
            }
            ExpansivenessReport rep = expansiveness_probe(map, x, 0.1, 40, 0.01, pool, &lorenz);
            if (rep.low_confidence) continue;
            ++usable;
            worst_collapse = std::max(worst_collapse, rep.collapse);
            worst_slope = std::max(worst_slope, rep.slope);
            if (rep.collapse <= 0.02) ++good_collapse;
            if (rep.slope < 0.05) ++good_slope;
        }
        criterion(8, "Bowen-ball collapse onto flow segments",
                  usable >= 95 && good_collapse * 100 >= 95 * usable &&
                      good_slope * 100 >= 95 * usable,
                  fmt("collapse ok %d/%d (worst %.4f), slope ok %d/%d (worst %.4f)",
                      good_collapse, usable, worst_collapse, good_slope, usable, worst_slope));
    }

    // ---- 9-12: shadowing machinery on the long orbit ---------------------
    ScaledCocycleTrack track = build_scaled_track(lorenz, field, integ);
    PesinBlock block = pesin_block(track, 5.0, -0.1);

    PeriodicOrbitRecord shortest;
    {
        // dense scan for the tightest short return inside the block
        int jlo = static_cast<int>(std::ceil(1.4 / orb.h_out));
        int jhi = static_cast<int>(std::floor(1.9 / orb.h_out));
        double best_gap = 1e300;
        int best_i = -1, best_j = -1;
        std::vector<char> in_block(orb.size(), 0);
        for (int i : block.block_indices) in_block[i] = 1;
        for (int i : block.block_indices) {
            for (int j = i + jlo; j <= i + jhi && j < orb.size(); ++j) {
                if (!in_block[j]) continue;
                double gap = (orb.samples[i] - orb.samples[j]).norm();
                if (gap < best_gap) {
                    best_gap = gap;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        bool ok = false;
        std::string detail = "no recurrence seed found";
        if (best_i >= 0 && best_gap < 2.5) {
            shortest = shadow_periodic(lorenz, orb.samples[best_i],
                                       orb.times[best_j] - orb.times[best_i], {});
            ShadowingReport rep = verify_shadowing(lorenz, shortest, 0.25, integ);
            ok = shortest.converged && std::abs(shortest.period - 1.5587) < 1e-3 &&
                 shortest.residual < 1e-9 && rep.hyperbolic_ok && rep.unit_eigen_error < 1e-4 &&
                 shortest.itinerary == "LR";
            detail = fmt("period %.5f, residual %.1e, |mu-1| %.1e, itinerary %s",
                         shortest.period, shortest.residual, rep.unit_eigen_error,
                         shortest.itinerary.c_str());
        }
        criterion(9, "shortest periodic orbit via Liao shadowing", ok, detail);
    }

    std::vector<PeriodicOrbitRecord> records;
    {
        // round-robin across return-time buckets for itinerary diversity
        std::vector<RecurrenceSeed> seeds = find_recurrences(block, 0.7, 1.4);
        std::map<int, std::vector<RecurrenceSeed>> buckets;
        for (const RecurrenceSeed& s : seeds)
            if (s.T <= 7.0) buckets[static_cast<int>(s.T / 0.5)].push_back(s);
        std::set<std::string> words;
        int attempts = 0;
        for (size_t round = 0; attempts < 400; ++round) {
            bool any = false;
            for (auto& [b, v] : buckets) {
                if (round >= v.size()) continue;
                any = true;
                ++attempts;
                const RecurrenceSeed& s = v[round];
                PeriodicOrbitRecord r = shadow_periodic(lorenz, orb.samples[s.i_start], s.T, {});
                if (!r.converged || r.itinerary_mismatch) continue;
                records.push_back(r);
                if (r.period <= 6.0 && !r.itinerary.empty()) words.insert(r.itinerary);
            }
            if (!any || words.size() >= 14) break;
        }
        if (shortest.converged) records.push_back(shortest);
    }

    // ---- 10: scaled-distance and gap-proportionality bounds --------------
    {
        int c_ok = 0, total = 0;
        double worst_c = 0.0;
        for (const PeriodicOrbitRecord& r : records) {
            if (total >= 20) break;
            ++total;
            worst_c = std::max(worst_c, r.c_bound);
            if (r.c_bound <= 0.1) ++c_ok;
        }
        bool prop_ok = false;
        double ratio = 0.0;
        if (shortest.converged) {
            Vec dir = Vec::Unit(3, 2);
            std::vector<double> dbs;
            for (double d : {1e-3, 1e-4, 1e-5}) {
                PeriodicOrbitRecord r =
                    shadow_periodic(lorenz, shortest.point + d * dir, shortest.period, {});
                if (r.converged && r.d_bound > 0.0) dbs.push_back(r.d_bound);
            }
            if (dbs.size() == 3) {
                double lo = std::min({dbs[0], dbs[1], dbs[2]});
                double hi = std::max({dbs[0], dbs[1], dbs[2]});
                ratio = hi / lo;
                prop_ok = ratio < 3.0;
            }
        }
        criterion(10, "scaled-distance and gap-proportionality bounds",
                  total >= 10 && c_ok == total && prop_ok,
                  fmt("c_bound ok %d/%d (worst %.4f), d_bound spread %.2f", c_ok, total,
                      worst_c, ratio));
    }

    // ---- 11: horseshoe census --------------------------------------------
    {
        CensusResult census = horseshoe_census(records, 6.0, 6);
        std::set<std::string> by_word;
        for (const PeriodicOrbitRecord& r : records)
            if (r.period <= 6.0 && !r.itinerary.empty()) by_word.insert(r.itinerary);
        int distinct = static_cast<int>(by_word.size());
        bool rate_ok = census.rate > 0.3 && census.rate <= upper_bracket + 0.1;
        criterion(11, "periodic-orbit census growth",
                  distinct >= 10 && rate_ok && !census.insufficient,
                  fmt("%d itinerary-distinct orbits with period <= 6, rate %.3f "
                      "(upper bracket %.3f)",
                      distinct, census.rate, upper_bracket));
    }

    // ---- 12: quasi-hyperbolic certificates re-verify ---------------------
    {
        ScaledCocycleTrack fine = build_scaled_track(lorenz, field, {.tol = 1e-12});
        int arc_steps = static_cast<int>(std::lround(20.0 / orb.h_out));
        int arcs = 0, agree = 0, cert_passed = 0;
        double worst_drift = 0.0;
        for (int i : block.block_indices) {
            if (arcs >= 5) break;
            if (i + arc_steps > track.last) continue;
            QuasiHyperbolicCertificate a =
                certify_quasi_hyperbolic(track, i, i + arc_steps, 5.0, 0.8);
            QuasiHyperbolicCertificate b =
                certify_quasi_hyperbolic(fine, i, i + arc_steps, 5.0, 0.8);
            ++arcs;
            if (a.passed) ++cert_passed;
            bool same = a.passed == b.passed && a.per_step.size() == b.per_step.size();
            double drift = 0.0;
            for (size_t k = 0; same && k < a.per_step.size(); ++k) {
                drift = std::max(drift, std::abs(a.per_step[k].e_norm - b.per_step[k].e_norm) /
                                            std::abs(b.per_step[k].e_norm));
                drift = std::max(drift,
                                 std::abs(a.per_step[k].f_conorm - b.per_step[k].f_conorm) /
                                     std::abs(b.per_step[k].f_conorm));
                drift = std::max(drift, std::abs(a.per_step[k].ratio - b.per_step[k].ratio) /
                                            std::abs(b.per_step[k].ratio));
            }
            worst_drift = std::max(worst_drift, drift);
            if (same && drift < 1e-4) ++agree;
        }

        // neutral-rotation control: the scaled cocycle is an isometry, so the
        // very first partition step must fail the ratio inequality
        Mat A = Mat::Zero(3, 3);
        A(0, 1) = -1.0;
        A(1, 0) = 1.0;
        FlowSystem rot = make_linear(A);
        rot.name = "rotation3d";
        Vec r0 = Vec::Unit(3, 0);
        OrbitSegment rorb = sample_orbit(rot, r0, 0.0, 30.0, 0.25, integ);
        SplittingField rfield;
        rfield.orbit = &rorb;
        rfield.dim_E = 1;
        rfield.dim_F = 2;
        rfield.first = 0;
        rfield.last = rorb.size() - 1;
        rfield.E.resize(rorb.size());
        rfield.F.resize(rorb.size());
        for (int i = 0; i < rorb.size(); ++i) {
            const Vec& x = rorb.samples[i];
            Mat E(3, 1);
            E.col(0) = x / x.norm();
            Mat F(3, 2);
            F.col(0) = rot.eval(x).normalized();
            F.col(1) = Vec::Unit(3, 2);
            rfield.E[i] = E;
            rfield.F[i] = F;
        }
        ScaledCocycleTrack rtrack = build_scaled_track(rot, rfield, integ);
        QuasiHyperbolicCertificate rc =
            certify_quasi_hyperbolic(rtrack, rtrack.first, rtrack.first + arc_steps, 5.0, 0.8);
        bool control_ok = !rc.passed && rc.fail_k == 0 && rc.fail_condition == "step-ratio";

        criterion(12, "quasi-hyperbolic certificates re-verify",
                  arcs == 5 && cert_passed >= 4 && agree == 5 && control_ok,
                  fmt("%d/%d arcs agree at doubled accuracy (drift %.1e), %d certify; "
                      "rotation control fails at k = %d (%s)",
                      agree, arcs, worst_drift, cert_passed, rc.fail_k + 1,
                      rc.fail_condition.c_str()));
    }

    std::printf("%s: %d/12 criteria passed\n", g_failures == 0 ? "ACCEPTED" : "REJECTED",
                12 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
