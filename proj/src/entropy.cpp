#include "lab/entropy.hpp"
#include "lab/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace lab {

namespace {

void rk4_step(const FlowSystem& sys, Vec& y, double h, Vec& k1, Vec& k2, Vec& k3, Vec& k4,
              Vec& tmp) {
    sys.field(y, k1);
    tmp = y + 0.5 * h * k1;
    sys.field(tmp, k2);
    tmp = y + 0.5 * h * k2;
    sys.field(tmp, k3);
    tmp = y + h * k3;
    sys.field(tmp, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec rk4_time_one(const FlowSystem& sys, const Vec& x, double h, double guard,
                 std::vector<Vec>* trace = nullptr) {
    int steps = std::max(1, static_cast<int>(std::lround(1.0 / h)));
    double hh = 1.0 / steps;
    Vec y = x, k1(sys.dim), k2(sys.dim), k3(sys.dim), k4(sys.dim), tmp(sys.dim);
    for (int i = 0; i < steps; ++i) {
        rk4_step(sys, y, hh, k1, k2, k3, k4, tmp);
        if (!y.allFinite() || y.norm() > guard) throw DivergenceError((i + 1) * hh);
        if (trace) trace->push_back(y);
    }
    return y;
}

double slope_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    int n = static_cast<int>(xs.size());
    if (n < 2) return 0.0;
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return den > 0 ? num / den : 0.0;
}

bool within(const MapSystem& map, const TrajectoryTable& tb, int i, int k, int n, double eps) {
    if (map.metric_is_euclidean()) {
        double e2 = eps * eps;
        for (int j = 0; j < n; ++j) {
            const double* a = tb.at(i, j);
            const double* b = tb.at(k, j);
            double s = 0.0;
            for (int c = 0; c < tb.dim; ++c) {
                double d = a[c] - b[c];
                s += d * d;
            }
            if (s > e2) return false;
        }
        return true;
    }
    Vec a(tb.dim), b(tb.dim);
    for (int j = 0; j < n; ++j) {
        for (int c = 0; c < tb.dim; ++c) {
            a[c] = tb.at(i, j)[c];
            b[c] = tb.at(k, j)[c];
        }
        if (map.distance(a, b) > eps) return false;
    }
    return true;
}

uint64_t mix64(uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

uint64_t cell_key(const double* p, int dim, double cell) {
    uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int c = 0; c < dim; ++c) {
        auto k = static_cast<int64_t>(std::floor(p[c] / cell));
        h = mix64(h ^ (static_cast<uint64_t>(k) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    }
    return h;
}

// keys of all cells within `r` cells of p in each coordinate
void neighbor_keys(const double* p, int dim, double cell, int r, std::vector<uint64_t>& out) {
    out.clear();
    std::vector<int64_t> base(dim), off(dim, -r);
    for (int c = 0; c < dim; ++c) base[c] = static_cast<int64_t>(std::floor(p[c] / cell));
    while (true) {
        uint64_t h = 0x9e3779b97f4a7c15ULL;
        for (int c = 0; c < dim; ++c) {
            uint64_t k = static_cast<uint64_t>(base[c] + off[c]);
            h = mix64(h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
        }
        out.push_back(h);
        int c = 0;
        while (c < dim && ++off[c] > r) off[c++] = -r;
        if (c == dim) break;
    }
}

std::vector<int> seeded_order(int count, uint64_t seed) {
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 gen(seed);
    std::shuffle(order.begin(), order.end(), gen);
    return order;
}

double tri_area(const Vec& a, const Vec& b, const Vec& c) {
    Vec u = b - a, v = c - a;
    double g = u.squaredNorm() * v.squaredNorm() - u.dot(v) * u.dot(v);
    return 0.5 * std::sqrt(std::max(0.0, g));
}

double tri_aspect(const Vec& a, const Vec& b, const Vec& c) {
    double l = std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
    double area = tri_area(a, b, c);
    if (area <= 0.0) return std::numeric_limits<double>::infinity();
    return l * l / (2.0 * area);
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

double point_polyline_dist(const Vec& p, const std::vector<Vec>& poly) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i + 1 < poly.size(); ++i) {
        Vec d = poly[i + 1] - poly[i];
        double dd = d.squaredNorm();
        double t = dd > 0 ? std::clamp((p - poly[i]).dot(d) / dd, 0.0, 1.0) : 0.0;
        best = std::min(best, (p - (poly[i] + t * d)).norm());
    }
    return best;
}

}  // namespace

Vec FlowTimeOneMap::apply(const Vec& x) const {
    if (x.size() != sys->dim) throw InputError("time-one map: dimension mismatch");
    return rk4_time_one(*sys, x, h, guard);
}

bool ball_membership(const MapSystem& map, const DynamicalBallSpec& spec, const Vec& y,
                     bool* diverged) {
    if (spec.n < 1 || spec.eps <= 0.0) throw InputError("ball spec: need n >= 1, eps > 0");
    if (diverged) *diverged = false;
    Vec a = spec.center, b = y;
    for (int j = 0; j < spec.n; ++j) {
        if (map.distance(a, b) > spec.eps) return false;
        if (j + 1 == spec.n) break;
        try {
            a = map.apply(a);
            b = map.apply(b);
        } catch (const DivergenceError&) {
            if (diverged) *diverged = true;
            return false;
        }
    }
    return true;
}

TrajectoryTable build_trajectories(const MapSystem& map, const std::vector<Vec>& K, int n_max) {
    if (K.empty()) throw InputError("trajectory table: empty sample");
    TrajectoryTable tb;
    tb.dim = map.dim();
    tb.n_max = n_max;
    tb.count = static_cast<int>(K.size());
    tb.data.assign(static_cast<size_t>(tb.count) * (n_max + 1) * tb.dim, 0.0);
    tb.ok.assign(tb.count, 1);
    for (int i = 0; i < tb.count; ++i) {
        if (K[i].size() != tb.dim) throw InputError("trajectory table: dimension mismatch");
        Vec y = K[i];
        for (int j = 0; j <= n_max; ++j) {
            double* slot = tb.data.data() + (static_cast<size_t>(i) * (n_max + 1) + j) * tb.dim;
            for (int c = 0; c < tb.dim; ++c) slot[c] = y[c];
            if (j == n_max) break;
            try {
                y = map.apply(y);
            } catch (const DivergenceError&) {
                tb.ok[i] = 0;
                for (int jj = j + 1; jj <= n_max; ++jj) {
                    double* s2 = tb.data.data() + (static_cast<size_t>(i) * (n_max + 1) + jj) * tb.dim;
                    for (int c = 0; c < tb.dim; ++c) s2[c] = y[c];
                }
                break;
            }
        }
    }
    return tb;
}

SpanningCounts spanning_count_bruteforce(const MapSystem& map, const TrajectoryTable& table,
                                         int n, double eps, uint64_t seed) {
    if (n < 1 || n > table.n_max) throw InputError("spanning: n out of table range");
    if (eps <= 0.0) throw InputError("spanning: eps must be positive");
    std::vector<int> order = seeded_order(table.count, seed);
    std::vector<int> centers, members;
    for (int i : order) {
        if (!table.ok[i]) continue;
        bool covered = false;
        for (int c : centers)
            if (within(map, table, i, c, n, eps)) {
                covered = true;
                break;
            }
        if (!covered) centers.push_back(i);
        bool separated = true;
        for (int m : members)
            if (within(map, table, i, m, n, 2.0 * eps)) {
                separated = false;
                break;
            }
        if (separated) members.push_back(i);
    }
    return {static_cast<int>(centers.size()), static_cast<int>(members.size())};
}

SpanningCounts spanning_count(const MapSystem& map, const TrajectoryTable& table, int n,
                              double eps, uint64_t seed) {
    if (!map.metric_is_euclidean()) return spanning_count_bruteforce(map, table, n, eps, seed);
    if (n < 1 || n > table.n_max) throw InputError("spanning: n out of table range");
    if (eps <= 0.0) throw InputError("spanning: eps must be positive");
    std::vector<int> order = seeded_order(table.count, seed);
    const double cell = eps / std::sqrt(static_cast<double>(table.dim));
    const int r_cov = static_cast<int>(std::floor(eps / cell)) + 1;
    const int r_sep = static_cast<int>(std::floor(2.0 * eps / cell)) + 1;
    std::unordered_map<uint64_t, std::vector<int>> cover_hash, sep_hash;
    int n_centers = 0, n_members = 0;
    std::vector<uint64_t> keys;
    for (int i : order) {
        if (!table.ok[i]) continue;
        const double* p0 = table.at(i, 0);
        bool covered = false;
        neighbor_keys(p0, table.dim, cell, r_cov, keys);
        for (uint64_t k : keys) {
            auto it = cover_hash.find(k);
            if (it == cover_hash.end()) continue;
            for (int c : it->second)
                if (within(map, table, i, c, n, eps)) {
                    covered = true;
                    break;
                }
            if (covered) break;
        }
        if (!covered) {
            cover_hash[cell_key(p0, table.dim, cell)].push_back(i);
            ++n_centers;
        }
        bool separated = true;
        neighbor_keys(p0, table.dim, cell, r_sep, keys);
        for (uint64_t k : keys) {
            auto it = sep_hash.find(k);
            if (it == sep_hash.end()) continue;
            for (int m : it->second)
                if (within(map, table, i, m, n, 2.0 * eps)) {
                    separated = false;
                    break;
                }
            if (!separated) break;
        }
        if (separated) {
            sep_hash[cell_key(p0, table.dim, cell)].push_back(i);
            ++n_members;
        }
    }
    return {n_centers, n_members};
}

SpanningResult entropy_estimate(const MapSystem& map, const std::vector<Vec>& K,
                                const std::vector<double>& eps_grid,
                                const std::vector<int>& n_grid, uint64_t seed,
                                const EntropyBudget& budget) {
    if (eps_grid.size() < 3 || n_grid.size() < 3)
        throw InputError("entropy estimate: need at least 3 grid values per axis");
    SpanningResult res;
    res.n_grid = n_grid;
    res.eps_grid = eps_grid;
    int n_max = *std::max_element(n_grid.begin(), n_grid.end());
    int64_t cost = static_cast<int64_t>(K.size()) * n_max;
    if (cost > budget.max_point_steps) {
        n_max = static_cast<int>(budget.max_point_steps / static_cast<int64_t>(K.size()));
        res.budget_exceeded = true;
        if (n_max < 1) throw InputError("entropy estimate: budget below one iterate");
    }
    TrajectoryTable table = build_trajectories(map, K, n_max);
    int alive = 0;
    for (auto f : table.ok) alive += f;

    for (size_t e = 0; e < eps_grid.size(); ++e) {
        std::vector<SpanningCounts> row;
        int achieved = 0;
        for (int n : n_grid) {
            if (n > n_max) break;
            row.push_back(spanning_count(map, table, n, eps_grid[e], seed));
            achieved = n;
        }
        res.counts.push_back(row);
        res.achieved_n.push_back(achieved);

        // fit each bound on its pre-saturation regime (at least 2 points)
        auto fit = [&](bool use_upper) {
            std::vector<double> xs, ys;
            for (size_t i = 0; i < row.size(); ++i) {
                int c = use_upper ? row[i].upper : row[i].lower;
                if (c <= 0) continue;
                if (c > alive / 2 && xs.size() >= 2) break;
                xs.push_back(n_grid[i]);
                ys.push_back(std::log(static_cast<double>(c)));
            }
            return slope_fit(xs, ys);
        };
        res.upper_slopes.push_back(fit(true));
        res.lower_slopes.push_back(fit(false));
    }

    res.upper_bracket = *std::max_element(res.upper_slopes.begin(), res.upper_slopes.end());
    res.lower_bracket = *std::max_element(res.lower_slopes.begin(), res.lower_slopes.end());

    // entropy at scale eps should not decrease as eps shrinks
    std::vector<size_t> idx(eps_grid.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return eps_grid[a] > eps_grid[b]; });
    for (size_t k = 0; k + 1 < idx.size(); ++k)
        if (res.upper_slopes[idx[k + 1]] < res.upper_slopes[idx[k]] - 0.05) res.monotone_ok = false;
    return res;
}

DiskMesh make_disk_mesh(const Vec& center, const Mat& plane_basis, double radius,
                        double target_edge) {
    if (plane_basis.cols() != 2 || plane_basis.rows() != center.size())
        throw InputError("disk mesh: plane basis must be (dim x 2)");
    if (radius <= 0.0 || target_edge <= 0.0) throw InputError("disk mesh: bad sizes");
    Mat B = Eigen::HouseholderQR<Mat>(plane_basis).householderQ() *
            Mat::Identity(plane_basis.rows(), 2);
    DiskMesh mesh;
    double q = target_edge / radius;
    int m = static_cast<int>(std::ceil(1.0 / q));
    std::unordered_map<int64_t, int> grid;
    auto key = [m](int i, int j) { return static_cast<int64_t>(i + 2 * m) * (4 * m + 1) + (j + 2 * m); };
    for (int i = -m; i <= m; ++i)
        for (int j = -m; j <= m; ++j) {
            double u = i * q, v = j * q;
            if (u * u + v * v > 1.0 + 1e-12) continue;
            grid[key(i, j)] = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(center + radius * (u * B.col(0) + v * B.col(1)));
            mesh.param.emplace_back(u, v);
        }
    for (int i = -m; i < m; ++i)
        for (int j = -m; j < m; ++j) {
            auto a = grid.find(key(i, j)), b = grid.find(key(i + 1, j));
            auto c = grid.find(key(i + 1, j + 1)), d = grid.find(key(i, j + 1));
            bool ha = a != grid.end(), hb = b != grid.end(), hc = c != grid.end(),
                 hd = d != grid.end();
            if (ha && hb && hc) mesh.tris.push_back({a->second, b->second, c->second});
            if (ha && hc && hd) mesh.tris.push_back({a->second, c->second, d->second});
        }
    if (mesh.tris.empty()) throw InputError("disk mesh: radius below mesh resolution");
    mesh.tangent_check = 0.0;  // built flat inside the seed plane
    mesh.worst_aspect = 2.0;
    return mesh;
}

VolumeExpansionReport disk_volume_expansion(const MapSystem& map, DiskMesh mesh, int n_steps,
                                            const VolumeExpansionOptions& opt) {
    VolumeExpansionReport rep;
    auto total_area = [&](const std::vector<Vec>& pts) {
        double a = 0.0;
        for (auto& t : mesh.tris) a += tri_area(pts[t[0]], pts[t[1]], pts[t[2]]);
        return a;
    };
    auto clip_bound = [&](const std::vector<Vec>& pts, int iter) {
        std::mt19937_64 gen(opt.seed + 7919 * iter);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(pts.size()) - 1);
        double worst = 0.0;
        for (int c = 0; c < opt.clip_centers; ++c) {
            const Vec& ctr = pts[pick(gen)];
            std::vector<int> sel;
            for (int t = 0; t < static_cast<int>(mesh.tris.size()); ++t) {
                Vec cen = (pts[mesh.tris[t][0]] + pts[mesh.tris[t][1]] + pts[mesh.tris[t][2]]) / 3.0;
                if ((cen - ctr).norm() <= opt.eps_clip) sel.push_back(t);
            }
            UnionFind uf(static_cast<int>(pts.size()));
            for (int t : sel) {
                uf.unite(mesh.tris[t][0], mesh.tris[t][1]);
                uf.unite(mesh.tris[t][1], mesh.tris[t][2]);
            }
            std::unordered_map<int, double> piece;
            for (int t : sel)
                piece[uf.find(mesh.tris[t][0])] +=
                    tri_area(pts[mesh.tris[t][0]], pts[mesh.tris[t][1]], pts[mesh.tris[t][2]]);
            for (auto& [root, vol] : piece) worst = std::max(worst, vol);
        }
        return worst;
    };
    auto cone_angle = [&](const std::vector<Vec>& pts) {
        if (!opt.F_at) return 0.0;
        double worst = 0.0;
        size_t stride = std::max<size_t>(1, mesh.tris.size() / 50);
        for (size_t t = 0; t < mesh.tris.size(); t += stride) {
            const Vec &a = pts[mesh.tris[t][0]], &b = pts[mesh.tris[t][1]], &c = pts[mesh.tris[t][2]];
            Mat P(a.size(), 2);
            P.col(0) = b - a;
            P.col(1) = c - a;
            Mat F = opt.F_at((a + b + c) / 3.0);
            worst = std::max(worst, principal_angle(P, F));
        }
        return worst;
    };

    rep.log_volume.push_back(std::log(total_area(mesh.vertices)));
    rep.max_clip.push_back(clip_bound(mesh.vertices, 0));
    rep.worst_cone_angle = cone_angle(mesh.vertices);
    rep.achieved_n = 0;

    for (int iter = 1; iter <= n_steps; ++iter) {
        std::vector<Vec> img(mesh.vertices.size());
        for (size_t i = 0; i < mesh.vertices.size(); ++i) img[i] = map.apply(mesh.vertices[i]);

        // split edges whose image exceeds twice the target edge; repeat until
        // stable since midpoint images can still be long
        std::unordered_map<uint64_t, int> midpoint;
        auto edge_key = [](int a, int b) {
            if (a > b) std::swap(a, b);
            return (static_cast<uint64_t>(a) << 32) | static_cast<uint64_t>(b);
        };
        bool split_any = true;
        while (split_any && !rep.saturated) {
            split_any = false;
            // pieces crushed to (numerically) one dimension cannot be fixed by
            // subdivision and cannot distort the area sums; leave them alone
            double img_total = 0.0;
            for (auto& t : mesh.tris) img_total += tri_area(img[t[0]], img[t[1]], img[t[2]]);
            double negligible = 1e-6 * img_total;
            std::vector<std::array<int, 3>> next;
            next.reserve(mesh.tris.size());
            auto mid_of = [&](int a, int b) {
                auto [it, fresh] = midpoint.try_emplace(edge_key(a, b), -1);
                if (it->second < 0) {
                    it->second = static_cast<int>(mesh.vertices.size());
                    mesh.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
                    mesh.param.push_back(0.5 * (mesh.param[a] + mesh.param[b]));
                    img.push_back(map.apply(mesh.vertices.back()));
                }
                return it->second;
            };
            for (auto& t : mesh.tris) {
                if (static_cast<int>(mesh.vertices.size()) > opt.max_vertices) {
                    rep.saturated = true;
                    next.push_back(t);
                    continue;
                }
                if (tri_area(img[t[0]], img[t[1]], img[t[2]]) <= negligible) {
                    next.push_back(t);
                    continue;
                }
                bool longe[3];
                int n_long = 0;
                for (int e = 0; e < 3; ++e) {
                    // splitting stops once the preimage edge is far below the
                    // target scale: sub-resolution detail (crushed directions
                    // near strong contraction) carries negligible area and
                    // would otherwise cascade indefinitely
                    double pre = (mesh.vertices[t[e]] - mesh.vertices[t[(e + 1) % 3]]).norm();
                    longe[e] = pre > opt.target_edge / 256.0 &&
                               (img[t[e]] - img[t[(e + 1) % 3]]).norm() > 2.0 * opt.target_edge;
                    n_long += longe[e];
                }
                if (n_long == 0) {
                    // in-plane anisotropy (speed slowdowns shrink one direction
                    // without any edge tripping the length rule) thins
                    // triangles; longest-edge bisection halves the aspect
                    double el[3];
                    int emax = 0;
                    for (int e = 0; e < 3; ++e) {
                        el[e] = (img[t[e]] - img[t[(e + 1) % 3]]).norm();
                        if (el[e] > el[emax]) emax = e;
                    }
                    if (tri_aspect(img[t[0]], img[t[1]], img[t[2]]) > 0.5 * opt.max_aspect &&
                        (mesh.vertices[t[emax]] - mesh.vertices[t[(emax + 1) % 3]]).norm() >
                            opt.target_edge / 256.0) {
                        longe[emax] = true;
                        n_long = 1;
                    }
                }
                if (n_long == 0) {
                    next.push_back(t);
                    continue;
                }
                split_any = true;
                if (n_long == 3) {
                    int mab = mid_of(t[0], t[1]), mbc = mid_of(t[1], t[2]), mca = mid_of(t[2], t[0]);
                    next.push_back({t[0], mab, mca});
                    next.push_back({mab, t[1], mbc});
                    next.push_back({mca, mbc, t[2]});
                    next.push_back({mab, mbc, mca});
                } else if (n_long == 1) {
                    int e = longe[0] ? 0 : (longe[1] ? 1 : 2);
                    int a = t[e], b = t[(e + 1) % 3], c = t[(e + 2) % 3];
                    int m = mid_of(a, b);
                    next.push_back({a, m, c});
                    next.push_back({m, b, c});
                } else {
                    // two long edges share a vertex b; split both, then cut the
                    // quad along its shorter image diagonal
                    int e = (!longe[0]) ? 2 : (!longe[1] ? 0 : 1);
                    int a = t[e], b = t[(e + 1) % 3], c = t[(e + 2) % 3];
                    int m1 = mid_of(a, b), m2 = mid_of(b, c);
                    next.push_back({m1, b, m2});
                    if ((img[a] - img[m2]).norm() < (img[m1] - img[c]).norm()) {
                        next.push_back({a, m1, m2});
                        next.push_back({a, m2, c});
                    } else {
                        next.push_back({a, m1, c});
                        next.push_back({m1, m2, c});
                    }
                }
            }
            mesh.tris.swap(next);
        }

        mesh.vertices.swap(img);
        // quality gate over the triangles that actually carry area: slivers
        // flattened by the transverse contraction are thin by construction
        // and contribute nothing to the sums
        double area_now = total_area(mesh.vertices);
        double area_floor = 1e-6 * area_now;
        double worst_aspect = 0.0;
        for (auto& t : mesh.tris) {
            if (tri_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) < area_floor)
                continue;
            worst_aspect = std::max(
                worst_aspect, tri_aspect(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]));
        }
        mesh.worst_aspect = worst_aspect;
        if (worst_aspect > opt.max_aspect) break;  // refinement failure, keep last valid n

        rep.log_volume.push_back(std::log(total_area(mesh.vertices)));
        rep.max_clip.push_back(clip_bound(mesh.vertices, iter));
        rep.worst_cone_angle = std::max(rep.worst_cone_angle, cone_angle(mesh.vertices));
        rep.achieved_n = iter;
        if (rep.saturated) break;
    }

    rep.final_vertices = static_cast<int>(mesh.vertices.size());
    int count = static_cast<int>(rep.log_volume.size());
    int start = std::max(0, count - std::max(3, count / 2) - 1);
    std::vector<double> xs, ys, cx, cy;
    for (int i = start; i < count; ++i) {
        xs.push_back(i);
        ys.push_back(rep.log_volume[i]);
    }
    rep.v_f = slope_fit(xs, ys);
    for (int i = start; i < count; ++i)
        if (rep.max_clip[i] > 0) {
            cx.push_back(i);
            cy.push_back(std::log(rep.max_clip[i]));
        }
    rep.clip_slope = slope_fit(cx, cy);
    return rep;
}

ExpansivenessReport expansiveness_probe(const MapSystem& map, const Vec& x, double delta,
                                        int n_max, double eps_inner,
                                        const std::vector<Vec>& candidate_pool,
                                        const FlowSystem* flow_sys) {
    if (delta <= 0.0 || eps_inner <= 0.0 || n_max < 2)
        throw InputError("expansiveness probe: bad parameters");
    ExpansivenessReport rep;
    std::vector<Vec> ref(n_max + 1);
    ref[0] = x;
    for (int j = 0; j < n_max; ++j) ref[j + 1] = map.apply(ref[j]);

    std::vector<std::vector<Vec>> surv;
    for (const Vec& c : candidate_pool) {
        if (map.distance(x, c) > delta) continue;
        ++rep.candidates;
        std::vector<Vec> traj(1, c);
        bool alive = true;
        for (int j = 0; j < n_max && alive; ++j) {
            try {
                traj.push_back(map.apply(traj.back()));
            } catch (const DivergenceError&) {
                alive = false;
                break;
            }
            if (map.distance(ref[j + 1], traj.back()) > delta) alive = false;
        }
        if (alive) surv.push_back(std::move(traj));
    }
    rep.survivors = static_cast<int>(surv.size());
    if (rep.survivors == 0) {
        rep.low_confidence = true;
        return rep;
    }

    TrajectoryTable tb;
    tb.dim = map.dim();
    tb.n_max = n_max;
    tb.count = rep.survivors;
    tb.ok.assign(tb.count, 1);
    tb.data.resize(static_cast<size_t>(tb.count) * (n_max + 1) * tb.dim);
    for (int i = 0; i < tb.count; ++i)
        for (int j = 0; j <= n_max; ++j)
            for (int c = 0; c < tb.dim; ++c)
                tb.data[(static_cast<size_t>(i) * (n_max + 1) + j) * tb.dim + c] = surv[i][j][c];

    std::vector<double> xs, ys;
    for (int n = 1; n <= n_max; n += std::max(1, n_max / 8)) {
        SpanningCounts sc = spanning_count(map, tb, n, eps_inner, 1);
        if (sc.upper > rep.survivors / 2 && xs.size() >= 2) break;
        xs.push_back(n);
        ys.push_back(std::log(static_cast<double>(sc.upper)));
    }
    rep.slope = slope_fit(xs, ys);

    if (flow_sys) {
        // compare the mid-window image against the continuous orbit arc around
        // phi_mid(x), sampled with the same fixed-step integrator
        int mid = n_max / 2;
        int j0 = std::max(0, mid - 1);
        int span = std::min(n_max, j0 + 2) - j0;
        std::vector<Vec> seg(1, ref[j0]);
        const auto* fm = dynamic_cast<const FlowTimeOneMap*>(&map);
        double h = fm ? fm->h : 0.005;
        Vec y = ref[j0];
        for (int u = 0; u < span; ++u) y = rk4_time_one(*flow_sys, y, h, 1e6, &seg);
        double worst = 0.0;
        for (auto& traj : surv) worst = std::max(worst, point_polyline_dist(traj[mid], seg));
        rep.collapse = worst;
    }
    return rep;
}

std::string spanning_csv(const SpanningResult& res) {
    std::ostringstream out;
    out << "n,eps,upper,lower,slope\n";
    for (size_t e = 0; e < res.eps_grid.size(); ++e)
        for (size_t i = 0; i < res.counts[e].size(); ++i)
            out << res.n_grid[i] << "," << res.eps_grid[e] << "," << res.counts[e][i].upper << ","
                << res.counts[e][i].lower << "," << res.upper_slopes[e] << "\n";
    return out.str();
}

std::string mesh_to_off(const DiskMesh& mesh) {
    std::ostringstream out;
    out << "OFF\n" << mesh.vertices.size() << " " << mesh.tris.size() << " 0\n";
    for (const Vec& v : mesh.vertices) {
        for (int c = 0; c < v.size(); ++c) out << (c ? " " : "") << v[c];
        out << "\n";
    }
    for (const auto& t : mesh.tris) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    return out.str();
}

}  // namespace lab
