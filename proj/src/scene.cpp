#include "servo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace servo {

std::vector<Eigen::Vector3d> voxel_downsample(const std::vector<Eigen::Vector3d>& points,
                                              double voxel_size) {
    if (voxel_size <= 0.0) throw std::invalid_argument("voxel_size must be > 0");
    struct Acc {
        Eigen::Vector3d sum{0, 0, 0};
        int count = 0;
    };
    // exact 21-bit packed cell key; supports |index| < 2^20
    auto key_of = [voxel_size](const Eigen::Vector3d& p) {
        constexpr int64_t kBias = 1 << 20;
        const int64_t ix = static_cast<int64_t>(std::floor(p.x() / voxel_size)) + kBias;
        const int64_t iy = static_cast<int64_t>(std::floor(p.y() / voxel_size)) + kBias;
        const int64_t iz = static_cast<int64_t>(std::floor(p.z() / voxel_size)) + kBias;
        if ((ix | iy | iz) < 0 || ix >= (kBias << 1) || iy >= (kBias << 1) || iz >= (kBias << 1))
            throw std::invalid_argument("voxel_downsample: point outside the indexable range");
        return (static_cast<uint64_t>(ix) << 42) | (static_cast<uint64_t>(iy) << 21) |
               static_cast<uint64_t>(iz);
    };
    std::unordered_map<uint64_t, int> slot;
    std::vector<Acc> cells;  // first-occurrence order keeps output deterministic
    slot.reserve(points.size());
    for (const auto& p : points) {
        const uint64_t k = key_of(p);
        auto it = slot.find(k);
        if (it == slot.end()) {
            it = slot.emplace(k, static_cast<int>(cells.size())).first;
            cells.push_back({});
        }
        cells[it->second].sum += p;
        cells[it->second].count += 1;
    }
    std::vector<Eigen::Vector3d> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(c.sum / c.count);
    return out;
}

std::vector<Eigen::Vector3d> spherical_flip(const std::vector<Eigen::Vector3d>& points_cam,
                                            double R) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(points_cam.size());
    for (const auto& p : points_cam) {
        const double n = p.norm();
        if (n <= 0.0) throw std::invalid_argument("spherical_flip: point at camera origin");
        if (n > R * (1.0 + 1e-12)) throw std::invalid_argument("spherical_flip: R < max|p|");
        out.push_back(p + 2.0 * (R - n) * (p / n));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Incremental convex hull.

namespace {

struct Face {
    int a, b, c;
    Eigen::Vector3d normal;  // unit, outward
    double offset;           // normal . a
    bool alive = true;
};

Face make_face(int a, int b, int c, const std::vector<Eigen::Vector3d>& pts,
               const Eigen::Vector3d& interior) {
    Face f;
    f.a = a;
    f.b = b;
    f.c = c;
    Eigen::Vector3d n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double nn = n.norm();
    if (nn > 1e-300) n /= nn;
    if (n.dot(interior - pts[a]) > 0.0) {  // want outward
        std::swap(f.b, f.c);
        n = -n;
    }
    f.normal = n;
    f.offset = n.dot(pts[f.a]);
    return f;
}

// Hull of a coplanar set: monotone chain in the plane's own basis.
std::vector<int> planar_hull(const std::vector<Eigen::Vector3d>& pts,
                             const Eigen::Vector3d& origin, const Eigen::Vector3d& u,
                             const Eigen::Vector3d& v, double eps) {
    struct P2 {
        double x, y;
        int idx;
    };
    std::vector<P2> q;
    q.reserve(pts.size());
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        const Eigen::Vector3d d = pts[i] - origin;
        q.push_back({d.dot(u), d.dot(v), i});
    }
    std::sort(q.begin(), q.end(), [](const P2& a, const P2& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.y != b.y) return a.y < b.y;
        return a.idx < b.idx;
    });
    auto cross = [](const P2& o, const P2& a, const P2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<P2> hull(2 * q.size());
    int k = 0;
    for (const auto& p : q) {  // lower
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= eps) --k;
        hull[k++] = p;
    }
    for (int i = static_cast<int>(q.size()) - 2, lo = k + 1; i >= 0; --i) {  // upper
        while (k >= lo && cross(hull[k - 2], hull[k - 1], q[i]) <= eps) --k;
        hull[k++] = q[i];
    }
    std::vector<int> out;
    for (int i = 0; i + 1 < k; ++i) out.push_back(hull[i].idx);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

HullResult convex_hull_3d(const std::vector<Eigen::Vector3d>& points, double eps_scale) {
    HullResult result;
    const int n = static_cast<int>(points.size());
    if (n == 0) return result;

    double extent = 0.0;
    for (const auto& p : points) extent = std::max(extent, (p - points[0]).lpNorm<Eigen::Infinity>());
    const double eps = std::max(1.0, extent) * std::max(eps_scale, 1e-14);

    // Deterministic initial simplex: farthest point selections, ties to the
    // lower index.
    const int v0 = 0;
    int v1 = -1;
    double best = eps;
    for (int i = 1; i < n; ++i) {
        const double d = (points[i] - points[v0]).norm();
        if (d > best) {
            best = d;
            v1 = i;
        }
    }
    if (v1 < 0) {  // all points coincide
        result.degenerate = true;
        result.vertices = {0};
        return result;
    }
    const Eigen::Vector3d dir = (points[v1] - points[v0]).normalized();
    int v2 = -1;
    best = eps;
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d d = points[i] - points[v0];
        const double off = (d - d.dot(dir) * dir).norm();
        if (off > best) {
            best = off;
            v2 = i;
        }
    }
    if (v2 < 0) {  // collinear: extremes along dir
        result.degenerate = true;
        int lo = v0, hi = v0;
        double tlo = 0.0, thi = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = (points[i] - points[v0]).dot(dir);
            if (t < tlo) { tlo = t; lo = i; }
            if (t > thi) { thi = t; hi = i; }
        }
        result.vertices = {std::min(lo, hi), std::max(lo, hi)};
        result.vertices.erase(std::unique(result.vertices.begin(), result.vertices.end()),
                              result.vertices.end());
        return result;
    }
    Eigen::Vector3d pn = (points[v1] - points[v0]).cross(points[v2] - points[v0]).normalized();
    int v3 = -1;
    best = eps;
    for (int i = 0; i < n; ++i) {
        const double off = std::abs(pn.dot(points[i] - points[v0]));
        if (off > best) {
            best = off;
            v3 = i;
        }
    }
    if (v3 < 0) {  // coplanar: 2D hull in the plane
        result.degenerate = true;
        const Eigen::Vector3d u = (points[v1] - points[v0]).normalized();
        const Eigen::Vector3d w = pn.cross(u).normalized();
        result.vertices = planar_hull(points, points[v0], u, w, eps * eps);
        return result;
    }

    const Eigen::Vector3d interior =
        (points[v0] + points[v1] + points[v2] + points[v3]) / 4.0;
    std::vector<Face> faces;
    faces.push_back(make_face(v0, v1, v2, points, interior));
    faces.push_back(make_face(v0, v1, v3, points, interior));
    faces.push_back(make_face(v0, v2, v3, points, interior));
    faces.push_back(make_face(v1, v2, v3, points, interior));

    std::vector<int> visible;
    for (int i = 0; i < n; ++i) {
        if (i == v0 || i == v1 || i == v2 || i == v3) continue;
        visible.clear();
        for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
            if (!faces[f].alive) continue;
            if (faces[f].normal.dot(points[i]) - faces[f].offset > eps) visible.push_back(f);
        }
        if (visible.empty()) continue;  // interior or on-surface within eps

        // Horizon: directed edges of visible faces whose reverse is not among
        // visible faces.
        std::unordered_map<uint64_t, int> dir_edges;
        auto ekey = [](int s, int t) {
            return (static_cast<uint64_t>(static_cast<uint32_t>(s)) << 32) |
                   static_cast<uint32_t>(t);
        };
        for (int f : visible) {
            const Face& fc = faces[f];
            dir_edges[ekey(fc.a, fc.b)] = 1;
            dir_edges[ekey(fc.b, fc.c)] = 1;
            dir_edges[ekey(fc.c, fc.a)] = 1;
        }
        std::vector<std::pair<int, int>> horizon;
        for (int f : visible) {
            const Face& fc = faces[f];
            const int e[3][2] = {{fc.a, fc.b}, {fc.b, fc.c}, {fc.c, fc.a}};
            for (const auto& ed : e) {
                if (dir_edges.find(ekey(ed[1], ed[0])) == dir_edges.end())
                    horizon.emplace_back(ed[0], ed[1]);
            }
        }
        for (int f : visible) faces[f].alive = false;
        for (const auto& [ea, eb] : horizon) {
            faces.push_back(make_face(ea, eb, i, points, interior));
        }
    }

    std::vector<char> on_hull(n, 0);
    for (const auto& f : faces) {
        if (!f.alive) continue;
        result.faces.push_back({f.a, f.b, f.c});
        on_hull[f.a] = on_hull[f.b] = on_hull[f.c] = 1;
    }
    for (int i = 0; i < n; ++i)
        if (on_hull[i]) result.vertices.push_back(i);
    return result;
}

std::vector<int> hidden_points_removal(const std::vector<Eigen::Vector3d>& points_cam,
                                       const HprParams& params) {
    if (params.gamma <= 1.0) throw std::invalid_argument("HprParams.gamma must be > 1");
    std::vector<int> front;
    double max_norm = 0.0;
    for (int i = 0; i < static_cast<int>(points_cam.size()); ++i) {
        const auto& p = points_cam[i];
        if (!p.allFinite() || p.z() <= 0.0) continue;
        const double nrm = p.norm();
        if (nrm <= 0.0) continue;
        front.push_back(i);
        max_norm = std::max(max_norm, nrm);
    }
    if (front.empty()) return {};
    if (front.size() == 1) return front;

    std::vector<Eigen::Vector3d> sub;
    sub.reserve(front.size() + 1);
    for (int i : front) sub.push_back(points_cam[i]);
    std::vector<Eigen::Vector3d> flipped = spherical_flip(sub, params.gamma * max_norm);
    flipped.emplace_back(0.0, 0.0, 0.0);  // camera point joins the hull input

    const HullResult hull = convex_hull_3d(flipped);
    std::vector<int> visible;
    for (int v : hull.vertices) {
        if (v < static_cast<int>(front.size())) visible.push_back(front[v]);
    }
    std::sort(visible.begin(), visible.end());
    return visible;
}

// ---------------------------------------------------------------------------
// Scene construction.

namespace {

Eigen::Quaterniond random_rotation(RngEngine& rng) {
    // Marsaglia's uniform quaternion.
    const double u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 2.0 * M_PI);
    const double u3 = uniform(rng, 0.0, 2.0 * M_PI);
    const double s1 = std::sqrt(1.0 - u1), s2 = std::sqrt(u1);
    return Eigen::Quaterniond(s2 * std::cos(u3), s1 * std::sin(u2), s1 * std::cos(u2),
                              s2 * std::sin(u3))
        .normalized();
}

}  // namespace

Scene build_scene(const std::vector<ObjectModel>& models, const CylinderRegion& region,
                  const SceneGenParams& params, RngEngine& rng) {
    if (models.empty()) throw std::invalid_argument("build_scene: no object models");
    if (region.radius <= 0.0 || region.height <= 0.0)
        throw std::invalid_argument("build_scene: invalid region");

    std::vector<std::vector<Eigen::Vector3d>> downsampled(models.size());
    for (size_t m = 0; m < models.size(); ++m)
        downsampled[m] = voxel_downsample(models[m].points, params.voxel_size);

    Scene scene;
    scene.region = region;
    scene.total_budget = params.total_budget;

    int n_clusters = uniform_int(rng, params.min_clusters, params.max_clusters);
    const int min_pts = std::max(1, params.min_cluster_points);
    n_clusters = std::max(1, std::min(n_clusters, (params.total_budget - 1) / min_pts));

    int budget_left = params.total_budget - 1;  // keeps the sum strictly below N
    for (int c = 0; c < n_clusters; ++c) {
        const int clusters_after = n_clusters - 1 - c;
        const int max_here = budget_left - clusters_after * min_pts;
        const size_t m = static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(models.size()) - 1));
        const auto& pool = downsampled[m];
        int ni = uniform_int(rng, params.min_cluster_points, params.max_cluster_points);
        ni = std::min({ni, max_here, static_cast<int>(pool.size())});
        ni = std::max(ni, 1);

        // Partial Fisher-Yates: first ni entries of a shuffled index vector.
        std::vector<int> idx(pool.size());
        for (size_t i = 0; i < pool.size(); ++i) idx[i] = static_cast<int>(i);
        for (int i = 0; i < ni; ++i) {
            const int j = uniform_int(rng, i, static_cast<int>(pool.size()) - 1);
            std::swap(idx[i], idx[j]);
        }

        const Eigen::Quaterniond rot = random_rotation(rng);
        const double rr = region.radius * std::sqrt(uniform(rng, 0.0, 1.0));
        const double th = uniform(rng, 0.0, 2.0 * M_PI);
        const double zz = uniform(rng, -0.5 * region.height, 0.5 * region.height);
        const Eigen::Vector3d target_centroid =
            region.center + Eigen::Vector3d(rr * std::cos(th), rr * std::sin(th), zz);

        Eigen::Vector3d mean_sel(0, 0, 0);
        for (int i = 0; i < ni; ++i) mean_sel += rot * pool[idx[i]];
        mean_sel /= ni;

        Cluster cluster;
        cluster.object_id = models[m].id;
        cluster.pose.rotation = rot;
        cluster.pose.translation = target_centroid - mean_sel;
        cluster.points.reserve(ni);
        Eigen::Vector3d mean(0, 0, 0);
        for (int i = 0; i < ni; ++i) {
            cluster.points.push_back(rot * pool[idx[i]] + cluster.pose.translation);
            mean += cluster.points.back();
        }
        cluster.centroid = mean / ni;
        scene.clusters.push_back(std::move(cluster));
        budget_left -= ni;
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Model I/O and synthesis.

ObjectModel load_model_txt(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    ObjectModel model;
    model.id = std::filesystem::path(path).stem().string();
    double x, y, z;
    while (in >> x >> y >> z) model.points.emplace_back(x, y, z);
    if (model.points.empty()) throw std::runtime_error("empty model file: " + path);
    return model;
}

ObjectModel load_model_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    ObjectModel model;
    model.id = std::filesystem::path(path).stem().string();
    float buf[3];
    while (in.read(reinterpret_cast<char*>(buf), sizeof(buf)))
        model.points.emplace_back(buf[0], buf[1], buf[2]);
    if (model.points.empty()) throw std::runtime_error("empty model file: " + path);
    return model;
}

void save_model_txt(const ObjectModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    char line[96];
    for (const auto& p : model.points) {
        std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
        out << line;
    }
}

void save_model_bin(const ObjectModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    for (const auto& p : model.points) {
        const float buf[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                              static_cast<float>(p.z())};
        out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    }
}

std::vector<ObjectModel> load_models_dir(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension().string();
        if (ext == ".txt" || ext == ".xyz" || ext == ".bin" || ext == ".f32")
            files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<ObjectModel> models;
    for (const auto& f : files) {
        const auto ext = std::filesystem::path(f).extension().string();
        models.push_back(ext == ".bin" || ext == ".f32" ? load_model_bin(f) : load_model_txt(f));
    }
    if (models.empty()) throw std::runtime_error("no model files in " + dir);
    return models;
}

std::vector<ObjectModel> synthetic_models(int count, int points_per_model, RngEngine& rng) {
    std::vector<ObjectModel> models;
    models.reserve(count);
    for (int m = 0; m < count; ++m) {
        const int shape = m % 4;
        const double s = uniform(rng, 0.04, 0.10);  // object scale, meters
        ObjectModel model;
        model.points.reserve(points_per_model);
        for (int i = 0; i < points_per_model; ++i) {
            Eigen::Vector3d p;
            switch (shape) {
                case 0: {  // sphere shell
                    const double z = uniform(rng, -1.0, 1.0);
                    const double ph = uniform(rng, 0.0, 2.0 * M_PI);
                    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                    p = s * Eigen::Vector3d(r * std::cos(ph), r * std::sin(ph), z);
                    model.id = "sphere_" + std::to_string(m);
                    break;
                }
                case 1: {  // box surface
                    const int face = uniform_int(rng, 0, 5);
                    Eigen::Vector3d q(uniform(rng, -1, 1), uniform(rng, -1, 1),
                                      (face % 2 == 0) ? 1.0 : -1.0);
                    if (face / 2 == 1) std::swap(q.x(), q.z());
                    if (face / 2 == 2) std::swap(q.y(), q.z());
                    p = s * q;
                    model.id = "box_" + std::to_string(m);
                    break;
                }
                case 2: {  // cylinder shell with caps
                    const double ph = uniform(rng, 0.0, 2.0 * M_PI);
                    const double z = uniform(rng, -1.0, 1.0);
                    if (uniform(rng, 0.0, 1.0) < 0.8) {
                        p = s * Eigen::Vector3d(std::cos(ph), std::sin(ph), z);
                    } else {
                        const double r = std::sqrt(uniform(rng, 0.0, 1.0));
                        p = s * Eigen::Vector3d(r * std::cos(ph), r * std::sin(ph),
                                                z > 0 ? 1.0 : -1.0);
                    }
                    model.id = "cylinder_" + std::to_string(m);
                    break;
                }
                default: {  // torus
                    const double u = uniform(rng, 0.0, 2.0 * M_PI);
                    const double v = uniform(rng, 0.0, 2.0 * M_PI);
                    const double R0 = 1.0, r0 = 0.4;
                    p = s * Eigen::Vector3d((R0 + r0 * std::cos(v)) * std::cos(u),
                                            (R0 + r0 * std::cos(v)) * std::sin(u),
                                            r0 * std::sin(v));
                    model.id = "torus_" + std::to_string(m);
                    break;
                }
            }
            model.points.push_back(p);
        }
        models.push_back(std::move(model));
    }
    return models;
}

}  // namespace servo
