#include "servo/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace servo {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f32(std::ostream& out, double v) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
}
void put_i32(std::ostream& out, int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& in) {
    uint32_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
uint64_t get_u64(std::istream& in) {
    uint64_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
double get_f32(std::istream& in) {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof(f));
    return static_cast<double>(f);
}
int32_t get_i32(std::istream& in) {
    int32_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::string get_str(std::istream& in) {
    const uint32_t n = get_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

// plain float casts both ways keep a load/save cycle byte-stable; consumers
// renormalize rotations on use
void put_pose(std::ostream& out, const Pose& p) {
    put_f32(out, p.rotation.w());
    put_f32(out, p.rotation.x());
    put_f32(out, p.rotation.y());
    put_f32(out, p.rotation.z());
    put_f32(out, p.translation.x());
    put_f32(out, p.translation.y());
    put_f32(out, p.translation.z());
}

Pose get_pose(std::istream& in) {
    Pose p;
    const double w = get_f32(in), x = get_f32(in), y = get_f32(in), z = get_f32(in);
    p.rotation = Eigen::Quaterniond(w, x, y, z);
    p.translation.x() = get_f32(in);
    p.translation.y() = get_f32(in);
    p.translation.z() = get_f32(in);
    return p;
}

void put_keypoints(std::ostream& out, const std::vector<Keypoint>& kps) {
    put_u32(out, static_cast<uint32_t>(kps.size()));
    for (const auto& k : kps) {
        put_i32(out, k.point_id);
        put_i32(out, k.cluster_id);
        put_f32(out, k.xy.x());
        put_f32(out, k.xy.y());
        put_f32(out, k.z_norm);
        put_f32(out, k.metric_depth);
    }
}

std::vector<Keypoint> get_keypoints(std::istream& in) {
    const uint32_t n = get_u32(in);
    std::vector<Keypoint> kps(n);
    for (auto& k : kps) {
        k.point_id = get_i32(in);
        k.cluster_id = get_i32(in);
        k.xy.x() = get_f32(in);
        k.xy.y() = get_f32(in);
        k.z_norm = get_f32(in);
        k.metric_depth = get_f32(in);
    }
    return kps;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    out << "SERVODATA 1\n";
    out << "scenes " << data.scenes.size() << "\n";
    out << "episodes " << data.episodes.size() << "\n";
    for (const auto& [k, v] : data.provenance) out << "meta " << k << " " << v << "\n";
    out << "binary\n";

    for (const auto& scene : data.scenes) {
        put_f32(out, scene.region.radius);
        put_f32(out, scene.region.height);
        put_f32(out, scene.region.center.x());
        put_f32(out, scene.region.center.y());
        put_f32(out, scene.region.center.z());
        put_u32(out, static_cast<uint32_t>(scene.total_budget));
        put_u32(out, static_cast<uint32_t>(scene.clusters.size()));
        for (const auto& c : scene.clusters) {
            put_str(out, c.object_id);
            put_pose(out, c.pose);
            put_u32(out, static_cast<uint32_t>(c.points.size()));
            for (const auto& p : c.points) {
                put_f32(out, p.x());
                put_f32(out, p.y());
                put_f32(out, p.z());
            }
        }
    }
    for (const auto& ep : data.episodes) {
        put_pose(out, ep.initial);
        put_pose(out, ep.target);
        put_u64(out, ep.seed);
        put_u32(out, static_cast<uint32_t>(ep.steps.size()));
        for (const auto& step : ep.steps) {
            for (int i = 0; i < 3; ++i) put_f32(out, step.teacher.linear[i]);
            for (int i = 0; i < 3; ++i) put_f32(out, step.teacher.angular[i]);
            put_keypoints(out, step.pair.current);
            put_keypoints(out, step.pair.target);
            put_u32(out, static_cast<uint32_t>(step.pair.matches.size()));
            for (const auto& [a, b] : step.pair.matches) {
                put_u32(out, static_cast<uint32_t>(a));
                put_u32(out, static_cast<uint32_t>(b));
            }
        }
    }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "SERVODATA 1")
        throw std::runtime_error("bad dataset header: " + path);
    size_t n_scenes = 0, n_episodes = 0;
    Dataset data;
    while (std::getline(in, line)) {
        if (line == "binary") break;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "scenes") ss >> n_scenes;
        else if (tag == "episodes") ss >> n_episodes;
        else if (tag == "meta") {
            std::string k, v;
            ss >> k;
            std::getline(ss, v);
            if (!v.empty() && v[0] == ' ') v.erase(0, 1);
            data.provenance[k] = v;
        } else throw std::runtime_error("bad dataset manifest line: " + line);
    }

    data.scenes.resize(n_scenes);
    for (auto& scene : data.scenes) {
        scene.region.radius = get_f32(in);
        scene.region.height = get_f32(in);
        scene.region.center.x() = get_f32(in);
        scene.region.center.y() = get_f32(in);
        scene.region.center.z() = get_f32(in);
        scene.total_budget = static_cast<int>(get_u32(in));
        scene.clusters.resize(get_u32(in));
        for (auto& c : scene.clusters) {
            c.object_id = get_str(in);
            c.pose = get_pose(in);
            c.points.resize(get_u32(in));
            Eigen::Vector3d mean(0, 0, 0);
            for (auto& p : c.points) {
                p.x() = get_f32(in);
                p.y() = get_f32(in);
                p.z() = get_f32(in);
                mean += p;
            }
            c.centroid = c.points.empty() ? Eigen::Vector3d::Zero()
                                          : Eigen::Vector3d(mean / double(c.points.size()));
        }
    }
    data.episodes.resize(n_episodes);
    for (auto& ep : data.episodes) {
        ep.initial = get_pose(in);
        ep.target = get_pose(in);
        ep.seed = get_u64(in);
        ep.steps.resize(get_u32(in));
        for (auto& step : ep.steps) {
            for (int i = 0; i < 3; ++i) step.teacher.linear[i] = get_f32(in);
            for (int i = 0; i < 3; ++i) step.teacher.angular[i] = get_f32(in);
            step.pair.current = get_keypoints(in);
            step.pair.target = get_keypoints(in);
            step.pair.matches.resize(get_u32(in));
            for (auto& [a, b] : step.pair.matches) {
                a = static_cast<int>(get_u32(in));
                b = static_cast<int>(get_u32(in));
            }
        }
    }
    if (!in) throw std::runtime_error("truncated dataset: " + path);
    return data;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) out[key] = value;
    }
    return out;
}

namespace {

void write_provenance(std::ostream& out, const std::map<std::string, std::string>& prov) {
    for (const auto& [k, v] : prov) out << "# " << k << " = " << v << "\n";
}

std::string fmt(double v, int prec = 3) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

}  // namespace

void write_report_csv(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    write_provenance(out, report.provenance);
    out << "controller,level,runs,sr_percent,te_mm,re_deg,ts_steps,mtt_s,fusion_madds_per_step\n";
    for (const auto& row : report.rows) {
        out << row.controller << "," << level_name(row.level) << "," << row.runs << ","
            << fmt(row.sr, 2) << "," << fmt(row.mean_te_mm) << "," << fmt(row.mean_re_deg) << ","
            << fmt(row.mean_ts, 1) << "," << fmt(row.mtt_s) << "," << fmt(row.mean_madds, 0)
            << "\n";
    }
    for (const auto& [level, seed] : report.skipped_seeds)
        out << "# skipped_seed level=" << level_name(level) << " index=" << seed << "\n";
}

std::string format_report_table(const BenchmarkReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %-5s %7s %10s %9s %10s %8s\n", "Method", "Level",
                  "SR(%)", "TE(mm)", "RE(deg)", "TS(0.04s)", "mTT(s)");
    out << line;
    for (const auto& row : report.rows) {
        std::snprintf(line, sizeof(line), "%-22s %-5s %7.2f %10.3f %9.3f %10.1f %8.3f\n",
                      row.controller.c_str(), level_name(row.level), row.sr, row.mean_te_mm,
                      row.mean_re_deg, row.mean_ts, row.mtt_s);
        out << line;
    }
    return out.str();
}

void write_report_table(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write table: " + path);
    write_provenance(out, report.provenance);
    out << format_report_table(report);
}

void write_episode_log(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write episode log: " + path);
    write_provenance(out, report.provenance);
    out << "# dt = " << fmt(report.dt, 6) << "\n";
    char line[512];
    for (const auto& ep : report.episodes) {
        for (size_t t = 0; t < ep.result.trajectory.size(); ++t) {
            const auto& rec = ep.result.trajectory[t];
            std::snprintf(line, sizeof(line),
                          "step controller=%s level=%s run=%d t=%zu ferr=%.9g te=%.9g re=%.9g "
                          "twist=%.9g,%.9g,%.9g,%.9g,%.9g,%.9g "
                          "pose=%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          ep.controller.c_str(), level_name(ep.level), ep.run, t,
                          rec.feature_err, rec.te, rec.re_deg, rec.twist.linear.x(),
                          rec.twist.linear.y(), rec.twist.linear.z(), rec.twist.angular.x(),
                          rec.twist.angular.y(), rec.twist.angular.z(), rec.pose.rotation.w(),
                          rec.pose.rotation.x(), rec.pose.rotation.y(), rec.pose.rotation.z(),
                          rec.pose.translation.x(), rec.pose.translation.y(),
                          rec.pose.translation.z());
            out << line;
        }
        std::snprintf(line, sizeof(line),
                      "episode controller=%s level=%s run=%d success=%d ts=%d te=%.9g re=%.9g "
                      "steps=%d madds=%llu hash=%llu cause=%s\n",
                      ep.controller.c_str(), level_name(ep.level), ep.run,
                      ep.result.success ? 1 : 0, ep.result.ts, ep.result.te, ep.result.re_deg,
                      ep.result.steps_run,
                      static_cast<unsigned long long>(ep.result.fusion_madds),
                      static_cast<unsigned long long>(ep.stream_hash),
                      ep.result.fail_cause.empty() ? "-" : ep.result.fail_cause.c_str());
        out << line;
    }
}

namespace {

std::map<std::string, std::string> parse_kv_line(const std::string& line, size_t start) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(line.substr(start));
    std::string tok;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

}  // namespace

std::vector<BenchEpisode> parse_episode_log(const std::string& path, double* dt_out) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open episode log: " + path);
    std::vector<BenchEpisode> episodes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# dt = ", 0) == 0) {
            if (dt_out) *dt_out = std::stod(line.substr(7));
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("episode ", 0) == 0) {
            auto kv = parse_kv_line(line, 8);
            BenchEpisode ep;
            ep.controller = kv.at("controller");
            ep.level = level_from_name(kv.at("level"));
            ep.run = std::stoi(kv.at("run"));
            ep.stream_hash = std::stoull(kv.at("hash"));
            ep.result.success = kv.at("success") == "1";
            ep.result.ts = std::stoi(kv.at("ts"));
            ep.result.te = std::stod(kv.at("te"));
            ep.result.re_deg = std::stod(kv.at("re"));
            ep.result.steps_run = std::stoi(kv.at("steps"));
            ep.result.fusion_madds = std::stoull(kv.at("madds"));
            if (kv.at("cause") != "-") ep.result.fail_cause = kv.at("cause");
            episodes.push_back(std::move(ep));
        }
    }
    return episodes;
}

void write_train_curve_csv(const TrainCurve& curve,
                           const std::map<std::string, std::string>& provenance,
                           const std::string& path, int epoch_offset) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write curve: " + path);
    write_provenance(out, provenance);
    out << "epoch,loss,loss_mag,loss_dir\n";
    char line[160];
    for (const auto& e : curve.epochs) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", e.epoch + epoch_offset, e.loss,
                      e.loss_mag, e.loss_dir);
        out << line;
    }
}

std::string format_ablation_table(const FusionAblationTable& table) {
    std::ostringstream out;
    char line[200];
    std::snprintf(line, sizeof(line), "%-10s %7s %10s %9s %10s %16s\n", "Fusion", "SR(%)",
                  "TE(mm)", "RE(deg)", "TS(0.04s)", "madds/step");
    out << line;
    for (const auto& row : table.rows) {
        std::snprintf(line, sizeof(line), "%-10s %7.2f %10.3f %9.3f %10.1f %16.0f\n",
                      row.mode.c_str(), row.agg.sr, row.agg.mean_te_mm, row.agg.mean_re_deg,
                      row.agg.mean_ts, row.mean_madds);
        out << line;
    }
    if (!table.warning.empty()) out << "warning: " << table.warning << "\n";
    return out.str();
}

void write_ablation_csv(const FusionAblationTable& table,
                        const std::map<std::string, std::string>& provenance,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ablation: " + path);
    write_provenance(out, provenance);
    out << "mode,runs,sr_percent,te_mm,re_deg,ts_steps,madds_per_step\n";
    for (const auto& row : table.rows) {
        out << row.mode << "," << row.agg.runs << "," << fmt(row.agg.sr, 2) << ","
            << fmt(row.agg.mean_te_mm) << "," << fmt(row.agg.mean_re_deg) << ","
            << fmt(row.agg.mean_ts, 1) << "," << fmt(row.mean_madds, 0) << "\n";
    }
    if (!table.warning.empty()) out << "# warning: " << table.warning << "\n";
}

}  // namespace servo
