#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sam2b/channel.hpp"
#include "sam2b/core.hpp"
#include "sam2b/kv.hpp"
#include "sam2b/sensors.hpp"
#include "sam2b/trajectory.hpp"

namespace sam2b {

// ---------------------------------------------------------------------------
// Degradation schedule: which profile applies to which chronological slice of
// the dataset. Within a segment, a per-sample mix draws one named profile.
// ---------------------------------------------------------------------------

struct ScheduleEntry {
    double begin = 0.0;  // fractions of the dataset, [begin, end)
    double end = 1.0;
    std::vector<std::pair<std::string, double>> mix;  // (profile name, probability)
};

struct DegradationSchedule {
    std::map<std::string, DegradationProfile> profiles;  // "clean" is implicit
    std::vector<ScheduleEntry> entries;

    const DegradationProfile& resolve(const std::string& name) const {
        static const DegradationProfile kClean{};
        if (name == "clean") {
            const auto it = profiles.find(name);
            return it == profiles.end() ? kClean : it->second;
        }
        const auto it = profiles.find(name);
        if (it == profiles.end()) throw ConfigError("schedule references unknown profile '" + name + "'");
        return it->second;
    }

    /// Profile for the sample at the given dataset fraction in [0, 1).
    /// Samples outside every segment stay clean.
    std::pair<std::string, const DegradationProfile*> pick(double fraction, Rng& rng) const {
        for (const auto& seg : entries) {
            if (fraction < seg.begin || fraction >= seg.end) continue;
            if (seg.mix.empty()) return {"clean", &resolve("clean")};
            double total = 0.0;
            for (const auto& [name, p] : seg.mix) total += p;
            double draw = rng.uniform() * total;
            for (const auto& [name, p] : seg.mix) {
                draw -= p;
                if (draw <= 0.0) return {name, &resolve(name)};
            }
            return {seg.mix.back().first, &resolve(seg.mix.back().first)};
        }
        return {"clean", &resolve("clean")};
    }

    void validate() const {
        for (const auto& seg : entries) {
            if (seg.begin < 0.0 || seg.end > 1.0 + 1e-12 || seg.end < seg.begin)
                throw ConfigError("schedule: segment bounds must satisfy 0 <= begin <= end <= 1");
            for (const auto& [name, p] : seg.mix) {
                if (p < 0.0) throw ConfigError("schedule: mix probability must be >= 0");
                resolve(name);
            }
        }
        for (const auto& [name, prof] : profiles) prof.validate();
    }
};

/// Everything that determines a generated dataset. Generation is a pure
/// function of this struct: equal configs give byte-identical files.
struct GenerationConfig {
    ChannelConfig channel;
    TrajectoryConfig trajectory;
    CameraConfig camera;
    DegradationSchedule schedule;
    std::uint64_t seed = 1;
    double split_fraction = 0.7;
};

// -- kv (de)serialization ----------------------------------------------------

namespace detail {

inline void channel_to_kv(const ChannelConfig& c, KvMap& m) {
    m["channel.M"] = kv::fmt(c.M);
    m["channel.K"] = kv::fmt(c.K);
    m["channel.Q"] = kv::fmt(c.Q);
    m["channel.D"] = kv::fmt(c.D);
    m["channel.antenna_spacing"] = kv::fmt(c.antenna_spacing);
    m["channel.P"] = kv::fmt(c.P);
    m["channel.sigma2"] = kv::fmt(c.sigma2);
    m["channel.L"] = kv::fmt(c.L);
    m["channel.rician_K_dB"] = kv::fmt(c.rician_K_dB);
    m["channel.delay_spread"] = kv::fmt(c.delay_spread);
}

inline ChannelConfig channel_from_kv(kv::Reader& r) {
    ChannelConfig c;
    c.M = r.get_size("channel.M", c.M);
    c.K = r.get_size("channel.K", c.K);
    c.Q = r.get_size("channel.Q", c.Q);
    c.D = r.get_size("channel.D", c.D);
    c.antenna_spacing = r.get_double("channel.antenna_spacing", c.antenna_spacing);
    c.P = r.get_double("channel.P", c.P);
    c.sigma2 = r.get_double("channel.sigma2", c.sigma2);
    c.L = r.get_size("channel.L", c.L);
    c.rician_K_dB = r.get_double("channel.rician_K_dB", c.rician_K_dB);
    c.delay_spread = r.get_double("channel.delay_spread", c.delay_spread);
    return c;
}

inline void trajectory_to_kv(const TrajectoryConfig& t, KvMap& m) {
    m["trajectory.duration"] = kv::fmt(t.duration);
    m["trajectory.step"] = kv::fmt(t.step);
    m["trajectory.min_x"] = kv::fmt(t.min_xyz[0]);
    m["trajectory.min_y"] = kv::fmt(t.min_xyz[1]);
    m["trajectory.min_z"] = kv::fmt(t.min_xyz[2]);
    m["trajectory.max_x"] = kv::fmt(t.max_xyz[0]);
    m["trajectory.max_y"] = kv::fmt(t.max_xyz[1]);
    m["trajectory.max_z"] = kv::fmt(t.max_xyz[2]);
    m["trajectory.speed_min"] = kv::fmt(t.speed_min);
    m["trajectory.speed_max"] = kv::fmt(t.speed_max);
    m["trajectory.max_turn_rate"] = kv::fmt(t.max_turn_rate);
    m["trajectory.posture_jitter"] = kv::fmt(t.posture_jitter);
    m["trajectory.arrival_radius"] = kv::fmt(t.arrival_radius);
    if (!t.waypoints.empty()) {
        std::string w;
        for (const auto& p : t.waypoints) {
            if (!w.empty()) w += "; ";
            w += kv::fmt(p[0]) + "," + kv::fmt(p[1]) + "," + kv::fmt(p[2]);
        }
        m["trajectory.waypoints"] = w;
    }
}

inline TrajectoryConfig trajectory_from_kv(kv::Reader& r) {
    TrajectoryConfig t;
    t.duration = r.get_double("trajectory.duration", t.duration);
    t.step = r.get_double("trajectory.step", t.step);
    t.min_xyz[0] = r.get_double("trajectory.min_x", t.min_xyz[0]);
    t.min_xyz[1] = r.get_double("trajectory.min_y", t.min_xyz[1]);
    t.min_xyz[2] = r.get_double("trajectory.min_z", t.min_xyz[2]);
    t.max_xyz[0] = r.get_double("trajectory.max_x", t.max_xyz[0]);
    t.max_xyz[1] = r.get_double("trajectory.max_y", t.max_xyz[1]);
    t.max_xyz[2] = r.get_double("trajectory.max_z", t.max_xyz[2]);
    t.speed_min = r.get_double("trajectory.speed_min", t.speed_min);
    t.speed_max = r.get_double("trajectory.speed_max", t.speed_max);
    t.max_turn_rate = r.get_double("trajectory.max_turn_rate", t.max_turn_rate);
    t.posture_jitter = r.get_double("trajectory.posture_jitter", t.posture_jitter);
    t.arrival_radius = r.get_double("trajectory.arrival_radius", t.arrival_radius);
    const std::string w = r.get_str("trajectory.waypoints", "");
    if (!w.empty()) {
        for (const std::string& part : kv::split(w, ';')) {
            if (part.empty()) continue;
            const auto xyz = kv::split(part, ',');
            if (xyz.size() != 3)
                throw ConfigError("trajectory.waypoints: expected 'x,y,z', got '" + part + "'");
            t.waypoints.push_back({kv::to_double(xyz[0], "waypoint.x"),
                                   kv::to_double(xyz[1], "waypoint.y"),
                                   kv::to_double(xyz[2], "waypoint.z")});
        }
    }
    return t;
}

inline void camera_to_kv(const CameraConfig& c, KvMap& m) {
    m["camera.width"] = kv::fmt(c.width);
    m["camera.height"] = kv::fmt(c.height);
    m["camera.channels"] = kv::fmt(c.channels);
    m["camera.focal_px"] = kv::fmt(c.focal_px);
    m["camera.uav_size"] = kv::fmt(c.uav_size);
    m["camera.clutter_count"] = kv::fmt(c.clutter_count);
    m["camera.clutter_max_intensity"] = kv::fmt(c.clutter_max_intensity);
    m["camera.min_blob_sigma"] = kv::fmt(c.min_blob_sigma);
}

inline CameraConfig camera_from_kv(kv::Reader& r) {
    CameraConfig c;
    c.width = r.get_size("camera.width", c.width);
    c.height = r.get_size("camera.height", c.height);
    c.channels = r.get_size("camera.channels", c.channels);
    c.focal_px = r.get_double("camera.focal_px", c.focal_px);
    c.uav_size = r.get_double("camera.uav_size", c.uav_size);
    c.clutter_count = r.get_size("camera.clutter_count", c.clutter_count);
    c.clutter_max_intensity = r.get_double("camera.clutter_max_intensity", c.clutter_max_intensity);
    c.min_blob_sigma = r.get_double("camera.min_blob_sigma", c.min_blob_sigma);
    return c;
}

inline void schedule_to_kv(const DegradationSchedule& s, KvMap& m) {
    std::size_t pi = 0;
    for (const auto& [name, prof] : s.profiles) {
        const std::string base = "profile." + name + ".";
        for (std::size_t mi = 0; mi < kModalityCount; ++mi) {
            const std::string mb = base + kModalityNames[mi] + ".";
            m[mb + "noise_std"] = kv::fmt(prof.mod[mi].noise_std);
            m[mb + "dropout_prob"] = kv::fmt(prof.mod[mi].dropout_prob);
            m[mb + "staleness_prob"] = kv::fmt(prof.mod[mi].staleness_prob);
        }
        m[base + "occlusion"] = kv::fmt(prof.occlusion);
        ++pi;
    }
    m["schedule.segments"] = kv::fmt(s.entries.size());
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        const auto& e = s.entries[i];
        const std::string base = "schedule." + std::to_string(i) + ".";
        m[base + "begin"] = kv::fmt(e.begin);
        m[base + "end"] = kv::fmt(e.end);
        std::string mix;
        for (const auto& [name, p] : e.mix) {
            if (!mix.empty()) mix += ", ";
            mix += name + ":" + kv::fmt(p);
        }
        m[base + "mix"] = mix;
    }
}

inline DegradationSchedule schedule_from_kv(kv::Reader& r) {
    DegradationSchedule s;
    // Discover profile names from "profile.<name>." keys.
    std::vector<std::string> names;
    for (const auto& [key, val] : r.map()) {
        if (!key.starts_with("profile.")) continue;
        const auto dot = key.find('.', 8);
        if (dot == std::string::npos) throw ConfigError("malformed profile key '" + key + "'");
        const std::string name = key.substr(8, dot - 8);
        if (names.empty() || names.back() != name) names.push_back(name);
    }
    for (const std::string& name : names) {
        DegradationProfile prof;
        const std::string base = "profile." + name + ".";
        for (std::size_t mi = 0; mi < kModalityCount; ++mi) {
            const std::string mb = base + kModalityNames[mi] + ".";
            prof.mod[mi].noise_std = r.get_double(mb + "noise_std", 0.0);
            prof.mod[mi].dropout_prob = r.get_double(mb + "dropout_prob", 0.0);
            prof.mod[mi].staleness_prob = r.get_double(mb + "staleness_prob", 0.0);
        }
        prof.occlusion = r.get_double(base + "occlusion", 0.0);
        s.profiles[name] = prof;
    }
    const std::size_t nseg = r.get_size("schedule.segments", 0);
    for (std::size_t i = 0; i < nseg; ++i) {
        const std::string base = "schedule." + std::to_string(i) + ".";
        ScheduleEntry e;
        e.begin = r.get_double(base + "begin", 0.0);
        e.end = r.get_double(base + "end", 1.0);
        const std::string mix = r.get_str(base + "mix", "");
        if (!mix.empty()) {
            for (const std::string& part : kv::split(mix, ',')) {
                if (part.empty()) continue;
                const auto colon = part.find(':');
                if (colon == std::string::npos)
                    throw ConfigError(base + "mix: expected 'name:prob', got '" + part + "'");
                e.mix.emplace_back(kv::trim(part.substr(0, colon)),
                                   kv::to_double(kv::trim(part.substr(colon + 1)), base + "mix"));
            }
        }
        s.entries.push_back(std::move(e));
    }
    return s;
}

}  // namespace detail

inline KvMap generation_config_to_kv(const GenerationConfig& g) {
    KvMap m;
    detail::channel_to_kv(g.channel, m);
    detail::trajectory_to_kv(g.trajectory, m);
    detail::camera_to_kv(g.camera, m);
    detail::schedule_to_kv(g.schedule, m);
    m["data.seed"] = kv::fmt(g.seed);
    m["data.split_fraction"] = kv::fmt(g.split_fraction);
    return m;
}

inline GenerationConfig generation_config_from_kv(kv::Reader& r) {
    GenerationConfig g;
    g.channel = detail::channel_from_kv(r);
    g.trajectory = detail::trajectory_from_kv(r);
    g.camera = detail::camera_from_kv(r);
    g.schedule = detail::schedule_from_kv(r);
    g.seed = r.get_u64("data.seed", g.seed);
    g.split_fraction = r.get_double("data.split_fraction", g.split_fraction);
    return g;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
    GenerationConfig config;
    std::vector<Sample> samples;

    std::size_t num_beams() const { return config.channel.Q; }

    /// Chronological split boundary: floor(N * split_fraction).
    std::size_t split_index() const {
        return static_cast<std::size_t>(static_cast<double>(samples.size()) *
                                        config.split_fraction);
    }
};

/// Generates the full labeled dataset: trajectory -> channel -> oracle label
/// -> rendered sensors -> scheduled degradation. Deterministic in the config;
/// per-sample randomness is drawn from sub-seeds derived as
/// derive_seed(seed, stream, sample_index).
inline Dataset build_dataset(const GenerationConfig& cfg) {
    cfg.channel.validate();
    cfg.camera.validate();
    cfg.schedule.validate();
    if (cfg.split_fraction <= 0.0 || cfg.split_fraction >= 1.0)
        throw ConfigError("split_fraction must be in (0, 1)");

    Dataset ds;
    ds.config = cfg;

    Rng traj_rng(derive_seed(cfg.seed, "trajectory"));
    const auto states = sample_trajectory(cfg.trajectory, traj_rng);
    const auto codebook = make_codebook(cfg.channel.M, cfg.channel.Q, cfg.channel.antenna_spacing);

    Degrader degrader;
    const auto n = states.size();
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng chan_rng(derive_seed(cfg.seed, "channel", i));
        const auto ch = synth_channel(states[i], cfg.channel, chan_rng);
        const auto label =
            static_cast<std::uint16_t>(oracle_beam(ch, codebook, cfg.channel.P, cfg.channel.sigma2));

        Sample clean =
            make_clean_sample(states[i], cfg.camera, derive_seed(cfg.seed, "clutter", i), label);

        Rng profile_rng(derive_seed(cfg.seed, "profile", i));
        const double fraction = static_cast<double>(i) / static_cast<double>(n);
        const auto [prof_name, profile] = cfg.schedule.pick(fraction, profile_rng);

        Rng degrade_rng(derive_seed(cfg.seed, "degrade", i));
        ds.samples.push_back(degrader.degrade(clean, *profile, degrade_rng));
    }
    return ds;
}

// -- binary serialization -----------------------------------------------------

namespace detail {

struct ByteWriter {
    std::vector<unsigned char> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k) const {
        if (pos + k > n)
            throw TruncationError("file ends after " + std::to_string(n) + " bytes, need " +
                                  std::to_string(pos + k));
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(p[pos++]) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos++]) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string raw(std::size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + pos), k);
        pos += k;
        return s;
    }
};

inline void write_sample(ByteWriter& w, const Sample& s) {
    for (float v : s.frame.data) w.f32(v);
    w.u8(s.bbox ? 1 : 0);
    const BBox b = s.bbox.value_or(BBox{});
    w.f64(b.x_c);
    w.f64(b.y_c);
    w.f64(b.w);
    w.f64(b.h);
    for (double v : s.gps) w.f64(v);
    for (double v : s.hd) w.f64(v);
    for (double v : s.posture) w.f64(v);
    for (const auto& m : s.cues.r)
        for (double v : m) w.f64(v);
    for (const auto& m : s.truth.levels)
        for (double v : m) w.f64(v);
    w.u16(s.label);
    w.f64(s.time);
}

inline Sample read_sample(ByteReader& r, std::size_t w_px, std::size_t h_px, std::size_t c_px) {
    Sample s;
    s.frame = Frame::blank(w_px, h_px, c_px);
    for (auto& v : s.frame.data) v = r.f32();
    const bool has_bbox = r.u8() != 0;
    BBox b;
    b.x_c = r.f64();
    b.y_c = r.f64();
    b.w = r.f64();
    b.h = r.f64();
    if (has_bbox) s.bbox = b;
    for (auto& v : s.gps) v = r.f64();
    for (auto& v : s.hd) v = r.f64();
    for (auto& v : s.posture) v = r.f64();
    for (auto& m : s.cues.r)
        for (auto& v : m) v = r.f64();
    for (auto& m : s.truth.levels)
        for (auto& v : m) v = r.f64();
    s.label = r.u16();
    s.time = r.f64();
    return s;
}

}  // namespace detail

inline constexpr char kDatasetMagic[4] = {'S', '2', 'M', 'B'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<unsigned char> serialize_dataset(const Dataset& ds) {
    detail::ByteWriter payload;
    for (const Sample& s : ds.samples) detail::write_sample(payload, s);
    const std::uint32_t crc = crc32(payload.bytes);

    detail::ByteWriter w;
    w.raw(std::string(kDatasetMagic, 4));
    w.u32(kDatasetVersion);
    const std::string cfg = kv::dump(generation_config_to_kv(ds.config));
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.raw(cfg);
    w.u64(ds.samples.size());
    w.u64(ds.config.seed);
    w.u32(static_cast<std::uint32_t>(ds.config.camera.width));
    w.u32(static_cast<std::uint32_t>(ds.config.camera.height));
    w.u32(static_cast<std::uint32_t>(ds.config.camera.channels));
    w.u32(crc);
    w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());
    return w.bytes;
}

inline Dataset deserialize_dataset(const std::vector<unsigned char>& bytes) {
    detail::ByteReader r{bytes.data(), bytes.size()};
    if (r.raw(4) != std::string(kDatasetMagic, 4))
        throw IoError("not a dataset file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw VersionError("dataset schema version " + std::to_string(version) +
                           " not supported (expected " + std::to_string(kDatasetVersion) + ")");
    const std::uint32_t cfg_len = r.u32();
    const std::string cfg_text = r.raw(cfg_len);
    kv::Reader cfg_reader(kv::parse(cfg_text));
    Dataset ds;
    ds.config = generation_config_from_kv(cfg_reader);
    cfg_reader.reject_unknown();

    const std::uint64_t n = r.u64();
    const std::uint64_t seed = r.u64();
    if (seed != ds.config.seed) throw IoError("dataset header seed disagrees with config block");
    const std::size_t w = r.u32(), h = r.u32(), c = r.u32();
    const std::uint32_t stored_crc = r.u32();

    const std::size_t payload_off = r.pos;
    r.need(0);
    if (bytes.size() < payload_off)
        throw TruncationError("dataset header extends past end of file");
    const std::uint32_t crc = crc32(bytes.data() + payload_off, bytes.size() - payload_off);

    ds.samples.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) ds.samples.push_back(detail::read_sample(r, w, h, c));
    if (r.pos != bytes.size())
        throw IoError("dataset has " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
    if (crc != stored_crc)
        throw ChecksumError("dataset payload CRC mismatch (corrupted file)");
    return ds;
}

inline std::string dataset_manifest(const Dataset& ds) {
    KvMap m = generation_config_to_kv(ds.config);
    m["manifest.samples"] = kv::fmt(ds.samples.size());
    m["manifest.split_index"] = kv::fmt(ds.split_index());
    m["manifest.num_beams"] = kv::fmt(ds.num_beams());
    std::vector<std::size_t> hist(ds.num_beams(), 0);
    for (const Sample& s : ds.samples) ++hist[s.label];
    std::size_t covered = 0;
    std::string hist_str;
    for (std::size_t q = 0; q < hist.size(); ++q) {
        if (hist[q] > 0) ++covered;
        if (!hist_str.empty()) hist_str += ",";
        hist_str += std::to_string(hist[q]);
    }
    m["manifest.label_histogram"] = hist_str;
    m["manifest.labels_covered"] = kv::fmt(covered);
    return kv::dump(m);
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    const auto bytes = serialize_dataset(ds);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + path.string() + "'");
    f.close();

    std::ofstream mf(path.string() + ".manifest.txt");
    if (!mf) throw IoError("cannot write manifest next to '" + path.string() + "'");
    mf << dataset_manifest(ds);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    const auto size = static_cast<std::size_t>(f.tellg());
    f.seekg(0);
    std::vector<unsigned char> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f) throw IoError("short read from '" + path.string() + "'");
    return deserialize_dataset(bytes);
}

/// Re-derives the oracle label for sample i of a dataset from the generating
/// config alone (fresh channel draw from the per-sample sub-seed). Exists so
/// tests and audits can confirm stored labels without trusting the stored
/// values.
inline std::uint16_t recompute_label(const GenerationConfig& cfg, const UAVState& state,
                                     std::size_t index, const Codebook& cb) {
    Rng chan_rng(derive_seed(cfg.seed, "channel", index));
    const auto ch = synth_channel(state, cfg.channel, chan_rng);
    return static_cast<std::uint16_t>(oracle_beam(ch, cb, cfg.channel.P, cfg.channel.sigma2));
}

}  // namespace sam2b
