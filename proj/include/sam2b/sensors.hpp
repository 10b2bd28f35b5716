#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sam2b/core.hpp"
#include "sam2b/trajectory.hpp"

namespace sam2b {

// Fixed modality ordering used everywhere: it defines the row order of the
// stacked feature matrix and of all cue/weight vectors.
enum class Modality : std::size_t { Img = 0, Gps = 1, Hd = 2, Pos = 3 };
inline constexpr std::size_t kModalityCount = 4;
inline constexpr std::array<const char*, kModalityCount> kModalityNames{"img", "gps", "hd", "pos"};

/// RGB-like raster, intensities in [0, 1], row-major (y, x, channel).
struct Frame {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<float> data;

    static Frame blank(std::size_t w, std::size_t h, std::size_t c) {
        Frame f;
        f.width = w;
        f.height = h;
        f.channels = c;
        f.data.assign(w * h * c, 0.0f);
        return f;
    }

    float& at(std::size_t y, std::size_t x, std::size_t c) {
        return data[(y * width + x) * channels + c];
    }
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
};

/// Normalized bounding box, center + size, all in [0, 1].
struct BBox {
    double x_c = 0, y_c = 0, w = 0, h = 0;

    bool inside_frame() const {
        return x_c - w / 2 >= -1e-9 && x_c + w / 2 <= 1.0 + 1e-9 && y_c - h / 2 >= -1e-9 &&
               y_c + h / 2 <= 1.0 + 1e-9 && w > 0 && h > 0;
    }
};

/// Per-modality quality cues fed to the reliability network: fixed arity 3,
/// (estimated noise scale, staleness in steps, validity flag).
struct QualityCues {
    std::array<std::array<double, 3>, kModalityCount> r{};
};

/// Exact injected degradation levels, for evaluation only (never an input to
/// the model). Same (level, staleness, validity) layout as the cues.
struct DegradationTruth {
    std::array<std::array<double, 3>, kModalityCount> levels{};

    bool clean() const {
        for (const auto& m : levels)
            if (m[0] != 0.0 || m[1] != 0.0 || m[2] != 1.0) return false;
        return true;
    }
};

/// One time step of multi-modal sensor readings plus the oracle beam label.
struct Sample {
    Frame frame;
    std::optional<BBox> bbox;
    std::array<double, 2> gps{};      // local planar offsets in meters (x, y)
    std::array<double, 2> hd{};       // (height, horizontal distance) in meters
    std::array<double, 3> posture{};  // (roll, pitch, yaw) in radians
    QualityCues cues;
    DegradationTruth truth;
    std::uint16_t label = 0;
    double time = 0.0;

    const std::array<double, 3>& cue(Modality m) const {
        return cues.r[static_cast<std::size_t>(m)];
    }
};

// ---------------------------------------------------------------------------
// Camera rendering
// ---------------------------------------------------------------------------

struct CameraConfig {
    std::size_t width = 32, height = 32, channels = 3;
    double focal_px = 16.0;   // pinhole focal length in pixels
    double uav_size = 0.9;    // apparent physical size in meters
    std::size_t clutter_count = 6;
    double clutter_max_intensity = 0.45;
    double min_blob_sigma = 0.5;  // px, floor for very distant targets

    void validate() const {
        if (width < 2 || height < 2 || channels < 1)
            throw ConfigError("camera: frame must be at least 2x2x1");
        if (focal_px <= 0.0) throw ConfigError("camera: focal_px must be positive");
        if (uav_size <= 0.0) throw ConfigError("camera: uav_size must be positive");
    }
};

struct RenderResult {
    Frame frame;
    std::optional<BBox> bbox;
};

namespace detail {

inline void splat_gaussian(Frame& f, double px, double py, double sigma,
                           const std::array<double, 3>& color, double intensity) {
    const double reach = 3.0 * sigma;
    const auto x0 = static_cast<long>(std::floor(px - reach));
    const auto x1 = static_cast<long>(std::ceil(px + reach));
    const auto y0 = static_cast<long>(std::floor(py - reach));
    const auto y1 = static_cast<long>(std::ceil(py + reach));
    for (long y = std::max(0l, y0); y <= std::min<long>(f.height - 1, y1); ++y) {
        for (long x = std::max(0l, x0); x <= std::min<long>(f.width - 1, x1); ++x) {
            const double dx = (static_cast<double>(x) + 0.5) - px;
            const double dy = (static_cast<double>(y) + 0.5) - py;
            const double g = intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            for (std::size_t c = 0; c < f.channels; ++c) {
                auto& v = f.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
                v = static_cast<float>(
                    std::min(1.0, v + g * color[std::min<std::size_t>(c, 2)]));
            }
        }
    }
}

}  // namespace detail

/// Pinhole projection of the UAV as a bright Gaussian blob over randomized
/// background clutter. The blob's pixel size shrinks with depth and its color
/// mix varies with the viewing direction, so the local appearance carries
/// geometry information the way a real airframe's lit faces do. Returns no
/// bbox when the UAV is behind the camera plane or projects off-frame.
inline RenderResult render_frame(const UAVState& state, const CameraConfig& cam,
                                 std::uint64_t clutter_seed) {
    cam.validate();
    RenderResult out;
    out.frame = Frame::blank(cam.width, cam.height, cam.channels);

    // Background clutter: dim seeded blobs.
    Rng rng(clutter_seed);
    for (std::size_t i = 0; i < cam.clutter_count; ++i) {
        const double cx = rng.uniform(0.0, static_cast<double>(cam.width));
        const double cy = rng.uniform(0.0, static_cast<double>(cam.height));
        const double sigma = rng.uniform(0.7, 2.8);
        const double inten = rng.uniform(0.08, cam.clutter_max_intensity);
        const std::array<double, 3> color{rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0),
                                          rng.uniform(0.2, 1.0)};
        detail::splat_gaussian(out.frame, cx, cy, sigma, color, inten);
    }

    const double depth = state.position[0];  // camera looks along +x
    if (depth <= 1e-6) return out;           // behind the camera plane: no detection

    const double px = static_cast<double>(cam.width) / 2.0 +
                      cam.focal_px * (state.position[1] / depth);
    const double py = static_cast<double>(cam.height) / 2.0 -
                      cam.focal_px * (state.position[2] / depth);
    if (px < 0.0 || px > static_cast<double>(cam.width) || py < 0.0 ||
        py > static_cast<double>(cam.height))
        return out;  // projects outside the frame

    const double r = state.distance();
    const double sigma = std::max(cam.min_blob_sigma, cam.focal_px * cam.uav_size / depth);

    // Viewing-direction-dependent appearance.
    const double u_dir = state.position[1] / r;
    const double w_dir = state.position[2] / r;
    const std::array<double, 3> color{0.30 + 0.70 * (1.0 + u_dir) / 2.0,
                                      0.30 + 0.70 * (1.0 - u_dir) / 2.0,
                                      0.30 + 0.70 * w_dir};
    detail::splat_gaussian(out.frame, px, py, sigma, color, 1.0);

    // Tight 3-sigma box, clamped to the frame.
    const double ext = 3.0 * sigma;
    const double x0 = std::clamp(px - ext, 0.0, static_cast<double>(cam.width));
    const double x1 = std::clamp(px + ext, 0.0, static_cast<double>(cam.width));
    const double y0 = std::clamp(py - ext, 0.0, static_cast<double>(cam.height));
    const double y1 = std::clamp(py + ext, 0.0, static_cast<double>(cam.height));
    BBox box;
    box.x_c = (x0 + x1) / 2.0 / static_cast<double>(cam.width);
    box.y_c = (y0 + y1) / 2.0 / static_cast<double>(cam.height);
    box.w = std::max(x1 - x0, 1.0) / static_cast<double>(cam.width);
    box.h = std::max(y1 - y0, 1.0) / static_cast<double>(cam.height);
    out.bbox = box;
    return out;
}

/// Builds the clean (pre-degradation) sample for a state: exact gps/hd/
/// posture readings, rendered frame, all cues pristine.
inline Sample make_clean_sample(const UAVState& state, const CameraConfig& cam,
                                std::uint64_t clutter_seed, std::uint16_t label) {
    Sample s;
    auto rendered = render_frame(state, cam, clutter_seed);
    s.frame = std::move(rendered.frame);
    s.bbox = rendered.bbox;
    s.gps = {state.position[0], state.position[1]};
    s.hd = {state.altitude(), state.horizontal_distance()};
    s.posture = state.posture;
    s.label = label;
    s.time = state.time;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        s.cues.r[m] = {0.0, 0.0, 1.0};
        s.truth.levels[m] = {0.0, 0.0, 1.0};
    }
    return s;
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

/// Controllable per-modality stress: additive sensor noise, dropout (sensor
/// silent, last value held, validity 0), staleness (old reading delivered as
/// fresh, validity 1) and, for the image, occlusion by a random rectangle.
struct ModalityDegradation {
    double noise_std = 0.0;
    double dropout_prob = 0.0;
    double staleness_prob = 0.0;
};

struct DegradationProfile {
    std::array<ModalityDegradation, kModalityCount> mod{};
    double occlusion = 0.0;  // image-only: masked area fraction

    ModalityDegradation& operator[](Modality m) { return mod[static_cast<std::size_t>(m)]; }
    const ModalityDegradation& operator[](Modality m) const {
        return mod[static_cast<std::size_t>(m)];
    }

    bool clean() const {
        if (occlusion != 0.0) return false;
        for (const auto& d : mod)
            if (d.noise_std != 0.0 || d.dropout_prob != 0.0 || d.staleness_prob != 0.0)
                return false;
        return true;
    }

    void validate() const {
        if (occlusion < 0.0 || occlusion > 1.0)
            throw ConfigError("degradation: occlusion must be in [0, 1]");
        for (const auto& d : mod) {
            if (d.noise_std < 0.0) throw ConfigError("degradation: noise_std must be >= 0");
            if (d.dropout_prob < 0.0 || d.dropout_prob > 1.0 || d.staleness_prob < 0.0 ||
                d.staleness_prob > 1.0)
                throw ConfigError("degradation: probabilities must be in [0, 1]");
        }
    }
};

/// Applies degradation sample by sample, holding per-modality sensor state so
/// dropout and staleness replay the last delivered reading. Never touches the
/// label, the time stamp, or anything channel-derived.
class Degrader {
public:
    Sample degrade(const Sample& clean, const DegradationProfile& profile, Rng& rng) {
        profile.validate();
        Sample s = clean;

        for (std::size_t mi = 0; mi < kModalityCount; ++mi) {
            const auto mod = static_cast<Modality>(mi);
            const ModalityDegradation& d = profile.mod[mi];
            // Before anything was delivered, the hold buffer starts from the
            // current clean reading so a sensor dropped from step one still
            // has something to freeze onto.
            if (!hold_valid_[mi]) save_held(s, mod, 0.0);
            const bool drop = rng.uniform() < d.dropout_prob;
            const bool stale = !drop && rng.uniform() < d.staleness_prob;

            double injected_level = 0.0;
            if (drop || stale) {
                restore_held(s, mod);
                injected_level = held_level_[mi];
                staleness_[mi] += 1.0;
            } else {
                injected_level = apply_noise(s, mod, d, profile.occlusion, rng);
                staleness_[mi] = 0.0;
                save_held(s, mod, injected_level);
            }

            const double validity = drop ? 0.0 : 1.0;
            s.truth.levels[mi] = {injected_level, staleness_[mi], validity};
            // Cues are noisy estimates of the injected levels (20% relative).
            const double est = std::max(0.0, injected_level * (1.0 + 0.2 * rng.gaussian()));
            s.cues.r[mi] = {est, staleness_[mi], validity};
        }
        return s;
    }

private:
    // Returns the injected level recorded in degradation_truth: the noise std
    // for vector modalities, noise std + actual occluded fraction for the
    // image.
    double apply_noise(Sample& s, Modality mod, const ModalityDegradation& d, double occlusion,
                       Rng& rng) {
        switch (mod) {
            case Modality::Gps:
                for (auto& v : s.gps) v += rng.gaussian(0.0, d.noise_std);
                return d.noise_std;
            case Modality::Hd:
                for (auto& v : s.hd) v += rng.gaussian(0.0, d.noise_std);
                return d.noise_std;
            case Modality::Pos:
                for (auto& v : s.posture) v += rng.gaussian(0.0, d.noise_std);
                return d.noise_std;
            case Modality::Img: {
                if (d.noise_std > 0.0)
                    for (auto& v : s.frame.data)
                        v = static_cast<float>(
                            std::clamp(static_cast<double>(v) + rng.gaussian(0.0, d.noise_std),
                                       0.0, 1.0));
                double occluded = 0.0;
                if (occlusion > 0.0) {
                    const auto W = s.frame.width, H = s.frame.height;
                    const double side = std::sqrt(occlusion);
                    const auto bw = std::min<std::size_t>(
                        W, std::max<std::size_t>(1, std::llround(side * static_cast<double>(W))));
                    const auto bh = std::min<std::size_t>(
                        H, std::max<std::size_t>(1, std::llround(side * static_cast<double>(H))));
                    const auto ox = static_cast<std::size_t>(rng.uniform_int(W - bw + 1));
                    const auto oy = static_cast<std::size_t>(rng.uniform_int(H - bh + 1));
                    for (std::size_t y = oy; y < oy + bh; ++y)
                        for (std::size_t x = ox; x < ox + bw; ++x)
                            for (std::size_t c = 0; c < s.frame.channels; ++c)
                                s.frame.at(y, x, c) = 0.0f;
                    occluded = static_cast<double>(bw * bh) / static_cast<double>(W * H);
                }
                return d.noise_std + occluded;
            }
        }
        return 0.0;
    }

    void save_held(const Sample& s, Modality mod, double level) {
        const auto mi = static_cast<std::size_t>(mod);
        switch (mod) {
            case Modality::Gps: held_gps_ = s.gps; break;
            case Modality::Hd: held_hd_ = s.hd; break;
            case Modality::Pos: held_posture_ = s.posture; break;
            case Modality::Img:
                held_frame_ = s.frame;
                held_bbox_ = s.bbox;
                break;
        }
        held_level_[mi] = level;
        hold_valid_[mi] = true;
    }

    void restore_held(Sample& s, Modality mod) const {
        switch (mod) {
            case Modality::Gps: s.gps = held_gps_; break;
            case Modality::Hd: s.hd = held_hd_; break;
            case Modality::Pos: s.posture = held_posture_; break;
            case Modality::Img:
                s.frame = held_frame_;
                s.bbox = held_bbox_;
                break;
        }
    }

    std::array<double, kModalityCount> staleness_{};
    std::array<double, kModalityCount> held_level_{};
    std::array<bool, kModalityCount> hold_valid_{};
    std::array<double, 2> held_gps_{};
    std::array<double, 2> held_hd_{};
    std::array<double, 3> held_posture_{};
    Frame held_frame_;
    std::optional<BBox> held_bbox_;
};

}  // namespace sam2b
