#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "sam2b/core.hpp"

namespace sam2b {

/// UAV kinematic state. Coordinate frame: BS at the origin, array broadside
/// along +x, z up. Posture is (roll, pitch, yaw) in radians.
struct UAVState {
    std::array<double, 3> position{0, 0, 0};
    std::array<double, 3> velocity{0, 0, 0};
    std::array<double, 3> posture{0, 0, 0};
    double time = 0.0;

    double distance() const {
        return std::sqrt(position[0] * position[0] + position[1] * position[1] +
                         position[2] * position[2]);
    }
    double horizontal_distance() const {
        return std::sqrt(position[0] * position[0] + position[1] * position[1]);
    }
    double altitude() const { return position[2]; }
};

struct TrajectoryConfig {
    double duration = 100.0;  // seconds
    double step = 0.1;        // seconds between samples
    // Flight volume (kept in front of the array: x > 0).
    double min_xyz[3] = {8.0, -60.0, 2.0};
    double max_xyz[3] = {60.0, 60.0, 45.0};
    double speed_min = 4.0;   // m/s, drawn per leg
    double speed_max = 14.0;
    double max_turn_rate = 0.6;     // rad/s bound on heading change
    double posture_jitter = 0.03;   // rad, gaussian perturbation (clamped at 3 sigma)
    double arrival_radius = 2.0;    // waypoint switch distance
    // A turn-limited pursuer can end up orbiting a waypoint it cannot reach;
    // after this many steps without closing in, the leg is abandoned.
    std::size_t stall_limit = 25;
    // Optional explicit waypoint list; cycled when non-empty, random otherwise.
    std::vector<std::array<double, 3>> waypoints;

    void validate() const {
        if (duration <= 0.0) throw ConfigError("trajectory: duration must be positive");
        if (step <= 0.0) throw ConfigError("trajectory: step must be positive");
        if (speed_min < 0.0 || speed_max < speed_min)
            throw ConfigError("trajectory: need 0 <= speed_min <= speed_max");
        if (max_turn_rate < 0.0) throw ConfigError("trajectory: max_turn_rate must be >= 0");
        for (int i = 0; i < 3; ++i)
            if (max_xyz[i] < min_xyz[i]) throw ConfigError("trajectory: empty flight volume");
        if (min_xyz[2] < 0.0) throw ConfigError("trajectory: flight volume below ground");
    }
};

/// Piecewise-linear waypoint flight with bounded speed and turn rate;
/// posture follows the velocity heading plus a bounded random perturbation.
/// Pure function of (config, rng seed).
inline std::vector<UAVState> sample_trajectory(const TrajectoryConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.duration / cfg.step)));

    auto random_point = [&](std::array<double, 3>& p) {
        for (int i = 0; i < 3; ++i) p[i] = rng.uniform(cfg.min_xyz[i], cfg.max_xyz[i]);
    };

    std::size_t wp_index = 0;
    auto next_target = [&](std::array<double, 3>& tgt) {
        if (!cfg.waypoints.empty()) {
            tgt = cfg.waypoints[wp_index % cfg.waypoints.size()];
            ++wp_index;
        } else {
            random_point(tgt);
        }
    };

    std::array<double, 3> pos;
    if (!cfg.waypoints.empty()) {
        pos = cfg.waypoints[0];
        ++wp_index;
    } else {
        random_point(pos);
    }
    std::array<double, 3> target;
    next_target(target);

    double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    double heading = std::atan2(target[1] - pos[1], target[0] - pos[0]);

    auto jitter = [&]() {
        const double j = rng.gaussian(0.0, cfg.posture_jitter);
        const double bound = 3.0 * cfg.posture_jitter;
        return std::clamp(j, -bound, bound);
    };

    std::vector<UAVState> states;
    states.reserve(n);
    double best_dist = std::numeric_limits<double>::infinity();
    std::size_t stalled = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 3> delta{target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]};
        double dist = std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);
        if (dist < best_dist - 1e-9) {
            best_dist = dist;
            stalled = 0;
        } else {
            ++stalled;
        }
        const double reach = std::max(cfg.arrival_radius, speed * cfg.step);
        if (dist < reach || stalled > cfg.stall_limit) {
            next_target(target);
            speed = rng.uniform(cfg.speed_min, cfg.speed_max);
            delta = {target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]};
            dist = std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);
            best_dist = std::numeric_limits<double>::infinity();
            stalled = 0;
        }

        // Turn-rate-limited heading toward the target; climb follows directly.
        const double desired = std::atan2(delta[1], delta[0]);
        double dh = std::remainder(desired - heading, 2.0 * M_PI);
        const double max_dh = cfg.max_turn_rate * cfg.step;
        heading += std::clamp(dh, -max_dh, max_dh);

        const double horiz = std::max(1e-9, std::hypot(delta[0], delta[1]));
        const double total = std::max(1e-9, dist);
        const double climb_frac = delta[2] / total;
        const double horiz_frac = horiz / total;

        UAVState st;
        st.time = static_cast<double>(i) * cfg.step;
        st.velocity[0] = speed * horiz_frac * std::cos(heading);
        st.velocity[1] = speed * horiz_frac * std::sin(heading);
        st.velocity[2] = speed * climb_frac;
        st.position[0] = pos[0];
        st.position[1] = pos[1];
        st.position[2] = std::max(0.0, pos[2]);

        const double vmag = std::hypot(st.velocity[0], st.velocity[1], st.velocity[2]);
        st.posture[0] = jitter();  // roll
        st.posture[1] = (vmag > 1e-9 ? std::asin(st.velocity[2] / vmag) : 0.0) + jitter();
        st.posture[2] = (vmag > 1e-9 ? std::atan2(st.velocity[1], st.velocity[0]) : heading) + jitter();

        states.push_back(st);

        for (int d = 0; d < 3; ++d) pos[d] += st.velocity[d] * cfg.step;
        pos[2] = std::max(0.0, pos[2]);
    }
    return states;
}

}  // namespace sam2b
