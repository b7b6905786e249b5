#pragma once

#include <cstdint>
#include <vector>

#include "val/image.hpp"
#include "val/rng.hpp"

namespace val::sim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double dist(const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

struct EnvConfig {
    int image_size = 48;
    int geometry_catalog = 84;      // G
    double presence_target = 0.7;   // marginal presence per interactable after the >=1 redraw
    double lambda_v = 0.05;         // workspace units per step at full velocity
    double grasp_radius = 0.06;
    double button_radius = 0.06;
    double drawer_travel = 0.18;    // handle displacement at extension 1
    double object_radius = 0.055;
    int horizon = 50;
    double script_noise = 0.1;
};

struct Color {
    double r = 0.0, g = 0.0, b = 0.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int catalog_size = 84;

    bool drawer_present = false;
    Vec2 drawer_handle;  // handle center at extension 0
    Color drawer_color;

    bool button_drawer_present = false;
    Vec2 button_pos;
    Color button_color;

    bool object_present = false;
    int geometry_id = 0;
    Color object_color;
    Vec2 object_init;

    bool tray_present = false;
    Vec2 tray_pos;
};

enum class Height : std::uint8_t { Low = 0, High = 1 };

struct EnvState {
    std::uint64_t scene_seed = 0;  // stamped at reset; oracle_success refuses cross-scene comparisons
    Vec2 gripper;
    Height height = Height::High;
    double aperture = 1.0;   // 1 open, 0 closed
    double drawer_ext = 0.0;
    int button_ext = 0;      // binary drawer
    Vec2 object;
    bool held = false;
    int t = 0;
};

struct Action {
    double vx = 0.0, vy = 0.0, vh = 0.0, grip = 0.0;
};

struct SuccessThresholds {
    double drawer_ext = 0.1;
    double object_radius = 0.08;
};

// One scripted episode: states/images have length H+1, actions length H.
struct Rollout {
    SceneSpec spec;
    std::vector<EnvState> states;
    std::vector<Action> actions;
    std::vector<Image> images;
};

// Presence flags are redrawn until at least one interactable exists; the base
// probability is solved so the conditional marginal equals cfg.presence_target.
SceneSpec sample_environment(std::uint64_t seed, const EnvConfig& cfg);

EnvState reset(const SceneSpec& spec, std::uint64_t seed, const EnvConfig& cfg);
// Evaluation-protocol variant pinning the initial drawer extension (task definition).
EnvState reset_forced(const SceneSpec& spec, std::uint64_t seed, const EnvConfig& cfg, double forced_drawer_ext);

EnvState step(const SceneSpec& spec, const EnvState& s, Action a, const EnvConfig& cfg);

Image render(const SceneSpec& spec, const EnvState& s, const EnvConfig& cfg);

bool oracle_success(const SceneSpec& spec, const EnvState& final_state, const EnvState& goal_state,
                    const SuccessThresholds& th);

Rollout scripted_collect(const SceneSpec& spec, std::uint64_t seed, int horizon, const EnvConfig& cfg);

// Handle center at a given extension (kinematics helper, also used by the scripted policy).
Vec2 drawer_handle_center(const SceneSpec& spec, double ext, const EnvConfig& cfg);

// Base Bernoulli probability p with p / (1 - (1-p)^3) == target.
double adjusted_presence_prob(double target);

}  // namespace val::sim
