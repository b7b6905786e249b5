#include "val/deskworld.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "val/errors.hpp"

namespace val::sim {

namespace {

constexpr double kDrawerWidth = 0.30;   // cabinet extent in x
constexpr double kDrawerHeight = 0.20;  // cabinet extent in y
constexpr double kButtonDrawerW = 0.20;
constexpr double kButtonDrawerH = 0.16;
constexpr double kButtonDrawerTravel = 0.12;
constexpr double kTrayW = 0.18;
constexpr double kTrayH = 0.14;

double clamp01d(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double adjusted_presence_prob(double target) {
    // conditional marginal m(p) = p / (1 - (1-p)^3) is increasing in p
    double lo = 1e-6, hi = target;
    for (int it = 0; it < 80; ++it) {
        const double p = 0.5 * (lo + hi);
        const double m = p / (1.0 - std::pow(1.0 - p, 3));
        (m < target ? lo : hi) = p;
    }
    return 0.5 * (lo + hi);
}

SceneSpec sample_environment(std::uint64_t seed, const EnvConfig& cfg) {
    Rng rng(seed, Rng::stream_id("scene"));
    SceneSpec spec;
    spec.seed = seed;
    spec.catalog_size = cfg.geometry_catalog;

    const double p = adjusted_presence_prob(cfg.presence_target);
    bool drawer = false, button = false, object = false;
    do {
        drawer = rng.bernoulli(p);
        button = rng.bernoulli(p);
        object = rng.bernoulli(p);
    } while (!drawer && !button && !object);
    spec.drawer_present = drawer;
    spec.button_drawer_present = button;
    spec.object_present = object;
    spec.tray_present = rng.bernoulli(cfg.presence_target);

    auto color = [&rng] { return Color{rng.uniform(), rng.uniform(), rng.uniform()}; };

    if (spec.drawer_present) {
        spec.drawer_handle = {rng.uniform(0.32, 0.60), rng.uniform(0.25, 0.75)};
        spec.drawer_color = color();
    }
    if (spec.button_drawer_present) {
        spec.button_pos = {rng.uniform(0.15, 0.85), rng.uniform(0.12, 0.60)};
        spec.button_color = color();
    }
    if (spec.object_present) {
        spec.geometry_id = rng.uniform_int(cfg.geometry_catalog);
        spec.object_color = color();
        spec.object_init = {rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
    }
    if (spec.tray_present) {
        spec.tray_pos = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    }
    return spec;
}

EnvState reset(const SceneSpec& spec, std::uint64_t seed, const EnvConfig& cfg) {
    Rng rng(seed, Rng::stream_id("reset"));
    EnvState s;
    s.scene_seed = spec.seed;
    s.gripper = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    s.height = Height::High;
    s.aperture = 1.0;
    s.drawer_ext = spec.drawer_present ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : 0.0;
    s.button_ext = spec.button_drawer_present ? (rng.bernoulli(0.5) ? 1 : 0) : 0;
    s.object = spec.object_init;
    s.held = false;
    s.t = 0;
    (void)cfg;
    return s;
}

EnvState reset_forced(const SceneSpec& spec, std::uint64_t seed, const EnvConfig& cfg, double forced_drawer_ext) {
    EnvState s = reset(spec, seed, cfg);
    if (spec.drawer_present) s.drawer_ext = forced_drawer_ext;
    return s;
}

Vec2 drawer_handle_center(const SceneSpec& spec, double ext, const EnvConfig& cfg) {
    return {spec.drawer_handle.x + cfg.drawer_travel * ext, spec.drawer_handle.y};
}

EnvState step(const SceneSpec& spec, const EnvState& s, Action a, const EnvConfig& cfg) {
    a.vx = std::clamp(a.vx, -1.0, 1.0);
    a.vy = std::clamp(a.vy, -1.0, 1.0);
    a.vh = std::clamp(a.vh, -1.0, 1.0);
    a.grip = std::clamp(a.grip, -1.0, 1.0);

    EnvState n = s;
    n.t = s.t + 1;
    if (a.vh > 0.5) n.height = (s.height == Height::Low) ? Height::High : Height::Low;

    const bool closing = a.grip > 0.0;

    // Drawer coupling: a closed gripper on the handle drags extension with its x motion.
    bool coupled = false;
    if (spec.drawer_present && closing && n.height == Height::Low && !s.held &&
        dist(s.gripper, drawer_handle_center(spec, s.drawer_ext, cfg)) <= cfg.grasp_radius) {
        coupled = true;
        n.drawer_ext = std::clamp(s.drawer_ext + cfg.lambda_v * a.vx, 0.0, 1.0);
        n.gripper.x = drawer_handle_center(spec, n.drawer_ext, cfg).x;
        n.gripper.y = clamp01d(s.gripper.y + cfg.lambda_v * a.vy);
    } else {
        n.gripper.x = clamp01d(s.gripper.x + cfg.lambda_v * a.vx);
        n.gripper.y = clamp01d(s.gripper.y + cfg.lambda_v * a.vy);
    }

    // Button press fires on entering the pressed condition, not while holding it.
    if (spec.button_drawer_present) {
        const bool pressed_prev = s.height == Height::Low && dist(s.gripper, spec.button_pos) <= cfg.button_radius;
        const bool pressed_now = n.height == Height::Low && dist(n.gripper, spec.button_pos) <= cfg.button_radius;
        if (pressed_now && !pressed_prev) n.button_ext ^= 1;
    }

    if (closing) {
        n.aperture = 0.0;
        if (!s.held && !coupled && spec.object_present && n.height == Height::Low &&
            dist(n.gripper, s.object) <= cfg.grasp_radius) {
            n.held = true;
        }
    } else {
        n.aperture = 1.0;
        n.held = false;
    }
    if (n.held) n.object = n.gripper;
    return n;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

struct Raster {
    Image* img;
    int size;

    int px(double v) const { return static_cast<int>(std::floor(v * size)); }

    void fill_rect(double x0, double y0, double x1, double y1, const Color& c) {
        const int ax = std::max(0, px(x0)), bx = std::min(size - 1, px(x1));
        const int ay = std::max(0, px(y0)), by = std::min(size - 1, px(y1));
        for (int y = ay; y <= by; ++y)
            for (int x = ax; x <= bx; ++x) {
                img->at(y, x, 0) = c.r;
                img->at(y, x, 1) = c.g;
                img->at(y, x, 2) = c.b;
            }
    }

    void fill_poly(const std::vector<Vec2>& poly, const Color& c) {
        double minx = 1.0, maxx = 0.0, miny = 1.0, maxy = 0.0;
        for (const auto& p : poly) {
            minx = std::min(minx, p.x);
            maxx = std::max(maxx, p.x);
            miny = std::min(miny, p.y);
            maxy = std::max(maxy, p.y);
        }
        const int ax = std::max(0, px(minx)), bx = std::min(size - 1, px(maxx));
        const int ay = std::max(0, px(miny)), by = std::min(size - 1, px(maxy));
        for (int y = ay; y <= by; ++y)
            for (int x = ax; x <= bx; ++x) {
                const double cx = (x + 0.5) / size, cy = (y + 0.5) / size;
                // even-odd rule
                bool inside = false;
                for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
                    if ((poly[i].y > cy) != (poly[j].y > cy) &&
                        cx < (poly[j].x - poly[i].x) * (cy - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
                        inside = !inside;
                }
                if (inside) {
                    img->at(y, x, 0) = c.r;
                    img->at(y, x, 1) = c.g;
                    img->at(y, x, 2) = c.b;
                }
            }
    }

    void fill_disk(Vec2 center, double radius, const Color& c) {
        const int ax = std::max(0, px(center.x - radius)), bx = std::min(size - 1, px(center.x + radius));
        const int ay = std::max(0, px(center.y - radius)), by = std::min(size - 1, px(center.y + radius));
        for (int y = ay; y <= by; ++y)
            for (int x = ax; x <= bx; ++x) {
                const double cx = (x + 0.5) / size, cy = (y + 0.5) / size;
                if (dist({cx, cy}, center) <= radius) {
                    img->at(y, x, 0) = c.r;
                    img->at(y, x, 1) = c.g;
                    img->at(y, x, 2) = c.b;
                }
            }
    }
};

// Unit-scale polygon for a catalog entry. The catalog is keyed only by id so
// every scene and every run sees the same 84 shapes.
struct Geometry {
    std::vector<Vec2> poly;  // unit radius, centered at origin
    bool with_disk = false;
};

Geometry geometry_for_id(int id) {
    Rng rng(0x67656f6dull, static_cast<std::uint64_t>(id));
    Geometry g;
    const int n = 3 + rng.uniform_int(6);
    const double rot = rng.uniform(0.0, 6.283185307179586);
    for (int i = 0; i < n; ++i) {
        const double ang = rot + 6.283185307179586 * i / n;
        const double rad = rng.uniform(0.55, 1.0);
        g.poly.push_back({rad * std::cos(ang), rad * std::sin(ang)});
    }
    g.with_disk = rng.bernoulli(0.4);
    // recenter on the area centroid so the painted mass sits on the object position
    double a2 = 0.0, cx = 0.0, cy = 0.0;
    for (size_t i = 0, j = g.poly.size() - 1; i < g.poly.size(); j = i++) {
        const double cross = g.poly[j].x * g.poly[i].y - g.poly[i].x * g.poly[j].y;
        a2 += cross;
        cx += (g.poly[j].x + g.poly[i].x) * cross;
        cy += (g.poly[j].y + g.poly[i].y) * cross;
    }
    if (std::abs(a2) > 1e-12) {
        cx /= 3.0 * a2;
        cy /= 3.0 * a2;
        for (auto& p : g.poly) {
            p.x -= cx;
            p.y -= cy;
        }
    }
    return g;
}

}  // namespace

Image render(const SceneSpec& spec, const EnvState& s, const EnvConfig& cfg) {
    Image img(cfg.image_size, cfg.image_size);
    Raster r{&img, cfg.image_size};

    r.fill_rect(0.0, 0.0, 1.0, 1.0, {0.80, 0.77, 0.72});

    if (spec.tray_present) {
        const Vec2 t = spec.tray_pos;
        r.fill_rect(t.x - kTrayW / 2, t.y - kTrayH / 2, t.x + kTrayW / 2, t.y + kTrayH / 2, {0.30, 0.22, 0.15});
        r.fill_rect(t.x - kTrayW / 2 + 0.02, t.y - kTrayH / 2 + 0.02, t.x + kTrayW / 2 - 0.02,
                    t.y + kTrayH / 2 - 0.02, {0.68, 0.63, 0.56});
    }

    if (spec.drawer_present) {
        const double cx0 = spec.drawer_handle.x - (kDrawerWidth - 0.015);
        const double cy0 = spec.drawer_handle.y - kDrawerHeight / 2;
        const double off = cfg.drawer_travel * s.drawer_ext;
        // cabinet frame, exposed cavity, sliding face, handle
        r.fill_rect(cx0 - 0.015, cy0 - 0.015, cx0 + kDrawerWidth + 0.015, cy0 + kDrawerHeight + 0.015, {0.22, 0.19, 0.16});
        r.fill_rect(cx0, cy0, cx0 + kDrawerWidth, cy0 + kDrawerHeight, {0.07, 0.06, 0.06});
        r.fill_rect(cx0 + off, cy0, cx0 + kDrawerWidth + off, cy0 + kDrawerHeight, spec.drawer_color);
        const Vec2 h = drawer_handle_center(spec, s.drawer_ext, cfg);
        r.fill_rect(h.x - 0.015, h.y - 0.05, h.x + 0.015, h.y + 0.05, {0.95, 0.93, 0.88});
    }

    if (spec.button_drawer_present) {
        const Vec2 b = spec.button_pos;
        const double bx0 = b.x - kButtonDrawerW / 2, by0 = b.y + 0.05;
        const double off = kButtonDrawerTravel * s.button_ext;
        r.fill_rect(bx0 - 0.012, by0 - 0.012, bx0 + kButtonDrawerW + 0.012, by0 + kButtonDrawerH + 0.012, {0.22, 0.19, 0.16});
        r.fill_rect(bx0, by0, bx0 + kButtonDrawerW, by0 + kButtonDrawerH, {0.07, 0.06, 0.06});
        r.fill_rect(bx0, by0 + off, bx0 + kButtonDrawerW, by0 + kButtonDrawerH + off, spec.button_color);
        r.fill_rect(b.x - 0.028, b.y - 0.028, b.x + 0.028, b.y + 0.028, {0.93, 0.92, 0.90});
        r.fill_rect(b.x - 0.02, b.y - 0.02, b.x + 0.02, b.y + 0.02, spec.button_color);
    }

    auto draw_object = [&] {
        if (!spec.object_present) return;
        const Geometry g = geometry_for_id(spec.geometry_id);
        std::vector<Vec2> poly;
        poly.reserve(g.poly.size());
        for (const auto& p : g.poly)
            poly.push_back({s.object.x + p.x * cfg.object_radius, s.object.y + p.y * cfg.object_radius});
        r.fill_poly(poly, spec.object_color);
        if (g.with_disk) r.fill_disk(s.object, cfg.object_radius * 0.45, spec.object_color);
    };
    auto draw_gripper = [&] {
        const Vec2 g = s.gripper;
        const Color jaw = s.height == Height::Low ? Color{0.05, 0.05, 0.08} : Color{0.97, 0.97, 1.0};
        const double gap = 0.022 + 0.03 * s.aperture;
        r.fill_rect(g.x - gap - 0.012, g.y - 0.045, g.x - gap, g.y + 0.045, jaw);
        r.fill_rect(g.x + gap, g.y - 0.045, g.x + gap + 0.012, g.y + 0.045, jaw);
    };
    // a held object sits in the hand, so it paints over the jaws
    if (s.held) {
        draw_gripper();
        draw_object();
    } else {
        draw_object();
        draw_gripper();
    }

    quantize255(img);
    return img;
}

bool oracle_success(const SceneSpec& spec, const EnvState& final_state, const EnvState& goal_state,
                    const SuccessThresholds& th) {
    if (final_state.scene_seed != spec.seed || goal_state.scene_seed != spec.seed)
        throw ContractError("oracle_success: states come from a different scene than the given spec");
    if (spec.drawer_present && std::abs(final_state.drawer_ext - goal_state.drawer_ext) >= th.drawer_ext) return false;
    if (spec.button_drawer_present && final_state.button_ext != goal_state.button_ext) return false;
    if (spec.object_present) {
        if (dist(final_state.object, goal_state.object) > th.object_radius) return false;
        if (final_state.held != goal_state.held) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// scripted play-data policy
// ---------------------------------------------------------------------------

namespace {

enum class Task { Drawer, Button, Object };

// Waypoint phase machine for one interactable. Emits the noiseless action; the
// caller adds exploration noise.
class Behavior {
public:
    Behavior(Task task, const SceneSpec& spec, const EnvConfig& cfg, Rng& rng)
        : task_(task), spec_(spec), cfg_(cfg) {
        if (task == Task::Object)
            dest_ = spec.tray_present ? spec.tray_pos : Vec2{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    }

    bool done() const { return done_; }

    Action act(const EnvState& s) {
        switch (task_) {
            case Task::Drawer: return act_drawer(s);
            case Task::Button: return act_button(s);
            case Task::Object: return act_object(s);
        }
        return {};
    }

private:
    Action move_toward(const EnvState& s, Vec2 target, bool want_low, double grip) const {
        Action a;
        a.vx = std::clamp((target.x - s.gripper.x) / cfg_.lambda_v, -1.0, 1.0);
        a.vy = std::clamp((target.y - s.gripper.y) / cfg_.lambda_v, -1.0, 1.0);
        a.vh = (want_low != (s.height == Height::Low)) ? 1.0 : 0.0;
        a.grip = grip;
        return a;
    }

    Action act_drawer(const EnvState& s) {
        const Vec2 handle = drawer_handle_center(spec_, s.drawer_ext, cfg_);
        if (phase_ == 0) {  // decide direction once
            target_ext_ = s.drawer_ext < 0.5 ? 1.0 : 0.0;
            phase_ = 1;
        }
        if (phase_ == 1) {  // approach above the handle, open
            if (dist(s.gripper, handle) <= 0.02) {
                phase_ = 2;
            } else {
                return move_toward(s, handle, false, -1.0);
            }
        }
        if (phase_ == 2) {  // drop onto the handle
            if (s.height == Height::Low && dist(s.gripper, handle) <= cfg_.grasp_radius) {
                phase_ = 3;
            } else if (dist(s.gripper, handle) > cfg_.grasp_radius) {
                phase_ = 1;  // drifted off, re-approach
                return move_toward(s, handle, false, -1.0);
            } else {
                return move_toward(s, handle, true, -1.0);
            }
        }
        if (phase_ == 3) {  // grip closed, drag to target extension
            if (std::abs(s.drawer_ext - target_ext_) <= 0.02) {
                phase_ = 4;
            } else if (dist(s.gripper, handle) > cfg_.grasp_radius) {
                phase_ = 1;  // slipped off the handle
                return move_toward(s, handle, false, -1.0);
            } else {
                Action a;
                a.vx = target_ext_ > s.drawer_ext ? 1.0 : -1.0;
                a.vy = std::clamp((handle.y - s.gripper.y) / cfg_.lambda_v, -1.0, 1.0);
                a.vh = (s.height == Height::High) ? 1.0 : 0.0;
                a.grip = 1.0;
                return a;
            }
        }
        // phase 4: release and lift away
        done_ = true;
        Action a;
        a.grip = -1.0;
        a.vh = (s.height == Height::Low) ? 1.0 : 0.0;
        return a;
    }

    Action act_button(const EnvState& s) {
        const Vec2 b = spec_.button_pos;
        if (phase_ == 0) {  // hover over the button at height high
            if (dist(s.gripper, b) <= 0.02 && s.height == Height::High) {
                phase_ = 1;
            } else {
                return move_toward(s, b, false, -1.0);
            }
        }
        if (phase_ == 1) {  // press (lowering onto it toggles)
            if (s.height == Height::Low) {
                phase_ = 2;
            } else {
                return move_toward(s, b, true, -1.0);
            }
        }
        // phase 2: lift off
        done_ = true;
        Action a;
        a.vh = (s.height == Height::Low) ? 1.0 : 0.0;
        a.grip = -1.0;
        return a;
    }

    Action act_object(const EnvState& s) {
        if (phase_ == 0) {  // approach above the object
            if (dist(s.gripper, s.object) <= 0.025) {
                phase_ = 1;
            } else {
                return move_toward(s, s.object, false, -1.0);
            }
        }
        if (phase_ == 1) {  // descend
            if (s.height == Height::Low) {
                phase_ = 2;
            } else if (dist(s.gripper, s.object) > 0.04) {
                phase_ = 0;
                return move_toward(s, s.object, false, -1.0);
            } else {
                return move_toward(s, s.object, true, -1.0);
            }
        }
        if (phase_ == 2) {  // close and verify the grasp
            if (s.held) {
                phase_ = 3;
            } else if (dist(s.gripper, s.object) > cfg_.grasp_radius) {
                phase_ = 0;  // missed, retry
                return move_toward(s, s.object, false, -1.0);
            } else {
                return move_toward(s, s.object, true, 1.0);
            }
        }
        if (phase_ == 3) {  // carry to the destination, grip held closed
            if (!s.held) {
                phase_ = 0;  // dropped it, start over
                return move_toward(s, s.object, false, -1.0);
            }
            if (dist(s.gripper, dest_) <= 0.03) {
                phase_ = 4;
            } else {
                return move_toward(s, dest_, false, 1.0);
            }
        }
        // phase 4: release
        done_ = true;
        Action a;
        a.grip = -1.0;
        a.vh = (s.height == Height::Low) ? 1.0 : 0.0;
        return a;
    }

    Task task_;
    const SceneSpec& spec_;
    const EnvConfig& cfg_;
    int phase_ = 0;
    double target_ext_ = 1.0;
    bool done_ = false;
    Vec2 dest_;
};

}  // namespace

Rollout scripted_collect(const SceneSpec& spec, std::uint64_t seed, int horizon, const EnvConfig& cfg) {
    if (horizon < 1) throw ContractError("scripted_collect: horizon must be >= 1");
    Rng rng(seed, Rng::stream_id("script"));

    std::vector<Task> order;
    if (spec.drawer_present) order.push_back(Task::Drawer);
    if (spec.button_drawer_present) order.push_back(Task::Button);
    if (spec.object_present) order.push_back(Task::Object);
    // Fisher-Yates
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(i + 1)]);

    Rollout out;
    out.spec = spec;
    EnvState s = reset(spec, seed, cfg);
    out.states.push_back(s);
    out.images.push_back(render(spec, s, cfg));

    size_t task_idx = 0;
    std::unique_ptr<Behavior> behavior;
    int behavior_steps = 0;
    for (int t = 0; t < horizon; ++t) {
        if (behavior && (behavior->done() || behavior_steps > 60)) behavior.reset();
        if (!behavior && task_idx < order.size()) {
            behavior = std::make_unique<Behavior>(order[task_idx++], spec, cfg, rng);
            behavior_steps = 0;
        }
        Action a = behavior ? behavior->act(s) : Action{};
        ++behavior_steps;
        a.vx += cfg.script_noise * rng.normal();
        a.vy += cfg.script_noise * rng.normal();
        a.vh += cfg.script_noise * rng.normal();
        a.grip += cfg.script_noise * rng.normal();
        a.vx = std::clamp(a.vx, -1.0, 1.0);
        a.vy = std::clamp(a.vy, -1.0, 1.0);
        a.vh = std::clamp(a.vh, -1.0, 1.0);
        a.grip = std::clamp(a.grip, -1.0, 1.0);

        s = step(spec, s, a, cfg);
        out.actions.push_back(a);
        out.states.push_back(s);
        out.images.push_back(render(spec, s, cfg));
    }
    return out;
}

}  // namespace val::sim
