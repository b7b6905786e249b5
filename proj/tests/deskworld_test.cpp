#include "val/deskworld.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "val/errors.hpp"

using namespace val;
using namespace val::sim;

namespace {

EnvConfig cfg() { return EnvConfig{}; }

SceneSpec drawer_only_spec() {
    SceneSpec s;
    s.seed = 42;
    s.catalog_size = 84;
    s.drawer_present = true;
    s.drawer_handle = {0.45, 0.5};
    s.drawer_color = {0.55, 0.35, 0.25};
    return s;
}

SceneSpec object_only_spec(Color c = {0.0, 0.8, 0.0}) {
    SceneSpec s;
    s.seed = 43;
    s.catalog_size = 84;
    s.object_present = true;
    s.geometry_id = 7;
    s.object_color = c;
    s.object_init = {0.5, 0.5};
    return s;
}

bool specs_equal(const SceneSpec& a, const SceneSpec& b) {
    return a.seed == b.seed && a.drawer_present == b.drawer_present && a.button_drawer_present == b.button_drawer_present &&
           a.object_present == b.object_present && a.tray_present == b.tray_present &&
           a.drawer_handle.x == b.drawer_handle.x && a.drawer_handle.y == b.drawer_handle.y &&
           a.button_pos.x == b.button_pos.x && a.geometry_id == b.geometry_id && a.object_init.x == b.object_init.x &&
           a.object_color.r == b.object_color.r && a.tray_pos.y == b.tray_pos.y;
}

}  // namespace

TEST(SampleEnvironment, DeterministicInSeed) {
    for (std::uint64_t seed : {0ull, 1ull, 99999ull}) {
        auto a = sample_environment(seed, cfg());
        auto b = sample_environment(seed, cfg());
        EXPECT_TRUE(specs_equal(a, b));
    }
}

TEST(SampleEnvironment, AtLeastOneInteractable) {
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        auto s = sample_environment(seed, cfg());
        EXPECT_TRUE(s.drawer_present || s.button_drawer_present || s.object_present);
    }
}

TEST(SampleEnvironment, PresenceFrequencyMatchesTarget) {
    // Monte-Carlo oracle: the base probability is adjusted so that after the
    // >=1 redraw each interactable still appears with the configured marginal.
    const int n = 10000;
    int drawer = 0, button = 0, object = 0;
    for (int seed = 0; seed < n; ++seed) {
        auto s = sample_environment(static_cast<std::uint64_t>(seed), cfg());
        drawer += s.drawer_present;
        button += s.button_drawer_present;
        object += s.object_present;
    }
    EXPECT_NEAR(drawer / static_cast<double>(n), 0.7, 0.02);
    EXPECT_NEAR(button / static_cast<double>(n), 0.7, 0.02);
    EXPECT_NEAR(object / static_cast<double>(n), 0.7, 0.02);
}

TEST(SampleEnvironment, GeometryIdsApproximatelyUniform) {
    // chi-square goodness of fit over the 84-entry catalog, alpha = 0.01
    const int n = 10000;
    std::vector<int> counts(84, 0);
    int total = 0;
    for (int seed = 0; seed < n; ++seed) {
        auto s = sample_environment(static_cast<std::uint64_t>(seed), cfg());
        if (s.object_present) {
            ASSERT_GE(s.geometry_id, 0);
            ASSERT_LT(s.geometry_id, 84);
            ++counts[s.geometry_id];
            ++total;
        }
    }
    const double expected = total / 84.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // Wilson-Hilferty critical value for df=83 at p=0.01
    const double df = 83.0, z = 2.3263478740408408;
    const double crit = df * std::pow(1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df)), 3.0);
    EXPECT_LT(chi2, crit);
}

TEST(Reset, Deterministic) {
    auto spec = sample_environment(5, cfg());
    auto a = reset(spec, 17, cfg());
    auto b = reset(spec, 17, cfg());
    EXPECT_EQ(a.gripper.x, b.gripper.x);
    EXPECT_EQ(a.drawer_ext, b.drawer_ext);
    EXPECT_EQ(a.button_ext, b.button_ext);
}

TEST(Reset, NeverStartsHeld) {
    for (int seed = 0; seed < 200; ++seed) {
        auto spec = sample_environment(static_cast<std::uint64_t>(seed), cfg());
        EXPECT_FALSE(reset(spec, seed + 1u, cfg()).held);
    }
}

TEST(Reset, DrawerStartsOpenHalfTheTime) {
    auto spec = drawer_only_spec();
    int open = 0;
    for (int seed = 0; seed < 1000; ++seed) open += reset(spec, static_cast<std::uint64_t>(seed), cfg()).drawer_ext > 0.5;
    EXPECT_NEAR(open / 1000.0, 0.5, 0.05);
}

TEST(Step, ZeroActionOnlyAdvancesTime) {
    auto spec = sample_environment(9, cfg());
    auto s0 = reset(spec, 3, cfg());
    auto s1 = step(spec, s0, Action{}, cfg());
    EXPECT_EQ(s1.t, s0.t + 1);
    EXPECT_EQ(s1.gripper.x, s0.gripper.x);
    EXPECT_EQ(s1.gripper.y, s0.gripper.y);
    EXPECT_EQ(s1.height, s0.height);
    EXPECT_EQ(s1.aperture, s0.aperture);
    EXPECT_EQ(s1.drawer_ext, s0.drawer_ext);
    EXPECT_EQ(s1.button_ext, s0.button_ext);
    EXPECT_EQ(s1.held, s0.held);
}

TEST(Step, DrawerPullKinematics) {
    // kinematics oracle: each full-speed outward pull adds lambda_v of extension
    auto spec = drawer_only_spec();
    auto c = cfg();
    EnvState s = reset_forced(spec, 1, c, 0.0);
    s.gripper = drawer_handle_center(spec, 0.0, c);
    s.height = Height::Low;
    const int k = 12;
    for (int i = 0; i < k; ++i) s = step(spec, s, Action{1.0, 0.0, 0.0, 1.0}, c);
    EXPECT_NEAR(s.drawer_ext, k * c.lambda_v, 1e-9);
    // and clamped at 1 eventually
    for (int i = 0; i < 30; ++i) s = step(spec, s, Action{1.0, 0.0, 0.0, 1.0}, c);
    EXPECT_DOUBLE_EQ(s.drawer_ext, 1.0);
}

TEST(Step, GraspThenMoveTracksGripper) {
    auto spec = object_only_spec();
    auto c = cfg();
    EnvState s = reset(spec, 2, c);
    s.gripper = spec.object_init;
    s.height = Height::Low;
    s = step(spec, s, Action{0.0, 0.0, 0.0, 1.0}, c);
    ASSERT_TRUE(s.held);
    for (int i = 0; i < 5; ++i) {
        s = step(spec, s, Action{1.0, -0.5, 0.0, 1.0}, c);
        EXPECT_EQ(s.object.x, s.gripper.x);
        EXPECT_EQ(s.object.y, s.gripper.y);
    }
    // releasing drops the object in place
    auto released = step(spec, s, Action{0.0, 0.0, 0.0, -1.0}, c);
    EXPECT_FALSE(released.held);
    EXPECT_EQ(released.object.x, s.object.x);
}

TEST(Step, ButtonTogglesOnPressEdge) {
    SceneSpec spec;
    spec.seed = 77;
    spec.button_drawer_present = true;
    spec.button_pos = {0.5, 0.3};
    spec.button_color = {0.9, 0.1, 0.1};
    auto c = cfg();
    EnvState s = reset(spec, 1, c);
    s.gripper = spec.button_pos;
    s.height = Height::High;
    const int before = s.button_ext;
    s = step(spec, s, Action{0, 0, 1.0, 0}, c);  // lower onto the button
    EXPECT_EQ(s.button_ext, 1 - before);
    // staying pressed must not toggle again
    s = step(spec, s, Action{0, 0, 0, 0}, c);
    EXPECT_EQ(s.button_ext, 1 - before);
    // lift and press again
    s = step(spec, s, Action{0, 0, 1.0, 0}, c);
    s = step(spec, s, Action{0, 0, 1.0, 0}, c);
    EXPECT_EQ(s.button_ext, before);
}

TEST(Step, RandomActionsKeepStateInRange) {
    auto c = cfg();
    Rng rng(4242);
    for (int episode = 0; episode < 50; ++episode) {
        auto spec = sample_environment(static_cast<std::uint64_t>(episode), c);
        EnvState s = reset(spec, static_cast<std::uint64_t>(episode) + 1000, c);
        for (int t = 0; t < 2000; ++t) {
            Action a{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            s = step(spec, s, a, c);
            ASSERT_GE(s.gripper.x, 0.0);
            ASSERT_LE(s.gripper.x, 1.0);
            ASSERT_GE(s.gripper.y, 0.0);
            ASSERT_LE(s.gripper.y, 1.0);
            ASSERT_GE(s.drawer_ext, 0.0);
            ASSERT_LE(s.drawer_ext, 1.0);
            ASSERT_TRUE(s.button_ext == 0 || s.button_ext == 1);
            ASSERT_TRUE(s.aperture == 0.0 || s.aperture == 1.0);
            if (s.held) {
                ASSERT_EQ(s.object.x, s.gripper.x);
                ASSERT_EQ(s.object.y, s.gripper.y);
            }
        }
    }
}

TEST(Render, BitIdentical) {
    auto spec = sample_environment(31, cfg());
    auto s = reset(spec, 7, cfg());
    auto a = render(spec, s, cfg());
    auto b = render(spec, s, cfg());
    EXPECT_EQ(a.pixels, b.pixels);
}

TEST(Render, DrawerExtensionChangesManyPixels) {
    auto spec = drawer_only_spec();
    auto c = cfg();
    auto closed = reset_forced(spec, 1, c, 0.0);
    auto open = reset_forced(spec, 1, c, 1.0);
    auto img_closed = render(spec, closed, c);
    auto img_open = render(spec, open, c);
    int diff = 0;
    for (int y = 0; y < img_closed.height; ++y)
        for (int x = 0; x < img_closed.width; ++x)
            for (int ch = 0; ch < 3; ++ch)
                if (img_closed.at(y, x, ch) != img_open.at(y, x, ch)) {
                    ++diff;
                    ch = 3;
                }
    EXPECT_GE(diff, 40);
}

TEST(Render, ObjectColorDominatesAtObjectPixels) {
    auto spec = object_only_spec({1.0, 0.0, 0.0});
    auto c = cfg();
    EnvState s = reset(spec, 2, c);
    s.gripper = {0.1, 0.1};  // keep the marker away from the object
    auto img = render(spec, s, c);
    const int px = static_cast<int>(spec.object_init.x * c.image_size);
    const int py = static_cast<int>(spec.object_init.y * c.image_size);
    int red_dominant = 0, counted = 0;
    for (int y = py - 1; y <= py + 1; ++y)
        for (int x = px - 1; x <= px + 1; ++x) {
            ++counted;
            if (img.at(y, x, 0) > img.at(y, x, 1) && img.at(y, x, 0) > img.at(y, x, 2)) ++red_dominant;
        }
    EXPECT_GT(red_dominant, counted / 2);
}

TEST(Render, HeldObjectCentroidAtGripper) {
    auto c = cfg();
    for (int id = 0; id < 84; ++id) {
        auto spec = object_only_spec({0.0, 0.9, 0.1});
        spec.geometry_id = id;
        EnvState s = reset(spec, 2, c);
        s.gripper = spec.object_init;
        s.height = Height::Low;
        s = step(spec, s, Action{0, 0, 0, 1.0}, c);
        ASSERT_TRUE(s.held);
        s = step(spec, s, Action{0.7, 0.4, 0, 1.0}, c);
        auto img = render(spec, s, c);
        // centroid of pixels matching the object color
        const double cr = std::round(0.0 * 255) / 255, cg = std::round(0.9 * 255) / 255, cb = std::round(0.1 * 255) / 255;
        double sx = 0, sy = 0;
        int n = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                if (img.at(y, x, 0) == cr && img.at(y, x, 1) == cg && img.at(y, x, 2) == cb) {
                    sx += x + 0.5;
                    sy += y + 0.5;
                    ++n;
                }
        ASSERT_GT(n, 0) << "geometry " << id;
        EXPECT_NEAR(sx / n, s.gripper.x * c.image_size, 1.0) << "geometry " << id;
        EXPECT_NEAR(sy / n, s.gripper.y * c.image_size, 1.0) << "geometry " << id;
    }
}

TEST(Scripted, DrawerOnlySceneTogglesExtension) {
    auto spec = drawer_only_spec();
    auto c = cfg();
    int changed = 0;
    for (int seed = 0; seed < 100; ++seed) {
        auto roll = scripted_collect(spec, static_cast<std::uint64_t>(seed), 50, c);
        if (std::abs(roll.states.front().drawer_ext - roll.states.back().drawer_ext) > 0.5) ++changed;
    }
    EXPECT_GE(changed, 80);
}

TEST(Scripted, Deterministic) {
    auto spec = sample_environment(12, cfg());
    auto a = scripted_collect(spec, 5, 50, cfg());
    auto b = scripted_collect(spec, 5, 50, cfg());
    ASSERT_EQ(a.actions.size(), b.actions.size());
    for (size_t i = 0; i < a.actions.size(); ++i) {
        EXPECT_EQ(a.actions[i].vx, b.actions[i].vx);
        EXPECT_EQ(a.actions[i].grip, b.actions[i].grip);
    }
    for (size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
}

TEST(Scripted, ShapesMatchHorizon) {
    auto spec = sample_environment(13, cfg());
    auto roll = scripted_collect(spec, 5, 50, cfg());
    EXPECT_EQ(roll.actions.size(), 50u);
    EXPECT_EQ(roll.states.size(), 51u);
    EXPECT_EQ(roll.images.size(), 51u);
}

TEST(OracleSuccess, IdentityIsTrue) {
    auto spec = sample_environment(20, cfg());
    auto roll = scripted_collect(spec, 3, 50, cfg());
    EXPECT_TRUE(oracle_success(spec, roll.states.back(), roll.states.back(), SuccessThresholds{}));
}

TEST(OracleSuccess, DrawerMismatchFails) {
    auto spec = drawer_only_spec();
    auto c = cfg();
    auto closed = reset_forced(spec, 1, c, 0.0);
    auto open = reset_forced(spec, 1, c, 1.0);
    EXPECT_FALSE(oracle_success(spec, closed, open, SuccessThresholds{}));
}

TEST(OracleSuccess, SmallObjectDisplacementPasses) {
    auto spec = object_only_spec();
    auto c = cfg();
    auto a = reset(spec, 1, c);
    auto b = a;
    b.object.x += 0.05;  // below the 0.08 radius
    EXPECT_TRUE(oracle_success(spec, a, b, SuccessThresholds{}));
    b.object.x = a.object.x + 0.09;
    EXPECT_FALSE(oracle_success(spec, a, b, SuccessThresholds{}));
}

TEST(OracleSuccess, SpecMismatchIsContractError) {
    auto spec_a = sample_environment(1, cfg());
    auto spec_b = sample_environment(2, cfg());
    auto sa = reset(spec_a, 1, cfg());
    auto sb = reset(spec_b, 1, cfg());
    EXPECT_THROW(oracle_success(spec_a, sa, sb, SuccessThresholds{}), ContractError);
}

TEST(Determinism, FullTrajectoryBitIdentical) {
    auto c = cfg();
    auto spec = sample_environment(99, c);
    Rng rng_a(5), rng_b(5);
    auto run = [&](Rng& rng) {
        EnvState s = reset(spec, 123, c);
        std::vector<double> sig;
        for (int t = 0; t < 100; ++t) {
            Action a{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            s = step(spec, s, a, c);
            sig.push_back(s.gripper.x);
            sig.push_back(s.drawer_ext);
            sig.push_back(s.object.y);
        }
        auto img = render(spec, s, c);
        sig.insert(sig.end(), img.pixels.begin(), img.pixels.end());
        return sig;
    };
    EXPECT_EQ(run(rng_a), run(rng_b));
}
