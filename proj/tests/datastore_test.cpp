#include "val/datastore.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "val/checkpoint.hpp"
#include "val/nn.hpp"
#include "val/replay.hpp"

using namespace val;
using namespace val::data;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

TrajectoryRecord random_record(Rng& rng, int img = 8, int steps_lo = 1, int steps_hi = 6) {
    TrajectoryRecord rec;
    rec.spec.seed = rng.next_u64();
    rec.spec.catalog = 84;
    rec.spec.drawer_present = rng.bernoulli(0.5);
    rec.spec.button_present = rng.bernoulli(0.5);
    rec.spec.object_present = rng.bernoulli(0.5);
    rec.spec.tray_present = rng.bernoulli(0.5);
    rec.spec.drawer_hx = static_cast<float>(rng.uniform());
    rec.spec.drawer_hy = static_cast<float>(rng.uniform());
    for (auto& c : rec.spec.drawer_rgb) c = static_cast<float>(rng.uniform());
    rec.spec.button_x = static_cast<float>(rng.uniform());
    rec.spec.button_y = static_cast<float>(rng.uniform());
    for (auto& c : rec.spec.button_rgb) c = static_cast<float>(rng.uniform());
    rec.spec.geometry_id = static_cast<std::uint16_t>(rng.uniform_int(84));
    for (auto& c : rec.spec.object_rgb) c = static_cast<float>(rng.uniform());
    rec.spec.object_x = static_cast<float>(rng.uniform());
    rec.spec.object_y = static_cast<float>(rng.uniform());
    rec.spec.tray_x = static_cast<float>(rng.uniform());
    rec.spec.tray_y = static_cast<float>(rng.uniform());

    auto random_state = [&rng](std::uint32_t t) {
        GroundTruthState s;
        s.gx = static_cast<float>(rng.uniform());
        s.gy = static_cast<float>(rng.uniform());
        s.height = rng.bernoulli(0.5);
        s.aperture = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        s.drawer_ext = static_cast<float>(rng.uniform());
        s.button_ext = rng.bernoulli(0.5);
        s.object_x = static_cast<float>(rng.uniform());
        s.object_y = static_cast<float>(rng.uniform());
        s.held = rng.bernoulli(0.2);
        s.t = t;
        return s;
    };

    const int h = steps_lo + rng.uniform_int(steps_hi - steps_lo + 1);
    for (int t = 0; t < h; ++t) {
        StepRec st;
        st.image.resize(static_cast<size_t>(img) * img * 3);
        for (auto& b : st.image) b = static_cast<std::uint8_t>(rng.uniform_int(256));
        for (auto& a : st.action) a = static_cast<float>(rng.uniform(-1.0, 1.0));
        st.state = random_state(static_cast<std::uint32_t>(t));
        rec.steps.push_back(std::move(st));
    }
    rec.final_image.resize(static_cast<size_t>(img) * img * 3);
    for (auto& b : rec.final_image) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    rec.final_state = random_state(static_cast<std::uint32_t>(h));
    return rec;
}

}  // namespace

TEST(DatasetFile, RoundTripTenRecords) {
    Rng rng(1);
    std::vector<TrajectoryRecord> records;
    for (int i = 0; i < 10; ++i) records.push_back(random_record(rng));
    const auto path = tmp_path("ds_roundtrip.vald");
    save_dataset(records, path, 8, 8);
    const auto loaded = load_dataset(path);
    ASSERT_EQ(loaded.size(), records.size());
    for (size_t i = 0; i < records.size(); ++i) EXPECT_EQ(loaded[i], records[i]);
    std::remove(path.c_str());
}

TEST(DatasetFile, RoundTripPropertyManyRandomRecords) {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<TrajectoryRecord> records;
        const int n = rng.uniform_int(6);
        for (int i = 0; i < n; ++i) records.push_back(random_record(rng));
        const auto path = tmp_path("ds_prop.vald");
        save_dataset(records, path, 8, 8);
        EXPECT_EQ(load_dataset(path), records);
        std::remove(path.c_str());
    }
}

TEST(DatasetFile, EmptyDatasetIsValid) {
    const auto path = tmp_path("ds_empty.vald");
    save_dataset({}, path, 48, 48);
    EXPECT_TRUE(load_dataset(path).empty());
    const auto info = peek_dataset(path);
    EXPECT_EQ(info.records, 0u);
    EXPECT_EQ(info.img_h, 48);
    std::remove(path.c_str());
}

TEST(DatasetFile, TruncationIsTypedError) {
    Rng rng(2);
    std::vector<TrajectoryRecord> records = {random_record(rng), random_record(rng)};
    const auto path = tmp_path("ds_trunc.vald");
    save_dataset(records, path, 8, 8);
    // chop the file
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> data(size - 25);
    in.read(data.data(), static_cast<std::streamsize>(data.size()));
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.close();
    try {
        load_dataset(path);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadError::Kind::Truncated);
    }
    std::remove(path.c_str());
}

TEST(DatasetFile, BadMagicAndVersionAreTypedErrors) {
    const auto path = tmp_path("ds_magic.vald");
    save_dataset({}, path, 8, 8);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("JUNK", 4);
    }
    try {
        load_dataset(path);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadError::Kind::BadMagic);
    }
    save_dataset({}, path, 8, 8);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        const char v[2] = {99, 0};
        f.write(v, 2);
    }
    try {
        load_dataset(path);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadError::Kind::Version);
    }
    std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// replay buffer
// ---------------------------------------------------------------------------

namespace {

using Code = std::vector<double>;

ReplayTrajectory<Code> make_traj(int h, double base) {
    ReplayTrajectory<Code> t;
    for (int i = 0; i <= h; ++i) t.codes.push_back({base + i, 0.0});
    t.actions.resize(static_cast<size_t>(h));
    t.goal = t.codes.back();
    return t;
}

double zero_reward(const Code&, const Code&) { return 0.0; }

}  // namespace

TEST(ReplayBuffer, PushGrowsByTrajectoryLength) {
    ReplayBuffer<Code> buf(1000);
    buf.push(make_traj(7, 0.0), zero_reward);
    EXPECT_EQ(buf.size(), 7u);
    buf.push(make_traj(5, 100.0), zero_reward);
    EXPECT_EQ(buf.size(), 12u);
}

TEST(ReplayBuffer, FifoEvictionAtCapacity) {
    ReplayBuffer<Code> buf(10);
    buf.push(make_traj(6, 0.0), zero_reward);   // ids 0
    buf.push(make_traj(4, 100.0), zero_reward); // 10 total
    EXPECT_EQ(buf.size(), 10u);
    buf.push(make_traj(6, 200.0), zero_reward);  // evicts the 6 oldest
    EXPECT_EQ(buf.size(), 10u);
    // oldest remaining transition is now from trajectory 1
    EXPECT_EQ(buf.stored(0).traj, 1u);
    EXPECT_EQ(buf.stored(0).t, 0);
}

TEST(ReplayBuffer, SampleFromEmptyIsContractError) {
    ReplayBuffer<Code> buf(10);
    Rng rng(1);
    EXPECT_THROW(buf.sample_one(rng), ContractError);
}

TEST(ReplayBuffer, UniformSampling) {
    // Monte-Carlo oracle: per-transition frequency within +-1% absolute
    ReplayBuffer<Code> buf(1000);
    for (int i = 0; i < 10; ++i) buf.push(make_traj(10, i * 1000.0), zero_reward);
    ASSERT_EQ(buf.size(), 100u);
    Rng rng(7);
    std::vector<int> counts(100, 0);
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
        auto tv = buf.sample_one(rng);
        ++counts[tv.traj_id * 10 + static_cast<std::size_t>(tv.t)];
    }
    for (int c : counts) EXPECT_NEAR(c / static_cast<double>(draws), 0.01, 0.01);
}

TEST(ReplayBuffer, StoredRewardUsesTrajectoryGoal) {
    ReplayBuffer<Code> buf(100);
    auto reward = [](const Code& z, const Code& g) { return z == g ? 0.0 : -1.0; };
    buf.push(make_traj(3, 0.0), reward);
    // final transition reaches the goal (goal = final code)
    EXPECT_EQ(buf.stored(2).reward, 0.0);
    EXPECT_EQ(buf.stored(0).reward, -1.0);
    EXPECT_EQ(buf.stored(1).reward, -1.0);
}

// ---------------------------------------------------------------------------
// ground-truth gate
// ---------------------------------------------------------------------------

TEST(LatentDataset, GroundTruthGate) {
    LatentDataset ds;
    LatentTrajectory traj;
    traj.codes = {{1, 2}, {3, 4}};
    traj.actions = {{0, 0, 0, 0}};
    ds.add(std::move(traj), {GroundTruthState{}, GroundTruthState{}});
    EXPECT_THROW(ds.ground_truth(0, 0, Access::Training), ContractError);
    EXPECT_NO_THROW(ds.ground_truth(0, 1, Access::Evaluation));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, TensorRoundTripIsBitExact) {
    Rng rng(5);
    auto t = Tensor::randn({17, 3}, rng);
    CheckpointWriter w;
    w.add_tensor("codebook", *t);
    w.add_u64("step", 12345);
    w.add_f64("lr", 3e-4);
    w.add_string("stage", "pretrain");
    const auto path = tmp_path("ckpt_roundtrip.valc");
    w.write(path);

    CheckpointReader r(path);
    auto t2 = Tensor::zeros({17, 3});
    r.read_tensor("codebook", *t2);
    EXPECT_EQ(t2->values, t->values);  // bitwise
    EXPECT_EQ(r.u64("step"), 12345u);
    EXPECT_EQ(r.f64("lr"), 3e-4);
    EXPECT_EQ(r.str("stage"), "pretrain");
    std::remove(path.c_str());
}

TEST(Checkpoint, ArchitectureMismatchIsTypedError) {
    Rng rng(6);
    auto t = Tensor::randn({4, 4}, rng);
    CheckpointWriter w;
    w.add_tensor("w", *t);
    const auto path = tmp_path("ckpt_arch.valc");
    w.write(path);
    CheckpointReader r(path);
    auto wrong = Tensor::zeros({8, 2});
    try {
        r.read_tensor("w", *wrong);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_EQ(e.kind(), LoadError::Kind::Architecture);
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, ResumeEqualsUninterruptedTraining) {
    // Train a small regression net 100+100 steps with a checkpoint in the
    // middle vs 200 straight; identical losses and parameters all the way.
    auto run_steps = [](nn::Mlp& net, nn::Adam& opt, int from, int to) {
        double last = 0.0;
        for (int s = from; s < to; ++s) {
            Rng rng(999, static_cast<std::uint64_t>(s));  // per-step data stream
            auto x = Tensor::randn({8, 3}, rng);
            auto y = Tensor::randn({8, 1}, rng);
            auto loss = mse(net(x), y);
            opt.zero_grad();
            backward(loss);
            opt.step();
            last = loss->item();
        }
        return last;
    };
    auto make_net = [] {
        Rng rng(11);
        return nn::Mlp(3, {16}, 1, rng);
    };

    // straight run
    nn::Mlp net_a = make_net();
    nn::Adam opt_a(net_a.params(), 1e-2);
    const double loss_a = run_steps(net_a, opt_a, 0, 200);

    // checkpointed run
    nn::Mlp net_b = make_net();
    nn::Adam opt_b(net_b.params(), 1e-2);
    run_steps(net_b, opt_b, 0, 100);
    const auto path = tmp_path("ckpt_resume.valc");
    {
        CheckpointWriter w;
        auto ps = net_b.params();
        for (size_t i = 0; i < ps.size(); ++i) {
            w.add_tensor("p" + std::to_string(i), *ps[i]);
            w.add_vector("m" + std::to_string(i), opt_b.m[i]);
            w.add_vector("v" + std::to_string(i), opt_b.v[i]);
        }
        w.add_u64("step", static_cast<std::uint64_t>(opt_b.step_count));
        w.write(path);
    }
    nn::Mlp net_c = make_net();
    nn::Adam opt_c(net_c.params(), 1e-2);
    {
        CheckpointReader r(path);
        auto ps = net_c.params();
        for (size_t i = 0; i < ps.size(); ++i) {
            r.read_tensor("p" + std::to_string(i), *ps[i]);
            r.read_vector("m" + std::to_string(i), opt_c.m[i]);
            r.read_vector("v" + std::to_string(i), opt_c.v[i]);
        }
        opt_c.step_count = static_cast<std::int64_t>(r.u64("step"));
    }
    const double loss_c = run_steps(net_c, opt_c, 100, 200);
    EXPECT_EQ(loss_a, loss_c);  // bit-identical continuation
    auto pa = net_a.params(), pc = net_c.params();
    for (size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->values, pc[i]->values);
    std::remove(path.c_str());
}
