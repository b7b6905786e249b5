#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "val/errors.hpp"
#include "val/rng.hpp"

namespace val::data {

// A stored episode in latent space. `Code` is whatever the representation
// produces (index grids for the pixel pipeline, raw vectors for probes).
template <class Code>
struct ReplayTrajectory {
    std::vector<Code> codes;                    // H+1
    std::vector<std::array<float, 4>> actions;  // H
    Code goal;                                  // goal the episode was stored under
};

template <class Code>
struct TransitionView {
    const ReplayTrajectory<Code>* traj = nullptr;
    std::uint32_t traj_id = 0;
    int t = 0;
    double reward = 0.0;  // reward stored at push time
    bool terminal = false;
};

template <class Code>
struct RelabeledTransition {
    const ReplayTrajectory<Code>* traj = nullptr;
    int t = 0;
    Code goal;
    double reward = 0.0;
    bool terminal = false;
};

// Ring buffer over transitions with per-transition back-reference to the
// source trajectory (future-style relabeling needs the rest of the episode).
// Eviction is strictly FIFO; trajectories are dropped once no transition
// references them.
template <class Code>
class ReplayBuffer {
public:
    using RewardFn = std::function<double(const Code& z_next, const Code& goal)>;
    using RelabelHook = std::function<RelabeledTransition<Code>(const TransitionView<Code>&, Rng&)>;

    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    std::size_t size() const { return slots_.size(); }
    std::size_t capacity() const { return capacity_; }

    std::uint32_t push(ReplayTrajectory<Code> traj, const RewardFn& reward_fn) {
        const std::uint32_t id = next_id_++;
        const int h = static_cast<int>(traj.actions.size());
        auto [it, ok] = trajectories_.emplace(id, Entry{std::move(traj), h});
        for (int t = 0; t < h; ++t) {
            const auto& tr = it->second.traj;
            slots_.push_back(Slot{id, static_cast<std::uint16_t>(t),
                                  static_cast<float>(reward_fn(tr.codes[t + 1], tr.goal))});
        }
        while (slots_.size() > capacity_) {
            const Slot& victim = slots_.front();
            auto vit = trajectories_.find(victim.traj);
            if (--vit->second.live == 0) trajectories_.erase(vit);
            slots_.pop_front();
        }
        return id;
    }

    TransitionView<Code> sample_one(Rng& rng) const {
        if (slots_.empty()) throw ContractError("ReplayBuffer::sample: buffer is empty");
        const auto& slot = slots_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(slots_.size())))];
        const auto& entry = trajectories_.at(slot.traj);
        return TransitionView<Code>{&entry.traj, slot.traj, slot.t, slot.reward, false};
    }

    std::vector<RelabeledTransition<Code>> sample(int batch, const RelabelHook& hook, Rng& rng) const {
        std::vector<RelabeledTransition<Code>> out;
        out.reserve(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) out.push_back(hook(sample_one(rng), rng));
        return out;
    }

    const ReplayTrajectory<Code>& trajectory(std::uint32_t id) const { return trajectories_.at(id).traj; }

    // stored reward of the i-th transition in FIFO order (invariant checks)
    struct StoredTransition {
        std::uint32_t traj;
        int t;
        double reward;
    };
    StoredTransition stored(std::size_t i) const {
        const Slot& s = slots_.at(i);
        return {s.traj, s.t, s.reward};
    }

private:
    struct Slot {
        std::uint32_t traj;
        std::uint16_t t;
        float reward;
    };
    struct Entry {
        ReplayTrajectory<Code> traj;
        int live;
    };

    std::size_t capacity_;
    std::uint32_t next_id_ = 0;
    std::deque<Slot> slots_;
    std::unordered_map<std::uint32_t, Entry> trajectories_;
};

}  // namespace val::data
