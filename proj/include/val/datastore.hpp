#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "val/deskworld.hpp"
#include "val/errors.hpp"

namespace val::vqvae {
struct Model;
struct LatentCode;
}  // namespace val::vqvae

namespace val::data {

// Persisted flavor of a scene: floats are 32-bit on disk, so records carry
// f32 fields and round-trip bit-exactly.
struct SceneSpecRec {
    std::uint64_t seed = 0;
    std::uint16_t catalog = 0;
    std::uint8_t drawer_present = 0, button_present = 0, object_present = 0, tray_present = 0;
    float drawer_hx = 0, drawer_hy = 0;
    std::array<float, 3> drawer_rgb{};
    float button_x = 0, button_y = 0;
    std::array<float, 3> button_rgb{};
    std::uint16_t geometry_id = 0;
    std::array<float, 3> object_rgb{};
    float object_x = 0, object_y = 0;
    float tray_x = 0, tray_y = 0;

    static SceneSpecRec from(const sim::SceneSpec& s);
    sim::SceneSpec to_spec() const;
    friend bool operator==(const SceneSpecRec&, const SceneSpecRec&) = default;
};

// Simulator state as recorded for the oracle. Never visible to learners.
struct GroundTruthState {
    float gx = 0, gy = 0;
    std::uint8_t height = 1;  // 1 = high
    float aperture = 1;
    float drawer_ext = 0;
    std::uint8_t button_ext = 0;
    float object_x = 0, object_y = 0;
    std::uint8_t held = 0;
    std::uint32_t t = 0;

    static GroundTruthState from(const sim::EnvState& s);
    sim::EnvState to_state(std::uint64_t scene_seed) const;
    friend bool operator==(const GroundTruthState&, const GroundTruthState&) = default;
};

struct StepRec {
    std::vector<std::uint8_t> image;  // H*W*3
    std::array<float, 4> action{};
    GroundTruthState state;  // state the image shows (before the action)
    friend bool operator==(const StepRec&, const StepRec&) = default;
};

struct TrajectoryRecord {
    SceneSpecRec spec;
    std::vector<StepRec> steps;
    std::vector<std::uint8_t> final_image;
    GroundTruthState final_state;
    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

TrajectoryRecord record_from_rollout(const sim::Rollout& r);

// Container format: "VALD" magic, version, image dims, action dim, record
// count, then length-prefixed records. Integers little-endian, floats f32.
inline constexpr std::uint16_t kDatasetVersion = 1;

void save_dataset(const std::vector<TrajectoryRecord>& records, const std::string& path, int img_h, int img_w);
std::vector<TrajectoryRecord> load_dataset(const std::string& path);

// Streaming writer used by collection so large datasets never sit in memory.
class DatasetWriter {
public:
    DatasetWriter(const std::string& path, int img_h, int img_w, std::uint64_t record_count);
    ~DatasetWriter();
    void append(const TrajectoryRecord& rec);
    void finish();

private:
    struct Impl;
    Impl* impl_;
};

struct DatasetInfo {
    int img_h = 0, img_w = 0;
    std::uint64_t records = 0;
};
DatasetInfo peek_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// latent-encoded dataset
// ---------------------------------------------------------------------------

enum class Access { Training, Evaluation };

struct LatentTrajectory {
    std::uint64_t scene_seed = 0;
    std::vector<std::vector<std::uint16_t>> codes;  // H+1 index grids
    std::vector<std::array<float, 4>> actions;      // H
};

class LatentDataset {
public:
    std::vector<LatentTrajectory> trajectories;
    int grid_side = 0;
    int embed_dim = 0;

    void add(LatentTrajectory traj, std::vector<GroundTruthState> gt);
    // Throws ContractError in Training mode: the pipeline is pixels-only and
    // ground truth exists solely for evaluation scoring.
    const GroundTruthState& ground_truth(std::size_t traj, std::size_t step, Access mode) const;

private:
    std::vector<std::vector<GroundTruthState>> gt_;
};

LatentDataset encode_dataset(const std::vector<TrajectoryRecord>& records, const vqvae::Model& model);

}  // namespace val::data
