#include "val/datastore.hpp"

#include <cstring>
#include <fstream>

#include "val/vqvae.hpp"

namespace val::data {

SceneSpecRec SceneSpecRec::from(const sim::SceneSpec& s) {
    SceneSpecRec r;
    r.seed = s.seed;
    r.catalog = static_cast<std::uint16_t>(s.catalog_size);
    r.drawer_present = s.drawer_present;
    r.button_present = s.button_drawer_present;
    r.object_present = s.object_present;
    r.tray_present = s.tray_present;
    r.drawer_hx = static_cast<float>(s.drawer_handle.x);
    r.drawer_hy = static_cast<float>(s.drawer_handle.y);
    r.drawer_rgb = {static_cast<float>(s.drawer_color.r), static_cast<float>(s.drawer_color.g),
                    static_cast<float>(s.drawer_color.b)};
    r.button_x = static_cast<float>(s.button_pos.x);
    r.button_y = static_cast<float>(s.button_pos.y);
    r.button_rgb = {static_cast<float>(s.button_color.r), static_cast<float>(s.button_color.g),
                    static_cast<float>(s.button_color.b)};
    r.geometry_id = static_cast<std::uint16_t>(s.geometry_id);
    r.object_rgb = {static_cast<float>(s.object_color.r), static_cast<float>(s.object_color.g),
                    static_cast<float>(s.object_color.b)};
    r.object_x = static_cast<float>(s.object_init.x);
    r.object_y = static_cast<float>(s.object_init.y);
    r.tray_x = static_cast<float>(s.tray_pos.x);
    r.tray_y = static_cast<float>(s.tray_pos.y);
    return r;
}

sim::SceneSpec SceneSpecRec::to_spec() const {
    sim::SceneSpec s;
    s.seed = seed;
    s.catalog_size = catalog;
    s.drawer_present = drawer_present;
    s.drawer_handle = {drawer_hx, drawer_hy};
    s.drawer_color = {drawer_rgb[0], drawer_rgb[1], drawer_rgb[2]};
    s.button_drawer_present = button_present;
    s.button_pos = {button_x, button_y};
    s.button_color = {button_rgb[0], button_rgb[1], button_rgb[2]};
    s.object_present = object_present;
    s.geometry_id = geometry_id;
    s.object_color = {object_rgb[0], object_rgb[1], object_rgb[2]};
    s.object_init = {object_x, object_y};
    s.tray_present = tray_present;
    s.tray_pos = {tray_x, tray_y};
    return s;
}

GroundTruthState GroundTruthState::from(const sim::EnvState& s) {
    GroundTruthState g;
    g.gx = static_cast<float>(s.gripper.x);
    g.gy = static_cast<float>(s.gripper.y);
    g.height = s.height == sim::Height::High ? 1 : 0;
    g.aperture = static_cast<float>(s.aperture);
    g.drawer_ext = static_cast<float>(s.drawer_ext);
    g.button_ext = static_cast<std::uint8_t>(s.button_ext);
    g.object_x = static_cast<float>(s.object.x);
    g.object_y = static_cast<float>(s.object.y);
    g.held = s.held;
    g.t = static_cast<std::uint32_t>(s.t);
    return g;
}

sim::EnvState GroundTruthState::to_state(std::uint64_t scene_seed) const {
    sim::EnvState s;
    s.scene_seed = scene_seed;
    s.gripper = {gx, gy};
    s.height = height ? sim::Height::High : sim::Height::Low;
    s.aperture = aperture;
    s.drawer_ext = drawer_ext;
    s.button_ext = button_ext;
    s.object = {object_x, object_y};
    s.held = held;
    s.t = static_cast<int>(t);
    return s;
}

TrajectoryRecord record_from_rollout(const sim::Rollout& r) {
    TrajectoryRecord rec;
    rec.spec = SceneSpecRec::from(r.spec);
    const std::size_t h = r.actions.size();
    rec.steps.resize(h);
    for (std::size_t t = 0; t < h; ++t) {
        rec.steps[t].image = to_bytes(r.images[t]);
        const auto& a = r.actions[t];
        rec.steps[t].action = {static_cast<float>(a.vx), static_cast<float>(a.vy), static_cast<float>(a.vh),
                               static_cast<float>(a.grip)};
        rec.steps[t].state = GroundTruthState::from(r.states[t]);
    }
    rec.final_image = to_bytes(r.images[h]);
    rec.final_state = GroundTruthState::from(r.states[h]);
    return rec;
}

// ---------------------------------------------------------------------------
// binary container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'V', 'A', 'L', 'D'};

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const std::vector<std::uint8_t>& b) { out_.insert(out_.end(), b.begin(), b.end()); }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        const auto* p = take(8);
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        const auto* p = take(n);
        return std::vector<std::uint8_t>(p, p + n);
    }
    std::size_t remaining() const { return size_ - pos_; }

private:
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > size_) throw LoadError(LoadError::Kind::Truncated, "dataset: truncated record payload");
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

void write_state(Writer& w, const GroundTruthState& s) {
    w.f32(s.gx);
    w.f32(s.gy);
    w.u8(s.height);
    w.f32(s.aperture);
    w.f32(s.drawer_ext);
    w.u8(s.button_ext);
    w.f32(s.object_x);
    w.f32(s.object_y);
    w.u8(s.held);
    w.u32(s.t);
}

GroundTruthState read_state(Reader& r) {
    GroundTruthState s;
    s.gx = r.f32();
    s.gy = r.f32();
    s.height = r.u8();
    s.aperture = r.f32();
    s.drawer_ext = r.f32();
    s.button_ext = r.u8();
    s.object_x = r.f32();
    s.object_y = r.f32();
    s.held = r.u8();
    s.t = r.u32();
    return s;
}

std::vector<std::uint8_t> encode_record(const TrajectoryRecord& rec) {
    std::vector<std::uint8_t> buf;
    Writer w(buf);
    const auto& sp = rec.spec;
    w.u64(sp.seed);
    w.u16(sp.catalog);
    w.u8(sp.drawer_present);
    w.u8(sp.button_present);
    w.u8(sp.object_present);
    w.u8(sp.tray_present);
    w.f32(sp.drawer_hx);
    w.f32(sp.drawer_hy);
    for (float c : sp.drawer_rgb) w.f32(c);
    w.f32(sp.button_x);
    w.f32(sp.button_y);
    for (float c : sp.button_rgb) w.f32(c);
    w.u16(sp.geometry_id);
    for (float c : sp.object_rgb) w.f32(c);
    w.f32(sp.object_x);
    w.f32(sp.object_y);
    w.f32(sp.tray_x);
    w.f32(sp.tray_y);

    w.u32(static_cast<std::uint32_t>(rec.steps.size()));
    for (const auto& st : rec.steps) {
        w.bytes(st.image);
        for (float a : st.action) w.f32(a);
        write_state(w, st.state);
    }
    w.bytes(rec.final_image);
    write_state(w, rec.final_state);
    return buf;
}

TrajectoryRecord decode_record(Reader& r, std::size_t image_bytes) {
    TrajectoryRecord rec;
    auto& sp = rec.spec;
    sp.seed = r.u64();
    sp.catalog = r.u16();
    sp.drawer_present = r.u8();
    sp.button_present = r.u8();
    sp.object_present = r.u8();
    sp.tray_present = r.u8();
    sp.drawer_hx = r.f32();
    sp.drawer_hy = r.f32();
    for (auto& c : sp.drawer_rgb) c = r.f32();
    sp.button_x = r.f32();
    sp.button_y = r.f32();
    for (auto& c : sp.button_rgb) c = r.f32();
    sp.geometry_id = r.u16();
    for (auto& c : sp.object_rgb) c = r.f32();
    sp.object_x = r.f32();
    sp.object_y = r.f32();
    sp.tray_x = r.f32();
    sp.tray_y = r.f32();

    const std::uint32_t h = r.u32();
    rec.steps.resize(h);
    for (auto& st : rec.steps) {
        st.image = r.bytes(image_bytes);
        for (auto& a : st.action) a = r.f32();
        st.state = read_state(r);
    }
    rec.final_image = r.bytes(image_bytes);
    rec.final_state = read_state(r);
    if (r.remaining() != 0) throw LoadError(LoadError::Kind::Truncated, "dataset: record has trailing bytes");
    return rec;
}

void write_header(std::ofstream& out, int img_h, int img_w, std::uint64_t count) {
    std::vector<std::uint8_t> buf;
    Writer w(buf);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    w.u16(kDatasetVersion);
    w.u16(static_cast<std::uint16_t>(img_h));
    w.u16(static_cast<std::uint16_t>(img_w));
    w.u16(4);  // action dim
    w.u64(count);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

struct DatasetWriter::Impl {
    std::ofstream out;
    std::uint64_t expected;
    std::uint64_t written = 0;
    bool finished = false;
    std::string path;
};

DatasetWriter::DatasetWriter(const std::string& path, int img_h, int img_w, std::uint64_t record_count)
    : impl_(new Impl) {
    impl_->out.open(path, std::ios::binary);
    impl_->expected = record_count;
    impl_->path = path;
    if (!impl_->out) {
        delete impl_;
        impl_ = nullptr;
        throw LoadError(LoadError::Kind::Io, "dataset: cannot open " + path + " for writing");
    }
    write_header(impl_->out, img_h, img_w, record_count);
}

DatasetWriter::~DatasetWriter() { delete impl_; }

void DatasetWriter::append(const TrajectoryRecord& rec) {
    const auto payload = encode_record(rec);
    std::vector<std::uint8_t> len;
    Writer w(len);
    w.u64(payload.size());
    impl_->out.write(reinterpret_cast<const char*>(len.data()), 8);
    impl_->out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    ++impl_->written;
}

void DatasetWriter::finish() {
    if (impl_->written != impl_->expected)
        throw ContractError("dataset: wrote " + std::to_string(impl_->written) + " of " +
                            std::to_string(impl_->expected) + " declared records");
    impl_->out.close();
    impl_->finished = true;
}

void save_dataset(const std::vector<TrajectoryRecord>& records, const std::string& path, int img_h, int img_w) {
    DatasetWriter w(path, img_h, img_w, records.size());
    for (const auto& r : records) w.append(r);
    w.finish();
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw LoadError(LoadError::Kind::Io, "dataset: cannot open " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(data.data()), size);
    return data;
}

}  // namespace

DatasetInfo peek_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadError::Kind::Io, "dataset: cannot open " + path);
    std::uint8_t head[20];
    in.read(reinterpret_cast<char*>(head), sizeof head);
    if (in.gcount() != sizeof head) throw LoadError(LoadError::Kind::Truncated, "dataset: header truncated");
    if (std::memcmp(head, kMagic, 4) != 0) throw LoadError(LoadError::Kind::BadMagic, "dataset: bad magic in " + path);
    Reader r(head + 4, sizeof head - 4);
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion)
        throw LoadError(LoadError::Kind::Version,
                        "dataset: version " + std::to_string(version) + ", expected " + std::to_string(kDatasetVersion));
    DatasetInfo info;
    info.img_h = r.u16();
    info.img_w = r.u16();
    r.u16();  // action dim
    info.records = r.u64();
    return info;
}

std::vector<TrajectoryRecord> load_dataset(const std::string& path) {
    const auto data = read_file(path);
    if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0)
        throw LoadError(LoadError::Kind::BadMagic, "dataset: bad magic in " + path);
    Reader r(data.data() + 4, data.size() - 4);
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion)
        throw LoadError(LoadError::Kind::Version,
                        "dataset: version " + std::to_string(version) + ", expected " + std::to_string(kDatasetVersion));
    const int img_h = r.u16();
    const int img_w = r.u16();
    const int action_dim = r.u16();
    if (action_dim != 4) throw LoadError(LoadError::Kind::Version, "dataset: unsupported action dim");
    const std::uint64_t count = r.u64();
    const std::size_t image_bytes = static_cast<std::size_t>(img_h) * img_w * 3;

    std::vector<TrajectoryRecord> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t len = r.u64();
        const auto payload = r.bytes(len);
        Reader pr(payload.data(), payload.size());
        records.push_back(decode_record(pr, image_bytes));
    }
    if (r.remaining() != 0) throw LoadError(LoadError::Kind::Truncated, "dataset: trailing bytes after records");
    return records;
}

// ---------------------------------------------------------------------------
// latent dataset
// ---------------------------------------------------------------------------

void LatentDataset::add(LatentTrajectory traj, std::vector<GroundTruthState> gt) {
    trajectories.push_back(std::move(traj));
    gt_.push_back(std::move(gt));
}

const GroundTruthState& LatentDataset::ground_truth(std::size_t traj, std::size_t step, Access mode) const {
    if (mode != Access::Evaluation)
        throw ContractError("LatentDataset: ground-truth state requested in training mode");
    return gt_.at(traj).at(step);
}

LatentDataset encode_dataset(const std::vector<TrajectoryRecord>& records, const vqvae::Model& model) {
    LatentDataset out;
    out.grid_side = model.grid_side();
    out.embed_dim = model.cfg.embed_dim;
    for (const auto& rec : records) {
        const int img_h = model.cfg.image_size;
        LatentTrajectory lt;
        lt.scene_seed = rec.spec.seed;
        std::vector<GroundTruthState> gt;
        for (const auto& st : rec.steps) {
            lt.codes.push_back(model.encode(from_bytes(img_h, img_h, st.image)).indices);
            lt.actions.push_back(st.action);
            gt.push_back(st.state);
        }
        lt.codes.push_back(model.encode(from_bytes(img_h, img_h, rec.final_image)).indices);
        gt.push_back(rec.final_state);
        out.add(std::move(lt), std::move(gt));
    }
    return out;
}

}  // namespace val::data
