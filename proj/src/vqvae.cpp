#include "val/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "val/checkpoint.hpp"
#include "val/errors.hpp"

namespace val::vqvae {

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    v = mx;
    const double d = mx - mn;
    s = mx == 0.0 ? 0.0 : d / mx;
    if (d == 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    } else if (mx == g) {
        h = ((b - r) / d + 2.0) / 6.0;
    } else {
        h = ((r - g) / d + 4.0) / 6.0;
    }
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

AugmentParams sample_augment(const AugmentConfig& cfg, int img_h, int img_w, Rng& rng) {
    AugmentParams p;
    p.brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    p.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
    p.saturation = rng.uniform(cfg.saturation_lo, cfg.saturation_hi);
    p.hue = rng.uniform(cfg.hue_lo, cfg.hue_hi);
    const double area = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi) * img_h * img_w;
    const double ratio = rng.uniform(cfg.crop_ratio_lo, cfg.crop_ratio_hi);
    p.crop_w = std::min(static_cast<double>(img_w), std::sqrt(area * ratio));
    p.crop_h = std::min(static_cast<double>(img_h), std::sqrt(area / ratio));
    p.x0 = rng.uniform(0.0, img_w - p.crop_w);
    p.y0 = rng.uniform(0.0, img_h - p.crop_h);
    return p;
}

Image apply_augment(const Image& img, const AugmentParams& p, int out_size) {
    Image work = img;
    // brightness
    if (p.brightness != 1.0)
        for (auto& v : work.pixels) v *= p.brightness;
    // contrast: blend toward the mean gray level
    if (p.contrast != 1.0) {
        double mean = 0.0;
        for (int y = 0; y < work.height; ++y)
            for (int x = 0; x < work.width; ++x) mean += luma(work.at(y, x, 0), work.at(y, x, 1), work.at(y, x, 2));
        mean /= static_cast<double>(work.height) * work.width;
        for (auto& v : work.pixels) v = v * p.contrast + mean * (1.0 - p.contrast);
    }
    // saturation: blend toward per-pixel gray
    if (p.saturation != 1.0) {
        for (int y = 0; y < work.height; ++y)
            for (int x = 0; x < work.width; ++x) {
                const double g = luma(work.at(y, x, 0), work.at(y, x, 1), work.at(y, x, 2));
                for (int c = 0; c < 3; ++c) work.at(y, x, c) = work.at(y, x, c) * p.saturation + g * (1.0 - p.saturation);
            }
    }
    // hue rotation in HSV
    if (p.hue != 0.0) {
        clamp01(work);
        for (int y = 0; y < work.height; ++y)
            for (int x = 0; x < work.width; ++x) {
                double h, s, v;
                rgb_to_hsv(work.at(y, x, 0), work.at(y, x, 1), work.at(y, x, 2), h, s, v);
                double h2 = std::fmod(h + p.hue + 1.0, 1.0);
                hsv_to_rgb(h2, s, v, work.at(y, x, 0), work.at(y, x, 1), work.at(y, x, 2));
            }
    }
    clamp01(work);
    Image out = resize_bilinear(work, p.y0, p.x0, p.crop_h, p.crop_w, out_size, out_size);
    clamp01(out);
    return out;
}

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(img, sample_augment(cfg, img.height, img.width, rng), cfg.out_size);
}

// ---------------------------------------------------------------------------
// quantizer
// ---------------------------------------------------------------------------

QuantizeResult quantize(const TensorPtr& z_e_rows, const TensorPtr& codebook, double beta) {
    if (z_e_rows->shape.size() != 2 || codebook->shape.size() != 2 || z_e_rows->shape[1] != codebook->shape[1])
        throw ShapeError("quantize: z_e " + shape_str(z_e_rows->shape) + " vs codebook " + shape_str(codebook->shape));
    const int n = z_e_rows->shape[0], d = z_e_rows->shape[1], k = codebook->shape[0];

    QuantizeResult out;
    out.indices.resize(n);
    for (int i = 0; i < n; ++i) {
        const double* z = &z_e_rows->values[static_cast<size_t>(i) * d];
        double best = 0.0;
        int best_k = 0;
        for (int kk = 0; kk < k; ++kk) {
            const double* e = &codebook->values[static_cast<size_t>(kk) * d];
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = z[j] - e[j];
                dist += diff * diff;
            }
            if (kk == 0 || dist < best) {  // strict < keeps the lowest index on ties
                best = dist;
                best_k = kk;
            }
        }
        out.indices[i] = best_k;
    }

    auto e = embed(codebook, out.indices);
    // Straight-through: z_q carries the selected embeddings bitwise while the
    // backward pass hands the decoder gradient to z_e unchanged.
    auto zq = Tensor::create(z_e_rows->shape);
    zq->op = "quantize_st";
    zq->values = e->values;
    if (grad_enabled() && z_e_rows->requires_grad) {
        zq->requires_grad = true;
        zq->inputs = {z_e_rows};
        zq->backward_fn = [z = z_e_rows](Tensor& o) { z->accumulate_grad(o.grad); };
    }
    out.z_q = zq;
    out.vq_loss = mse(e, stop_grad(z_e_rows));
    out.commit_loss = scale(mse(z_e_rows, stop_grad(e)), beta);
    return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

Model::Model(const Config& c, std::uint64_t seed) : cfg(c) {
    if (cfg.image_size % 4 != 0)
        throw ConfigError("vqvae: image size " + std::to_string(cfg.image_size) +
                          " is incompatible with the 2x stride-2 encoder plan");
    if (cfg.ema_embedding) throw ConfigError("vqvae: EMA embedding updates are not supported (keep false)");
    Rng rng(seed, Rng::stream_id("vqvae-init"));
    const int ch = cfg.conv_hidden;
    enc1 = nn::Conv2d(3, ch, 4, 2, 1, rng);
    enc2 = nn::Conv2d(ch, ch, 4, 2, 1, rng);
    enc3 = nn::Conv2d(ch, ch, 3, 1, 1, rng);
    for (int i = 0; i < cfg.residual_layers; ++i)
        enc_res.push_back({nn::Conv2d(ch, cfg.residual_hidden, 3, 1, 1, rng), nn::Conv2d(cfg.residual_hidden, ch, 1, 1, 0, rng)});
    to_embed = nn::Conv2d(ch, cfg.embed_dim, 1, 1, 0, rng);

    codebook = Tensor::rand_uniform({cfg.codebook_size, cfg.embed_dim}, rng, -1.0 / cfg.codebook_size,
                                    1.0 / cfg.codebook_size, true);

    from_embed = nn::Conv2d(cfg.embed_dim, ch, 1, 1, 0, rng);
    for (int i = 0; i < cfg.residual_layers; ++i)
        dec_res.push_back({nn::Conv2d(ch, cfg.residual_hidden, 3, 1, 1, rng), nn::Conv2d(cfg.residual_hidden, ch, 1, 1, 0, rng)});
    dec1 = nn::ConvTranspose2d(ch, ch, 4, 2, 1, rng);
    dec2 = nn::ConvTranspose2d(ch, 3, 4, 2, 1, rng);
}

namespace {
TensorPtr residual_stack(TensorPtr h, const std::vector<Model::Residual>& blocks) {
    for (const auto& r : blocks) {
        auto t = r.b(relu(r.a(relu(h))));
        h = add(h, t);
    }
    return relu(h);
}
}  // namespace

TensorPtr Model::encode_features(const TensorPtr& x) const {
    auto h = relu(enc1(x));
    h = relu(enc2(h));
    h = enc3(h);
    h = residual_stack(h, enc_res);
    return to_embed(h);
}

TensorPtr Model::decode_features(const TensorPtr& zq) const {
    auto h = from_embed(zq);
    h = residual_stack(h, dec_res);
    h = relu(dec1(h));
    return sigmoid(dec2(h));
}

TensorPtr image_batch_tensor(const std::vector<const Image*>& imgs) {
    if (imgs.empty()) throw ContractError("image_batch_tensor: empty batch");
    const int h = imgs[0]->height, w = imgs[0]->width;
    auto t = Tensor::create({static_cast<int>(imgs.size()), 3, h, w});
    for (size_t b = 0; b < imgs.size(); ++b) {
        const Image& img = *imgs[b];
        if (img.height != h || img.width != w) throw ShapeError("image_batch_tensor: image size mismatch");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    t->values[((b * 3 + c) * static_cast<size_t>(h) + y) * w + x] = img.at(y, x, c);
    }
    return t;
}

LatentCode Model::encode(const Image& img) const {
    if (img.height != cfg.image_size || img.width != cfg.image_size)
        throw ConfigError("vqvae::encode: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " does not match the configured size " + std::to_string(cfg.image_size));
    NoGradGuard ng;
    auto x = image_batch_tensor({&img});
    auto z_e = encode_features(x);
    auto rows = channels_to_rows(z_e);
    const int l = grid_side();
    const int d = cfg.embed_dim;
    LatentCode code;
    code.side = l;
    code.embed_dim = d;
    code.indices.resize(static_cast<size_t>(l) * l);
    code.quantized.resize(static_cast<size_t>(l) * l * d);
    const int k = cfg.codebook_size;
    for (int i = 0; i < l * l; ++i) {
        const double* z = &rows->values[static_cast<size_t>(i) * d];
        double best = 0.0;
        int best_k = 0;
        for (int kk = 0; kk < k; ++kk) {
            const double* e = &codebook->values[static_cast<size_t>(kk) * d];
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = z[j] - e[j];
                dist += diff * diff;
            }
            if (kk == 0 || dist < best) {
                best = dist;
                best_k = kk;
            }
        }
        code.indices[i] = static_cast<std::uint16_t>(best_k);
        std::memcpy(&code.quantized[static_cast<size_t>(i) * d], &codebook->values[static_cast<size_t>(best_k) * d],
                    sizeof(double) * d);
    }
    return code;
}

std::vector<double> Model::embed_indices(const std::vector<std::uint16_t>& indices) const {
    const int d = cfg.embed_dim;
    std::vector<double> out(indices.size() * d);
    for (size_t i = 0; i < indices.size(); ++i)
        std::memcpy(&out[i * d], &codebook->values[static_cast<size_t>(indices[i]) * d], sizeof(double) * d);
    return out;
}

Image Model::decode(const LatentCode& code) const {
    NoGradGuard ng;
    const int l = code.side, d = code.embed_dim;
    auto rows = Tensor::from({l * l, d}, code.quantized);
    auto zq = rows_to_channels(rows, 1, l, l);
    auto y = decode_features(zq);
    Image img(cfg.image_size, cfg.image_size);
    for (int c = 0; c < 3; ++c)
        for (int yy = 0; yy < img.height; ++yy)
            for (int xx = 0; xx < img.width; ++xx)
                img.at(yy, xx, c) = y->values[(static_cast<size_t>(c) * img.height + yy) * img.width + xx];
    return img;
}

std::vector<TensorPtr> Model::params() const {
    std::vector<TensorPtr> ps;
    for (auto& [name, p] : named_params()) ps.push_back(p);
    return ps;
}

std::vector<std::pair<std::string, TensorPtr>> Model::named_params() const {
    std::vector<std::pair<std::string, TensorPtr>> ps;
    auto conv = [&ps](const std::string& name, const nn::Conv2d& c) {
        ps.emplace_back(name + ".w", c.w);
        ps.emplace_back(name + ".b", c.b);
    };
    conv("enc1", enc1);
    conv("enc2", enc2);
    conv("enc3", enc3);
    for (size_t i = 0; i < enc_res.size(); ++i) {
        conv("enc_res" + std::to_string(i) + ".a", enc_res[i].a);
        conv("enc_res" + std::to_string(i) + ".b", enc_res[i].b);
    }
    conv("to_embed", to_embed);
    ps.emplace_back("codebook", codebook);
    conv("from_embed", from_embed);
    for (size_t i = 0; i < dec_res.size(); ++i) {
        conv("dec_res" + std::to_string(i) + ".a", dec_res[i].a);
        conv("dec_res" + std::to_string(i) + ".b", dec_res[i].b);
    }
    ps.emplace_back("dec1.w", dec1.w);
    ps.emplace_back("dec1.b", dec1.b);
    ps.emplace_back("dec2.w", dec2.w);
    ps.emplace_back("dec2.b", dec2.b);
    return ps;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

double clean_reconstruction_mse(const Model& model, const std::vector<Image>& dataset) {
    NoGradGuard ng;
    const int l = model.grid_side();
    double total = 0.0;
    std::int64_t count = 0;
    const int bs = 32;
    for (size_t start = 0; start < dataset.size(); start += bs) {
        std::vector<const Image*> batch;
        for (size_t i = start; i < std::min(dataset.size(), start + bs); ++i) batch.push_back(&dataset[i]);
        auto x = image_batch_tensor(batch);
        auto z_e = model.encode_features(x);
        auto rows = channels_to_rows(z_e);
        auto q = quantize(rows, model.codebook, model.cfg.commitment_cost);
        auto recon = model.decode_features(rows_to_channels(q.z_q, static_cast<int>(batch.size()), l, l));
        for (size_t i = 0; i < recon->values.size(); ++i) {
            const double d = recon->values[i] - x->values[i];
            total += d * d;
        }
        count += recon->size();
    }
    return total / static_cast<double>(count);
}

TrainLog train(Model& model, const std::vector<Image>& dataset, std::uint64_t seed,
               const std::function<void(int, const TrainLog&)>& on_epoch) {
    if (dataset.empty()) throw ContractError("vqvae::train: empty dataset");
    Rng master(seed, Rng::stream_id("vqvae-train"));
    nn::Adam opt(model.params(), model.cfg.lr);

    AugmentConfig aug;
    aug.out_size = model.cfg.image_size;

    const int l = model.grid_side();
    TrainLog log;
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < model.cfg.epochs; ++epoch) {
        Rng shuffle_rng = master.fork("shuffle", static_cast<std::uint64_t>(epoch));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

        double recon_sum = 0.0, vq_sum = 0.0, commit_sum = 0.0;
        int batches = 0;
        std::vector<std::int64_t> usage(model.cfg.codebook_size, 0);

        for (size_t start = 0; start < order.size(); start += model.cfg.batch) {
            std::vector<Image> items;
            for (size_t i = start; i < std::min(order.size(), start + model.cfg.batch); ++i) {
                const Image& src = dataset[order[i]];
                if (model.cfg.augment) {
                    Rng item_rng = master.fork("augment", (static_cast<std::uint64_t>(epoch) << 32) | i);
                    items.push_back(augment(src, aug, item_rng));
                } else {
                    items.push_back(src);
                }
            }
            std::vector<const Image*> ptrs;
            for (auto& im : items) ptrs.push_back(&im);
            auto x = image_batch_tensor(ptrs);

            auto z_e = model.encode_features(x);
            auto rows = channels_to_rows(z_e);
            auto q = quantize(rows, model.codebook, model.cfg.commitment_cost);
            auto recon = model.decode_features(rows_to_channels(q.z_q, static_cast<int>(items.size()), l, l));
            auto recon_loss = mse(recon, x);
            auto loss = add(add(recon_loss, q.vq_loss), q.commit_loss);

            opt.zero_grad();
            backward(loss);
            opt.step();

            recon_sum += recon_loss->item();
            vq_sum += q.vq_loss->item();
            commit_sum += q.commit_loss->item();
            for (int idx : q.indices) ++usage[idx];
            ++batches;
        }

        log.epoch_recon.push_back(recon_sum / batches);
        log.epoch_vq.push_back(vq_sum / batches);
        log.epoch_commit.push_back(commit_sum / batches);
        double total_usage = 0.0;
        for (auto u : usage) total_usage += static_cast<double>(u);
        double entropy = 0.0;
        for (auto u : usage)
            if (u > 0) {
                const double p = u / total_usage;
                entropy -= p * std::log(p);
            }
        log.epoch_usage_entropy.push_back(entropy);
        log.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, log);
        if (model.cfg.early_stop_mse > 0.0 && log.epoch_recon.back() < model.cfg.early_stop_mse) break;
    }
    log.final_clean_mse = clean_reconstruction_mse(model, dataset);
    return log;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_model(const Model& model, const std::string& path) {
    data::CheckpointWriter w;
    w.add_u64("cfg.image_size", model.cfg.image_size);
    w.add_u64("cfg.conv_hidden", model.cfg.conv_hidden);
    w.add_u64("cfg.residual_layers", model.cfg.residual_layers);
    w.add_u64("cfg.residual_hidden", model.cfg.residual_hidden);
    w.add_u64("cfg.codebook_size", model.cfg.codebook_size);
    w.add_u64("cfg.embed_dim", model.cfg.embed_dim);
    w.add_f64("cfg.commitment_cost", model.cfg.commitment_cost);
    for (auto& [name, p] : model.named_params()) w.add_tensor(name, *p);
    w.write(path);
}

Model load_model(const std::string& path) {
    data::CheckpointReader r(path);
    Config cfg;
    cfg.image_size = static_cast<int>(r.u64("cfg.image_size"));
    cfg.conv_hidden = static_cast<int>(r.u64("cfg.conv_hidden"));
    cfg.residual_layers = static_cast<int>(r.u64("cfg.residual_layers"));
    cfg.residual_hidden = static_cast<int>(r.u64("cfg.residual_hidden"));
    cfg.codebook_size = static_cast<int>(r.u64("cfg.codebook_size"));
    cfg.embed_dim = static_cast<int>(r.u64("cfg.embed_dim"));
    cfg.commitment_cost = r.f64("cfg.commitment_cost");
    Model model(cfg, 0);
    for (auto& [name, p] : model.named_params()) r.read_tensor(name, *p);
    return model;
}

}  // namespace val::vqvae
