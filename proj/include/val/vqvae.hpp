#pragma once

#include <cstdint>
#include <vector>

#include "val/image.hpp"
#include "val/nn.hpp"
#include "val/rng.hpp"

namespace val::vqvae {

struct Config {
    int image_size = 48;
    int conv_hidden = 32;      // encoder/decoder channel width
    int residual_layers = 3;
    int residual_hidden = 16;
    int codebook_size = 64;    // K
    int embed_dim = 5;         // D
    double commitment_cost = 0.25;
    bool ema_embedding = false;  // kept false: plain gradient codebook updates
    double lr = 3e-4;
    int epochs = 30;
    int batch = 32;
    bool augment = true;
    double early_stop_mse = 0.0;  // stop once the epoch train MSE drops below (0 = never)
};

// Discrete latent grid plus its continuous embedding. quantized[i] is
// bitwise equal to the codebook row indices[i] selects.
struct LatentCode {
    int side = 0;                          // L
    int embed_dim = 0;                     // D
    std::vector<std::uint16_t> indices;    // L*L
    std::vector<double> quantized;         // L*L x D, row-major per position
};

// ---------------------------------------------------------------------------
// augmentation (color jitter + random resized crop)
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double brightness_lo = 0.75, brightness_hi = 1.25;
    double contrast_lo = 0.9, contrast_hi = 1.1;
    double saturation_lo = 0.9, saturation_hi = 1.1;
    double hue_lo = -0.1, hue_hi = 0.1;  // fraction of the color wheel
    double crop_scale_lo = 0.9, crop_scale_hi = 1.0;
    double crop_ratio_lo = 0.9, crop_ratio_hi = 1.1;
    int out_size = 48;
};

struct AugmentParams {
    double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
    double y0 = 0.0, x0 = 0.0, crop_h = 0.0, crop_w = 0.0;
};

AugmentParams sample_augment(const AugmentConfig& cfg, int img_h, int img_w, Rng& rng);
Image apply_augment(const Image& img, const AugmentParams& p, int out_size);
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct QuantizeResult {
    TensorPtr z_q;          // straight-through: value = selected embeddings, grad passes to z_e
    std::vector<int> indices;
    TensorPtr vq_loss;      // ||sg(z_e) - e||^2 mean; reaches only the codebook
    TensorPtr commit_loss;  // beta * ||z_e - sg(e)||^2 mean; reaches only the encoder
};

// z_e_rows: [N, D]. Nearest codebook row under squared distance, ties to the
// lowest index.
QuantizeResult quantize(const TensorPtr& z_e_rows, const TensorPtr& codebook, double beta);

struct Model {
    Config cfg;

    nn::Conv2d enc1, enc2, enc3;
    struct Residual {
        nn::Conv2d a;  // 3x3 C->R
        nn::Conv2d b;  // 1x1 R->C
    };
    std::vector<Residual> enc_res;
    nn::Conv2d to_embed;  // 1x1 C->D

    TensorPtr codebook;  // [K, D]

    nn::Conv2d from_embed;  // 1x1 D->C
    std::vector<Residual> dec_res;
    nn::ConvTranspose2d dec1, dec2;

    Model(const Config& cfg, std::uint64_t seed);

    int grid_side() const { return cfg.image_size / 4; }

    // graph-building passes (batched)
    TensorPtr encode_features(const TensorPtr& x) const;   // [B,3,H,W] -> [B,D,L,L]
    TensorPtr decode_features(const TensorPtr& zq) const;  // [B,D,L,L] -> [B,3,H,W] in (0,1)

    // inference
    LatentCode encode(const Image& img) const;
    Image decode(const LatentCode& code) const;
    std::vector<double> embed_indices(const std::vector<std::uint16_t>& indices) const;  // codebook lookup

    std::vector<TensorPtr> params() const;
    std::vector<std::pair<std::string, TensorPtr>> named_params() const;
};

TensorPtr image_batch_tensor(const std::vector<const Image*>& imgs);

struct TrainLog {
    std::vector<double> epoch_recon;     // train-time recon MSE per epoch
    std::vector<double> epoch_vq;
    std::vector<double> epoch_commit;
    std::vector<double> epoch_usage_entropy;  // codebook usage entropy (nats)
    int epochs_run = 0;
    double final_clean_mse = 0.0;  // unaugmented decode(encode(x)) MSE over the dataset
};

TrainLog train(Model& model, const std::vector<Image>& dataset, std::uint64_t seed,
               const std::function<void(int, const TrainLog&)>& on_epoch = nullptr);

// decode(encode(x)) MSE averaged over images, no augmentation
double clean_reconstruction_mse(const Model& model, const std::vector<Image>& dataset);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace val::vqvae
