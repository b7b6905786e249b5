#pragma once

#include <functional>
#include <string>
#include <vector>

#include "val/tensor.hpp"

namespace val::nn {

struct Linear {
    TensorPtr w;  // [in, out]
    TensorPtr b;  // [out]

    Linear() = default;
    // He-style init scaled for ReLU stacks; pass w_scale to override (e.g. small output heads).
    Linear(int in, int out, Rng& rng, double w_scale = -1.0);
    TensorPtr operator()(const TensorPtr& x) const { return add_bias(matmul(x, w), b); }
    std::vector<TensorPtr> params() const { return {w, b}; }
};

struct Conv2d {
    TensorPtr w;  // [out, in, k, k]
    TensorPtr b;  // [out]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int stride, int pad, Rng& rng);
    TensorPtr operator()(const TensorPtr& x) const { return add_channel_bias(conv2d(x, w, stride, pad), b); }
    std::vector<TensorPtr> params() const { return {w, b}; }
};

struct ConvTranspose2d {
    TensorPtr w;  // [in, out, k, k]
    TensorPtr b;  // [out]
    int stride = 1;
    int pad = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(int in, int out, int k, int stride, int pad, Rng& rng);
    TensorPtr operator()(const TensorPtr& x) const { return add_channel_bias(conv2d_transpose(x, w, stride, pad), b); }
    std::vector<TensorPtr> params() const { return {w, b}; }
};

// Plain ReLU MLP; the output layer is linear.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    Mlp(int in, const std::vector<int>& hidden, int out, Rng& rng, double head_scale = -1.0);
    TensorPtr operator()(const TensorPtr& x) const;
    std::vector<TensorPtr> params() const;
};

// Adam with decoupled weight decay: p *= (1 - lr*wd) before the moment update.
struct Adam {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t step_count = 0;

    std::vector<TensorPtr> params;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    Adam() = default;
    Adam(std::vector<TensorPtr> ps, double lr_, double weight_decay_ = 0.0);
    void zero_grad();
    void step();  // throws ContractError when a parameter has no gradient buffer
};

// Central-difference gradient verification. Rebuilds the loss via `loss_fn`
// (parameters are shared leaves), perturbing up to `coords_per_param` random
// coordinates of each parameter. Relative error uses max(|a|+|n|, 1e-3) as
// denominator so near-zero gradients are compared absolutely.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t coords_checked = 0;
};

GradCheckReport finite_difference_check(const std::function<TensorPtr()>& loss_fn,
                                        const std::vector<std::pair<std::string, TensorPtr>>& params,
                                        double epsilon, int coords_per_param, Rng& rng);

}  // namespace val::nn
