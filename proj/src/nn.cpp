#include "val/nn.hpp"

#include <cmath>

namespace val::nn {

Linear::Linear(int in, int out, Rng& rng, double w_scale) {
    const double s = w_scale > 0 ? w_scale : std::sqrt(2.0 / in);
    w = Tensor::randn({in, out}, rng, s, true);
    b = Tensor::zeros({out}, true);
}

Conv2d::Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng) : stride(stride_), pad(pad_) {
    const double s = std::sqrt(2.0 / (static_cast<double>(in) * k * k));
    w = Tensor::randn({out, in, k, k}, rng, s, true);
    b = Tensor::zeros({out}, true);
}

ConvTranspose2d::ConvTranspose2d(int in, int out, int k, int stride_, int pad_, Rng& rng) : stride(stride_), pad(pad_) {
    const double s = std::sqrt(2.0 / (static_cast<double>(in) * k * k));
    w = Tensor::randn({in, out, k, k}, rng, s, true);
    b = Tensor::zeros({out}, true);
}

Mlp::Mlp(int in, const std::vector<int>& hidden, int out, Rng& rng, double head_scale) {
    int prev = in;
    for (int h : hidden) {
        layers.emplace_back(prev, h, rng);
        prev = h;
    }
    layers.emplace_back(prev, out, rng, head_scale);
}

TensorPtr Mlp::operator()(const TensorPtr& x) const {
    TensorPtr h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
}

std::vector<TensorPtr> Mlp::params() const {
    std::vector<TensorPtr> ps;
    for (const auto& l : layers) {
        ps.push_back(l.w);
        ps.push_back(l.b);
    }
    return ps;
}

Adam::Adam(std::vector<TensorPtr> ps, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), params(std::move(ps)) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i]->values.size(), 0.0);
        v[i].assign(params[i]->values.size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params) p->zero_grad();
}

void Adam::step() {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad())
            throw ContractError("Adam::step: parameter " + std::to_string(i) + " has no gradient");
        auto& mi = m[i];
        auto& vi = v[i];
        for (size_t j = 0; j < p.values.size(); ++j) {
            if (weight_decay != 0.0) p.values[j] -= lr * weight_decay * p.values[j];
            const double g = p.grad[j];
            mi[j] = beta1 * mi[j] + (1.0 - beta1) * g;
            vi[j] = beta2 * vi[j] + (1.0 - beta2) * g * g;
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            p.values[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

GradCheckReport finite_difference_check(const std::function<TensorPtr()>& loss_fn,
                                        const std::vector<std::pair<std::string, TensorPtr>>& params,
                                        double epsilon, int coords_per_param, Rng& rng) {
    if (epsilon <= 0) throw ContractError("finite_difference_check: epsilon must be positive");
    // analytic pass
    for (auto& [name, p] : params) p->zero_grad();
    backward(loss_fn());

    GradCheckReport report;
    for (auto& [name, p] : params) {
        const std::int64_t n = p->size();
        std::vector<std::int64_t> coords;
        if (coords_per_param <= 0 || n <= coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int i = 0; i < coords_per_param; ++i) coords.push_back(rng.uniform_int(static_cast<int>(n)));
        }
        for (std::int64_t c : coords) {
            const double saved = p->values[static_cast<size_t>(c)];
            double fp, fm;
            {
                NoGradGuard ng;
                p->values[static_cast<size_t>(c)] = saved + epsilon;
                fp = loss_fn()->item();
                p->values[static_cast<size_t>(c)] = saved - epsilon;
                fm = loss_fn()->item();
                p->values[static_cast<size_t>(c)] = saved;
            }
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = p->has_grad() ? p->grad[static_cast<size_t>(c)] : 0.0;
            const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-3);
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
            }
        }
    }
    return report;
}

}  // namespace val::nn
