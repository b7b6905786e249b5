#include "val/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace val {

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

static void check_positive_dims(const Shape& s, const char* who) {
    for (int d : s)
        if (d <= 0) throw ShapeError(std::string(who) + ": non-positive dimension in " + shape_str(s));
}

TensorPtr Tensor::create(Shape s, bool requires_grad) {
    check_positive_dims(s, "Tensor::create");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(s);
    t->values.assign(static_cast<size_t>(numel(t->shape)), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::from(Shape s, std::vector<double> v, bool requires_grad) {
    check_positive_dims(s, "Tensor::from");
    if (static_cast<std::int64_t>(v.size()) != numel(s))
        throw ShapeError("Tensor::from: data length " + std::to_string(v.size()) + " does not match shape " + shape_str(s));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(s);
    t->values = std::move(v);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

TensorPtr Tensor::zeros(Shape s, bool requires_grad) { return create(std::move(s), requires_grad); }

TensorPtr Tensor::full(Shape s, double v, bool requires_grad) {
    auto t = create(std::move(s), requires_grad);
    std::fill(t->values.begin(), t->values.end(), v);
    return t;
}

TensorPtr Tensor::randn(Shape s, Rng& rng, double stddev, bool requires_grad) {
    auto t = create(std::move(s), requires_grad);
    for (auto& v : t->values) v = rng.normal() * stddev;
    return t;
}

TensorPtr Tensor::rand_uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
    auto t = create(std::move(s), requires_grad);
    for (auto& v : t->values) v = rng.uniform(lo, hi);
    return t;
}

double Tensor::item() const {
    if (!is_scalar()) throw ContractError("item(): tensor of shape " + shape_str(shape) + " is not a scalar");
    return values[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(values.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (g.size() != values.size()) throw ShapeError("accumulate_grad: gradient length mismatch");
    ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

namespace {

bool track(const std::initializer_list<TensorPtr>& ins) {
    if (!g_grad_enabled) return false;
    for (const auto& t : ins)
        if (t->requires_grad) return true;
    return false;
}

TensorPtr node(Shape s, const char* op, std::initializer_list<TensorPtr> ins) {
    auto out = Tensor::create(std::move(s));
    out->op = op;
    if (track(ins)) {
        out->requires_grad = true;
        out->inputs.assign(ins.begin(), ins.end());
    }
    return out;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace

void backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) throw ContractError("backward(): loss must be scalar, got " + shape_str(loss->shape));
    // reverse topological order via iterative post-order DFS
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [t, idx] = stack.back();
        if (idx < t->inputs.size()) {
            Tensor* child = t->inputs[idx++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->backward_fn && t->has_grad()) t->backward_fn(*t);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    auto out = node(a->shape, "add", {a, b});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Tensor& o) {
            if (a->requires_grad) a->accumulate_grad(o.grad);
            if (b->requires_grad) b->accumulate_grad(o.grad);
        };
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "sub");
    auto out = node(a->shape, "sub", {a, b});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Tensor& o) {
            if (a->requires_grad) a->accumulate_grad(o.grad);
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] -= o.grad[i];
            }
        };
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    auto out = node(a->shape, "mul", {a, b});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Tensor& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i] * a->values[i];
            }
        };
    return out;
}

TensorPtr divide(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "divide");
    auto out = node(a->shape, "divide", {a, b});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] / b->values[i];
    if (out->requires_grad)
        out->backward_fn = [a, b](Tensor& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] / b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i)
                    b->grad[i] -= o.grad[i] * a->values[i] / (b->values[i] * b->values[i]);
            }
        };
    return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
    auto out = node(a->shape, "scale", {a});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * c;
    if (out->requires_grad)
        out->backward_fn = [a, c](Tensor& o) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * c;
        };
    return out;
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
    auto out = node(a->shape, "add_scalar", {a});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + c;
    if (out->requires_grad)
        out->backward_fn = [a](Tensor& o) { a->accumulate_grad(o.grad); };
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    auto out = node(x->shape, "relu", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                if (o.values[i] > 0.0) x->grad[i] += o.grad[i];
        };
    return out;
}

TensorPtr tanh_op(const TensorPtr& x) {
    auto out = node(x->shape, "tanh", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::tanh(x->values[i]);
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] * (1.0 - o.values[i] * o.values[i]);
        };
    return out;
}

TensorPtr sigmoid(const TensorPtr& x) {
    auto out = node(x->shape, "sigmoid", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = 1.0 / (1.0 + std::exp(-x->values[i]));
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] * o.values[i] * (1.0 - o.values[i]);
        };
    return out;
}

TensorPtr exp_op(const TensorPtr& x) {
    auto out = node(x->shape, "exp", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::exp(x->values[i]);
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] * o.values[i];
        };
    return out;
}

TensorPtr log_op(const TensorPtr& x) {
    auto out = node(x->shape, "log", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::log(std::max(x->values[i], 1e-12));
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i] / std::max(x->values[i], 1e-12);
        };
    return out;
}

TensorPtr clamp(const TensorPtr& x, double lo, double hi) {
    auto out = node(x->shape, "clamp", {x});
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::min(std::max(x->values[i], lo), hi);
    if (out->requires_grad)
        out->backward_fn = [x, lo, hi](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                if (x->values[i] > lo && x->values[i] < hi) x->grad[i] += o.grad[i];
        };
    return out;
}

TensorPtr stop_grad(const TensorPtr& x) {
    auto out = Tensor::create(x->shape);
    out->op = "stop_grad";
    out->values = x->values;
    return out;
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

TensorPtr reshape(const TensorPtr& x, Shape s) {
    if (numel(s) != x->size())
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(s));
    auto out = node(std::move(s), "reshape", {x});
    out->values = x->values;
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) { x->accumulate_grad(o.grad); };
    return out;
}

TensorPtr slice_cols(const TensorPtr& x, int c0, int c1) {
    if (x->shape.size() != 2) throw ShapeError("slice_cols: expected 2-d tensor, got " + shape_str(x->shape));
    const int n = x->shape[0], m = x->shape[1];
    if (c0 < 0 || c1 > m || c0 >= c1) throw ContractError("slice_cols: bad column range");
    auto out = node({n, c1 - c0}, "slice_cols", {x});
    const int w = c1 - c0;
    for (int i = 0; i < n; ++i)
        std::memcpy(&out->values[static_cast<size_t>(i) * w], &x->values[static_cast<size_t>(i) * m + c0],
                    sizeof(double) * static_cast<size_t>(w));
    if (out->requires_grad)
        out->backward_fn = [x, c0, w, m](Tensor& o) {
            x->ensure_grad();
            const int n2 = o.shape[0];
            for (int i = 0; i < n2; ++i)
                for (int j = 0; j < w; ++j)
                    x->grad[static_cast<size_t>(i) * m + c0 + j] += o.grad[static_cast<size_t>(i) * w + j];
        };
    return out;
}

namespace {

// (b,c,y,x) <-> row-major [b*H*W + y*W + x, c] index maps shared by both permutes
void permute_cr(const double* src, double* dst, int b, int c, int h, int w, bool to_rows) {
    const std::int64_t area = static_cast<std::int64_t>(h) * w;
    for (int bi = 0; bi < b; ++bi)
        for (int ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < area; ++i) {
                const std::int64_t chw = (static_cast<std::int64_t>(bi) * c + ch) * area + i;
                const std::int64_t row = (static_cast<std::int64_t>(bi) * area + i) * c + ch;
                if (to_rows)
                    dst[row] = src[chw];
                else
                    dst[chw] = src[row];
            }
}

}  // namespace

TensorPtr channels_to_rows(const TensorPtr& x) {
    if (x->shape.size() != 4) throw ShapeError("channels_to_rows: expected [B,C,H,W], got " + shape_str(x->shape));
    const int b = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    auto out = node({b * h * w, c}, "channels_to_rows", {x});
    permute_cr(x->values.data(), out->values.data(), b, c, h, w, true);
    if (out->requires_grad)
        out->backward_fn = [x, b, c, h, w](Tensor& o) {
            x->ensure_grad();
            std::vector<double> tmp(x->grad.size());
            permute_cr(o.grad.data(), tmp.data(), b, c, h, w, false);
            for (size_t i = 0; i < tmp.size(); ++i) x->grad[i] += tmp[i];
        };
    return out;
}

TensorPtr rows_to_channels(const TensorPtr& x, int b, int h, int w) {
    if (x->shape.size() != 2 || x->shape[0] != b * h * w)
        throw ShapeError("rows_to_channels: expected [" + std::to_string(b * h * w) + ",C], got " + shape_str(x->shape));
    const int c = x->shape[1];
    auto out = node({b, c, h, w}, "rows_to_channels", {x});
    permute_cr(x->values.data(), out->values.data(), b, c, h, w, false);
    if (out->requires_grad)
        out->backward_fn = [x, b, c, h, w](Tensor& o) {
            x->ensure_grad();
            std::vector<double> tmp(x->grad.size());
            permute_cr(o.grad.data(), tmp.data(), b, c, h, w, true);
            for (size_t i = 0; i < tmp.size(); ++i) x->grad[i] += tmp[i];
        };
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

TensorPtr sum(const TensorPtr& x) {
    auto out = node({1}, "sum", {x});
    double s = 0.0;
    for (double v : x->values) s += v;
    out->values[0] = s;
    if (out->requires_grad)
        out->backward_fn = [x](Tensor& o) {
            x->ensure_grad();
            for (auto& g : x->grad) g += o.grad[0];
        };
    return out;
}

TensorPtr mean(const TensorPtr& x) {
    auto out = node({1}, "mean", {x});
    double s = 0.0;
    for (double v : x->values) s += v;
    const double inv = 1.0 / static_cast<double>(x->size());
    out->values[0] = s * inv;
    if (out->requires_grad)
        out->backward_fn = [x, inv](Tensor& o) {
            x->ensure_grad();
            for (auto& g : x->grad) g += o.grad[0] * inv;
        };
    return out;
}

TensorPtr mean_sq(const TensorPtr& x) {
    auto out = node({1}, "mean_sq", {x});
    double s = 0.0;
    for (double v : x->values) s += v * v;
    const double inv = 1.0 / static_cast<double>(x->size());
    out->values[0] = s * inv;
    if (out->requires_grad)
        out->backward_fn = [x, inv](Tensor& o) {
            x->ensure_grad();
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o.grad[0] * 2.0 * x->values[i] * inv;
        };
    return out;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mse");
    auto out = node({1}, "mse", {a, b});
    double s = 0.0;
    for (size_t i = 0; i < a->values.size(); ++i) {
        const double d = a->values[i] - b->values[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(a->size());
    out->values[0] = s * inv;
    if (out->requires_grad)
        out->backward_fn = [a, b, inv](Tensor& o) {
            for (size_t i = 0; i < a->values.size(); ++i) {
                const double g = o.grad[0] * 2.0 * (a->values[i] - b->values[i]) * inv;
                if (a->requires_grad) {
                    a->ensure_grad();
                    a->grad[i] += g;
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    b->grad[i] -= g;
                }
            }
        };
    return out;
}

TensorPtr rowsum(const TensorPtr& x) {
    if (x->shape.size() != 2) throw ShapeError("rowsum: expected 2-d tensor, got " + shape_str(x->shape));
    const int n = x->shape[0], m = x->shape[1];
    auto out = node({n}, "rowsum", {x});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += x->values[static_cast<size_t>(i) * m + j];
        out->values[i] = s;
    }
    if (out->requires_grad)
        out->backward_fn = [x, n, m](Tensor& o) {
            x->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) x->grad[static_cast<size_t>(i) * m + j] += o.grad[i];
        };
    return out;
}

// ---------------------------------------------------------------------------
// GEMM kernels
// ---------------------------------------------------------------------------

namespace kernels {

void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<size_t>(p) * m;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void im2col(const double* img, int c, int h, int w, int k, int stride, int pad, double* cols) {
    const int ho = conv_out_dim(h, k, stride, pad);
    const int wo = conv_out_dim(w, k, stride, pad);
    const int area = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* dst = cols + (static_cast<size_t>(ch) * k * k + static_cast<size_t>(ki) * k + kj) * area;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + static_cast<size_t>(oy) * wo, 0, sizeof(double) * wo);
                        continue;
                    }
                    const double* src = img + (static_cast<size_t>(ch) * h + iy) * w;
                    double* d = dst + static_cast<size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        d[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, double* img) {
    const int ho = conv_out_dim(h, k, stride, pad);
    const int wo = conv_out_dim(w, k, stride, pad);
    const int area = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* src = cols + (static_cast<size_t>(ch) * k * k + static_cast<size_t>(ki) * k + kj) * area;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = img + (static_cast<size_t>(ch) * h + iy) * w;
                    const double* s = src + static_cast<size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += s[ox];
                    }
                }
            }
        }
    }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// linear algebra ops
// ---------------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " + shape_str(b->shape));
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = node({m, n}, "matmul", {a, b});
    kernels::gemm(a->values.data(), b->values.data(), out->values.data(), m, k, n, false);
    if (out->requires_grad)
        out->backward_fn = [a, b, m, k, n](Tensor& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::gemm_nt(o.grad.data(), b->values.data(), a->grad.data(), m, n, k, true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::gemm_tn(a->values.data(), o.grad.data(), b->grad.data(), k, m, n, true);
            }
        };
    return out;
}

TensorPtr add_bias(const TensorPtr& x, const TensorPtr& b) {
    if (x->shape.size() != 2 || b->shape.size() != 1 || x->shape[1] != b->shape[0])
        throw ShapeError("add_bias: incompatible shapes " + shape_str(x->shape) + " + " + shape_str(b->shape));
    const int n = x->shape[0], m = x->shape[1];
    auto out = node(x->shape, "add_bias", {x, b});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out->values[static_cast<size_t>(i) * m + j] = x->values[static_cast<size_t>(i) * m + j] + b->values[j];
    if (out->requires_grad)
        out->backward_fn = [x, b, n, m](Tensor& o) {
            if (x->requires_grad) x->accumulate_grad(o.grad);
            if (b->requires_grad) {
                b->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) b->grad[j] += o.grad[static_cast<size_t>(i) * m + j];
            }
        };
    return out;
}

TensorPtr softmax_lastdim(const TensorPtr& x) {
    if (x->shape.empty()) throw ShapeError("softmax_lastdim: scalar input");
    const int m = x->shape.back();
    if (m < 1) throw ShapeError("softmax_lastdim: empty last axis");
    const std::int64_t rows = x->size() / m;
    auto out = node(x->shape, "softmax", {x});
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xi = &x->values[static_cast<size_t>(i) * m];
        double* yi = &out->values[static_cast<size_t>(i) * m];
        double mx = xi[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < m; ++j) yi[j] *= inv;
    }
    if (out->requires_grad)
        out->backward_fn = [x, rows, m](Tensor& o) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < rows; ++i) {
                const double* y = &o.values[static_cast<size_t>(i) * m];
                const double* dy = &o.grad[static_cast<size_t>(i) * m];
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += dy[j] * y[j];
                double* dx = &x->grad[static_cast<size_t>(i) * m];
                for (int j = 0; j < m; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    return out;
}

TensorPtr cross_entropy_logits(const TensorPtr& logits, const std::vector<int>& targets) {
    if (logits->shape.size() != 2) throw ShapeError("cross_entropy_logits: expected [N,K], got " + shape_str(logits->shape));
    const int n = logits->shape[0], k = logits->shape[1];
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
    for (int t : targets)
        if (t < 0 || t >= k) throw ContractError("cross_entropy_logits: target index " + std::to_string(t) + " out of range [0," + std::to_string(k) + ")");
    auto out = node({1}, "cross_entropy", {logits});
    // keep softmax probabilities for the backward rule (softmax - onehot)/N
    auto probs = std::make_shared<std::vector<double>>(logits->values.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* xi = &logits->values[static_cast<size_t>(i) * k];
        double* pi = &(*probs)[static_cast<size_t>(i) * k];
        double mx = xi[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (int j = 0; j < k; ++j) {
            pi[j] = std::exp(xi[j] - mx);
            s += pi[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < k; ++j) pi[j] *= inv;
        total += -(xi[targets[i]] - mx - std::log(s));
    }
    out->values[0] = total / n;
    if (out->requires_grad) {
        auto tgts = std::make_shared<std::vector<int>>(targets);
        out->backward_fn = [logits, probs, tgts, n, k](Tensor& o) {
            logits->ensure_grad();
            const double g = o.grad[0] / n;
            for (int i = 0; i < n; ++i) {
                const double* pi = &(*probs)[static_cast<size_t>(i) * k];
                double* dx = &logits->grad[static_cast<size_t>(i) * k];
                for (int j = 0; j < k; ++j) dx[j] += g * pi[j];
                dx[(*tgts)[i]] -= g;
            }
        };
    }
    return out;
}

TensorPtr embed(const TensorPtr& table, const std::vector<int>& indices) {
    if (table->shape.size() != 2) throw ShapeError("embed: table must be [K,D], got " + shape_str(table->shape));
    const int k = table->shape[0], d = table->shape[1];
    const int n = static_cast<int>(indices.size());
    for (int idx : indices)
        if (idx < 0 || idx >= k) throw ContractError("embed: index " + std::to_string(idx) + " out of range [0," + std::to_string(k) + ")");
    auto out = node({n, d}, "embed", {table});
    for (int i = 0; i < n; ++i)
        std::memcpy(&out->values[static_cast<size_t>(i) * d], &table->values[static_cast<size_t>(indices[i]) * d],
                    sizeof(double) * static_cast<size_t>(d));
    if (out->requires_grad) {
        auto idxs = std::make_shared<std::vector<int>>(indices);
        out->backward_fn = [table, idxs, d](Tensor& o) {
            table->ensure_grad();
            for (size_t i = 0; i < idxs->size(); ++i) {
                double* dst = &table->grad[static_cast<size_t>((*idxs)[i]) * d];
                const double* src = &o.grad[i * d];
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& b) {
    if (x->shape.size() != 4 || b->shape.size() != 1 || x->shape[1] != b->shape[0])
        throw ShapeError("add_channel_bias: incompatible shapes " + shape_str(x->shape) + " + " + shape_str(b->shape));
    const int batch = x->shape[0], c = x->shape[1];
    const std::int64_t area = static_cast<std::int64_t>(x->shape[2]) * x->shape[3];
    auto out = node(x->shape, "add_channel_bias", {x, b});
    for (int bi = 0; bi < batch; ++bi)
        for (int ch = 0; ch < c; ++ch) {
            const double bv = b->values[ch];
            const size_t base = (static_cast<size_t>(bi) * c + ch) * area;
            for (std::int64_t i = 0; i < area; ++i) out->values[base + i] = x->values[base + i] + bv;
        }
    if (out->requires_grad)
        out->backward_fn = [x, b, batch, c, area](Tensor& o) {
            if (x->requires_grad) x->accumulate_grad(o.grad);
            if (b->requires_grad) {
                b->ensure_grad();
                for (int bi = 0; bi < batch; ++bi)
                    for (int ch = 0; ch < c; ++ch) {
                        const size_t base = (static_cast<size_t>(bi) * c + ch) * area;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < area; ++i) s += o.grad[base + i];
                        b->grad[ch] += s;
                    }
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

// Promotes [C,H,W] to [1,C,H,W]; remembers whether to strip the batch dim.
Shape conv_input_shape(const TensorPtr& x, bool& batched) {
    if (x->shape.size() == 4) {
        batched = true;
        return x->shape;
    }
    if (x->shape.size() == 3) {
        batched = false;
        return {1, x->shape[0], x->shape[1], x->shape[2]};
    }
    throw ShapeError("conv: expected [B,C,H,W] or [C,H,W], got " + shape_str(x->shape));
}

}  // namespace

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, int stride, int padding) {
    bool batched = false;
    const Shape xs = conv_input_shape(x, batched);
    if (w->shape.size() != 4 || w->shape[2] != w->shape[3])
        throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(w->shape));
    const int batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const int cout = w->shape[0], k = w->shape[2];
    if (w->shape[1] != cin)
        throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs kernel " + shape_str(w->shape));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int ho = kernels::conv_out_dim(h, k, stride, padding);
    const int wo = kernels::conv_out_dim(wd, k, stride, padding);
    if (ho < 1 || wo < 1)
        throw ConfigError("conv2d: non-positive output size for input " + shape_str(x->shape) + " kernel " +
                          shape_str(w->shape) + " stride " + std::to_string(stride) + " pad " + std::to_string(padding));

    Shape os = batched ? Shape{batch, cout, ho, wo} : Shape{cout, ho, wo};
    auto out = node(std::move(os), "conv2d", {x, w});
    const int ck2 = cin * k * k;
    const int area = ho * wo;
    std::vector<double> cols(static_cast<size_t>(ck2) * area);
    const size_t in_stride = static_cast<size_t>(cin) * h * wd;
    const size_t out_stride = static_cast<size_t>(cout) * area;
    for (int b = 0; b < batch; ++b) {
        kernels::im2col(x->values.data() + b * in_stride, cin, h, wd, k, stride, padding, cols.data());
        kernels::gemm(w->values.data(), cols.data(), out->values.data() + b * out_stride, cout, ck2, area, false);
    }
    if (out->requires_grad)
        out->backward_fn = [x, w, batch, cin, h, wd, cout, k, stride, padding, ck2, area, in_stride, out_stride](Tensor& o) {
            std::vector<double> cols(static_cast<size_t>(ck2) * area);
            std::vector<double> dcols(static_cast<size_t>(ck2) * area);
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                const double* dout = o.grad.data() + b * out_stride;
                if (w->requires_grad) {
                    kernels::im2col(x->values.data() + b * in_stride, cin, h, wd, k, stride, padding, cols.data());
                    kernels::gemm_nt(dout, cols.data(), w->grad.data(), cout, area, ck2, true);
                }
                if (x->requires_grad) {
                    kernels::gemm_tn(w->values.data(), dout, dcols.data(), ck2, cout, area, false);
                    kernels::col2im(dcols.data(), cin, h, wd, k, stride, padding, x->grad.data() + b * in_stride);
                }
            }
        };
    return out;
}

TensorPtr conv2d_transpose(const TensorPtr& x, const TensorPtr& w, int stride, int padding) {
    bool batched = false;
    const Shape xs = conv_input_shape(x, batched);
    if (w->shape.size() != 4 || w->shape[2] != w->shape[3])
        throw ShapeError("conv2d_transpose: kernel must be [Cin,Cout,k,k], got " + shape_str(w->shape));
    const int batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const int cout = w->shape[1], k = w->shape[2];
    if (w->shape[0] != cin)
        throw ShapeError("conv2d_transpose: input channels " + std::to_string(cin) + " vs kernel " + shape_str(w->shape));
    const int ho = (h - 1) * stride - 2 * padding + k;
    const int wo = (wd - 1) * stride - 2 * padding + k;
    if (ho < 1 || wo < 1) throw ConfigError("conv2d_transpose: non-positive output size");

    Shape os = batched ? Shape{batch, cout, ho, wo} : Shape{cout, ho, wo};
    auto out = node(std::move(os), "conv2d_transpose", {x, w});
    const int ck2 = cout * k * k;
    const int area = h * wd;  // input spatial area == conv_out_dim of the adjoint conv
    std::vector<double> cols(static_cast<size_t>(ck2) * area);
    const size_t in_stride = static_cast<size_t>(cin) * area;
    const size_t out_stride = static_cast<size_t>(cout) * ho * wo;
    for (int b = 0; b < batch; ++b) {
        // cols = W^T [Cout*k*k, Cin] * x_b [Cin, H*W]; then scatter with col2im
        kernels::gemm_tn(w->values.data(), x->values.data() + b * in_stride, cols.data(), ck2, cin, area, false);
        kernels::col2im(cols.data(), cout, ho, wo, k, stride, padding, out->values.data() + b * out_stride);
    }
    if (out->requires_grad)
        out->backward_fn = [x, w, batch, cin, h, wd, cout, k, stride, padding, ck2, area, in_stride, out_stride, ho, wo](Tensor& o) {
            std::vector<double> cols(static_cast<size_t>(ck2) * area);
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                kernels::im2col(o.grad.data() + b * out_stride, cout, ho, wo, k, stride, padding, cols.data());
                if (x->requires_grad)
                    kernels::gemm(w->values.data(), cols.data(), x->grad.data() + b * in_stride, cin, ck2, area, true);
                if (w->requires_grad)
                    kernels::gemm_nt(x->values.data() + b * in_stride, cols.data(), w->grad.data(), cin, area, ck2, true);
            }
        };
    return out;
}

}  // namespace val
