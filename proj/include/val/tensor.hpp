#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "val/errors.hpp"
#include "val/rng.hpp"

namespace val {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// A dense row-major array of doubles, doubling as a node of the reverse-mode
// graph. Ops are free functions that compute the forward value eagerly and
// attach a closure that scatters the node's gradient into its inputs.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until ensure_grad(); same length as values after
    bool requires_grad = false;

    // graph bookkeeping
    const char* op = "leaf";
    std::vector<TensorPtr> inputs;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr create(Shape s, bool requires_grad = false);
    static TensorPtr from(Shape s, std::vector<double> v, bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);
    static TensorPtr zeros(Shape s, bool requires_grad = false);
    static TensorPtr full(Shape s, double v, bool requires_grad = false);
    static TensorPtr randn(Shape s, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static TensorPtr rand_uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = false);

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    bool is_scalar() const { return values.size() == 1; }
    double item() const;

    void ensure_grad();
    void zero_grad();
    void accumulate_grad(std::span<const double> g);
    bool has_grad() const { return !grad.empty(); }
};

// Global switch so inference paths skip graph construction entirely.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Scalar-loss reverse pass. Visits each reachable node exactly once in
// reverse topological order; gradients accumulate until explicitly zeroed.
void backward(const TensorPtr& loss);

// ---- elementwise / arithmetic ----
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr divide(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr relu(const TensorPtr& x);
TensorPtr tanh_op(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr exp_op(const TensorPtr& x);
TensorPtr log_op(const TensorPtr& x);  // clamps input at 1e-12
TensorPtr clamp(const TensorPtr& x, double lo, double hi);
TensorPtr stop_grad(const TensorPtr& x);

// ---- shape ----
TensorPtr reshape(const TensorPtr& x, Shape s);
TensorPtr slice_cols(const TensorPtr& x, int c0, int c1);  // x: [N, M] -> [N, c1-c0]
TensorPtr channels_to_rows(const TensorPtr& x);  // [B,C,H,W] -> [B*H*W, C]
TensorPtr rows_to_channels(const TensorPtr& x, int b, int h, int w);  // inverse of channels_to_rows

// ---- reductions ----
TensorPtr sum(const TensorPtr& x);
TensorPtr mean(const TensorPtr& x);
TensorPtr mean_sq(const TensorPtr& x);                      // mean of squared entries
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);      // mean squared difference
TensorPtr rowsum(const TensorPtr& x);                       // x: [N, M] -> [N]

// ---- linear algebra / nets ----
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);        // [m,k] x [k,n]
TensorPtr add_bias(const TensorPtr& x, const TensorPtr& b);      // rows of x + b
TensorPtr softmax_lastdim(const TensorPtr& x);
TensorPtr cross_entropy_logits(const TensorPtr& logits, const std::vector<int>& targets);
TensorPtr embed(const TensorPtr& table, const std::vector<int>& indices);  // [K,D] gather -> [N,D]

TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& b);  // x: [B,C,H,W], b: [C]

// input [B,C,H,W] (or [C,H,W]), kernel [Cout,Cin,k,k]. Cross-correlation.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, int stride, int padding);
// kernel [Cin,Cout,k,k]; forward equals the input-gradient of conv2d, so the
// pair is adjoint by construction.
TensorPtr conv2d_transpose(const TensorPtr& x, const TensorPtr& w, int stride, int padding);

// ---- raw kernels (shared with inference-only code paths) ----
namespace kernels {
// C[m,n] (+)= A[m,k] * B[k,n]
void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
int conv_out_dim(int in, int k, int stride, int pad);
void im2col(const double* img, int c, int h, int w, int k, int stride, int pad, double* cols);
void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, double* img);
}  // namespace kernels

}  // namespace val
