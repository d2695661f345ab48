#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "segvae/nn/tensor.hpp"

namespace segvae::nn {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the dynamic graph. Leaves created with `leaf` persist across
// graphs (parameters) and accumulate gradients until `zero_grad`.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
    void zero_grad() { grad = Tensor(); }
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

Var constant(Tensor value);
Var leaf(Tensor value);

// Reverse sweep from a scalar root. The graph is released afterwards; leaf
// gradients are kept.
void backward(const Var& root);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp(const Var& a, double lo, double hi);

// Dense
Var linear(const Var& x, const Var& weight, const Var& bias);  // x:[N,in] w:[out,in] b:[out]

// Convolution. x:[N,C,H,W]; conv weight [O,C,k,k]; transposed weight [Cin,Cout,k,k].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var instance_norm(const Var& x, double eps = 1e-5);

// weight / sigma with sigma = u^T W v, v = normalize(W^T u); u is a constant.
Var spectral_normalize(const Var& weight, const Tensor& u);
// One power-iteration update of u against the current weight value.
void power_iteration(const Tensor& weight, Tensor& u);

// Shape manipulation
Var reshape(const Var& x, Shape shape);
Var slice_cols(const Var& x, int start, int len);               // x:[N,D]
Var concat_cols(const std::vector<Var>& parts);                 // [N,Di] -> [N,sum Di]
Var concat_channels(const std::vector<Var>& parts);             // [N,Ci,H,W]
Var broadcast_spatial(const Var& x, int height, int width);     // [N,D] -> [N,D,H,W]
Var select_rows(const Var& x, const std::vector<int>& rows);    // gather along dim 0

// out[n] = m[n] * a[n] + (1 - m[n]) * b[n]
Var blend_rows(const std::vector<double>& mask, const Var& a, const Var& b);

// Reductions / losses
Var l1_per_example(const Var& pred, const Tensor& target);      // -> [N], mean |pred - target|
Var bce_logits_per_example(const Var& logits, const Tensor& target);  // -> [N], mean binary cross-entropy
Var kl_diag_gaussian(const Var& mu_q, const Var& logvar_q, const Var& mu_p, const Var& logvar_p);  // -> [N]
Var weighted_sum(const Var& v, const std::vector<double>& weights);  // [N] -> [1]
Var sum_all(const Var& x);

}  // namespace segvae::nn
