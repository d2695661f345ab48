#include "segvae/nn/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace segvae::nn {

namespace {

// Sequential sum. Eigen's vectorized reductions over mapped buffers peel
// according to the runtime address, which makes results depend on where the
// allocator placed the data.
double ordered_sum(const double* p, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += p[i];
    return s;
}

}  // namespace

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
    if (!ok) {
        throw std::invalid_argument(what);
    }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->value.shape != b->value.shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a->value.shape) +
                                    " vs " + shape_string(b->value.shape));
    }
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Var& p) { return p && p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward_fn = std::move(fn);
        }
    }
    return node;
}

bool wants(const Node& self, std::size_t i) {
    return self.parents[i] && self.parents[i]->requires_grad;
}

// Unary op with an elementwise derivative expressed through (input, output).
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
    Tensor out(a->value.shape);
    const auto& x = a->value.data;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.data[i] = fwd(x[i]);
    }
    return make_result(std::move(out), {a}, [deriv](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        const auto& x = self.parents[0]->value.data;
        const auto& y = self.value.data;
        const auto& gy = self.grad.data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += gy[i] * deriv(x[i], y[i]);
        }
    });
}

// Patch extraction for convolution: cols is (C*k*k) x (Ho*Wo).
// Output columns ox whose input column ox * stride - pad + kx lies in [0, width).
std::pair<int, int> valid_columns(int width, int stride, int pad, int kx, int out_w) {
    const int offset = kx - pad;
    const int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    const int hi = width - offset <= 0 ? 0 : std::min(out_w, (width - offset + stride - 1) / stride);
    return {std::min(lo, hi), hi};
}

void im2col(const double* x, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, double* cols) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                const auto [lo, hi] = valid_columns(width, stride, pad, kx, out_w);
                const int offset = kx - pad;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * height + iy) * width + offset;
                    std::fill(dst, dst + lo, 0.0);
                    if (stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
                    }
                    std::fill(dst + hi, dst + out_w, 0.0);
                }
            }
        }
    }
}

// Adjoint of im2col; accumulates into x.
void col2im(const double* cols, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, double* x) {
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                const auto [lo, hi] = valid_columns(width, stride, pad, kx, out_w);
                const int offset = kx - pad;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    const double* src = row + oy * out_w;
                    double* dst = x + (static_cast<std::size_t>(c) * height + iy) * width + offset;
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.data.size() != value.data.size()) {
        grad = Tensor(value.shape, 0.0);
    }
    return grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return node;
}

Var leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

void backward(const Var& root) {
    if (!root->requires_grad) {
        return;
    }
    require(root->value.numel() == 1, "backward: root must be a scalar");

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer().data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
    // Release interior nodes; leaves keep their accumulated gradients.
    for (Node* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
            node->grad = Tensor();
        }
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!wants(self, p)) continue;
            auto& g = self.parents[p]->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) {
            auto& g = self.parents[0]->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
        }
        if (wants(self, 1)) {
            auto& g = self.parents[1]->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->value.data;
        const auto& bv = self.parents[1]->value.data;
        if (wants(self, 0)) {
            auto& g = self.parents[0]->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i] * bv[i];
        }
        if (wants(self, 1)) {
            auto& g = self.parents[1]->grad_buffer().data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------- dense

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(x->value.rank() == 2 && weight->value.rank() == 2, "linear: expects [N,in] and [out,in]");
    const int n = x->value.dim(0);
    const int in = x->value.dim(1);
    const int out_dim = weight->value.dim(0);
    if (weight->value.dim(1) != in) {
        throw std::invalid_argument("linear: input width " + std::to_string(in) + " does not match weight " +
                                    shape_string(weight->value.shape));
    }
    Tensor out({n, out_dim});
    MapR(out.data.data(), n, out_dim).noalias() =
        CMapR(x->value.data.data(), n, in) * CMapR(weight->value.data.data(), out_dim, in).transpose();
    if (bias) {
        require(static_cast<int>(bias->value.numel()) == out_dim, "linear: bias size mismatch");
        MapR(out.data.data(), n, out_dim).rowwise() +=
            CVecMap(bias->value.data.data(), out_dim).transpose();
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [n, in, out_dim](Node& self) {
        CMapR gy(self.grad.data.data(), n, out_dim);
        if (wants(self, 0)) {
            MapR(self.parents[0]->grad_buffer().data.data(), n, in).noalias() +=
                gy * CMapR(self.parents[1]->value.data.data(), out_dim, in);
        }
        if (wants(self, 1)) {
            MapR(self.parents[1]->grad_buffer().data.data(), out_dim, in).noalias() +=
                gy.transpose() * CMapR(self.parents[0]->value.data.data(), n, in);
        }
        if (self.parents.size() > 2 && wants(self, 2)) {
            double* gb = self.parents[2]->grad_buffer().data.data();
            for (int r = 0; r < n; ++r) {
                for (int j = 0; j < out_dim; ++j) gb[j] += gy(r, j);
            }
        }
    });
}

// ---------------------------------------------------------------- convolution

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const auto& xs = x->value.shape;
    const auto& ws = weight->value.shape;
    require(xs.size() == 4 && ws.size() == 4, "conv2d: expects 4-D input and weight");
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const int o = ws[0], k = ws[2];
    if (ws[1] != c || ws[3] != k) {
        throw std::invalid_argument("conv2d: weight " + shape_string(ws) + " incompatible with input " +
                                    shape_string(xs));
    }
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d: empty output");
    const int rows = c * k * k;
    const int plane = oh * ow;

    Tensor out({n, o, oh, ow});
    std::vector<double> cols(static_cast<std::size_t>(rows) * plane);
    CMapR wm(weight->value.data.data(), o, rows);
    for (int b = 0; b < n; ++b) {
        im2col(x->value.data.data() + static_cast<std::size_t>(b) * c * h * w, c, h, w, k, stride, pad, oh, ow,
               cols.data());
        MapR ob(out.data.data() + static_cast<std::size_t>(b) * o * plane, o, plane);
        ob.noalias() = wm * CMapR(cols.data(), rows, plane);
        if (bias) {
            ob.colwise() += CVecMap(bias->value.data.data(), o);
        }
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [=](Node& self) {
        const Node& xin = *self.parents[0];
        const Node& wt = *self.parents[1];
        std::vector<double> cols(static_cast<std::size_t>(rows) * plane);
        std::vector<double> dcols(wants(self, 0) ? cols.size() : 0);
        CMapR wm(wt.value.data.data(), o, rows);
        for (int b = 0; b < n; ++b) {
            CMapR gy(self.grad.data.data() + static_cast<std::size_t>(b) * o * plane, o, plane);
            if (wants(self, 1)) {
                im2col(xin.value.data.data() + static_cast<std::size_t>(b) * c * h * w, c, h, w, k, stride, pad,
                       oh, ow, cols.data());
                MapR(self.parents[1]->grad_buffer().data.data(), o, rows).noalias() +=
                    gy * CMapR(cols.data(), rows, plane).transpose();
            }
            if (wants(self, 0)) {
                MapR(dcols.data(), rows, plane).noalias() = wm.transpose() * gy;
                col2im(dcols.data(), c, h, w, k, stride, pad, oh, ow,
                       self.parents[0]->grad_buffer().data.data() + static_cast<std::size_t>(b) * c * h * w);
            }
            if (self.parents.size() > 2 && wants(self, 2)) {
                double* gb = self.parents[2]->grad_buffer().data.data();
                for (int r = 0; r < o; ++r) gb[r] += ordered_sum(gy.data() + static_cast<std::size_t>(r) * plane, plane);
            }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const auto& xs = x->value.shape;
    const auto& ws = weight->value.shape;
    require(xs.size() == 4 && ws.size() == 4, "conv_transpose2d: expects 4-D input and weight");
    const int n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
    const int cout = ws[1], k = ws[2];
    if (ws[0] != cin || ws[3] != k) {
        throw std::invalid_argument("conv_transpose2d: weight " + shape_string(ws) + " incompatible with input " +
                                    shape_string(xs));
    }
    const int oh = (h - 1) * stride - 2 * pad + k;
    const int ow = (w - 1) * stride - 2 * pad + k;
    require(oh > 0 && ow > 0, "conv_transpose2d: empty output");
    const int rows = cout * k * k;
    const int plane = h * w;

    Tensor out({n, cout, oh, ow});
    std::vector<double> cols(static_cast<std::size_t>(rows) * plane);
    CMapR wm(weight->value.data.data(), cin, rows);
    for (int b = 0; b < n; ++b) {
        MapR(cols.data(), rows, plane).noalias() =
            wm.transpose() * CMapR(x->value.data.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
        double* ob = out.data.data() + static_cast<std::size_t>(b) * cout * oh * ow;
        col2im(cols.data(), cout, oh, ow, k, stride, pad, h, w, ob);
        if (bias) {
            for (int ch = 0; ch < cout; ++ch) {
                double* p = ob + static_cast<std::size_t>(ch) * oh * ow;
                std::for_each(p, p + oh * ow, [v = bias->value.data[ch]](double& e) { e += v; });
            }
        }
    }
    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents), [=](Node& self) {
        const Node& xin = *self.parents[0];
        const Node& wt = *self.parents[1];
        std::vector<double> dcols(static_cast<std::size_t>(rows) * plane);
        CMapR wm(wt.value.data.data(), cin, rows);
        for (int b = 0; b < n; ++b) {
            const double* gy = self.grad.data.data() + static_cast<std::size_t>(b) * cout * oh * ow;
            im2col(gy, cout, oh, ow, k, stride, pad, h, w, dcols.data());
            CMapR dc(dcols.data(), rows, plane);
            if (wants(self, 0)) {
                MapR(self.parents[0]->grad_buffer().data.data() + static_cast<std::size_t>(b) * cin * plane, cin,
                     plane)
                    .noalias() += wm * dc;
            }
            if (wants(self, 1)) {
                MapR(self.parents[1]->grad_buffer().data.data(), cin, rows).noalias() +=
                    CMapR(xin.value.data.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane) *
                    dc.transpose();
            }
            if (self.parents.size() > 2 && wants(self, 2)) {
                auto& gb = self.parents[2]->grad_buffer().data;
                for (int ch = 0; ch < cout; ++ch) {
                    const double* p = gy + static_cast<std::size_t>(ch) * oh * ow;
                    double s = 0.0;
                    for (int i = 0; i < oh * ow; ++i) s += p[i];
                    gb[ch] += s;
                }
            }
        }
    });
}

Var instance_norm(const Var& x, double eps) {
    const auto& xs = x->value.shape;
    require(xs.size() == 4, "instance_norm: expects [N,C,H,W]");
    const int groups = xs[0] * xs[1];
    const int plane = xs[2] * xs[3];
    Tensor out(xs);
    std::vector<double> inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        const double* p = x->value.data.data() + static_cast<std::size_t>(g) * plane;
        double mean = 0.0;
        for (int i = 0; i < plane; ++i) mean += p[i];
        mean /= plane;
        double var = 0.0;
        for (int i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= plane;
        inv_std[g] = 1.0 / std::sqrt(var + eps);
        double* q = out.data.data() + static_cast<std::size_t>(g) * plane;
        for (int i = 0; i < plane; ++i) q[i] = (p[i] - mean) * inv_std[g];
    }
    return make_result(std::move(out), {x}, [groups, plane, inv_std = std::move(inv_std)](Node& self) {
        auto& gx = self.parents[0]->grad_buffer().data;
        for (int g = 0; g < groups; ++g) {
            const double* gy = self.grad.data.data() + static_cast<std::size_t>(g) * plane;
            const double* y = self.value.data.data() + static_cast<std::size_t>(g) * plane;
            double mean_g = 0.0, mean_gy = 0.0;
            for (int i = 0; i < plane; ++i) {
                mean_g += gy[i];
                mean_gy += gy[i] * y[i];
            }
            mean_g /= plane;
            mean_gy /= plane;
            double* dst = gx.data() + static_cast<std::size_t>(g) * plane;
            for (int i = 0; i < plane; ++i) dst[i] += inv_std[g] * (gy[i] - mean_g - y[i] * mean_gy);
        }
    });
}

namespace {

Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
    const double norm = v.norm();
    return v / std::max(norm, 1e-12);
}

}  // namespace

void power_iteration(const Tensor& weight, Tensor& u) {
    const int rows = weight.dim(0);
    const int cols = static_cast<int>(weight.numel() / rows);
    require(static_cast<int>(u.numel()) == rows, "power_iteration: u size mismatch");
    CMapR wm(weight.data.data(), rows, cols);
    const Eigen::VectorXd v = normalized(wm.transpose() * CVecMap(u.data.data(), rows));
    VecMap(u.data.data(), rows) = normalized(wm * v);
}

Var spectral_normalize(const Var& weight, const Tensor& u) {
    const int rows = weight->value.dim(0);
    const int cols = static_cast<int>(weight->value.numel() / rows);
    require(static_cast<int>(u.numel()) == rows, "spectral_normalize: u size mismatch");
    CMapR wm(weight->value.data.data(), rows, cols);
    const Eigen::VectorXd uv = CVecMap(u.data.data(), rows);
    const Eigen::VectorXd v = normalized(wm.transpose() * uv);
    const double sigma = std::max(uv.dot(wm * v), 1e-12);
    Tensor out(weight->value.shape);
    MapR(out.data.data(), rows, cols) = wm / sigma;
    return make_result(std::move(out), {weight}, [rows, cols, sigma, uv, v](Node& self) {
        // d(W/sigma) with sigma = u^T W v and u, v held constant.
        CMapR gy(self.grad.data.data(), rows, cols);
        CMapR wn(self.value.data.data(), rows, cols);
        double inner = 0.0;
        for (int i = 0; i < rows * cols; ++i) inner += self.grad.data[i] * self.value.data[i];
        MapR(self.parents[0]->grad_buffer().data.data(), rows, cols) += gy / sigma - (inner / sigma) * uv * v.transpose();
    });
}

// ------------------------------------------------------------------- reshaping

Var reshape(const Var& x, Shape shape) {
    if (shape_numel(shape) != x->value.numel()) {
        throw std::invalid_argument("reshape: " + shape_string(x->value.shape) + " -> " + shape_string(shape));
    }
    Tensor out(std::move(shape), x->value.data);
    return make_result(std::move(out), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    });
}

Var slice_cols(const Var& x, int start, int len) {
    require(x->value.rank() == 2, "slice_cols: expects [N,D]");
    const int n = x->value.dim(0), d = x->value.dim(1);
    require(start >= 0 && len >= 0 && start + len <= d, "slice_cols: range out of bounds");
    Tensor out({n, len});
    for (int r = 0; r < n; ++r) {
        std::copy_n(x->value.data.begin() + r * d + start, len, out.data.begin() + r * len);
    }
    return make_result(std::move(out), {x}, [n, d, start, len](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (int r = 0; r < n; ++r) {
            for (int j = 0; j < len; ++j) g[r * d + start + j] += self.grad.data[r * len + j];
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int n = parts[0]->value.dim(0);
    std::vector<int> widths;
    int total = 0;
    for (const auto& p : parts) {
        require(p->value.rank() == 2 && p->value.dim(0) == n, "concat_cols: row count mismatch");
        widths.push_back(p->value.dim(1));
        total += widths.back();
    }
    Tensor out({n, total});
    int offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        for (int r = 0; r < n; ++r) {
            std::copy_n(parts[i]->value.data.begin() + r * widths[i], widths[i],
                        out.data.begin() + r * total + offset);
        }
        offset += widths[i];
    }
    return make_result(std::move(out), parts, [n, total, widths](Node& self) {
        int offset = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (wants(self, i)) {
                auto& g = self.parents[i]->grad_buffer().data;
                for (int r = 0; r < n; ++r) {
                    for (int j = 0; j < widths[i]; ++j) g[r * widths[i] + j] += self.grad.data[r * total + offset + j];
                }
            }
            offset += widths[i];
        }
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const auto& s0 = parts[0]->value.shape;
    require(s0.size() == 4, "concat_channels: expects [N,C,H,W]");
    const int n = s0[0];
    const int plane = s0[2] * s0[3];
    std::vector<int> chans;
    int total = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape;
        if (s.size() != 4 || s[0] != n || s[2] != s0[2] || s[3] != s0[3]) {
            throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(s0) + " and " +
                                        shape_string(s));
        }
        chans.push_back(s[1]);
        total += s[1];
    }
    Tensor out({n, total, s0[2], s0[3]});
    for (int b = 0; b < n; ++b) {
        int offset = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const std::size_t len = static_cast<std::size_t>(chans[i]) * plane;
            std::copy_n(parts[i]->value.data.begin() + b * len, len,
                        out.data.begin() + (static_cast<std::size_t>(b) * total + offset) * plane);
            offset += chans[i];
        }
    }
    return make_result(std::move(out), parts, [n, plane, total, chans](Node& self) {
        for (int b = 0; b < n; ++b) {
            int offset = 0;
            for (std::size_t i = 0; i < chans.size(); ++i) {
                const std::size_t len = static_cast<std::size_t>(chans[i]) * plane;
                if (wants(self, i)) {
                    double* dst = self.parents[i]->grad_buffer().data.data() + b * len;
                    const double* src = self.grad.data.data() + (static_cast<std::size_t>(b) * total + offset) * plane;
                    for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
                }
                offset += chans[i];
            }
        }
    });
}

Var broadcast_spatial(const Var& x, int height, int width) {
    require(x->value.rank() == 2, "broadcast_spatial: expects [N,D]");
    const int n = x->value.dim(0), d = x->value.dim(1);
    const int plane = height * width;
    Tensor out({n, d, height, width});
    for (int i = 0; i < n * d; ++i) {
        std::fill_n(out.data.begin() + static_cast<std::size_t>(i) * plane, plane, x->value.data[i]);
    }
    return make_result(std::move(out), {x}, [n, d, plane](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (int i = 0; i < n * d; ++i) {
            const double* p = self.grad.data.data() + static_cast<std::size_t>(i) * plane;
            double s = 0.0;
            for (int j = 0; j < plane; ++j) s += p[j];
            g[i] += s;
        }
    });
}

Var select_rows(const Var& x, const std::vector<int>& rows) {
    require(x->value.rank() >= 1, "select_rows: scalar input");
    const int n = x->value.dim(0);
    const std::size_t row = x->value.numel() / std::max(n, 1);
    Shape shape = x->value.shape;
    shape[0] = static_cast<int>(rows.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < n, "select_rows: index out of range");
        std::copy_n(x->value.data.begin() + rows[i] * row, row, out.data.begin() + i * row);
    }
    return make_result(std::move(out), {x}, [rows, row](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < row; ++j) g[rows[i] * row + j] += self.grad.data[i * row + j];
        }
    });
}

Var blend_rows(const std::vector<double>& mask, const Var& a, const Var& b) {
    require_same_shape(a, b, "blend_rows");
    const int n = a->value.dim(0);
    require(static_cast<int>(mask.size()) == n, "blend_rows: mask length mismatch");
    const std::size_t row = a->value.numel() / std::max(n, 1);
    Tensor out(a->value.shape);
    for (int r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < row; ++j) {
            const std::size_t i = r * row + j;
            out.data[i] = mask[r] * a->value.data[i] + (1.0 - mask[r]) * b->value.data[i];
        }
    }
    return make_result(std::move(out), {a, b}, [mask, row](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!wants(self, p)) continue;
            auto& g = self.parents[p]->grad_buffer().data;
            for (std::size_t r = 0; r < mask.size(); ++r) {
                const double m = p == 0 ? mask[r] : 1.0 - mask[r];
                if (m == 0.0) continue;
                for (std::size_t j = 0; j < row; ++j) g[r * row + j] += m * self.grad.data[r * row + j];
            }
        }
    });
}

// ------------------------------------------------------------------ reductions

Var l1_per_example(const Var& pred, const Tensor& target) {
    if (pred->value.shape != target.shape) {
        throw std::invalid_argument("l1_per_example: shape mismatch " + shape_string(pred->value.shape) + " vs " +
                                    shape_string(target.shape));
    }
    const int n = pred->value.dim(0);
    const std::size_t row = pred->value.numel() / std::max(n, 1);
    Tensor out({n});
    std::vector<double> sign(pred->value.numel());
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < row; ++j) {
            const std::size_t i = r * row + j;
            const double d = pred->value.data[i] - target.data[i];
            s += std::abs(d);
            sign[i] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        }
        out.data[r] = s / static_cast<double>(row);
    }
    return make_result(std::move(out), {pred}, [row, sign = std::move(sign)](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad.data[i / row] * sign[i] / static_cast<double>(row);
        }
    });
}

Var bce_logits_per_example(const Var& logits, const Tensor& target) {
    if (logits->value.shape != target.shape) {
        throw std::invalid_argument("bce_logits_per_example: shape mismatch " + shape_string(logits->value.shape) +
                                    " vs " + shape_string(target.shape));
    }
    const int n = logits->value.dim(0);
    const std::size_t row = logits->value.numel() / std::max(n, 1);
    Tensor out({n});
    std::vector<double> residual(logits->value.numel());
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < row; ++j) {
            const std::size_t i = r * row + j;
            const double z = logits->value.data[i], t = target.data[i];
            // softplus(z) - t z, written to stay finite for large |z|
            s += std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
            const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            residual[i] = p - t;
        }
        out.data[r] = s / static_cast<double>(row);
    }
    return make_result(std::move(out), {logits}, [row, residual = std::move(residual)](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad.data[i / row] * residual[i] / static_cast<double>(row);
        }
    });
}

Var kl_diag_gaussian(const Var& mu_q, const Var& logvar_q, const Var& mu_p, const Var& logvar_p) {
    require_same_shape(mu_q, logvar_q, "kl_diag_gaussian");
    require_same_shape(mu_q, mu_p, "kl_diag_gaussian");
    require_same_shape(mu_q, logvar_p, "kl_diag_gaussian");
    require(mu_q->value.rank() == 2, "kl_diag_gaussian: expects [N,Z]");
    const int n = mu_q->value.dim(0), z = mu_q->value.dim(1);
    Tensor out({n});
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int j = 0; j < z; ++j) {
            const int i = r * z + j;
            const double lq = logvar_q->value.data[i], lp = logvar_p->value.data[i];
            const double dm = mu_q->value.data[i] - mu_p->value.data[i];
            s += 0.5 * (lp - lq) + (std::exp(lq) + dm * dm) / (2.0 * std::exp(lp)) - 0.5;
        }
        out.data[r] = s;
    }
    return make_result(std::move(out), {mu_q, logvar_q, mu_p, logvar_p}, [n, z](Node& self) {
        const auto& mq = self.parents[0]->value.data;
        const auto& lq = self.parents[1]->value.data;
        const auto& mp = self.parents[2]->value.data;
        const auto& lp = self.parents[3]->value.data;
        for (int r = 0; r < n; ++r) {
            const double gr = self.grad.data[r];
            for (int j = 0; j < z; ++j) {
                const int i = r * z + j;
                const double inv_vp = std::exp(-lp[i]);
                const double dm = mq[i] - mp[i];
                if (wants(self, 0)) self.parents[0]->grad_buffer().data[i] += gr * dm * inv_vp;
                if (wants(self, 1)) self.parents[1]->grad_buffer().data[i] += gr * 0.5 * (std::exp(lq[i]) * inv_vp - 1.0);
                if (wants(self, 2)) self.parents[2]->grad_buffer().data[i] -= gr * dm * inv_vp;
                if (wants(self, 3)) {
                    self.parents[3]->grad_buffer().data[i] +=
                        gr * 0.5 * (1.0 - (std::exp(lq[i]) + dm * dm) * inv_vp);
                }
            }
        }
    });
}

Var weighted_sum(const Var& v, const std::vector<double>& weights) {
    require(v->value.numel() == weights.size(), "weighted_sum: weight count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * v->value.data[i];
    return make_result(Tensor({1}, {s}), {v}, [weights](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (std::size_t i = 0; i < weights.size(); ++i) g[i] += self.grad.data[0] * weights[i];
    });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (double e : x->value.data) s += e;
    return make_result(Tensor({1}, {s}), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer().data;
        for (double& e : g) e += self.grad.data[0];
    });
}

}  // namespace segvae::nn
