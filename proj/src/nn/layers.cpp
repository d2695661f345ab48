#include "segvae/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace segvae::nn {

Var ParamStore::add_param(const std::string& name, Tensor init) {
    if (params_.count(name) || buffers_.count(name)) {
        throw std::logic_error("duplicate parameter name: " + name);
    }
    auto v = leaf(std::move(init));
    params_.emplace(name, v);
    return v;
}

std::shared_ptr<Tensor> ParamStore::add_buffer(const std::string& name, Tensor init) {
    if (params_.count(name) || buffers_.count(name)) {
        throw std::logic_error("duplicate buffer name: " + name);
    }
    auto b = std::make_shared<Tensor>(std::move(init));
    buffers_.emplace(name, b);
    return b;
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_) p->zero_grad();
}

std::size_t ParamStore::param_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p->value.numel();
    return n;
}

Tensor kaiming_uniform(Shape shape, double fan_in, Rng& rng) {
    // Gain for leaky ReLU with slope 0.2.
    const double bound = std::sqrt(6.0 / (1.0 + 0.04) / std::max(fan_in, 1.0));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

namespace {

std::shared_ptr<Tensor> make_u(ParamStore& store, const std::string& path, int rows, Rng& rng) {
    Tensor u({rows});
    double norm = 0.0;
    for (double& v : u.data) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u.data) v /= norm;
    return store.add_buffer(path + "/sn_u", std::move(u));
}

}  // namespace

Linear::Linear(ParamStore& store, const std::string& path, int in, int out, Rng& rng) : out_(out) {
    weight_ = store.add_param(path + "/weight", kaiming_uniform({out, in}, in, rng));
    bias_ = store.add_param(path + "/bias", Tensor::zeros({out}));
}

Var Linear::operator()(const Var& x) const { return linear(x, weight_, bias_); }

Conv2d::Conv2d(ParamStore& store, const std::string& path, int in, int out, int kernel, int stride, int pad,
               bool spectral, Rng& rng)
    : stride_(stride), pad_(pad) {
    weight_ = store.add_param(path + "/weight", kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng));
    bias_ = store.add_param(path + "/bias", Tensor::zeros({out}));
    if (spectral) {
        u_ = make_u(store, path, out, rng);
        power_iteration(weight_->value, *u_);
    }
}

Var Conv2d::operator()(const Var& x) const {
    const Var w = u_ ? spectral_normalize(weight_, *u_) : weight_;
    return conv2d(x, w, bias_, stride_, pad_);
}

void Conv2d::refresh_spectral() {
    if (u_) power_iteration(weight_->value, *u_);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& path, int in, int out, int kernel,
                                 int stride, int pad, bool spectral, Rng& rng)
    : stride_(stride), pad_(pad) {
    const double fan_in = static_cast<double>(in) * kernel * kernel / (stride * stride);
    weight_ = store.add_param(path + "/weight", kaiming_uniform({in, out, kernel, kernel}, fan_in, rng));
    bias_ = store.add_param(path + "/bias", Tensor::zeros({out}));
    if (spectral) {
        u_ = make_u(store, path, in, rng);
        power_iteration(weight_->value, *u_);
    }
}

Var ConvTranspose2d::operator()(const Var& x) const {
    const Var w = u_ ? spectral_normalize(weight_, *u_) : weight_;
    return conv_transpose2d(x, w, bias_, stride_, pad_);
}

void ConvTranspose2d::refresh_spectral() {
    if (u_) power_iteration(weight_->value, *u_);
}

LSTMCell::LSTMCell(ParamStore& store, const std::string& path, int input, int hidden, Rng& rng)
    : input_(store, path + "/input", input, 4 * hidden, rng),
      recurrent_(store, path + "/recurrent", hidden, 4 * hidden, rng),
      hidden_(hidden) {
    // Forget-gate bias starts at 1.
    auto& bias = store.params().at(path + "/input/bias")->value;
    for (int j = hidden; j < 2 * hidden; ++j) bias.data[j] = 1.0;
}

std::pair<Var, Var> LSTMCell::operator()(const Var& x, const Var& h, const Var& c) const {
    const Var gates = add(input_(x), recurrent_(h));
    const Var i = sigmoid(slice_cols(gates, 0, hidden_));
    const Var f = sigmoid(slice_cols(gates, hidden_, hidden_));
    const Var g = tanh(slice_cols(gates, 2 * hidden_, hidden_));
    const Var o = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
    const Var c_next = add(mul(f, c), mul(i, g));
    const Var h_next = mul(o, tanh(c_next));
    return {h_next, c_next};
}

}  // namespace segvae::nn
