#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>

#include "segvae/nn/autograd.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::nn {

// Named parameters and buffers of one network, keyed by module path
// ("prior/lstm/input/weight"). Iteration order is the sorted key order.
class ParamStore {
public:
    Var add_param(const std::string& name, Tensor init);
    std::shared_ptr<Tensor> add_buffer(const std::string& name, Tensor init);

    const std::map<std::string, Var>& params() const { return params_; }
    const std::map<std::string, std::shared_ptr<Tensor>>& buffers() const { return buffers_; }

    void zero_grad();
    std::size_t param_count() const;

private:
    std::map<std::string, Var> params_;
    std::map<std::string, std::shared_ptr<Tensor>> buffers_;
};

Tensor kaiming_uniform(Shape shape, double fan_in, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& path, int in, int out, Rng& rng);
    Var operator()(const Var& x) const;
    int out_features() const { return out_; }

private:
    Var weight_, bias_;
    int out_ = 0;
};

// Convolution with optional spectral normalization of the weight. The power
// iteration vector is a buffer updated only by `refresh_spectral`.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& path, int in, int out, int kernel, int stride, int pad,
           bool spectral, Rng& rng);
    Var operator()(const Var& x) const;
    void refresh_spectral();

private:
    Var weight_, bias_;
    std::shared_ptr<Tensor> u_;
    int stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& store, const std::string& path, int in, int out, int kernel, int stride, int pad,
                    bool spectral, Rng& rng);
    Var operator()(const Var& x) const;
    void refresh_spectral();

private:
    Var weight_, bias_;
    std::shared_ptr<Tensor> u_;
    int stride_ = 1, pad_ = 0;
};

class LSTMCell {
public:
    LSTMCell() = default;
    LSTMCell(ParamStore& store, const std::string& path, int input, int hidden, Rng& rng);
    // Returns (h', c').
    std::pair<Var, Var> operator()(const Var& x, const Var& h, const Var& c) const;
    int hidden_size() const { return hidden_; }

private:
    Linear input_, recurrent_;
    int hidden_ = 0;
};

}  // namespace segvae::nn
