#include "segvae/nn/adam.hpp"

#include <cmath>

namespace segvae::nn {

Adam::Adam(std::vector<std::pair<std::string, Var>> params, AdamOptions options) : options_(options) {
    for (auto& [name, p] : params) {
        slots_.push_back({name, p, std::vector<double>(p->value.numel(), 0.0),
                          std::vector<double>(p->value.numel(), 0.0)});
    }
}

void Adam::step() {
    ++steps_;
    double clip = 1.0;
    if (options_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& s : slots_) {
            for (double g : s.param->grad.data) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > options_.clip_norm) clip = options_.clip_norm / norm;
    }
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double step_size = options_.learning_rate / correction1;
    for (auto& s : slots_) {
        const auto& g = s.param->grad.data;
        if (g.empty()) continue;
        auto& w = s.param->value.data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
            s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
            w[i] -= step_size * s.m[i] / (std::sqrt(s.v[i] / correction2) + options_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
}

}  // namespace segvae::nn
