#pragma once

#include <string>
#include <utility>
#include <vector>

#include "segvae/nn/autograd.hpp"

namespace segvae::nn {

struct AdamOptions {
    double learning_rate = 5e-5;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

class Adam {
public:
    Adam(std::vector<std::pair<std::string, Var>> params, AdamOptions options);

    // Applies one update from the accumulated leaf gradients. Parameters
    // without a gradient this step are left untouched.
    void step();
    void zero_grad();

    long steps() const { return steps_; }
    const AdamOptions& options() const { return options_; }

private:
    struct Slot {
        std::string name;
        Var param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamOptions options_;
    long steps_ = 0;
};

}  // namespace segvae::nn
