#pragma once

#include <span>
#include <vector>

#include "segvae/util/rng.hpp"

namespace segvae::model {

inline constexpr double kLogVarMin = -14.0;
inline constexpr double kLogVarMax = 14.0;

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> log_var;

    static DiagonalGaussian standard(int dim);
    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;  // equal lengths, finite log-variance
    bool operator==(const DiagonalGaussian&) const = default;
};

// KL(q || p) for diagonal Gaussians, summed over dimensions.
double kl_diag_gaussian(const DiagonalGaussian& q, const DiagonalGaussian& p);

// mean + exp(log_var / 2) * eps, eps ~ N(0, I); log_var clamped to the legal range.
std::vector<double> sample_gaussian(const DiagonalGaussian& g, Rng& rng);

// Mean absolute difference over pixels.
double recon_loss(std::span<const double> soft_mask, std::span<const float> gt_mask);

}  // namespace segvae::model
