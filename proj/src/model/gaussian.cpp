#include "segvae/model/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace segvae::model {

DiagonalGaussian DiagonalGaussian::standard(int dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

void DiagonalGaussian::validate() const {
    if (mean.size() != log_var.size()) {
        throw std::invalid_argument("gaussian: mean has " + std::to_string(mean.size()) + " entries, log_var " +
                                    std::to_string(log_var.size()));
    }
    for (double v : log_var) {
        if (!std::isfinite(v)) throw std::invalid_argument("gaussian: non-finite log-variance");
    }
}

double kl_diag_gaussian(const DiagonalGaussian& q, const DiagonalGaussian& p) {
    q.validate();
    p.validate();
    if (q.dim() != p.dim()) {
        throw std::invalid_argument("kl_diag_gaussian: dimension mismatch " + std::to_string(q.dim()) + " vs " +
                                    std::to_string(p.dim()));
    }
    double kl = 0.0;
    for (int i = 0; i < q.dim(); ++i) {
        const double dm = q.mean[i] - p.mean[i];
        kl += 0.5 * (p.log_var[i] - q.log_var[i]) + (std::exp(q.log_var[i]) + dm * dm) / (2.0 * std::exp(p.log_var[i])) -
              0.5;
    }
    // Rounding can leave a tiny negative residue for q == p.
    return std::max(kl, 0.0);
}

std::vector<double> sample_gaussian(const DiagonalGaussian& g, Rng& rng) {
    g.validate();
    std::vector<double> z(g.dim());
    for (int i = 0; i < g.dim(); ++i) {
        const double lv = std::clamp(g.log_var[i], kLogVarMin, kLogVarMax);
        z[i] = g.mean[i] + std::exp(0.5 * lv) * rng.normal();
    }
    return z;
}

double recon_loss(std::span<const double> soft_mask, std::span<const float> gt_mask) {
    if (soft_mask.size() != gt_mask.size()) {
        throw std::invalid_argument("recon_loss: shape mismatch (" + std::to_string(soft_mask.size()) + " vs " +
                                    std::to_string(gt_mask.size()) + " pixels)");
    }
    if (soft_mask.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < soft_mask.size(); ++i) s += std::abs(soft_mask[i] - gt_mask[i]);
    return s / static_cast<double>(soft_mask.size());
}

}  // namespace segvae::model
