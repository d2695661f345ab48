#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segvae/core/types.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/nn/layers.hpp"

namespace segvae::evaluation {

// Maps a semantic map to a feature vector and back.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual int feature_dim() const = 0;
    // Unit-normalized features.
    virtual std::vector<double> features(const core::SemanticMap& map) const = 0;
    // Soft reconstruction, C*H*W values in channel-major order.
    virtual std::vector<double> reconstruct(const core::SemanticMap& map) const = 0;
};

// Predicts the mask of `target` from the other channels of `map` (the target
// channel itself is ignored). Returns H*W soft values.
class ShapePredictor {
public:
    virtual ~ShapePredictor() = default;
    virtual std::vector<double> predict(const core::SemanticMap& map, int target) const = 0;
};

struct AuxTrainConfig {
    int steps = 1500;
    int batch_size = 16;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

// Convolutional autoencoder; the feature is the bottleneck vector.
class FeatureAutoencoder final : public FeatureExtractor {
public:
    FeatureAutoencoder(int classes, int height, int width, int feature_dim, std::uint64_t seed);

    int feature_dim() const override { return feature_dim_; }
    std::vector<double> features(const core::SemanticMap& map) const override;
    std::vector<double> reconstruct(const core::SemanticMap& map) const override;
    std::vector<double> raw_features(const core::SemanticMap& map) const;

    // Trains with per-pixel cross-entropy; returns the per-step mean loss.
    std::vector<double> fit(const data::Dataset& train, const AuxTrainConfig& config);

    void save(const std::string& path) const;
    static FeatureAutoencoder load(const std::string& path);

    nn::ParamStore& store() { return store_; }

private:
    nn::Var encode(const nn::Var& x) const;
    nn::Var decode(const nn::Var& f) const;
    nn::Var decode_logits(const nn::Var& f) const;

    int classes_, height_, width_, feature_dim_;
    std::uint64_t seed_;
    nn::ParamStore store_;
    std::vector<nn::Conv2d> enc_;
    nn::Linear to_feature_, from_feature_;
    std::vector<nn::ConvTranspose2d> dec_;
};

// Leave-one-class-out training pair.
struct ShapePair {
    const core::SemanticMap* map;
    int target;
};

// One pair per present class of each map.
std::vector<ShapePair> make_shape_pairs(const std::vector<const core::SemanticMap*>& maps);

// Encoder-decoder with skip connections over (other channels, target one-hot planes).
class ShapePredictorNet final : public ShapePredictor {
public:
    ShapePredictorNet(int classes, int height, int width, std::uint64_t seed);

    std::vector<double> predict(const core::SemanticMap& map, int target) const override;

    std::vector<double> fit(const data::Dataset& train, const AuxTrainConfig& config);
    // Mean per-pixel L1 over all leave-one-out pairs of `set`.
    double held_out_error(const data::Dataset& set) const;

    void save(const std::string& path) const;
    static ShapePredictorNet load(const std::string& path);

private:
    nn::Var forward(const nn::Var& x) const;
    nn::Var forward_logits(const nn::Var& x) const;
    nn::Tensor inputs(const std::vector<ShapePair>& pairs) const;

    int classes_, height_, width_;
    std::uint64_t seed_;
    nn::ParamStore store_;
    std::vector<nn::Conv2d> enc_;
    std::vector<nn::ConvTranspose2d> dec_;
};

}  // namespace segvae::evaluation
