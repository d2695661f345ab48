#include "segvae/evaluation/networks.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "segvae/nn/adam.hpp"
#include "segvae/nn/param_io.hpp"

namespace segvae::evaluation {

namespace {

using nlohmann::json;

constexpr double kSlope = 0.2;
constexpr int kLevels = 4;

void check_resolution(int height, int width) {
    if (height % 16 != 0 || width % 16 != 0 || height <= 0 || width <= 0) {
        throw std::invalid_argument("evaluation networks need a resolution divisible by 16");
    }
}

nn::Tensor batch_tensor(const std::vector<const core::SemanticMap*>& maps) {
    const auto& first = *maps.front();
    nn::Tensor t({static_cast<int>(maps.size()), first.classes(), first.height(), first.width()});
    std::size_t offset = 0;
    for (const auto* m : maps) {
        std::copy(m->values().begin(), m->values().end(), t.data.begin() + offset);
        offset += m->values().size();
    }
    return t;
}

void check_map(const core::SemanticMap& m, int classes, int height, int width) {
    if (m.classes() != classes || m.height() != height || m.width() != width) {
        throw std::invalid_argument("map shape does not match the evaluation network");
    }
}

// Epoch-shuffled index stream.
class Sampler {
public:
    Sampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}
    std::size_t next() {
        if (pos_ >= order_.size()) {
            order_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
            rng_.shuffle(order_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// Aux nets train on cross-entropy over logits: per-pixel L1 through a sigmoid
// collapses sparse masks to all-background. L1 stays the reported error.
nn::Var mean_bce(const nn::Var& logits, const nn::Tensor& target) {
    const nn::Var per = nn::bce_logits_per_example(logits, target);
    const int n = per->value.dim(0);
    return nn::weighted_sum(per, std::vector<double>(n, 1.0 / n));
}

nn::AdamOptions aux_adam(const AuxTrainConfig& c) { return {c.learning_rate, 0.9, 0.999, 1e-8, 0.0}; }

}  // namespace

// ---------------------------------------------------------------- autoencoder

FeatureAutoencoder::FeatureAutoencoder(int classes, int height, int width, int feature_dim, std::uint64_t seed)
    : classes_(classes), height_(height), width_(width), feature_dim_(feature_dim), seed_(seed) {
    check_resolution(height, width);
    if (feature_dim < 1) throw std::invalid_argument("feature dimension must be positive");
    Rng rng(seed);
    const std::vector<int> widths{16, 32, 64, 64};
    int ch = classes;
    for (int i = 0; i < kLevels; ++i) {
        enc_.emplace_back(store_, "encoder/conv" + std::to_string(i), ch, widths[i], 4, 2, 1, false, rng);
        ch = widths[i];
    }
    const int flat = ch * (height >> kLevels) * (width >> kLevels);
    to_feature_ = nn::Linear(store_, "encoder/feature", flat, feature_dim, rng);
    from_feature_ = nn::Linear(store_, "decoder/project", feature_dim, flat, rng);
    const std::vector<int> up{64, 32, 16, classes};
    for (int i = 0; i < kLevels; ++i) {
        dec_.emplace_back(store_, "decoder/deconv" + std::to_string(i), ch, up[i], 4, 2, 1, false, rng);
        ch = up[i];
    }
}

nn::Var FeatureAutoencoder::encode(const nn::Var& x) const {
    nn::Var h = x;
    for (const auto& c : enc_) h = nn::leaky_relu(c(h), kSlope);
    const int n = h->value.dim(0);
    return to_feature_(nn::reshape(h, {n, static_cast<int>(h->value.numel() / n)}));
}

nn::Var FeatureAutoencoder::decode_logits(const nn::Var& f) const {
    const int n = f->value.dim(0);
    nn::Var h = nn::reshape(nn::leaky_relu(from_feature_(f), kSlope),
                            {n, 64, height_ >> kLevels, width_ >> kLevels});
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        h = dec_[i](h);
        if (i + 1 < dec_.size()) h = nn::leaky_relu(h, kSlope);
    }
    return h;
}

nn::Var FeatureAutoencoder::decode(const nn::Var& f) const { return nn::sigmoid(decode_logits(f)); }

std::vector<double> FeatureAutoencoder::raw_features(const core::SemanticMap& map) const {
    check_map(map, classes_, height_, width_);
    nn::NoGradGuard guard;
    return encode(nn::constant(batch_tensor({&map})))->value.data;
}

std::vector<double> FeatureAutoencoder::features(const core::SemanticMap& map) const {
    std::vector<double> f = raw_features(map);
    double norm = 0.0;
    for (double v : f) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& v : f) v /= norm;
    }
    return f;
}

std::vector<double> FeatureAutoencoder::reconstruct(const core::SemanticMap& map) const {
    check_map(map, classes_, height_, width_);
    nn::NoGradGuard guard;
    return decode(encode(nn::constant(batch_tensor({&map}))))->value.data;
}

std::vector<double> FeatureAutoencoder::fit(const data::Dataset& train, const AuxTrainConfig& config) {
    if (train.empty()) throw std::invalid_argument("feature autoencoder: empty training set");
    nn::Adam adam({store_.params().begin(), store_.params().end()}, aux_adam(config));
    Sampler sampler(train.size(), Rng::derive(config.seed, 11).next_u64());
    std::vector<double> losses;
    for (int s = 0; s < config.steps; ++s) {
        std::vector<const core::SemanticMap*> maps;
        for (int b = 0; b < config.batch_size; ++b) maps.push_back(&train[sampler.next()].map);
        const nn::Tensor x = batch_tensor(maps);
        adam.zero_grad();
        const nn::Var loss = mean_bce(decode_logits(encode(nn::constant(x))), x);
        nn::backward(loss);
        adam.step();
        losses.push_back(loss->value.data[0]);
    }
    return losses;
}

void FeatureAutoencoder::save(const std::string& path) const {
    const json header{{"kind", "feature_autoencoder"}, {"classes", classes_},      {"height", height_},
                      {"width", width_},               {"feature_dim", feature_dim_}, {"seed", seed_}};
    nn::write_bytes(path, nn::encode_store(store_, header.dump()));
}

FeatureAutoencoder FeatureAutoencoder::load(const std::string& path) {
    const auto bytes = nn::read_bytes(path);
    const json h = json::parse(nn::peek_header(bytes));
    if (h.at("kind") != "feature_autoencoder") throw std::runtime_error(path + " is not a feature autoencoder");
    FeatureAutoencoder fx(h.at("classes"), h.at("height"), h.at("width"), h.at("feature_dim"),
                          h.at("seed").get<std::uint64_t>());
    nn::decode_into_store(bytes, fx.store_);
    return fx;
}

// ------------------------------------------------------------ shape predictor

std::vector<ShapePair> make_shape_pairs(const std::vector<const core::SemanticMap*>& maps) {
    std::vector<ShapePair> out;
    for (const auto* m : maps) {
        for (int k = 0; k < m->classes(); ++k) {
            if (!m->channel_empty(k)) out.push_back({m, k});
        }
    }
    return out;
}

ShapePredictorNet::ShapePredictorNet(int classes, int height, int width, std::uint64_t seed)
    : classes_(classes), height_(height), width_(width), seed_(seed) {
    check_resolution(height, width);
    Rng rng(seed);
    const std::vector<int> widths{16, 32, 64, 64};
    int ch = 2 * classes;
    for (int i = 0; i < kLevels; ++i) {
        enc_.emplace_back(store_, "encoder/conv" + std::to_string(i), ch, widths[i], 4, 2, 1, false, rng);
        ch = widths[i];
    }
    // Decoder level i upsamples and is then joined with encoder level kLevels - 2 - i.
    dec_.emplace_back(store_, "decoder/deconv0", 64, 64, 4, 2, 1, false, rng);
    dec_.emplace_back(store_, "decoder/deconv1", 64 + 64, 32, 4, 2, 1, false, rng);
    dec_.emplace_back(store_, "decoder/deconv2", 32 + 32, 16, 4, 2, 1, false, rng);
    dec_.emplace_back(store_, "decoder/deconv3", 16 + 16, 1, 4, 2, 1, false, rng);
}

nn::Var ShapePredictorNet::forward_logits(const nn::Var& x) const {
    std::vector<nn::Var> skips;
    nn::Var h = x;
    for (const auto& c : enc_) {
        h = nn::leaky_relu(c(h), kSlope);
        skips.push_back(h);
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        if (i > 0) h = nn::concat_channels({h, skips[kLevels - 1 - i]});
        h = dec_[i](h);
        if (i + 1 < dec_.size()) h = nn::leaky_relu(h, kSlope);
    }
    return h;
}

nn::Var ShapePredictorNet::forward(const nn::Var& x) const { return nn::sigmoid(forward_logits(x)); }

nn::Tensor ShapePredictorNet::inputs(const std::vector<ShapePair>& pairs) const {
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    nn::Tensor x({static_cast<int>(pairs.size()), 2 * classes_, height_, width_});
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        const auto& [map, target] = pairs[b];
        check_map(*map, classes_, height_, width_);
        if (target < 0 || target >= classes_) throw std::invalid_argument("shape predictor: target out of range");
        double* base = x.data.data() + b * 2 * classes_ * plane;
        for (int k = 0; k < classes_; ++k) {
            if (k == target) continue;
            const auto ch = map->channel(k);
            std::copy(ch.begin(), ch.end(), base + k * plane);
        }
        std::fill_n(base + (classes_ + target) * plane, plane, 1.0);
    }
    return x;
}

std::vector<double> ShapePredictorNet::predict(const core::SemanticMap& map, int target) const {
    nn::NoGradGuard guard;
    return forward(nn::constant(inputs({{&map, target}})))->value.data;
}

std::vector<double> ShapePredictorNet::fit(const data::Dataset& train, const AuxTrainConfig& config) {
    std::vector<const core::SemanticMap*> maps;
    for (const auto& ex : train.examples()) maps.push_back(&ex.map);
    const auto pairs = make_shape_pairs(maps);
    if (pairs.empty()) throw std::invalid_argument("shape predictor: no training pairs");
    nn::Adam adam({store_.params().begin(), store_.params().end()}, aux_adam(config));
    Sampler sampler(pairs.size(), Rng::derive(config.seed, 12).next_u64());
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    std::vector<double> losses;
    for (int s = 0; s < config.steps; ++s) {
        std::vector<ShapePair> batch;
        for (int b = 0; b < config.batch_size; ++b) batch.push_back(pairs[sampler.next()]);
        nn::Tensor target({static_cast<int>(batch.size()), 1, height_, width_});
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto ch = batch[b].map->channel(batch[b].target);
            std::copy(ch.begin(), ch.end(), target.data.begin() + b * plane);
        }
        adam.zero_grad();
        const nn::Var loss = mean_bce(forward_logits(nn::constant(inputs(batch))), target);
        nn::backward(loss);
        adam.step();
        losses.push_back(loss->value.data[0]);
    }
    return losses;
}

double ShapePredictorNet::held_out_error(const data::Dataset& set) const {
    std::vector<const core::SemanticMap*> maps;
    for (const auto& ex : set.examples()) maps.push_back(&ex.map);
    const auto pairs = make_shape_pairs(maps);
    if (pairs.empty()) throw std::invalid_argument("shape predictor: no evaluation pairs");
    double total = 0.0;
    for (const auto& [map, target] : pairs) {
        const auto pred = predict(*map, target);
        const auto ch = map->channel(target);
        double err = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) err += std::abs(pred[i] - ch[i]);
        total += err / static_cast<double>(pred.size());
    }
    return total / static_cast<double>(pairs.size());
}

void ShapePredictorNet::save(const std::string& path) const {
    const json header{{"kind", "shape_predictor"}, {"classes", classes_}, {"height", height_},
                      {"width", width_},           {"seed", seed_}};
    nn::write_bytes(path, nn::encode_store(store_, header.dump()));
}

ShapePredictorNet ShapePredictorNet::load(const std::string& path) {
    const auto bytes = nn::read_bytes(path);
    const json h = json::parse(nn::peek_header(bytes));
    if (h.at("kind") != "shape_predictor") throw std::runtime_error(path + " is not a shape predictor");
    ShapePredictorNet sp(h.at("classes"), h.at("height"), h.at("width"), h.at("seed").get<std::uint64_t>());
    nn::decode_into_store(bytes, sp.store_);
    return sp;
}

}  // namespace segvae::evaluation
