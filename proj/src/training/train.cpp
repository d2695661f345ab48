#include "segvae/training/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "segvae/model/checkpoint.hpp"

namespace segvae::training {

std::string to_string(OrderMode mode) {
    return mode == OrderMode::fixed ? "fixed" : "random_per_example";
}

OrderMode parse_order_mode(const std::string& name) {
    if (name == "fixed") return OrderMode::fixed;
    if (name == "random_per_example" || name == "random") return OrderMode::random_per_example;
    throw std::invalid_argument("unknown order mode: " + name + " (expected fixed or random_per_example)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must lie in (0, 1)");
    if (!(lambda_recon >= 0.0) || !(lambda_kl >= 0.0)) fail("loss weights must be nonnegative");
    if (max_steps < 0) fail("max_steps must be nonnegative");
    if (eval_every < 0) fail("eval_every must be nonnegative");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be nonnegative");
}

std::string format_metric(const MetricRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld, %.9g, %.9g, %.9g", static_cast<long long>(r.step), r.recon, r.kl,
                  r.total);
    return buf;
}

Trainer::Trainer(model::SegVae& net, const data::Dataset& dataset, TrainConfig config)
    : net_(net),
      dataset_(dataset),
      config_(std::move(config)),
      adam_(net.trainable_parameters(),
            nn::AdamOptions{config_.learning_rate, config_.beta1, config_.beta2, 1e-8, config_.clip_norm}),
      sampler_(Rng::derive(config_.seed, 1)),
      noise_(Rng::derive(config_.seed, 2)) {
    config_.validate();
    if (dataset_.empty()) throw std::invalid_argument("train: dataset is empty");
    if (!(dataset_.catalog() == net_.config().catalog)) {
        throw std::invalid_argument("train: dataset catalog does not match the model catalog");
    }
    if (dataset_.resolution().height != net_.config().height || dataset_.resolution().width != net_.config().width) {
        throw std::invalid_argument("train: dataset resolution does not match the model resolution");
    }
}

std::vector<std::size_t> Trainer::next_batch() {
    const std::size_t n = dataset_.size();
    const std::size_t size = std::min<std::size_t>(config_.batch_size, n);
    std::vector<std::size_t> batch;
    batch.reserve(size);
    while (batch.size() < size) {
        if (cursor_ >= epoch_.size()) {
            epoch_.resize(n);
            for (std::size_t i = 0; i < n; ++i) epoch_[i] = i;
            sampler_.shuffle(epoch_);
            cursor_ = 0;
        }
        batch.push_back(epoch_[cursor_++]);
    }
    return batch;
}

MetricRecord Trainer::step() {
    const auto indices = next_batch();
    const int classes = net_.config().catalog.size();
    std::vector<core::GenerationOrder> orders;
    if (config_.order_mode == OrderMode::random_per_example) {
        orders.reserve(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::vector<int> seq(classes);
            for (int k = 0; k < classes; ++k) seq[k] = k;
            sampler_.shuffle(seq);
            orders.emplace_back(std::move(seq));
        }
    }
    std::vector<model::TrainingExample> batch;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& ex = dataset_[indices[i]];
        batch.push_back({&ex.map, &ex.labels, orders.empty() ? nullptr : &orders[i]});
    }

    adam_.zero_grad();
    const model::LossWeights weights{config_.lambda_recon, config_.lambda_kl};
    const auto result = model::training_forward(net_, batch, weights, noise_);

    MetricRecord rec;
    rec.step = steps_ + 1;
    for (const auto& b : result.examples) {
        rec.recon += b.recon;
        rec.kl += b.kl;
        rec.mean_step_recon += b.mean_step_recon();
    }
    const double n = static_cast<double>(result.examples.size());
    rec.recon /= n;
    rec.kl /= n;
    rec.mean_step_recon /= n;
    rec.total = result.total->value.data[0];
    if (!std::isfinite(rec.recon)) {
        throw TrainingDiverged("non-finite reconstruction loss at step " + std::to_string(rec.step));
    }
    if (!std::isfinite(rec.kl)) {
        throw TrainingDiverged("non-finite KL loss at step " + std::to_string(rec.step));
    }
    if (!std::isfinite(rec.total)) {
        throw TrainingDiverged("non-finite total loss at step " + std::to_string(rec.step));
    }

    nn::backward(result.total);
    for (const auto& [name, p] : net_.trainable_parameters()) {
        for (double g : p->grad.data) {
            if (!std::isfinite(g)) {
                throw TrainingDiverged("non-finite gradient for " + name + " at step " + std::to_string(rec.step));
            }
        }
    }
    adam_.step();
    net_.refresh_spectral();
    ++steps_;
    return rec;
}

TrainResult train(const data::Dataset& dataset, const model::ModelConfig& model_config,
                  const TrainConfig& train_config, const TrainOptions& options) {
    train_config.validate();
    TrainResult out;
    out.model = std::make_unique<model::SegVae>(model_config, train_config.seed);
    Trainer trainer(*out.model, dataset, train_config);

    const auto save = [&](const std::string& name) {
        if (options.checkpoint_dir.empty()) return;
        std::filesystem::create_directories(options.checkpoint_dir);
        const std::string path = (std::filesystem::path(options.checkpoint_dir) / name).string();
        model::save_checkpoint(path, model::capture(*out.model, trainer.steps_done(), trainer.rng_state()));
        out.checkpoints.push_back(path);
    };

    for (std::int64_t s = 0; s < train_config.max_steps; ++s) {
        const MetricRecord rec = trainer.step();
        out.metrics.push_back(rec);
        if (options.log) *options.log << format_metric(rec) << '\n';
        if (options.on_step) options.on_step(rec);
        if (train_config.eval_every > 0 && rec.step % train_config.eval_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(rec.step));
            save(name);
        }
    }
    save("final.ckpt");
    return out;
}

}  // namespace segvae::training
