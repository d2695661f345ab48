#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "segvae/data/dataset.hpp"
#include "segvae/model/config.hpp"
#include "segvae/model/forward.hpp"
#include "segvae/model/networks.hpp"
#include "segvae/nn/adam.hpp"

namespace segvae::training {

enum class OrderMode { fixed, random_per_example };

std::string to_string(OrderMode mode);
OrderMode parse_order_mode(const std::string& name);

struct TrainConfig {
    double learning_rate = 5e-5;
    int batch_size = 24;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lambda_recon = 1.0;
    double lambda_kl = 1e-4;
    std::int64_t max_steps = 10000;
    std::uint64_t seed = 0;
    OrderMode order_mode = OrderMode::fixed;
    std::int64_t eval_every = 1000;  // checkpoint period; 0 disables periodic checkpoints
    double clip_norm = 0.0;          // 0 disables gradient clipping

    void validate() const;  // throws std::invalid_argument
};

struct MetricRecord {
    std::int64_t step = 0;
    double recon = 0.0;            // batch mean of per-example summed L1
    double kl = 0.0;               // batch mean of per-example summed KL
    double total = 0.0;            // lambda-weighted
    double mean_step_recon = 0.0;  // batch mean of per-step L1
};

// "step, recon, kl, total"
std::string format_metric(const MetricRecord& record);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Minibatch Adam on the weighted reconstruction + KL objective. Owns the
// batch sampler and noise streams; the network is borrowed.
class Trainer {
public:
    Trainer(model::SegVae& net, const data::Dataset& dataset, TrainConfig config);

    MetricRecord step();
    std::int64_t steps_done() const { return steps_; }
    const TrainConfig& config() const { return config_; }
    std::string rng_state() const { return sampler_.save_state(); }

private:
    std::vector<std::size_t> next_batch();

    model::SegVae& net_;
    const data::Dataset& dataset_;
    TrainConfig config_;
    nn::Adam adam_;
    Rng sampler_;
    Rng noise_;
    std::vector<std::size_t> epoch_;
    std::size_t cursor_ = 0;
    std::int64_t steps_ = 0;
};

struct TrainOptions {
    std::string checkpoint_dir;  // empty: no files written
    std::ostream* log = nullptr;  // receives one metric line per step
    std::function<void(const MetricRecord&)> on_step;
};

struct TrainResult {
    std::unique_ptr<model::SegVae> model;
    std::vector<MetricRecord> metrics;
    std::vector<std::string> checkpoints;
};

TrainResult train(const data::Dataset& dataset, const model::ModelConfig& model_config,
                  const TrainConfig& train_config, const TrainOptions& options = {});

}  // namespace segvae::training
