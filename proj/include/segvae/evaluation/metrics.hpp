#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segvae/core/types.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/evaluation/networks.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::evaluation {

// Mean with a 95% normal-approximation half-width, 1.96 * sd / sqrt(n).
struct Estimate {
    double mean = 0.0;
    double ci95 = 0.0;
    std::size_t n = 0;
};

Estimate estimate(const std::vector<double>& samples);

inline constexpr double kFrechetEpsilon = 1e-6;

class FrechetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)) with Sa, Sb the unbiased
// sample covariances plus eps * I. Each set needs at least dim + 1 vectors.
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                        double eps = kFrechetEpsilon);

// Euclidean distance between the unit-normalized features of two maps.
double feature_distance(const core::SemanticMap& a, const core::SemanticMap& b, const FeatureExtractor& fx);

// Draws a map for a label-set; all randomness comes from the Rng argument.
using MapGenerator = std::function<core::SemanticMap(const core::LabelSet&, Rng&)>;

inline constexpr int kDefaultDiversityPairs = 3000;

Estimate diversity(const MapGenerator& generator, const std::vector<core::LabelSet>& label_sets, int n_pairs,
                   const FeatureExtractor& fx, Rng& rng);

struct CompatResult {
    Estimate error;            // mean per-pixel L1 over (map, present class)
    std::size_t skipped = 0;   // maps with fewer than two present classes
    std::vector<double> per_map;  // mean over the map's classes; NaN when skipped
};

CompatResult compatibility_error(const std::vector<core::SemanticMap>& maps, const ShapePredictor& sp);

// Mean per-pixel L1 between a map and its autoencoder reconstruction.
double reconstruction_l1(const core::SemanticMap& map, const FeatureExtractor& fx);
Estimate reconstruction_error(const std::vector<core::SemanticMap>& maps, const FeatureExtractor& fx);

struct EvalConfig {
    int diversity_pairs = kDefaultDiversityPairs;
    std::uint64_t seed = 0;
};

struct GroupRow {
    std::string name;        // "length=3" or an order name
    std::size_t count = 0;
    std::optional<double> fid;  // absent when either side has fewer than dim + 1 maps
    Estimate compat;
    Estimate recon;
};

struct ExampleRecord {
    std::size_t index = 0;
    std::vector<std::string> labels;
    double compat_error = 0.0;  // NaN when skipped
    double recon_error = 0.0;
};

struct MetricReport {
    std::optional<double> fid;
    Estimate diversity;
    Estimate compat;
    std::size_t compat_skipped = 0;
    Estimate recon;
    std::vector<GroupRow> by_length;
    std::vector<GroupRow> by_order;
    std::vector<ExampleRecord> examples;
};

// Generates one map per test example's label-set, then scores fid, diversity,
// compatibility and reconstruction overall and per label-set length.
MetricReport evaluate(const MapGenerator& generator, const data::Dataset& test, const FeatureExtractor& fx,
                      const ShapePredictor& sp, const EvalConfig& config);

struct NamedGenerator {
    std::string name;
    MapGenerator generator;
};

// One row per generator (e.g. the same model under different orders).
std::vector<GroupRow> evaluate_orders(const std::vector<NamedGenerator>& generators, const data::Dataset& test,
                                      const FeatureExtractor& fx, const ShapePredictor& sp,
                                      const EvalConfig& config);

// Fréchet distance between the features of two map collections, or nullopt
// when either has too few maps.
std::optional<double> map_frechet(const std::vector<core::SemanticMap>& a, const std::vector<core::SemanticMap>& b,
                                  const FeatureExtractor& fx);

std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);

}  // namespace segvae::evaluation
