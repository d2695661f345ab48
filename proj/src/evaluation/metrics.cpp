#include "segvae/evaluation/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "segvae/core/ops.hpp"

namespace segvae::evaluation {

namespace {

using nlohmann::json;

constexpr double kZ95 = 1.96;

Eigen::MatrixXd stack(const std::vector<std::vector<double>>& rows, const char* which) {
    const std::size_t dim = rows.front().size();
    Eigen::MatrixXd m(rows.size(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) {
            throw std::invalid_argument(std::string("frechet_distance: ragged feature set ") + which);
        }
        for (std::size_t j = 0; j < dim; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"ci95", e.ci95}, {"n", e.n}}; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json row_json(const GroupRow& r) {
    return {{"name", r.name},
            {"count", r.count},
            {"fid", optional_json(r.fid)},
            {"compat_error", estimate_json(r.compat)},
            {"recon_error", estimate_json(r.recon)}};
}

std::vector<double> finite_only(const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v) {
        if (std::isfinite(x)) out.push_back(x);
    }
    return out;
}

}  // namespace

Estimate estimate(const std::vector<double>& samples) {
    Estimate e;
    e.n = samples.size();
    if (samples.empty()) return e;
    double sum = 0.0;
    for (double s : samples) sum += s;
    e.mean = sum / static_cast<double>(e.n);
    if (e.n > 1) {
        double ss = 0.0;
        for (double s : samples) ss += (s - e.mean) * (s - e.mean);
        const double sd = std::sqrt(ss / static_cast<double>(e.n - 1));
        e.ci95 = kZ95 * sd / std::sqrt(static_cast<double>(e.n));
    }
    return e;
}

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                        double eps) {
    if (a.empty() || b.empty()) throw std::invalid_argument("frechet_distance: empty feature set");
    const std::size_t dim = a.front().size();
    if (dim == 0 || b.front().size() != dim) throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (a.size() < dim + 1 || b.size() < dim + 1) {
        throw std::invalid_argument("frechet_distance: each set needs at least " + std::to_string(dim + 1) +
                                    " vectors, got " + std::to_string(a.size()) + " and " +
                                    std::to_string(b.size()));
    }
    const Eigen::MatrixXd xa = stack(a, "a");
    const Eigen::MatrixXd xb = stack(b, "b");
    const Eigen::VectorXd mu_a = xa.colwise().mean();
    const Eigen::VectorXd mu_b = xb.colwise().mean();
    const auto covariance = [&](const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
        const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
        Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
        cov.diagonal().array() += eps;
        return cov;
    };
    const Eigen::MatrixXd sa = covariance(xa, mu_a);
    const Eigen::MatrixXd sb = covariance(xb, mu_b);

    // Tr (Sa Sb)^(1/2) = Tr (Sa^(1/2) Sb Sa^(1/2))^(1/2); the inner matrix is symmetric PSD.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
    const auto fail = [&](const Eigen::VectorXd& ev) {
        const double cond = ev.maxCoeff() / std::max(ev.minCoeff(), std::numeric_limits<double>::min());
        std::ostringstream msg;
        msg << "frechet_distance: matrix square root failed (eps=" << eps << ", condition number=" << cond << ")";
        throw FrechetError(msg.str());
    };
    if (ea.info() != Eigen::Success) fail(Eigen::VectorXd::Ones(1));
    const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
    const Eigen::MatrixXd inner = sqrt_a * sb * sqrt_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei((inner + inner.transpose()) / 2.0, Eigen::EigenvaluesOnly);
    if (ei.info() != Eigen::Success) fail(ea.eigenvalues());
    const Eigen::VectorXd lambda = ei.eigenvalues();
    if (lambda.minCoeff() < -1e-6 * std::max(1.0, lambda.maxCoeff())) fail(ea.eigenvalues());
    const double tr_sqrt = lambda.cwiseMax(0.0).cwiseSqrt().sum();

    const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

double feature_distance(const core::SemanticMap& a, const core::SemanticMap& b, const FeatureExtractor& fx) {
    const auto fa = fx.features(a);
    const auto fb = fx.features(b);
    double s = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    return std::sqrt(s);
}

Estimate diversity(const MapGenerator& generator, const std::vector<core::LabelSet>& label_sets, int n_pairs,
                   const FeatureExtractor& fx, Rng& rng) {
    if (n_pairs < 1) throw std::invalid_argument("diversity: n_pairs must be at least 1");
    if (label_sets.empty()) throw std::invalid_argument("diversity: no label-sets to sample from");
    std::vector<double> d;
    d.reserve(n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        const auto& labels = label_sets[rng.below(label_sets.size())];
        Rng r1(rng.next_u64()), r2(rng.next_u64());
        const core::SemanticMap a = generator(labels, r1);
        const core::SemanticMap b = generator(labels, r2);
        d.push_back(feature_distance(a, b, fx));
    }
    return estimate(d);
}

CompatResult compatibility_error(const std::vector<core::SemanticMap>& maps, const ShapePredictor& sp) {
    CompatResult out;
    std::vector<double> samples;
    for (const auto& map : maps) {
        const auto present = map.extract_label_set().members();
        if (present.size() < 2) {
            ++out.skipped;
            out.per_map.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        double map_total = 0.0;
        for (int k : present) {
            const auto pred = sp.predict(map, k);
            const auto ch = map.channel(k);
            if (pred.size() != ch.size()) throw std::runtime_error("shape predictor returned the wrong size");
            double err = 0.0;
            for (std::size_t i = 0; i < ch.size(); ++i) err += std::abs(pred[i] - ch[i]);
            err /= static_cast<double>(ch.size());
            samples.push_back(err);
            map_total += err;
        }
        out.per_map.push_back(map_total / static_cast<double>(present.size()));
    }
    out.error = estimate(samples);
    return out;
}

double reconstruction_l1(const core::SemanticMap& map, const FeatureExtractor& fx) {
    const auto rec = fx.reconstruct(map);
    const auto vals = map.values();
    if (rec.size() != vals.size()) throw std::runtime_error("feature extractor reconstruction has the wrong size");
    double err = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) err += std::abs(rec[i] - vals[i]);
    return err / static_cast<double>(vals.size());
}

Estimate reconstruction_error(const std::vector<core::SemanticMap>& maps, const FeatureExtractor& fx) {
    std::vector<double> e;
    e.reserve(maps.size());
    for (const auto& m : maps) e.push_back(reconstruction_l1(m, fx));
    return estimate(e);
}

std::optional<double> map_frechet(const std::vector<core::SemanticMap>& a, const std::vector<core::SemanticMap>& b,
                                  const FeatureExtractor& fx) {
    const std::size_t need = static_cast<std::size_t>(fx.feature_dim()) + 1;
    if (a.size() < need || b.size() < need) return std::nullopt;
    std::vector<std::vector<double>> fa, fb;
    for (const auto& m : a) fa.push_back(fx.features(m));
    for (const auto& m : b) fb.push_back(fx.features(m));
    return frechet_distance(fa, fb);
}

namespace {

std::vector<core::SemanticMap> generate_for(const MapGenerator& generator, const data::Dataset& test,
                                            std::uint64_t seed) {
    std::vector<core::SemanticMap> out;
    out.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        Rng rng = Rng::derive(seed, i);
        out.push_back(generator(test[i].labels, rng));
    }
    return out;
}

GroupRow score_group(const std::string& name, const std::vector<core::SemanticMap>& generated,
                     const std::vector<core::SemanticMap>& reference, const std::vector<double>& compat_per_map,
                     const std::vector<double>& recon_per_map, const FeatureExtractor& fx) {
    GroupRow row;
    row.name = name;
    row.count = generated.size();
    row.fid = map_frechet(generated, reference, fx);
    row.compat = estimate(finite_only(compat_per_map));
    row.recon = estimate(recon_per_map);
    return row;
}

}  // namespace

MetricReport evaluate(const MapGenerator& generator, const data::Dataset& test, const FeatureExtractor& fx,
                      const ShapePredictor& sp, const EvalConfig& config) {
    if (test.empty()) throw std::invalid_argument("evaluate: test set is empty");
    MetricReport report;
    const auto generated = generate_for(generator, test, config.seed);
    std::vector<core::SemanticMap> reference;
    std::vector<core::LabelSet> label_sets;
    for (const auto& ex : test.examples()) {
        reference.push_back(ex.map);
        label_sets.push_back(ex.labels);
    }

    report.fid = map_frechet(generated, reference, fx);
    Rng div_rng = Rng::derive(config.seed, 0xD1E5);
    report.diversity = diversity(generator, label_sets, config.diversity_pairs, fx, div_rng);
    const CompatResult compat = compatibility_error(generated, sp);
    report.compat = compat.error;
    report.compat_skipped = compat.skipped;
    std::vector<double> recon;
    for (const auto& m : generated) recon.push_back(reconstruction_l1(m, fx));
    report.recon = estimate(recon);

    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < test.size(); ++i) groups[test[i].labels.count()].push_back(i);
    for (const auto& [length, idx] : groups) {
        std::vector<core::SemanticMap> g, r;
        std::vector<double> c, e;
        for (std::size_t i : idx) {
            g.push_back(generated[i]);
            r.push_back(reference[i]);
            c.push_back(compat.per_map[i]);
            e.push_back(recon[i]);
        }
        report.by_length.push_back(score_group("length=" + std::to_string(length), g, r, c, e, fx));
    }

    for (std::size_t i = 0; i < test.size(); ++i) {
        report.examples.push_back(
            {i, core::label_set_names(test[i].labels, test.catalog()), compat.per_map[i], recon[i]});
    }
    return report;
}

std::vector<GroupRow> evaluate_orders(const std::vector<NamedGenerator>& generators, const data::Dataset& test,
                                      const FeatureExtractor& fx, const ShapePredictor& sp,
                                      const EvalConfig& config) {
    if (test.empty()) throw std::invalid_argument("evaluate_orders: test set is empty");
    std::vector<core::SemanticMap> reference;
    for (const auto& ex : test.examples()) reference.push_back(ex.map);
    std::vector<GroupRow> rows;
    for (const auto& [name, generator] : generators) {
        const auto generated = generate_for(generator, test, config.seed);
        const CompatResult compat = compatibility_error(generated, sp);
        std::vector<double> recon;
        for (const auto& m : generated) recon.push_back(reconstruction_l1(m, fx));
        rows.push_back(score_group(name, generated, reference, compat.per_map, recon, fx));
    }
    return rows;
}

std::string report_to_json(const MetricReport& report) {
    json by_length = json::array(), by_order = json::array();
    for (const auto& r : report.by_length) by_length.push_back(row_json(r));
    for (const auto& r : report.by_order) by_order.push_back(row_json(r));
    const json j{{"fid", optional_json(report.fid)},
                 {"diversity", estimate_json(report.diversity)},
                 {"compat_error", estimate_json(report.compat)},
                 {"compat_skipped", report.compat_skipped},
                 {"recon_error", estimate_json(report.recon)},
                 {"by_length", by_length},
                 {"by_order", by_order}};
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "index,labels,length,compat_error,recon_error\n";
    out.precision(9);
    for (const auto& e : report.examples) {
        std::string labels;
        for (const auto& n : e.labels) labels += (labels.empty() ? "" : ";") + n;
        out << e.index << ',' << labels << ',' << e.labels.size() << ',';
        if (std::isfinite(e.compat_error)) out << e.compat_error;
        out << ',' << e.recon_error << '\n';
    }
    return out.str();
}

}  // namespace segvae::evaluation
