#include "segvae/cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/editing/edit.hpp"
#include "segvae/evaluation/metrics.hpp"
#include "segvae/evaluation/networks.hpp"
#include "segvae/model/checkpoint.hpp"
#include "segvae/model/forward.hpp"
#include "segvae/service/service.hpp"
#include "segvae/training/config_file.hpp"
#include "segvae/training/train.hpp"

namespace segvae::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string checkpoint;
    std::string out;
    std::string labels;
    std::string order;
    std::string variant;
    std::string data;
    std::vector<std::string> overrides;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

core::LabelSet labels_from_flag(const std::string& text, const core::ClassCatalog& catalog) {
    core::LabelSet labels(catalog.size());
    for (const auto& name : split_list(text)) labels.set(catalog.index_of(name));
    return labels;
}

std::optional<core::GenerationOrder> order_from_flag(const std::string& text, const core::ClassCatalog& catalog) {
    if (text.empty()) return std::nullopt;
    std::vector<int> seq;
    for (const auto& name : split_list(text)) seq.push_back(catalog.index_of(name));
    if (static_cast<int>(seq.size()) != catalog.size()) {
        throw std::invalid_argument("--order must list all " + std::to_string(catalog.size()) + " classes");
    }
    return core::GenerationOrder(seq);
}

training::KeyValues collect_entries(const Flags& f) {
    training::KeyValues entries;
    if (!f.config.empty()) entries = training::read_key_values(f.config);
    for (const auto& o : f.overrides) {
        auto [key, value] = training::split_override(o);
        entries[key] = {value, 0};
    }
    if (!f.variant.empty()) entries["variant"] = {f.variant, 0};
    if (!f.order.empty()) entries["order"] = {f.order, 0};
    if (f.seed_given) entries["seed"] = {std::to_string(f.seed), 0};
    return entries;
}

data::Dataset load_dataset(const std::string& dir, const std::string& what) {
    if (!fs::is_directory(dir)) throw std::runtime_error(what + " directory does not exist: " + dir);
    if (!fs::exists(fs::path(dir) / "manifest.json")) throw std::runtime_error(what + " directory has no manifest.json: " + dir);
    data::Dataset ds = data::ingest(dir);
    if (ds.empty()) throw std::runtime_error(what + " directory holds no examples: " + dir);
    return ds;
}

data::Dataset single_resolution_set(const model::ModelConfig& cfg) {
    return data::Dataset(cfg.catalog, core::Resolution{cfg.height, cfg.width});
}

// ------------------------------------------------------------------ verbs

int run_synth(const Flags& f, int n, std::ostream& out) {
    const auto run = training::apply_key_values(collect_entries(f));
    data::SynthSpec spec;
    spec.n_examples = n;
    spec.resolution = {run.model.height, run.model.width};
    spec.seed = f.seed;
    const data::Dataset ds = data::synthesize(spec);
    data::export_dataset(ds, f.out);
    out << "wrote " << ds.size() << " examples to " << f.out << "\n";
    return 0;
}

int run_ingest(const Flags& f, bool crop, bool clean, std::ostream& out, std::ostream& err) {
    data::Dataset ds = load_dataset(f.data, "input");
    if (crop) {
        data::Dataset cropped(ds.catalog(), ds.resolution());
        for (const auto& ex : ds.examples()) {
            cropped.add(data::crop_to_bbox(ex.map, ds.resolution().height, ds.resolution().width), ex.source_id,
                        ex.aspect_ratio);
        }
        ds = std::move(cropped);
    }
    if (clean) {
        std::string warning;
        const std::size_t before = ds.size();
        ds = data::clean_aspect_ratio(ds, &warning);
        if (!warning.empty()) err << "warning: " << warning << "\n";
        out << "aspect-ratio cleaning kept " << ds.size() << " of " << before << "\n";
    }
    auto [train, val, test] = data::split(ds, {}, f.seed);
    const fs::path root(f.out);
    data::export_dataset(train, (root / "train").string());
    data::export_dataset(val, (root / "val").string());
    data::export_dataset(test, (root / "test").string());
    out << "train " << train.size() << ", val " << val.size() << ", test " << test.size() << " -> " << f.out << "\n";
    return 0;
}

int run_train(const Flags& f, std::ostream& out) {
    const data::Dataset ds = load_dataset(f.data, "training data");
    training::RunConfig base;
    base.model.catalog = ds.catalog();
    base.model.height = ds.resolution().height;
    base.model.width = ds.resolution().width;
    base.model.order = core::GenerationOrder::identity(ds.catalog().size());
    const auto run = training::apply_key_values(collect_entries(f), base);
    if (!(run.model.catalog == ds.catalog())) throw std::runtime_error("configured classes do not match the dataset's");
    if (run.model.height != ds.resolution().height || run.model.width != ds.resolution().width) {
        throw std::runtime_error("configured resolution does not match the dataset's");
    }
    fs::create_directories(f.out);
    {
        std::ofstream cfg(fs::path(f.out) / "config.txt");
        cfg << training::render_key_values(run);
    }
    training::TrainOptions opts;
    opts.checkpoint_dir = f.out;
    opts.log = &out;
    const auto result = training::train(ds, run.model, run.train, opts);
    out << "checkpoint " << result.checkpoints.back() << "\n";
    return 0;
}

int run_sample(const Flags& f, int n, std::ostream& out) {
    const auto net = model::load_model(f.checkpoint);
    const auto& cfg = net->config();
    const auto labels = labels_from_flag(f.labels, cfg.catalog);
    const auto order = order_from_flag(f.order, cfg.catalog);
    data::Dataset ds = single_resolution_set(cfg);
    Rng rng(f.seed);
    for (int i = 0; i < n; ++i) ds.add(model::generate(*net, labels, rng, order), "sample-" + std::to_string(i));
    data::export_dataset(ds, f.out);
    out << "wrote " << ds.size() << " samples to " << f.out << "\n";
    return 0;
}

int run_edit(const Flags& f, std::size_t index, const std::string& kind, const std::string& target,
             std::ostream& out) {
    const auto net = model::load_model(f.checkpoint);
    const auto& cfg = net->config();
    const data::Dataset input = load_dataset(f.data, "input");
    if (!(input.catalog() == cfg.catalog)) throw std::runtime_error("input classes do not match the checkpoint's");
    if (index >= input.size()) {
        throw std::runtime_error("--index " + std::to_string(index) + " out of range (" +
                                 std::to_string(input.size()) + " examples)");
    }
    editing::EditRequest req;
    req.kind = editing::parse_edit_kind(kind);
    req.target = cfg.catalog.index_of(target);
    req.map = input[index].map;
    req.labels = input[index].labels;
    req.seed = f.seed;
    req.order = order_from_flag(f.order, cfg.catalog);
    const auto result = editing::apply_edit(*net, req);
    data::Dataset ds = single_resolution_set(cfg);
    ds.add(result.map, input[index].source_id + "-" + editing::to_string(req.kind) + "-" + target,
           input[index].aspect_ratio);
    data::export_dataset(ds, f.out);
    out << editing::to_string(req.kind) << " " << target << ": regenerated " << result.regenerated
        << " classes, wrote " << f.out << "\n";
    return 0;
}

struct EvalFlags {
    std::string reference;
    std::string feature_net;
    std::string shape_net;
    int aux_steps = 1500;
    int feature_dim = 256;
    int pairs = evaluation::kDefaultDiversityPairs;
};

int run_eval(const Flags& f, const EvalFlags& e, std::ostream& out) {
    const auto net = model::load_model(f.checkpoint);
    const auto& cfg = net->config();
    const data::Dataset test = load_dataset(f.data, "test");
    if (!(test.catalog() == cfg.catalog)) throw std::runtime_error("test classes do not match the checkpoint's");
    const data::Dataset reference = e.reference.empty() ? test : load_dataset(e.reference, "reference");
    fs::create_directories(f.out);

    evaluation::AuxTrainConfig aux;
    aux.steps = e.aux_steps;
    aux.seed = f.seed;
    std::unique_ptr<evaluation::FeatureAutoencoder> fx;
    if (!e.feature_net.empty()) {
        fx = std::make_unique<evaluation::FeatureAutoencoder>(evaluation::FeatureAutoencoder::load(e.feature_net));
    } else {
        fx = std::make_unique<evaluation::FeatureAutoencoder>(cfg.catalog.size(), cfg.height, cfg.width,
                                                              e.feature_dim, f.seed);
        fx->fit(reference, aux);
        fx->save((fs::path(f.out) / "feature_net.bin").string());
    }
    std::unique_ptr<evaluation::ShapePredictorNet> sp;
    if (!e.shape_net.empty()) {
        sp = std::make_unique<evaluation::ShapePredictorNet>(evaluation::ShapePredictorNet::load(e.shape_net));
    } else {
        sp = std::make_unique<evaluation::ShapePredictorNet>(cfg.catalog.size(), cfg.height, cfg.width, f.seed);
        sp->fit(reference, aux);
        sp->save((fs::path(f.out) / "shape_net.bin").string());
    }

    const auto order = order_from_flag(f.order, cfg.catalog);
    const evaluation::MapGenerator generator = [&](const core::LabelSet& labels, Rng& rng) {
        return model::generate(*net, labels, rng, order);
    };
    evaluation::EvalConfig ec;
    ec.diversity_pairs = e.pairs;
    ec.seed = f.seed;
    const auto report = evaluation::evaluate(generator, test, *fx, *sp, ec);
    std::ofstream(fs::path(f.out) / "report.json") << evaluation::report_to_json(report);
    std::ofstream(fs::path(f.out) / "report.csv") << evaluation::report_to_csv(report);
    out << "fid " << (report.fid ? std::to_string(*report.fid) : std::string("n/a")) << ", diversity "
        << report.diversity.mean << ", compat " << report.compat.mean << ", recon " << report.recon.mean << "\n";
    return 0;
}

int run_serve(const Flags& f, const std::string& bind, int idle_minutes, std::ostream& out) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("--bind must be host:port");
    const std::string host = bind.substr(0, colon);
    const int port = std::stoi(bind.substr(colon + 1));
    std::shared_ptr<const model::SegVae> net = model::load_model(f.checkpoint);
    service::ServiceOptions opts;
    opts.idle_timeout = std::chrono::minutes(idle_minutes);
    const service::Service svc(net, opts);
    out << "serving " << f.checkpoint << " on " << host << ":" << port << std::endl;
    service::serve(svc, host, port);
    return 0;
}

std::string one_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    return text;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sequential semantic-map generation: data, training, sampling, editing, evaluation, serving.",
                 "segvae"};
    app.require_subcommand(1, 1);
    app.fallthrough(false);

    Flags f;
    auto add_seed = [&](CLI::App* sub, const std::string& what) {
        sub->add_option("--seed", f.seed, what)->each([&](const std::string&) { f.seed_given = true; });
    };
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "key = value configuration file")->check(CLI::ExistingFile);
        sub->add_option("overrides", f.overrides, "key=value overrides applied after --config");
    };

    int n = 1000;
    auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset of layered figures");
    synth->add_option("--n", n, "number of examples")->check(CLI::PositiveNumber);
    add_seed(synth, "generator seed");
    synth->add_option("--out", f.out, "output dataset directory")->required();
    add_config(synth);

    bool crop = false, no_clean = false;
    auto* ingest = app.add_subcommand("ingest", "Validate, clean and split a PNG+manifest dataset");
    ingest->add_option("--data", f.data, "input dataset directory")->required();
    ingest->add_option("--out", f.out, "output root (train/, val/, test/)")->required();
    add_seed(ingest, "split seed");
    ingest->add_flag("--crop", crop, "crop each map to its bounding box and resize back");
    ingest->add_flag("--no-clean", no_clean, "skip aspect-ratio cleaning");

    auto* train = app.add_subcommand("train", "Train a model; checkpoints go to --out");
    train->add_option("--data", f.data, "training dataset directory")->required();
    train->add_option("--out", f.out, "checkpoint directory")->required();
    add_seed(train, "seed for initialisation, batching and noise");
    train->add_option("--variant", f.variant, "full, fixed_prior, no_lstm, cvae_sep, cvae_global");
    train->add_option("--order", f.order, "generation order (comma list of all class names)");
    add_config(train);

    int count = 1;
    auto* sample = app.add_subcommand("sample", "Generate maps for a label-set");
    sample->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    sample->add_option("--labels", f.labels, "comma list of class names")->required();
    add_seed(sample, "sampling seed");
    sample->add_option("--n", count, "number of maps")->check(CLI::PositiveNumber);
    sample->add_option("--order", f.order, "generation order override");
    sample->add_option("--out", f.out, "output dataset directory")->required();

    std::size_t index = 0;
    std::string kind, target;
    auto* edit = app.add_subcommand("edit", "Remove, add or restyle one class of a map");
    edit->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    edit->add_option("--data", f.data, "input dataset directory")->required();
    edit->add_option("--index", index, "example to edit");
    edit->add_option("--kind", kind, "remove, add or new_style")->required();
    edit->add_option("--target", target, "class name")->required();
    add_seed(edit, "edit seed");
    edit->add_option("--order", f.order, "generation order override");
    edit->add_option("--out", f.out, "output dataset directory")->required();

    EvalFlags ef;
    auto* eval = app.add_subcommand("eval", "Score a model on a test set; writes report.json and report.csv");
    eval->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", f.data, "test dataset directory")->required();
    eval->add_option("--reference", ef.reference, "dataset for fitting the scoring networks (default: --data)");
    eval->add_option("--feature-net", ef.feature_net, "trained feature network")->check(CLI::ExistingFile);
    eval->add_option("--shape-net", ef.shape_net, "trained shape predictor")->check(CLI::ExistingFile);
    eval->add_option("--aux-steps", ef.aux_steps, "training steps for each scoring network");
    eval->add_option("--feature-dim", ef.feature_dim, "feature width of a newly trained feature network");
    eval->add_option("--pairs", ef.pairs, "sample pairs for diversity");
    add_seed(eval, "evaluation seed");
    eval->add_option("--order", f.order, "generation order override");
    eval->add_option("--out", f.out, "report directory")->required();

    std::string bind = "127.0.0.1:8080";
    int idle_minutes = 30;
    auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
    serve->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
    serve->add_option("--bind", bind, "host:port");
    serve->add_option("--idle-minutes", idle_minutes, "session idle expiry")->check(CLI::PositiveNumber);

    if (!args.empty() && args.front().rfind('-', 0) != 0) {
        const auto subs = app.get_subcommands([](CLI::App*) { return true; });
        const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == args.front(); });
        if (!known) {
            err << "error: unknown verb: " << args.front() << "\n" << app.help();
            return kUsageError;
        }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << one_line(e.what()) << "\n" << app.help();
        return kUsageError;
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        if (verb == "synth-data") return run_synth(f, n, out);
        if (verb == "ingest") return run_ingest(f, crop, !no_clean, out, err);
        if (verb == "train") return run_train(f, out);
        if (verb == "sample") return run_sample(f, count, out);
        if (verb == "edit") return run_edit(f, index, kind, target, out);
        if (verb == "eval") return run_eval(f, ef, out);
        if (verb == "serve") return run_serve(f, bind, idle_minutes, out);
    } catch (const std::exception& e) {
        err << "segvae " << verb << ": " << one_line(e.what()) << "\n";
        return 1;
    }
    return kUsageError;
}

}  // namespace segvae::cli
