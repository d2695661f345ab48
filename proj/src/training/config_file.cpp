#include "segvae/training/config_file.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "segvae/core/ops.hpp"

namespace segvae::training {

namespace {

const std::set<std::string> kModelKeys{
    "catalog",     "classes",        "height",          "width",         "latent_dim",     "embed_dim",
    "embed_hidden", "embed_channels", "latent_channels", "downsamples",   "context_widths", "mask_widths",
    "decoder_widths", "hidden_dim",   "lstm_layers",     "variant",       "order",          "instance_norm",
    "spectral_norm"};
const std::set<std::string> kTrainKeys{"learning_rate", "batch_size", "beta1",      "beta2",     "lambda_recon",
                                       "lambda_kl",     "max_steps",  "seed",       "order_mode", "eval_every",
                                       "clip_norm"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const ConfigEntry& e, const std::string& why) {
    throw std::invalid_argument("config line " + std::to_string(e.line) + ": " + key + " = " + e.value + ": " + why);
}

template <typename T>
T parse_number(const std::string& key, const ConfigEntry& e) {
    T v{};
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const auto [ptr, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || ptr != end) bad_value(key, e, "not a valid number");
    return v;
}

bool parse_bool(const std::string& key, const ConfigEntry& e) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    bad_value(key, e, "expected true or false");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const ConfigEntry& e) {
    std::vector<int> out;
    for (const auto& item : split_list(e.value)) out.push_back(parse_number<int>(key, {item, e.line}));
    return out;
}

core::ClassCatalog named_catalog(const std::string& key, const ConfigEntry& e) {
    if (e.value == "synthetic") return core::synthetic_catalog();
    if (e.value == "human_parsing") return core::human_parsing_catalog();
    if (e.value == "celeba_mask") return core::celeba_mask_catalog();
    bad_value(key, e, "unknown catalog (synthetic, human_parsing, celeba_mask)");
}

std::string join(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

bool is_model_key(const std::string& key) { return kModelKeys.count(key) > 0; }
bool is_train_key(const std::string& key) { return kTrainKeys.count(key) > 0; }

KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::stringstream ss(text);
    std::string raw;
    int line = 0;
    while (std::getline(ss, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line) + ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (!is_model_key(key) && !is_train_key(key)) {
            throw std::invalid_argument("config line " + std::to_string(line) + ": unknown key " + key);
        }
        if (value.empty()) throw std::invalid_argument("config line " + std::to_string(line) + ": empty value");
        out[key] = {value, line};
    }
    return out;
}

KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_key_values(buf.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

std::pair<std::string, std::string> split_override(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("override must look like key=value: " + arg);
    }
    const std::string key = trim(arg.substr(0, eq));
    if (!is_model_key(key) && !is_train_key(key)) throw std::invalid_argument("unknown config key " + key);
    return {key, trim(arg.substr(eq + 1))};
}

RunConfig apply_key_values(const KeyValues& entries, RunConfig base) {
    auto& m = base.model;
    auto& t = base.train;

    // Catalog first: the order refers to it.
    bool catalog_changed = false;
    if (auto it = entries.find("catalog"); it != entries.end()) {
        m.catalog = named_catalog(it->first, it->second);
        catalog_changed = true;
    }
    if (auto it = entries.find("classes"); it != entries.end()) {
        m.catalog = core::ClassCatalog(split_list(it->second.value));
        catalog_changed = true;
    }
    if (catalog_changed) m.order = core::GenerationOrder::identity(m.catalog.size());

    for (const auto& [key, e] : entries) {
        if (key == "catalog" || key == "classes") continue;
        if (key == "height") m.height = parse_number<int>(key, e);
        else if (key == "width") m.width = parse_number<int>(key, e);
        else if (key == "latent_dim") m.latent_dim = parse_number<int>(key, e);
        else if (key == "embed_dim") m.embed_dim = parse_number<int>(key, e);
        else if (key == "embed_hidden") m.embed_hidden = parse_number<int>(key, e);
        else if (key == "embed_channels") m.embed_channels = parse_number<int>(key, e);
        else if (key == "latent_channels") m.latent_channels = parse_number<int>(key, e);
        else if (key == "downsamples") m.downsamples = parse_number<int>(key, e);
        else if (key == "context_widths") m.context_widths = parse_int_list(key, e);
        else if (key == "mask_widths") m.mask_widths = parse_int_list(key, e);
        else if (key == "decoder_widths") m.decoder_widths = parse_int_list(key, e);
        else if (key == "hidden_dim") m.hidden_dim = parse_number<int>(key, e);
        else if (key == "lstm_layers") m.lstm_layers = parse_number<int>(key, e);
        else if (key == "variant") {
            try {
                m.variant = model::parse_variant(e.value);
            } catch (const std::invalid_argument& ex) {
                bad_value(key, e, ex.what());
            }
        } else if (key == "order") {
            try {
                m.order = core::parse_order(e.value, m.catalog);
            } catch (const std::invalid_argument& ex) {
                bad_value(key, e, ex.what());
            }
        } else if (key == "instance_norm") m.instance_norm = parse_bool(key, e);
        else if (key == "spectral_norm") m.spectral_norm = parse_bool(key, e);
        else if (key == "learning_rate") t.learning_rate = parse_number<double>(key, e);
        else if (key == "batch_size") t.batch_size = parse_number<int>(key, e);
        else if (key == "beta1") t.beta1 = parse_number<double>(key, e);
        else if (key == "beta2") t.beta2 = parse_number<double>(key, e);
        else if (key == "lambda_recon") t.lambda_recon = parse_number<double>(key, e);
        else if (key == "lambda_kl") t.lambda_kl = parse_number<double>(key, e);
        else if (key == "max_steps") t.max_steps = parse_number<std::int64_t>(key, e);
        else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, e);
        else if (key == "order_mode") {
            try {
                t.order_mode = parse_order_mode(e.value);
            } catch (const std::invalid_argument& ex) {
                bad_value(key, e, ex.what());
            }
        } else if (key == "eval_every") t.eval_every = parse_number<std::int64_t>(key, e);
        else if (key == "clip_norm") t.clip_norm = parse_number<double>(key, e);
    }
    m.validate();
    t.validate();
    return base;
}

std::string render_key_values(const RunConfig& config) {
    const auto& m = config.model;
    const auto& t = config.train;
    std::string names;
    for (int k = 0; k < m.catalog.size(); ++k) names += (k ? "," : "") + m.catalog.name(k);
    std::string order;
    for (int k : m.order.sequence()) order += (order.empty() ? "" : ",") + m.catalog.name(k);
    std::ostringstream out;
    out << "# model\n"
        << "classes = " << names << "\n"
        << "height = " << m.height << "\n"
        << "width = " << m.width << "\n"
        << "latent_dim = " << m.latent_dim << "\n"
        << "embed_dim = " << m.embed_dim << "\n"
        << "embed_hidden = " << m.embed_hidden << "\n"
        << "embed_channels = " << m.embed_channels << "\n"
        << "latent_channels = " << m.latent_channels << "\n"
        << "downsamples = " << m.downsamples << "\n"
        << "context_widths = " << join(m.context_widths) << "\n"
        << "mask_widths = " << join(m.mask_widths) << "\n"
        << "decoder_widths = " << join(m.decoder_widths) << "\n"
        << "hidden_dim = " << m.hidden_dim << "\n"
        << "lstm_layers = " << m.lstm_layers << "\n"
        << "variant = " << model::to_string(m.variant) << "\n"
        << "order = " << order << "\n"
        << "instance_norm = " << (m.instance_norm ? "true" : "false") << "\n"
        << "spectral_norm = " << (m.spectral_norm ? "true" : "false") << "\n"
        << "# train\n"
        << "learning_rate = " << shortest(t.learning_rate) << "\n"
        << "batch_size = " << t.batch_size << "\n"
        << "beta1 = " << shortest(t.beta1) << "\n"
        << "beta2 = " << shortest(t.beta2) << "\n"
        << "lambda_recon = " << shortest(t.lambda_recon) << "\n"
        << "lambda_kl = " << shortest(t.lambda_kl) << "\n"
        << "max_steps = " << t.max_steps << "\n"
        << "seed = " << t.seed << "\n"
        << "order_mode = " << to_string(t.order_mode) << "\n"
        << "eval_every = " << t.eval_every << "\n"
        << "clip_norm = " << shortest(t.clip_norm) << "\n";
    return out.str();
}

}  // namespace segvae::training
