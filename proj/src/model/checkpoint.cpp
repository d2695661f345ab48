#include "segvae/model/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <functional>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace segvae::model {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'E', 'G', 'V', 'A', 'E', 'C', 'K'};
constexpr std::uint8_t kKindParam = 0;
constexpr std::uint8_t kKindBuffer = 1;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
    return static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(size)));
}

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t size) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + size);
    }
    void put_crc_since(std::size_t start) { put(crc_of(bytes.data() + start, bytes.size() - start)); }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    const std::uint8_t* take(std::size_t size, const char* what) {
        need(size, what);
        const auto* p = bytes_.data() + pos_;
        pos_ += size;
        return p;
    }
    void check_crc_since(std::size_t start, const std::string& what) {
        const std::uint32_t expected = crc_of(bytes_.data() + start, pos_ - start);
        const std::size_t at = pos_;
        if (get<std::uint32_t>("checksum") != expected) {
            throw CheckpointError("checksum mismatch in " + what + " starting at byte " + std::to_string(start), at);
        }
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return bytes_.size(); }

private:
    void need(std::size_t size, const char* what) {
        if (bytes_.size() - pos_ < size) {
            throw CheckpointError(std::string("file truncated while reading ") + what, pos_);
        }
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

json config_json(const ModelConfig& c) {
    json palette = json::array();
    for (const auto& rgb : c.catalog.palette()) palette.push_back({rgb.r, rgb.g, rgb.b});
    return {
        {"classes", c.catalog.names()},
        {"palette", palette},
        {"height", c.height},
        {"width", c.width},
        {"latent_dim", c.latent_dim},
        {"embed_dim", c.embed_dim},
        {"embed_hidden", c.embed_hidden},
        {"embed_channels", c.embed_channels},
        {"latent_channels", c.latent_channels},
        {"downsamples", c.downsamples},
        {"context_widths", c.context_widths},
        {"mask_widths", c.mask_widths},
        {"decoder_widths", c.decoder_widths},
        {"hidden_dim", c.hidden_dim},
        {"lstm_layers", c.lstm_layers},
        {"variant", to_string(c.variant)},
        {"order", c.order.sequence()},
        {"instance_norm", c.instance_norm},
        {"spectral_norm", c.spectral_norm},
    };
}

ModelConfig config_of(const json& j) {
    std::vector<core::Rgb> palette;
    for (const auto& p : j.at("palette")) {
        palette.push_back({p.at(0).get<std::uint8_t>(), p.at(1).get<std::uint8_t>(), p.at(2).get<std::uint8_t>()});
    }
    ModelConfig c;
    c.catalog = core::ClassCatalog(j.at("classes").get<std::vector<std::string>>(), std::move(palette));
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.embed_hidden = j.at("embed_hidden").get<int>();
    c.embed_channels = j.at("embed_channels").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.downsamples = j.at("downsamples").get<int>();
    c.context_widths = j.at("context_widths").get<std::vector<int>>();
    c.mask_widths = j.at("mask_widths").get<std::vector<int>>();
    c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.order = core::GenerationOrder(j.at("order").get<std::vector<int>>());
    c.instance_norm = j.at("instance_norm").get<bool>();
    c.spectral_norm = j.at("spectral_norm").get<bool>();
    c.validate();
    return c;
}

void write_tensor(Writer& w, std::uint8_t kind, const std::string& name, const nn::Tensor& t) {
    const std::size_t start = w.bytes.size();
    w.put<std::uint8_t>(kind);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape) w.put<std::int32_t>(d);
    w.put_bytes(t.data.data(), t.data.size() * sizeof(double));
    w.put_crc_since(start);
}

void check_compatible(const ModelConfig& model, const ModelConfig& file) {
    if (!(model.catalog == file.catalog)) {
        throw std::invalid_argument("checkpoint catalog does not match the model catalog");
    }
    if (model.height != file.height || model.width != file.width) {
        throw std::invalid_argument("checkpoint resolution " + std::to_string(file.height) + "x" +
                                    std::to_string(file.width) + " does not match model resolution " +
                                    std::to_string(model.height) + "x" + std::to_string(model.width));
    }
    if (config_to_json(model) != config_to_json(file)) {
        throw std::invalid_argument("checkpoint architecture does not match the model configuration");
    }
}

template <typename Live>
void check_tensors(const std::map<std::string, Live>& live, const std::map<std::string, nn::Tensor>& stored,
                   const char* kind, const std::function<const nn::Tensor&(const Live&)>& value_of) {
    if (live.size() != stored.size()) {
        throw std::invalid_argument(std::string("checkpoint has ") + std::to_string(stored.size()) + " " + kind +
                                    "s, model has " + std::to_string(live.size()));
    }
    for (const auto& [name, v] : live) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw std::invalid_argument(std::string("checkpoint is missing ") + kind + " " + name);
        if (it->second.shape != value_of(v).shape) {
            throw std::invalid_argument(std::string(kind) + " " + name + " has shape " +
                                        nn::shape_string(it->second.shape) + " in the checkpoint, expected " +
                                        nn::shape_string(value_of(v).shape));
        }
    }
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) { return config_of(json::parse(text)); }

Checkpoint capture(const SegVae& net, std::int64_t step, std::optional<std::string> rng_state) {
    Checkpoint ck;
    ck.config = net.config();
    ck.step = step;
    ck.rng_state = std::move(rng_state);
    for (const auto& [name, var] : net.store().params()) ck.params.emplace(name, var->value);
    for (const auto& [name, buf] : net.store().buffers()) ck.buffers.emplace(name, *buf);
    return ck;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    Writer w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kCheckpointVersion);

    json header{{"config", config_json(ck.config)}, {"step", ck.step}};
    header["rng_state"] = ck.rng_state ? json(*ck.rng_state) : json(nullptr);
    const std::string text = header.dump();
    const std::size_t header_start = w.bytes.size();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
    w.put_bytes(text.data(), text.size());
    w.put_crc_since(header_start);

    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size() + ck.buffers.size()));
    for (const auto& [name, t] : ck.params) write_tensor(w, kKindParam, name, t);
    for (const auto& [name, t] : ck.buffers) write_tensor(w, kKindBuffer, name, t);
    w.put_crc_since(0);
    return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(sizeof(kMagic), "magic"), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)", 0);
    }
    const std::size_t version_at = r.pos();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version), version_at);
    }

    Checkpoint ck;
    const std::size_t header_start = r.pos();
    const auto header_size = r.get<std::uint32_t>("header length");
    const auto* header_bytes = r.take(header_size, "header");
    r.check_crc_since(header_start, "header");
    try {
        const json header = json::parse(header_bytes, header_bytes + header_size);
        ck.config = config_of(header.at("config"));
        ck.step = header.at("step").get<std::int64_t>();
        if (!header.at("rng_state").is_null()) ck.rng_state = header.at("rng_state").get<std::string>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("malformed header: ") + e.what(), header_start);
    }

    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t start = r.pos();
        const auto kind = r.get<std::uint8_t>("tensor kind");
        const auto name_size = r.get<std::uint16_t>("tensor name length");
        const auto* name_bytes = r.take(name_size, "tensor name");
        const std::string name(reinterpret_cast<const char*>(name_bytes), name_size);
        const auto rank = r.get<std::uint8_t>("tensor rank");
        nn::Shape shape;
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const auto dim = r.get<std::int32_t>("tensor shape");
            if (dim <= 0) throw CheckpointError("tensor " + name + " has a non-positive dimension", start);
            shape.push_back(dim);
            numel *= static_cast<std::size_t>(dim);
        }
        if (numel > (r.size() - r.pos()) / sizeof(double)) {
            throw CheckpointError("file truncated inside tensor " + name, r.pos());
        }
        nn::Tensor t(shape);
        std::memcpy(t.data.data(), r.take(numel * sizeof(double), "tensor data"), numel * sizeof(double));
        r.check_crc_since(start, "tensor " + name);
        auto& target = kind == kKindParam ? ck.params : kind == kKindBuffer ? ck.buffers
                                                                            : throw CheckpointError("bad tensor kind", start);
        if (!target.emplace(name, std::move(t)).second) {
            throw CheckpointError("duplicate tensor " + name, start);
        }
    }
    r.check_crc_since(0, "file");
    if (r.pos() != r.size()) {
        throw CheckpointError(std::to_string(r.size() - r.pos()) + " trailing bytes after checkpoint", r.pos());
    }
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const auto bytes = encode_checkpoint(ck);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move checkpoint into place at " + path);
    }
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.detail(), e.offset());
    }
}

void restore(SegVae& net, const Checkpoint& ck) {
    check_compatible(net.config(), ck.config);
    const auto& store = net.store();
    check_tensors<nn::Var>(store.params(), ck.params, "parameter", [](const nn::Var& v) -> const nn::Tensor& {
        return v->value;
    });
    check_tensors<std::shared_ptr<nn::Tensor>>(
        store.buffers(), ck.buffers, "buffer",
        [](const std::shared_ptr<nn::Tensor>& b) -> const nn::Tensor& { return *b; });
    for (const auto& [name, var] : store.params()) var->value.data = ck.params.at(name).data;
    for (const auto& [name, buf] : store.buffers()) buf->data = ck.buffers.at(name).data;
}

std::unique_ptr<SegVae> instantiate(const Checkpoint& ck) {
    auto net = std::make_unique<SegVae>(ck.config, 0);
    restore(*net, ck);
    return net;
}

std::unique_ptr<SegVae> load_model(const std::string& path) { return instantiate(read_checkpoint(path)); }

}  // namespace segvae::model
