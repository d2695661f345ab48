#include "segvae/nn/param_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

namespace segvae::nn {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'P', 'A', 'R', 'A', 'M'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + size);
}

struct Cursor {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    const std::uint8_t* take(std::size_t n) {
        if (bytes.size() - pos < n) {
            throw std::runtime_error("parameter file truncated at byte " + std::to_string(pos));
        }
        const auto* p = bytes.data() + pos;
        pos += n;
        return p;
    }
    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
};

struct Entry {
    Shape shape;
    const std::uint8_t* data = nullptr;
};

std::map<std::string, Entry> parse(const std::vector<std::uint8_t>& bytes, std::string& header) {
    if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a parameter file");
    }
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)))) {
        throw std::runtime_error("parameter file checksum mismatch");
    }
    Cursor c{bytes, sizeof(kMagic)};
    const auto header_size = c.get<std::uint32_t>();
    const auto* h = c.take(header_size);
    header.assign(reinterpret_cast<const char*>(h), header_size);
    std::map<std::string, Entry> out;
    const auto count = c.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_size = c.get<std::uint16_t>();
        const std::string name(reinterpret_cast<const char*>(c.take(name_size)), name_size);
        Entry e;
        const auto rank = c.get<std::uint8_t>();
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            e.shape.push_back(c.get<std::int32_t>());
            numel *= static_cast<std::size_t>(e.shape.back());
        }
        e.data = c.take(numel * sizeof(double));
        out.emplace(name, std::move(e));
    }
    if (c.pos != body) throw std::runtime_error("parameter file has trailing bytes");
    return out;
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape) put<std::int32_t>(out, d);
    put_bytes(out, t.data.data(), t.data.size() * sizeof(double));
}

}  // namespace

std::vector<std::uint8_t> encode_store(const ParamStore& store, const std::string& header) {
    std::vector<std::uint8_t> out;
    put_bytes(out, kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    put_bytes(out, header.data(), header.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(store.params().size() + store.buffers().size()));
    for (const auto& [name, v] : store.params()) put_tensor(out, name, v->value);
    for (const auto& [name, b] : store.buffers()) put_tensor(out, name, *b);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size()))));
    return out;
}

std::string peek_header(const std::vector<std::uint8_t>& bytes) {
    std::string header;
    parse(bytes, header);
    return header;
}

std::string decode_into_store(const std::vector<std::uint8_t>& bytes, ParamStore& store) {
    std::string header;
    const auto entries = parse(bytes, header);
    if (entries.size() != store.params().size() + store.buffers().size()) {
        throw std::runtime_error("parameter file holds " + std::to_string(entries.size()) + " tensors, expected " +
                                 std::to_string(store.params().size() + store.buffers().size()));
    }
    const auto check = [&](const std::string& name, const Tensor& t) -> const Entry& {
        const auto it = entries.find(name);
        if (it == entries.end()) throw std::runtime_error("parameter file is missing " + name);
        if (it->second.shape != t.shape) {
            throw std::runtime_error("parameter " + name + " has shape " + shape_string(it->second.shape) +
                                     ", expected " + shape_string(t.shape));
        }
        return it->second;
    };
    for (const auto& [name, v] : store.params()) check(name, v->value);
    for (const auto& [name, b] : store.buffers()) check(name, *b);
    for (const auto& [name, v] : store.params()) {
        std::memcpy(v->value.data.data(), entries.at(name).data, v->value.data.size() * sizeof(double));
    }
    for (const auto& [name, b] : store.buffers()) {
        std::memcpy(b->data.data(), entries.at(name).data, b->data.size() * sizeof(double));
    }
    return header;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace segvae::nn
