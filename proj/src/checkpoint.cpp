#include "viewset/checkpoint.hpp"

#include "viewset/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace viewset {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'A', 'R', 'C', 'H', '0', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_f64(std::ofstream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(path + ": truncated archive");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw ParseError(path + ": truncated archive");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void save_archive(const std::string& path, const std::map<std::string, Tensor>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write archive: " + path);
    out.write(kMagic, sizeof kMagic);
    put_u64(out, entries.size());
    for (const auto& [key, tensor] : entries) {
        if (key.empty() || key.size() > 0xffffffffu)
            throw InputError("archive keys must be nonempty");
        put_u32(out, static_cast<std::uint32_t>(key.size()));
        out.write(key.data(), static_cast<std::streamsize>(key.size()));
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t a = 0; a < tensor.rank(); ++a)
            put_u32(out, static_cast<std::uint32_t>(tensor.extent(a)));
        for (std::size_t i = 0; i < tensor.size(); ++i) put_f64(out, tensor[i]);
    }
    if (!out) throw InputError("write failed for archive: " + path);
}

std::map<std::string, Tensor> load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open archive: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw ParseError(path + ": not a tensor archive (bad magic)");
    std::uint64_t count = get_u64(in, path);
    std::map<std::string, Tensor> entries;
    for (std::uint64_t e = 0; e < count; ++e) {
        std::uint32_t klen = get_u32(in, path);
        std::string key(klen, '\0');
        if (!in.read(key.data(), klen)) throw ParseError(path + ": truncated archive");
        std::uint32_t rank = get_u32(in, path);
        if (rank == 0 || rank > 8) throw ParseError(path + ": entry '" + key + "' has bad rank");
        Shape shape(rank);
        std::size_t n = 1;
        for (std::uint32_t a = 0; a < rank; ++a) {
            shape[a] = get_u32(in, path);
            if (shape[a] == 0) throw ParseError(path + ": entry '" + key + "' has zero extent");
            n *= shape[a];
        }
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i)
            data[i] = std::bit_cast<double>(get_u64(in, path));
        if (!entries.emplace(std::move(key), Tensor(std::move(shape), std::move(data))).second)
            throw ParseError(path + ": duplicate archive key");
    }
    return entries;
}

std::map<std::string, Tensor> snapshot(Model& model) {
    std::map<std::string, Tensor> entries;
    for (Parameter* p : model.params()) {
        if (!entries.emplace(p->name, p->value).second)
            throw StateError("duplicate parameter name: " + p->name);
    }
    for (auto& [key, tensor] : model.state()) {
        if (!entries.emplace(key, *tensor).second)
            throw StateError("duplicate state key: " + key);
    }
    return entries;
}

void save_checkpoint(const std::string& path, Model& model) {
    save_archive(path, snapshot(model));
}

void load_checkpoint(const std::string& path, Model& model) {
    std::map<std::string, Tensor> entries = load_archive(path);
    auto take = [&](const std::string& key, Tensor& dst) {
        auto it = entries.find(key);
        if (it == entries.end())
            throw StateError("checkpoint " + path + " is missing key: " + key);
        if (it->second.shape() != dst.shape())
            throw StateError("checkpoint " + path + " key " + key + " has shape " +
                             it->second.shape_str() + ", expected " + dst.shape_str());
        dst = std::move(it->second);
        entries.erase(it);
    };
    for (Parameter* p : model.params()) take(p->name, p->value);
    for (auto& [key, tensor] : model.state()) take(key, *tensor);
    if (!entries.empty())
        throw StateError("checkpoint " + path +
                         " carries an unrecognized key: " + entries.begin()->first);
}

} // namespace viewset
