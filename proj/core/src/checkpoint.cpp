#include "egoflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace egoflow {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

float read_f32(std::istream& is) {
    const std::uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

struct Entry {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

void write_entry(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                 const float* data, std::size_t n) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < n; ++i) write_f32(os, data[i]);
}

template <class T>
std::vector<float> to_f32(const std::vector<T>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

}  // namespace

template <class T>
void save_checkpoint(const ParamRegistry<T>& reg, const std::string& path,
                     bool include_optimizer, std::int64_t epoch) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw validation_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);

    std::uint32_t count = static_cast<std::uint32_t>(reg.params().size() + reg.buffers().size());
    if (include_optimizer)
        count += static_cast<std::uint32_t>(2 * reg.params().size()) + 2;  // m,v per param + step + epoch
    write_u32(os, count);

    for (const auto& p : reg.params()) {
        auto f = to_f32(p->value.data());
        write_entry(os, p->name, p->value.shape(), f.data(), f.size());
    }
    for (const auto& b : reg.buffers()) {
        auto f = to_f32(b->data);
        write_entry(os, b->name, b->shape, f.data(), f.size());
    }
    if (include_optimizer) {
        for (const auto& p : reg.params()) {
            auto m = to_f32(p->adam_m);
            write_entry(os, "__opt__.m." + p->name, p->value.shape(), m.data(), m.size());
            auto v = to_f32(p->adam_v);
            write_entry(os, "__opt__.v." + p->name, p->value.shape(), v.data(), v.size());
        }
        const float step = reg.params().empty()
                               ? 0.0f
                               : static_cast<float>(reg.params().front()->adam_step);
        write_entry(os, "__opt__.step", {1}, &step, 1);
        const float ep = static_cast<float>(epoch);
        write_entry(os, "__meta__.epoch", {1}, &ep, 1);
    }
    if (!os) throw validation_error("write failure on checkpoint: " + path);
}

template <class T>
CheckpointMeta load_checkpoint(ParamRegistry<T>& reg, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw validation_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw validation_error("bad checkpoint magic in " + path);
    if (read_u32(is) != kCheckpointVersion)
        throw validation_error("unsupported checkpoint version in " + path);
    const std::uint32_t count = read_u32(is);

    std::map<std::string, Entry> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(is);
        Entry ent;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            ent.dims.push_back(read_u32(is));
            n *= ent.dims.back();
        }
        ent.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) ent.data[i] = read_f32(is);
        if (!is) throw validation_error("truncated checkpoint: " + path);
        entries.emplace(std::move(name), std::move(ent));
    }

    auto fetch = [&](const std::string& name, std::size_t expect) -> const Entry& {
        auto it = entries.find(name);
        if (it == entries.end())
            throw validation_error("checkpoint " + path + " is missing entry: " + name);
        if (it->second.data.size() != expect)
            throw validation_error("checkpoint entry " + name + " has " +
                                   std::to_string(it->second.data.size()) + " values, expected " +
                                   std::to_string(expect));
        return it->second;
    };

    for (auto& p : reg.params()) {
        const Entry& ent = fetch(p->name, p->value.numel());
        auto& dst = p->value.leaf_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(ent.data[i]);
    }
    for (auto& b : reg.buffers()) {
        const Entry& ent = fetch(b->name, b->data.size());
        for (std::size_t i = 0; i < b->data.size(); ++i) b->data[i] = static_cast<T>(ent.data[i]);
    }

    CheckpointMeta meta;
    if (entries.count("__opt__.step")) {
        meta.has_optimizer = true;
        const auto step = static_cast<std::int64_t>(entries.at("__opt__.step").data.at(0));
        for (auto& p : reg.params()) {
            const Entry& m = fetch("__opt__.m." + p->name, p->value.numel());
            const Entry& v = fetch("__opt__.v." + p->name, p->value.numel());
            for (std::size_t i = 0; i < p->adam_m.size(); ++i) {
                p->adam_m[i] = static_cast<T>(m.data[i]);
                p->adam_v[i] = static_cast<T>(v.data[i]);
            }
            p->adam_step = step;
        }
    }
    if (entries.count("__meta__.epoch"))
        meta.epoch = static_cast<std::int64_t>(entries.at("__meta__.epoch").data.at(0));
    return meta;
}

template void save_checkpoint<float>(const ParamRegistry<float>&, const std::string&, bool, std::int64_t);
template void save_checkpoint<double>(const ParamRegistry<double>&, const std::string&, bool, std::int64_t);
template CheckpointMeta load_checkpoint<float>(ParamRegistry<float>&, const std::string&);
template CheckpointMeta load_checkpoint<double>(ParamRegistry<double>&, const std::string&);

}  // namespace egoflow
