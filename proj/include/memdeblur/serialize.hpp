#ifndef MEMDEBLUR_SERIALIZE_HPP
#define MEMDEBLUR_SERIALIZE_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memdeblur/errors.hpp"
#include "memdeblur/tensor.hpp"

namespace memdeblur {

// On-disk container shared by checkpoints, bank snapshots and attention
// traces: a JSON header (sorted keys, so byte-stable) followed by named
// little-endian float32 arrays.
//
//   "MDAR" | u32 header_len | header JSON | payload
//
// Array entries in the header carry {name, shape, offset, count}; offsets are
// byte positions into the payload.
struct ArrayStore {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor<float>>> arrays;

    void add(const std::string& name, Tensor<float> t) {
        arrays.emplace_back(name, std::move(t));
    }

    template <typename T>
    void add(const std::string& name, const Tensor<T>& t) {
        arrays.emplace_back(name, t.template cast<float>());
    }

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor<float>& at(const std::string& name) const {
        const Tensor<float>* t = find(name);
        if (!t) throw IoError("array store: missing array '" + name + "'");
        return *t;
    }
};

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32_le(std::ostream& os, const float* data, std::size_t count) {
    static_assert(sizeof(float) == 4);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, data + i, 4);
        write_u32_le(os, bits);
    }
}

inline void read_f32_le(std::istream& is, float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = read_u32_le(is);
        std::memcpy(data + i, &bits, 4);
    }
}

} // namespace detail

inline void save_array_store(const std::string& path, const ArrayStore& store) {
    nlohmann::json header;
    header["meta"] = store.meta;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : store.arrays) {
        dir.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.numel()}});
        offset += t.numel() * 4;
    }
    header["arrays"] = dir;
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("MDAR", 4);
    detail::write_u32_le(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : store.arrays) detail::write_f32_le(os, t.data(), t.numel());
    if (!os) throw IoError("write failed: " + path);
}

inline ArrayStore load_array_store(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MDAR", 4) != 0)
        throw IoError("not an array store file: " + path);
    const std::uint32_t hlen = detail::read_u32_le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw IoError("truncated header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    ArrayStore store;
    store.meta = header.at("meta");
    for (const auto& e : header.at("arrays")) {
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        Tensor<float> t(shape);
        detail::read_f32_le(is, t.data(), t.numel());
        if (!is) throw IoError("truncated payload in " + path + " at array " +
                               e.at("name").get<std::string>());
        store.add(e.at("name").get<std::string>(), std::move(t));
    }
    return store;
}

} // namespace memdeblur

#endif
