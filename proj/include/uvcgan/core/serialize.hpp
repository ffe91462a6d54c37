#pragma once

// Binary bundle of named tensors and strings, used for model parameters,
// optimizer moments and RNG states inside checkpoint directories. Layout is
// little-endian with an FNV-1a content hash per entry, verified on load.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/rng.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

namespace detail {

template <typename S>
struct DtypeTag;
template <>
struct DtypeTag<float> {
    static constexpr std::uint8_t value = 0;
    static constexpr const char* name = "float32";
};
template <>
struct DtypeTag<double> {
    static constexpr std::uint8_t value = 1;
    static constexpr const char* name = "float64";
};
inline constexpr std::uint8_t kDtypeBytes = 2;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("tensor bundle: truncated stream");
    return v;
}

}  // namespace detail

class TensorBundle {
public:
    template <typename S>
    void put(const std::string& name, const Tensor<S>& t) {
        Entry e;
        e.dtype = detail::DtypeTag<S>::value;
        e.shape = t.shape();
        e.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(S));
        std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
        entries_[name] = std::move(e);
    }

    void put_string(const std::string& name, const std::string& value) {
        Entry e;
        e.dtype = detail::kDtypeBytes;
        e.shape = Shape{static_cast<Index>(value.size())};
        e.bytes.assign(value.begin(), value.end());
        entries_[name] = std::move(e);
    }

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    template <typename S>
    Tensor<S> get(const std::string& name) const {
        const Entry& e = find(name);
        if (e.dtype != detail::DtypeTag<S>::value)
            throw IoError("tensor bundle: entry '" + name + "' is not " +
                          detail::DtypeTag<S>::name);
        Tensor<S> t(e.shape);
        if (e.bytes.size() != static_cast<size_t>(t.numel()) * sizeof(S))
            throw IoError("tensor bundle: entry '" + name + "' has inconsistent size");
        std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
        return t;
    }

    std::string get_string(const std::string& name) const {
        const Entry& e = find(name);
        if (e.dtype != detail::kDtypeBytes)
            throw IoError("tensor bundle: entry '" + name + "' is not a string");
        return std::string(e.bytes.begin(), e.bytes.end());
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries_) out.push_back(k);
        return out;
    }

    std::size_t size() const { return entries_.size(); }

    // Hash over all entries in name order; cheap integrity fingerprint used
    // by tests to compare whole parameter sets.
    std::uint64_t content_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, e] : entries_) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(&e.dtype, 1, h);
            h = fnv1a64(e.bytes.data(), e.bytes.size(), h);
        }
        return h;
    }

    void save(const std::filesystem::path& path) const {
        namespace fs = std::filesystem;
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("tensor bundle: cannot open " + tmp.string() + " for writing");
            os.write(kMagic, 4);
            detail::write_pod<std::uint32_t>(os, kVersion);
            detail::write_pod<std::uint64_t>(os, entries_.size());
            for (const auto& [name, e] : entries_) {
                detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
                os.write(name.data(), static_cast<std::streamsize>(name.size()));
                detail::write_pod<std::uint8_t>(os, e.dtype);
                detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.rank()));
                for (int i = 0; i < e.shape.rank(); ++i)
                    detail::write_pod<std::int64_t>(os, e.shape[i]);
                detail::write_pod<std::uint64_t>(os, fnv1a64(e.bytes.data(), e.bytes.size()));
                detail::write_pod<std::uint64_t>(os, e.bytes.size());
                os.write(reinterpret_cast<const char*>(e.bytes.data()),
                         static_cast<std::streamsize>(e.bytes.size()));
            }
            if (!os) throw IoError("tensor bundle: write failed for " + tmp.string());
        }
        fs::rename(tmp, path);
    }

    static TensorBundle load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("tensor bundle: cannot open " + path.string());
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, kMagic, 4) != 0)
            throw IoError("tensor bundle: bad magic in " + path.string());
        const auto version = detail::read_pod<std::uint32_t>(is);
        if (version != kVersion)
            throw IoError("tensor bundle: unsupported version in " + path.string());
        const auto count = detail::read_pod<std::uint64_t>(is);
        TensorBundle b;
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto name_len = detail::read_pod<std::uint32_t>(is);
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            Entry e;
            e.dtype = detail::read_pod<std::uint8_t>(is);
            const int rank = detail::read_pod<std::uint8_t>(is);
            if (rank < 1 || rank > 4) throw IoError("tensor bundle: bad rank for '" + name + "'");
            std::array<Index, 4> dims{1, 1, 1, 1};
            for (int d = 0; d < rank; ++d) dims[d] = detail::read_pod<std::int64_t>(is);
            e.shape = Shape::of_rank(rank, dims);
            const auto hash = detail::read_pod<std::uint64_t>(is);
            const auto nbytes = detail::read_pod<std::uint64_t>(is);
            e.bytes.resize(nbytes);
            is.read(reinterpret_cast<char*>(e.bytes.data()),
                    static_cast<std::streamsize>(nbytes));
            if (!is) throw IoError("tensor bundle: truncated entry '" + name + "'");
            if (fnv1a64(e.bytes.data(), e.bytes.size()) != hash)
                throw IoError("tensor bundle: hash mismatch for '" + name +
                              "' (corrupt checkpoint)");
            b.entries_[name] = std::move(e);
        }
        return b;
    }

private:
    struct Entry {
        std::uint8_t dtype = 0;
        Shape shape;
        std::vector<unsigned char> bytes;
    };

    const Entry& find(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw IoError("tensor bundle: missing entry '" + name + "'");
        return it->second;
    }

    static constexpr const char kMagic[5] = "UVTB";
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, Entry> entries_;
};

}  // namespace uvcgan
