#pragma once

// Unpaired two-domain dataset: directory discovery plus an epoch-shuffled
// sampler that draws from each domain independently.
//
// Layout under the root:
//   trainA/ trainB/ testA/ testB/      (required for their split)
//   valA/ valB/                        (optional; merged into the test split)

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/rng.hpp"

namespace uvcgan {

struct UnpairedDataset {
    std::string root;
    std::string split;  // "train" or "test"
    std::vector<std::string> domain_a, domain_b;  // sorted unique paths
};

namespace detail {

inline bool image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return ext == ".png" || ext == ".ppm";
}

inline void collect_images(const std::filesystem::path& dir, bool required,
                           std::vector<std::string>& out) {
    if (!std::filesystem::is_directory(dir)) {
        if (required) throw DatasetError("missing dataset directory: " + dir.string());
        return;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && image_file(entry.path()))
            out.push_back(entry.path().string());
}

}  // namespace detail

inline UnpairedDataset load_dataset(const std::string& root, const std::string& split) {
    if (split != "train" && split != "test")
        throw DatasetError("unknown split '" + split + "' (expected train or test)");

    UnpairedDataset ds;
    ds.root = root;
    ds.split = split;
    const std::filesystem::path base(root);

    detail::collect_images(base / (split + "A"), /*required=*/true, ds.domain_a);
    detail::collect_images(base / (split + "B"), /*required=*/true, ds.domain_b);
    if (split == "test") {
        // Validation images, when present, fold into the evaluation split.
        detail::collect_images(base / "valA", /*required=*/false, ds.domain_a);
        detail::collect_images(base / "valB", /*required=*/false, ds.domain_b);
    }

    for (auto* dom : {&ds.domain_a, &ds.domain_b}) {
        std::sort(dom->begin(), dom->end());
        dom->erase(std::unique(dom->begin(), dom->end()), dom->end());
    }
    if (ds.domain_a.empty() || ds.domain_b.empty())
        throw DatasetError("dataset at " + root + " has an empty domain for split " + split);
    return ds;
}

// Uniform unpaired sampling: each domain is a stream of independently
// reshuffled epochs, so items recur once per epoch and never pair up.
class UnpairedSampler {
public:
    UnpairedSampler() = default;
    UnpairedSampler(std::size_t n_a, std::size_t n_b) : a_(n_a), b_(n_b) {
        if (n_a == 0 || n_b == 0) throw DatasetError("sampler needs non-empty domains");
    }

    std::pair<std::size_t, std::size_t> next(Rng& rng) {
        return {a_.next(rng), b_.next(rng)};
    }

    std::string serialize() const {
        std::ostringstream os;
        os << a_.serialize() << " " << b_.serialize();
        return os.str();
    }

    void deserialize(const std::string& text) {
        std::istringstream is(text);
        a_.deserialize(is);
        b_.deserialize(is);
        if (!is) throw IoError("corrupt sampler state");
    }

private:
    struct Stream {
        std::vector<std::size_t> perm;
        std::size_t cursor = 0;

        Stream() = default;
        explicit Stream(std::size_t n) : perm(n), cursor(n) {
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        }

        std::size_t next(Rng& rng) {
            if (cursor >= perm.size()) {
                for (std::size_t i = perm.size(); i > 1; --i)
                    std::swap(perm[i - 1], perm[std::size_t(rng.uniform_index(i))]);
                cursor = 0;
            }
            return perm[cursor++];
        }

        std::string serialize() const {
            std::ostringstream os;
            os << perm.size() << " " << cursor;
            for (std::size_t v : perm) os << " " << v;
            return os.str();
        }

        void deserialize(std::istringstream& is) {
            std::size_t n = 0;
            is >> n >> cursor;
            perm.resize(n);
            for (auto& v : perm) is >> v;
        }
    };

    Stream a_, b_;
};

}  // namespace uvcgan
