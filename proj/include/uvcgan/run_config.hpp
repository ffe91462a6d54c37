#pragma once

// Top-level run configuration: one JSON document with a section per module.
// Parsing is strict about structure — unknown keys are rejected with their
// full path — while every known key is optional and falls back to its
// default, so a config file only has to state what it changes.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>

#include "uvcgan/config_json.hpp"
#include "uvcgan/data/augment.hpp"
#include "uvcgan/metrics.hpp"

namespace uvcgan {

inline constexpr int kRunConfigFormatVersion = 1;

inline AugmentTask augment_task_from_string(const std::string& s) {
    if (s == "square") return AugmentTask::square;
    if (s == "celeba") return AugmentTask::celeba;
    throw ConfigError("config: unknown augmentation task '" + s + "' (expected square or celeba)");
}

inline const char* to_string(AugmentTask t) {
    return t == AugmentTask::square ? "square" : "celeba";
}

struct DataConfig {
    std::string root;  // dataset directory with trainA/trainB/testA/testB
    AugmentConfig augment;

    bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
    int format_version = kRunConfigFormatVersion;
    std::uint64_t seed = 0;  // root seed; every module stream derives from it
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    LossWeights loss;
    TrainConfig train;  // weights and seed mirror `loss` and `seed`
    PretrainConfig pretrain;
    DataConfig data;
    MetricManifest metrics;

    // Push the top-level seed and the loss section into the configs that
    // embed their own copies.
    void resolve() {
        train.weights = loss;
        train.seed = seed;
        pretrain.seed = seed;
        metrics.seed = seed;
    }

    void validate() const {
        generator.validate();
        discriminator.validate();
        loss.validate();
        train.validate();
        pretrain.validate();
        metrics.validate();
        if (data.augment.size_scale <= 0)
            throw ConfigError("config: data.size_scale must be positive");
    }

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" +
                              (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
}

inline const nlohmann::json* section(const nlohmann::json& j, const char* name) {
    const auto it = j.find(name);
    if (it == j.end()) return nullptr;
    if (!it->is_object())
        throw ConfigError("config: '" + std::string(name) + "' must be an object");
    return &*it;
}

template <typename T>
void fetch(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        it->get_to(out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value at '" +
                          (section.empty() ? key : section + "." + key) + "': " + e.what());
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    detail::check_keys(j,
                       {"format_version", "seed", "generator", "discriminator", "loss", "train",
                        "pretrain", "data", "metrics"},
                       "");

    RunConfig c;
    detail::fetch(j, "format_version", c.format_version, "");
    if (c.format_version != kRunConfigFormatVersion)
        throw ConfigError("config: unsupported format_version " +
                          std::to_string(c.format_version));
    detail::fetch(j, "seed", c.seed, "");

    if (const auto* s = detail::section(j, "generator")) {
        detail::check_keys(*s,
                           {"in_channels", "base_features", "levels", "token_features",
                            "pe_features", "vit_features", "ffn_features", "vit_blocks", "heads",
                            "leaky_slope"},
                           "generator");
        detail::fetch(*s, "in_channels", c.generator.in_channels, "generator");
        detail::fetch(*s, "base_features", c.generator.base_features, "generator");
        detail::fetch(*s, "levels", c.generator.levels, "generator");
        detail::fetch(*s, "token_features", c.generator.token_features, "generator");
        detail::fetch(*s, "pe_features", c.generator.pe_features, "generator");
        detail::fetch(*s, "vit_features", c.generator.vit_features, "generator");
        detail::fetch(*s, "ffn_features", c.generator.ffn_features, "generator");
        detail::fetch(*s, "vit_blocks", c.generator.vit_blocks, "generator");
        detail::fetch(*s, "heads", c.generator.heads, "generator");
        detail::fetch(*s, "leaky_slope", c.generator.leaky_slope, "generator");
    }

    if (const auto* s = detail::section(j, "discriminator")) {
        detail::check_keys(*s, {"in_channels", "base_channels", "n_layers", "leaky_slope"},
                           "discriminator");
        detail::fetch(*s, "in_channels", c.discriminator.in_channels, "discriminator");
        detail::fetch(*s, "base_channels", c.discriminator.base_channels, "discriminator");
        detail::fetch(*s, "n_layers", c.discriminator.n_layers, "discriminator");
        detail::fetch(*s, "leaky_slope", c.discriminator.leaky_slope, "discriminator");
    }

    if (const auto* s = detail::section(j, "loss")) {
        detail::check_keys(*s, {"lambda_cyc", "lambda_idt", "lambda_gp", "gamma"}, "loss");
        detail::fetch(*s, "lambda_cyc", c.loss.lambda_cyc, "loss");
        detail::fetch(*s, "lambda_idt", c.loss.lambda_idt, "loss");
        detail::fetch(*s, "lambda_gp", c.loss.lambda_gp, "loss");
        detail::fetch(*s, "gamma", c.loss.gamma, "loss");
    }

    if (const auto* s = detail::section(j, "train")) {
        detail::check_keys(*s,
                           {"total_iters", "lr", "batch_size", "use_identity", "use_gp",
                            "pretrained_init", "pool_size"},
                           "train");
        detail::fetch(*s, "total_iters", c.train.total_iters, "train");
        detail::fetch(*s, "lr", c.train.lr, "train");
        detail::fetch(*s, "batch_size", c.train.batch_size, "train");
        detail::fetch(*s, "use_identity", c.train.use_identity, "train");
        detail::fetch(*s, "use_gp", c.train.use_gp, "train");
        detail::fetch(*s, "pretrained_init", c.train.pretrained_init, "train");
        detail::fetch(*s, "pool_size", c.train.pool_size, "train");
    }

    if (const auto* s = detail::section(j, "pretrain")) {
        detail::check_keys(*s, {"patch_size", "mask_prob", "lr", "total_steps"}, "pretrain");
        detail::fetch(*s, "patch_size", c.pretrain.mask.patch_size, "pretrain");
        detail::fetch(*s, "mask_prob", c.pretrain.mask.mask_prob, "pretrain");
        detail::fetch(*s, "lr", c.pretrain.lr, "pretrain");
        detail::fetch(*s, "total_steps", c.pretrain.total_steps, "pretrain");
    }

    if (const auto* s = detail::section(j, "data")) {
        detail::check_keys(*s, {"root", "task", "size_scale", "strict_size"}, "data");
        detail::fetch(*s, "root", c.data.root, "data");
        std::string task = to_string(c.data.augment.task);
        detail::fetch(*s, "task", task, "data");
        c.data.augment.task = augment_task_from_string(task);
        detail::fetch(*s, "size_scale", c.data.augment.size_scale, "data");
        detail::fetch(*s, "strict_size", c.data.augment.strict, "data");
    }

    if (const auto* s = detail::section(j, "metrics")) {
        detail::check_keys(*s,
                           {"fid_sample_policy", "kid_subset_size", "kid_n_subsets",
                            "preprocess_id", "extractor_id"},
                           "metrics");
        detail::fetch(*s, "fid_sample_policy", c.metrics.fid_sample_policy, "metrics");
        detail::fetch(*s, "kid_subset_size", c.metrics.kid_subset_size, "metrics");
        detail::fetch(*s, "kid_n_subsets", c.metrics.kid_n_subsets, "metrics");
        detail::fetch(*s, "preprocess_id", c.metrics.preprocess_id, "metrics");
        detail::fetch(*s, "extractor_id", c.metrics.extractor_id, "metrics");
    }

    c.resolve();
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: failed to parse '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

// The full document with every effective value, suitable for echoing into a
// run directory.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"format_version", c.format_version},
            {"seed", c.seed},
            {"generator", c.generator},
            {"discriminator", c.discriminator},
            {"loss", c.loss},
            {"train",
             {{"total_iters", c.train.total_iters},
              {"lr", c.train.lr},
              {"batch_size", c.train.batch_size},
              {"use_identity", c.train.use_identity},
              {"use_gp", c.train.use_gp},
              {"pretrained_init", c.train.pretrained_init},
              {"pool_size", c.train.pool_size}}},
            {"pretrain",
             {{"patch_size", c.pretrain.mask.patch_size},
              {"mask_prob", c.pretrain.mask.mask_prob},
              {"lr", c.pretrain.lr},
              {"total_steps", c.pretrain.total_steps}}},
            {"data",
             {{"root", c.data.root},
              {"task", to_string(c.data.augment.task)},
              {"size_scale", c.data.augment.size_scale},
              {"strict_size", c.data.augment.strict}}},
            {"metrics",
             {{"fid_sample_policy", c.metrics.fid_sample_policy},
              {"kid_subset_size", c.metrics.kid_subset_size},
              {"kid_n_subsets", c.metrics.kid_n_subsets},
              {"preprocess_id", c.metrics.preprocess_id},
              {"extractor_id", c.metrics.extractor_id}}}};
}

}  // namespace uvcgan
