#pragma once

// JSON (de)serialization for every config struct, used by checkpoints and the
// command-line front end.  from_json requires all fields to be present, so a
// round trip through to_json always succeeds.

#include <json.hpp>

#include "uvcgan/discriminator.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/losses.hpp"
#include "uvcgan/metrics.hpp"
#include "uvcgan/pretrain.hpp"
#include "uvcgan/trainer.hpp"

namespace uvcgan {

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"in_channels", c.in_channels},
         {"base_features", c.base_features},
         {"levels", c.levels},
         {"token_features", c.token_features},
         {"pe_features", c.pe_features},
         {"vit_features", c.vit_features},
         {"ffn_features", c.ffn_features},
         {"vit_blocks", c.vit_blocks},
         {"heads", c.heads},
         {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    j.at("in_channels").get_to(c.in_channels);
    j.at("base_features").get_to(c.base_features);
    j.at("levels").get_to(c.levels);
    j.at("token_features").get_to(c.token_features);
    j.at("pe_features").get_to(c.pe_features);
    j.at("vit_features").get_to(c.vit_features);
    j.at("ffn_features").get_to(c.ffn_features);
    j.at("vit_blocks").get_to(c.vit_blocks);
    j.at("heads").get_to(c.heads);
    j.at("leaky_slope").get_to(c.leaky_slope);
}

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
    j = {{"in_channels", c.in_channels},
         {"base_channels", c.base_channels},
         {"n_layers", c.n_layers},
         {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
    j.at("in_channels").get_to(c.in_channels);
    j.at("base_channels").get_to(c.base_channels);
    j.at("n_layers").get_to(c.n_layers);
    j.at("leaky_slope").get_to(c.leaky_slope);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
    j = {{"lambda_cyc", w.lambda_cyc},
         {"lambda_idt", w.lambda_idt},
         {"lambda_gp", w.lambda_gp},
         {"gamma", w.gamma}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
    j.at("lambda_cyc").get_to(w.lambda_cyc);
    j.at("lambda_idt").get_to(w.lambda_idt);
    j.at("lambda_gp").get_to(w.lambda_gp);
    j.at("gamma").get_to(w.gamma);
}

inline void to_json(nlohmann::json& j, const MaskSpec& m) {
    j = {{"patch_size", m.patch_size}, {"mask_prob", m.mask_prob}};
}

inline void from_json(const nlohmann::json& j, MaskSpec& m) {
    j.at("patch_size").get_to(m.patch_size);
    j.at("mask_prob").get_to(m.mask_prob);
}

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = {{"mask", c.mask}, {"lr", c.lr}, {"total_steps", c.total_steps}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
    j.at("mask").get_to(c.mask);
    j.at("lr").get_to(c.lr);
    j.at("total_steps").get_to(c.total_steps);
    j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"total_iters", c.total_iters},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"weights", c.weights},
         {"use_identity", c.use_identity},
         {"use_gp", c.use_gp},
         {"pretrained_init", c.pretrained_init},
         {"pool_size", c.pool_size},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("total_iters").get_to(c.total_iters);
    j.at("lr").get_to(c.lr);
    j.at("batch_size").get_to(c.batch_size);
    j.at("weights").get_to(c.weights);
    j.at("use_identity").get_to(c.use_identity);
    j.at("use_gp").get_to(c.use_gp);
    j.at("pretrained_init").get_to(c.pretrained_init);
    j.at("pool_size").get_to(c.pool_size);
    j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const MetricManifest& m) {
    j = {{"fid_sample_policy", m.fid_sample_policy},
         {"kid_subset_size", m.kid_subset_size},
         {"kid_n_subsets", m.kid_n_subsets},
         {"preprocess_id", m.preprocess_id},
         {"extractor_id", m.extractor_id},
         {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, MetricManifest& m) {
    j.at("fid_sample_policy").get_to(m.fid_sample_policy);
    j.at("kid_subset_size").get_to(m.kid_subset_size);
    j.at("kid_n_subsets").get_to(m.kid_n_subsets);
    j.at("preprocess_id").get_to(m.preprocess_id);
    j.at("extractor_id").get_to(m.extractor_id);
    j.at("seed").get_to(m.seed);
}

// Reports carry the raw MMD² statistics plus the ×100 convention used in
// result tables; only the raw values are read back.
inline void to_json(nlohmann::json& j, const DirectionReport& d) {
    j = {{"direction", d.direction},
         {"n_real", d.n_real},
         {"n_translated", d.n_translated},
         {"fid", d.fid},
         {"kid_mean", d.kid_mean},
         {"kid_stddev", d.kid_stddev},
         {"kid_mean_x100", 100.0 * d.kid_mean},
         {"kid_stddev_x100", 100.0 * d.kid_stddev}};
}

inline void from_json(const nlohmann::json& j, DirectionReport& d) {
    j.at("direction").get_to(d.direction);
    j.at("n_real").get_to(d.n_real);
    j.at("n_translated").get_to(d.n_translated);
    j.at("fid").get_to(d.fid);
    j.at("kid_mean").get_to(d.kid_mean);
    j.at("kid_stddev").get_to(d.kid_stddev);
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    j = {{"manifest", r.manifest},
         {"checkpoint", r.checkpoint},
         {"parameter_hash", r.parameter_hash},
         {"a2b", r.a2b},
         {"b2a", r.b2a}};
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
    j.at("manifest").get_to(r.manifest);
    j.at("checkpoint").get_to(r.checkpoint);
    j.at("parameter_hash").get_to(r.parameter_hash);
    j.at("a2b").get_to(r.a2b);
    j.at("b2a").get_to(r.b2a);
}

}  // namespace uvcgan
