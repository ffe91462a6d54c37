#pragma once

// Checkpoint containers.  A checkpoint is a directory:
//
//   manifest.json   format version, kind, scalar type, iteration, configs
//   <net>.bin       per-network tensor bundle: parameters, Adam moments,
//                   optimizer step counter
//   state.bin       RNG states, image pools, and everything else needed to
//                   resume bit-identically
//
// Writes go to "<dir>.tmp" and land via rename.  Every file inside is
// complete before the swap; replacing an existing checkpoint removes it
// first, so the remove+rename pair itself is the only non-atomic window.

#include <filesystem>
#include <fstream>
#include <string>

#include "uvcgan/config_json.hpp"
#include "uvcgan/core/serialize.hpp"
#include "uvcgan/pretrain.hpp"
#include "uvcgan/trainer.hpp"

namespace uvcgan {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

template <typename S>
void pack_network(TensorBundle& b, const ParamSet<S>& ps, const Adam<S>& opt) {
    ps.save(b, "p.");
    const auto& names = ps.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        b.put<S>("m." + names[i], opt.first_moments()[i]);
        b.put<S>("v." + names[i], opt.second_moments()[i]);
    }
    b.put_string("t", std::to_string(opt.step_count()));
}

template <typename S>
void unpack_network(const TensorBundle& b, ParamSet<S>& ps, Adam<S>& opt) {
    ps.load(b, "p.");
    const auto& names = ps.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        Tensor<S> m = b.get<S>("m." + names[i]);
        Tensor<S> v = b.get<S>("v." + names[i]);
        if (m.shape() != ps.vars()[i].shape() || v.shape() != ps.vars()[i].shape())
            throw IoError("checkpoint: optimizer moment shape mismatch for " + names[i]);
        opt.first_moments()[i] = std::move(m);
        opt.second_moments()[i] = std::move(v);
    }
    opt.set_step_count(std::stoll(b.get_string("t")));
}

inline void write_manifest(const std::filesystem::path& dir, const nlohmann::json& manifest) {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("checkpoint: cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("checkpoint: failed writing manifest in " + dir.string());
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir, const char* expected_kind) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("checkpoint: no manifest at " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
            throw IoError("checkpoint: unsupported format version in " + dir.string());
        if (j.at("kind").get<std::string>() != expected_kind)
            throw IoError("checkpoint: expected a " + std::string(expected_kind) +
                          " checkpoint at " + dir.string());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed manifest at " + dir.string() + ": " + e.what());
    }
    return j;
}

template <typename S>
void check_scalar(const nlohmann::json& manifest, const std::filesystem::path& dir) {
    if (manifest.at("scalar").get<std::string>() != DtypeTag<S>::name)
        throw IoError("checkpoint: " + dir.string() + " stores " +
                      manifest.at("scalar").get<std::string>() + ", not " + DtypeTag<S>::name);
}

// Stage into dir.tmp, then swap into place.
template <typename WriteFn>
void staged_write(const std::filesystem::path& dir, WriteFn&& write) {
    namespace fs = std::filesystem;
    const fs::path tmp(dir.string() + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write(tmp);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

}  // namespace detail

template <typename S>
void save_pretrain_checkpoint(const Pretrainer<S>& p, const std::string& dir) {
    detail::staged_write(std::filesystem::path(dir), [&](const std::filesystem::path& tmp) {
        nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                                   {"kind", "pretrain"},
                                   {"scalar", detail::DtypeTag<S>::name},
                                   {"iteration", p.iteration()},
                                   {"generator", p.generator().config()},
                                   {"pretrain", p.config()}};
        detail::write_manifest(tmp, manifest);

        TensorBundle net;
        detail::pack_network(net, p.generator().params(), p.optimizer());
        net.save(tmp / "generator.bin");

        TensorBundle state;
        state.put_string("rng.mask", p.mask_rng().serialize());
        state.put_string("rng.data", p.data_rng().serialize());
        state.save(tmp / "state.bin");
    });
}

template <typename S>
Pretrainer<S> load_pretrain_checkpoint(const std::string& dir) {
    const std::filesystem::path d(dir);
    nlohmann::json manifest = detail::read_manifest(d, "pretrain");
    detail::check_scalar<S>(manifest, d);

    GeneratorConfig gcfg = manifest.at("generator").get<GeneratorConfig>();
    PretrainConfig pcfg = manifest.at("pretrain").get<PretrainConfig>();
    Pretrainer<S> p(gcfg, pcfg);

    TensorBundle net = TensorBundle::load(d / "generator.bin");
    detail::unpack_network(net, p.generator().params(), p.optimizer());

    TensorBundle state = TensorBundle::load(d / "state.bin");
    p.mask_rng().deserialize(state.get_string("rng.mask"));
    p.data_rng().deserialize(state.get_string("rng.data"));
    p.set_iteration(manifest.at("iteration").get<std::int64_t>());
    return p;
}

template <typename S>
void save_train_checkpoint(const Trainer<S>& t, const std::string& dir) {
    detail::staged_write(std::filesystem::path(dir), [&](const std::filesystem::path& tmp) {
        nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                                   {"kind", "train"},
                                   {"scalar", detail::DtypeTag<S>::name},
                                   {"iteration", t.iteration()},
                                   {"generator", t.gen_config()},
                                   {"discriminator", t.disc_config()},
                                   {"train", t.config()}};
        detail::write_manifest(tmp, manifest);

        // One bundle at a time keeps peak memory at a single network's worth.
        auto write_net = [&](const char* name, const ParamSet<S>& ps, const Adam<S>& opt) {
            TensorBundle b;
            detail::pack_network(b, ps, opt);
            b.save(tmp / name);
        };
        write_net("gen_ab.bin", t.gen_ab().params(), t.opt_gen_ab());
        write_net("gen_ba.bin", t.gen_ba().params(), t.opt_gen_ba());
        write_net("disc_a.bin", t.disc_a().params(), t.opt_disc_a());
        write_net("disc_b.bin", t.disc_b().params(), t.opt_disc_b());

        TensorBundle state;
        t.pool_a().save(state, "pool_a.");
        t.pool_b().save(state, "pool_b.");
        state.put_string("rng.pool", t.pool_rng().serialize());
        state.put_string("rng.data", t.data_rng().serialize());
        state.save(tmp / "state.bin");
    });
}

template <typename S>
Trainer<S> load_train_checkpoint(const std::string& dir) {
    const std::filesystem::path d(dir);
    nlohmann::json manifest = detail::read_manifest(d, "train");
    detail::check_scalar<S>(manifest, d);

    GeneratorConfig gcfg = manifest.at("generator").get<GeneratorConfig>();
    DiscriminatorConfig dcfg = manifest.at("discriminator").get<DiscriminatorConfig>();
    TrainConfig tcfg = manifest.at("train").get<TrainConfig>();
    Trainer<S> t(gcfg, dcfg, tcfg);

    {
        TensorBundle b = TensorBundle::load(d / "gen_ab.bin");
        detail::unpack_network(b, t.gen_ab().params(), t.opt_gen_ab());
    }
    {
        TensorBundle b = TensorBundle::load(d / "gen_ba.bin");
        detail::unpack_network(b, t.gen_ba().params(), t.opt_gen_ba());
    }
    {
        TensorBundle b = TensorBundle::load(d / "disc_a.bin");
        detail::unpack_network(b, t.disc_a().params(), t.opt_disc_a());
    }
    {
        TensorBundle b = TensorBundle::load(d / "disc_b.bin");
        detail::unpack_network(b, t.disc_b().params(), t.opt_disc_b());
    }

    TensorBundle state = TensorBundle::load(d / "state.bin");
    t.pool_a().load(state, "pool_a.");
    t.pool_b().load(state, "pool_b.");
    t.pool_rng().deserialize(state.get_string("rng.pool"));
    t.data_rng().deserialize(state.get_string("rng.data"));
    t.set_iteration(manifest.at("iteration").get<std::int64_t>());
    return t;
}

// Reads just the generator out of a pretrain (or train) checkpoint and
// verifies it matches the architecture the caller is about to train.
template <typename S>
Generator<S> load_pretrained_generator(const std::string& dir, const GeneratorConfig& expected) {
    const std::filesystem::path d(dir);
    std::ifstream in(d / "manifest.json");
    if (!in) throw IoError("checkpoint: no manifest at " + dir);
    nlohmann::json manifest;
    std::string kind;
    GeneratorConfig gcfg;
    try {
        in >> manifest;
        if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
            throw IoError("checkpoint: unsupported format version in " + dir);
        kind = manifest.at("kind").get<std::string>();
        gcfg = manifest.at("generator").get<GeneratorConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed manifest at " + dir + ": " + e.what());
    }
    detail::check_scalar<S>(manifest, d);
    if (gcfg != expected)
        throw IoError("checkpoint: generator architecture in " + dir +
                      " does not match the requested config");

    Generator<S> gen(gcfg, /*seed=*/0);
    const char* blob = kind == "pretrain" ? "generator.bin" : "gen_ab.bin";
    TensorBundle b = TensorBundle::load(d / blob);
    gen.params().load(b, "p.");
    return gen;
}

// Builds a trainer from configs, applying the pretrained initialization when
// the config names one.
template <typename S>
Trainer<S> init_train(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                      const TrainConfig& tcfg) {
    Trainer<S> t(gcfg, dcfg, tcfg);
    if (!tcfg.pretrained_init.empty())
        t.init_from_pretrained(load_pretrained_generator<S>(tcfg.pretrained_init, gcfg));
    return t;
}

}  // namespace uvcgan
