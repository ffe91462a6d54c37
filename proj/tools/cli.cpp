#include "uvcgan/cli.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "uvcgan/checkpoint.hpp"
#include "uvcgan/data/augment.hpp"
#include "uvcgan/data/batch.hpp"
#include "uvcgan/data/dataset.hpp"
#include "uvcgan/data/image_io.hpp"
#include "uvcgan/metrics.hpp"
#include "uvcgan/run_config.hpp"

namespace uvcgan::cli {
namespace {

namespace fs = std::filesystem;

// Relative output paths land under $UVCGAN_OUT when it is set.
fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_relative())
        if (const char* root = std::getenv("UVCGAN_OUT")) return fs::path(root) / p;
    return p;
}

template <typename F>
int guarded(F&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDataset;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

template <typename F>
int with_precision(const std::string& precision, F&& fn) {
    if (precision == "float32") return fn(float{});
    if (precision == "float64") return fn(double{});
    throw ConfigError("--precision must be float32 or float64, got '" + precision + "'");
}

std::string checkpoint_scalar(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("checkpoint: no manifest at " + dir);
    try {
        nlohmann::json j;
        in >> j;
        return j.at("scalar").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed manifest at " + dir + ": " + e.what());
    }
}

void check_image_channels(const RunConfig& cfg) {
    if (cfg.generator.in_channels != 3)
        throw ConfigError("generator.in_channels must be 3 to run on RGB image files");
    if (cfg.discriminator.in_channels != 3)
        throw ConfigError("discriminator.in_channels must be 3 to run on RGB image files");
}

template <typename S>
std::vector<Tensor<S>> load_images(const std::vector<std::string>& files) {
    std::vector<Tensor<S>> out;
    out.reserve(files.size());
    for (const std::string& f : files) out.push_back(image_to_tensor<S>(load_image(f)));
    return out;
}

// One training batch: uniform draws from `pool`, protocol augmentation, and
// (for pretraining) small rotations plus color jitter.  Every random draw
// comes from `rng`, which lives inside the checkpoint, so resumed runs see
// the exact same batches.
template <typename S>
Tensor<S> sample_batch(const std::vector<Tensor<S>>& pool, const AugmentConfig& aug, Rng& rng,
                       Index batch, bool pretrain_extras) {
    std::vector<Tensor<S>> items;
    items.reserve(std::size_t(batch));
    for (Index i = 0; i < batch; ++i) {
        const auto& src = pool[std::size_t(rng.uniform_index(Index(pool.size())))];
        Tensor<S> img = augment_train(src, aug, rng);
        if (pretrain_extras) {
            img = rotate(img, rng.uniform(-10.0, 10.0));
            img = color_jitter(img, rng, 0.2);
        }
        items.push_back(std::move(img));
    }
    return stack_batch(items);
}

void write_config_echo(const RunConfig& cfg, const fs::path& out) {
    std::ofstream f(out / "config.json");
    f << run_config_to_json(cfg).dump(2) << "\n";
}

std::ofstream open_log(const fs::path& out, const UnpairedDataset& ds) {
    std::ofstream log(out / "log.jsonl");
    if (!log) throw IoError("cannot write log in " + out.string());
    log << nlohmann::json{{"event", "dataset"},
                          {"root", ds.root},
                          {"split", ds.split},
                          {"domain_a", ds.domain_a.size()},
                          {"domain_b", ds.domain_b.size()}}
               .dump()
        << "\n";
    return log;
}

nlohmann::json metrics_record(std::int64_t iter, const IterationMetrics& m) {
    return {{"iter", iter},         {"lr", m.lr},
            {"disc_a", m.disc_a},   {"disc_b", m.disc_b},
            {"gp_a", m.gp_a},       {"gp_b", m.gp_b},
            {"disc_total", m.disc_total},
            {"adv_ab", m.adv_ab},   {"adv_ba", m.adv_ba},
            {"cyc_a", m.cyc_a},     {"cyc_b", m.cyc_b},
            {"idt_a", m.idt_a},     {"idt_b", m.idt_b},
            {"gen_total", m.gen_total}};
}

// ---------------------------------------------------------------------------
// pretrain

template <typename S>
int do_pretrain(const RunConfig& cfg, const fs::path& out, const std::string& resume,
                std::int64_t run_steps, std::int64_t ckpt_every) {
    check_image_channels(cfg);
    UnpairedDataset ds = load_dataset(cfg.data.root, "train");

    // The restoration corpus is the union of both training domains.
    std::vector<std::string> files = ds.domain_a;
    files.insert(files.end(), ds.domain_b.begin(), ds.domain_b.end());
    std::vector<Tensor<S>> images = load_images<S>(files);

    Pretrainer<S> p = resume.empty() ? Pretrainer<S>(cfg.generator, cfg.pretrain)
                                     : load_pretrain_checkpoint<S>(resume);
    if (!resume.empty())
        std::clog << "resuming from " << resume << " at step " << p.iteration() << "\n";
    fs::create_directories(out);
    write_config_echo(cfg, out);
    std::ofstream log = open_log(out, ds);

    const std::int64_t total = p.config().total_steps;
    const std::int64_t limit =
        run_steps < 0 ? total : std::min(total, p.iteration() + run_steps);
    const fs::path ckpt = out / "checkpoint";

    while (p.iteration() < limit) {
        Tensor<S> batch = sample_batch(images, cfg.data.augment, p.data_rng(),
                                       cfg.train.batch_size, /*pretrain_extras=*/true);
        const double loss = double(p.step(batch));
        log << nlohmann::json{{"iter", p.iteration() - 1}, {"lr", p.current_lr()}, {"loss", loss}}
                   .dump()
            << "\n";
        if (ckpt_every > 0 && p.iteration() % ckpt_every == 0)
            save_pretrain_checkpoint(p, ckpt.string());
    }
    save_pretrain_checkpoint(p, ckpt.string());
    std::cout << "pretrain: " << p.iteration() << "/" << total << " steps, checkpoint at "
              << ckpt.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

template <typename S>
int do_train(const RunConfig& cfg, const fs::path& out, const std::string& resume,
             std::int64_t run_iters, std::int64_t ckpt_every) {
    check_image_channels(cfg);
    UnpairedDataset ds = load_dataset(cfg.data.root, "train");
    std::vector<Tensor<S>> images_a = load_images<S>(ds.domain_a);
    std::vector<Tensor<S>> images_b = load_images<S>(ds.domain_b);

    Trainer<S> t = resume.empty()
                       ? init_train<S>(cfg.generator, cfg.discriminator, cfg.train)
                       : load_train_checkpoint<S>(resume);
    if (!resume.empty())
        std::clog << "resuming from " << resume << " at iteration " << t.iteration() << "\n";

    fs::create_directories(out);
    write_config_echo(cfg, out);
    std::ofstream log = open_log(out, ds);

    const std::int64_t total = t.config().total_iters;
    const std::int64_t limit =
        run_iters < 0 ? total : std::min(total, t.iteration() + run_iters);
    const Index batch = t.config().batch_size;
    const fs::path ckpt = out / "checkpoint";

    while (t.iteration() < limit) {
        Tensor<S> a = sample_batch(images_a, cfg.data.augment, t.data_rng(), batch, false);
        Tensor<S> b = sample_batch(images_b, cfg.data.augment, t.data_rng(), batch, false);
        IterationMetrics m = t.train_iteration(a, b);
        log << metrics_record(t.iteration() - 1, m).dump() << "\n";
        if (ckpt_every > 0 && t.iteration() % ckpt_every == 0)
            save_train_checkpoint(t, ckpt.string());
    }
    save_train_checkpoint(t, ckpt.string());
    std::cout << "train: " << t.iteration() << "/" << total << " iterations, checkpoint at "
              << ckpt.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// translate

template <typename S>
Generator<S> load_direction_generator(const std::string& dir, const std::string& direction) {
    const fs::path d(dir);
    nlohmann::json manifest = uvcgan::detail::read_manifest(d, "train");
    uvcgan::detail::check_scalar<S>(manifest, d);
    GeneratorConfig gcfg;
    try {
        gcfg = manifest.at("generator").get<GeneratorConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed manifest at " + dir + ": " + e.what());
    }
    Generator<S> gen(gcfg, /*seed=*/0);
    TensorBundle b = TensorBundle::load(d / (direction == "a2b" ? "gen_ab.bin" : "gen_ba.bin"));
    gen.params().load(b, "p.");
    return gen;
}

template <typename S>
void blit(Tensor<S>& dst, const Tensor<S>& src, Index top, Index left) {
    for (Index c = 0; c < src.shape()[0]; ++c)
        for (Index y = 0; y < src.shape()[1]; ++y)
            for (Index x = 0; x < src.shape()[2]; ++x)
                dst.at(c, top + y, left + x) = src.at(c, y, x);
}

template <typename S>
int do_translate(const std::string& ckpt, const std::string& in_dir, const fs::path& out,
                 const std::string& direction, Index size) {
    Generator<S> gen = load_direction_generator<S>(ckpt, direction);

    std::vector<std::string> files;
    uvcgan::detail::collect_images(fs::path(in_dir), /*required=*/true, files);
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DatasetError("no images in " + in_dir);

    fs::create_directories(out);
    NoGradGuard frozen;
    Tensor<S> grid = Tensor<S>::zeros(Shape{3, Index(files.size()) * size, 2 * size});
    Index row = 0;
    for (const std::string& f : files) {
        Tensor<S> x = eval_preprocess(image_to_tensor<S>(load_image(f)), size);
        Tensor<S> y = unstack_batch(gen(Var<S>::constant(stack_batch<S>({x}))).value())[0];
        save_image((out / fs::path(f).filename()).string(), tensor_to_image(y));
        blit(grid, x, row * size, 0);
        blit(grid, y, row * size, size);
        ++row;
    }
    save_image((out / "grid.png").string(), tensor_to_image(grid));
    std::cout << "translate: " << files.size() << " images (" << direction << ") written to "
              << out.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

template <typename S>
int do_evaluate(const RunConfig& cfg, const std::string& ckpt, const fs::path& out_file,
                bool self_mode) {
    UnpairedDataset ds = load_dataset(cfg.data.root, "test");
    const Index size = cfg.data.augment.output_size();

    auto preprocess = [size](std::vector<Tensor<S>> raw) {
        for (Tensor<S>& t : raw) t = eval_preprocess(t, size);
        return raw;
    };
    std::vector<Tensor<S>> test_a = preprocess(load_images<S>(ds.domain_a));
    std::vector<Tensor<S>> test_b = preprocess(load_images<S>(ds.domain_b));

    MetricManifest mf = cfg.metrics;
    mf.preprocess_id = "central_crop_" + std::to_string(size);

    const std::size_t population =
        self_mode ? std::min({test_a.size() / 2, test_a.size() - test_a.size() / 2,
                              test_b.size() / 2, test_b.size() - test_b.size() / 2})
                  : std::min(test_a.size(), test_b.size());
    if (std::size_t(mf.kid_subset_size) > population) {
        std::cerr << "error: kid_subset_size " << mf.kid_subset_size
                  << " exceeds the available population of " << population << "\n";
        return kExitKidSubset;
    }

    MetricReport report;
    if (self_mode) {
        // Real-vs-real calibration: each test domain scored against its own
        // other half.  No checkpoint involved.
        const auto half = [](const std::vector<Tensor<S>>& v) {
            const std::size_t mid = v.size() / 2;
            return std::pair(std::vector<Tensor<S>>(v.begin(), v.begin() + long(mid)),
                             std::vector<Tensor<S>>(v.begin() + long(mid), v.end()));
        };
        const auto [a1, a2] = half(test_a);
        const auto [b1, b2] = half(test_b);
        report.manifest = mf;
        report.checkpoint = "self";
        report.a2b = uvcgan::detail::score_direction("a_vs_a", a1, a2, mf);
        report.b2a = uvcgan::detail::score_direction("b_vs_b", b1, b2, mf);
    } else {
        Generator<S> gen_ab = load_direction_generator<S>(ckpt, "a2b");
        Generator<S> gen_ba = load_direction_generator<S>(ckpt, "b2a");
        report = evaluate_translation(gen_ab, gen_ba, test_a, test_b, mf);
        report.checkpoint = ckpt;
    }

    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    std::ofstream f(out_file);
    if (!f) throw IoError("cannot write report to " + out_file.string());
    f << nlohmann::json(report).dump(2) << "\n";

    std::cout << "evaluate: " << report.a2b.direction << " fid " << report.a2b.fid << " kid(x100) "
              << 100.0 * report.a2b.kid_mean << " +- " << 100.0 * report.a2b.kid_stddev << "; "
              << report.b2a.direction << " fid " << report.b2a.fid << " kid(x100) "
              << 100.0 * report.b2a.kid_mean << " +- " << 100.0 * report.b2a.kid_stddev
              << "; report at " << out_file.string() << "\n";
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"unpaired image-to-image translation lab: masked generator pretraining, "
                 "cycle-consistent adversarial training, translation, and FID/KID evaluation"};
    app.require_subcommand(1);

    // Shared option storage.  Every flag overrides the config file, which in
    // turn overrides built-in defaults.
    struct {
        std::string config, out, data, precision = "float32";
        std::int64_t iters = 0, run_iters = -1, batch = 0, scale = 0, ckpt_every = 0;
        double lr = 0;
        std::uint64_t seed = 0;
        std::string resume, pretrain;
    } o;

    auto add_common = [&](CLI::App* cmd, const char* run_flag) {
        cmd->add_option("--config", o.config, "run config JSON file");
        cmd->add_option("--out", o.out, "output directory")->required();
        cmd->add_option("--data", o.data, "dataset root (overrides config data.root)");
        cmd->add_option("--size-scale", o.scale,
                        "divide every protocol image size by this factor");
        cmd->add_option("--seed", o.seed, "root random seed");
        cmd->add_option("--precision", o.precision, "model scalar: float32|float64");
        cmd->add_option("--iters", o.iters, "total schedule length");
        cmd->add_option(run_flag, o.run_iters,
                        "stop this invocation after N updates (the checkpoint keeps the "
                        "schedule position)");
        cmd->add_option("--batch", o.batch, "images per update");
        cmd->add_option("--lr", o.lr, "peak learning rate");
        cmd->add_option("--checkpoint-every", o.ckpt_every,
                        "also write the checkpoint every N updates");
        cmd->add_option("--resume", o.resume, "checkpoint directory to continue from");
    };

    CLI::App* pre = app.add_subcommand(
        "pretrain", "self-supervised masked-patch restoration pretraining of the generator");
    add_common(pre, "--run-steps");

    CLI::App* tr = app.add_subcommand("train", "two-domain cycle-consistent adversarial training");
    add_common(tr, "--run-iters");
    bool no_gp = false, no_idt = false;
    tr->add_flag("--no-gp", no_gp, "disable the discriminator gradient penalty");
    tr->add_flag("--no-idt", no_idt, "disable the identity loss");
    tr->add_option("--pretrain", o.pretrain,
                   "pretrained generator checkpoint to initialize from ('none' clears the "
                   "config value)");

    CLI::App* tl = app.add_subcommand("translate", "translate a directory of images");
    std::string tl_ckpt, tl_in, tl_dir;
    std::int64_t tl_size = 256;
    tl->add_option("--ckpt", tl_ckpt, "train checkpoint directory")->required();
    tl->add_option("--in", tl_in, "input image directory")->required();
    tl->add_option("--out", o.out, "output directory")->required();
    tl->add_option("--direction", tl_dir, "a2b or b2a")->required();
    tl->add_option("--size", tl_size, "evaluation resolution (shorter-side resize + center crop)");

    CLI::App* ev = app.add_subcommand("evaluate", "FID/KID report over the test split");
    std::string ev_ckpt, ev_out = "report.json", ev_extractor;
    std::int64_t ev_subset = 0, ev_subsets = 0;
    bool ev_self = false;
    ev->add_option("--ckpt", ev_ckpt, "train checkpoint directory");
    ev->add_option("--config", o.config, "run config JSON file");
    ev->add_option("--data", o.data, "dataset root (overrides config data.root)");
    ev->add_option("--out", ev_out, "report file path");
    ev->add_option("--kid-subset", ev_subset, "KID subset size");
    ev->add_option("--kid-subsets", ev_subsets, "number of KID subsets");
    ev->add_option("--extractor", ev_extractor, "feature extractor id");
    ev->add_option("--size-scale", o.scale, "divide every protocol image size by this factor");
    ev->add_option("--seed", o.seed, "root random seed");
    ev->add_flag("--self", ev_self, "real-vs-real calibration (no checkpoint needed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    auto given = [](CLI::App* cmd, const std::string& name) {
        const CLI::Option* opt = cmd->get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };

    auto assemble = [&](CLI::App* cmd, bool pretrain_mode) {
        RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
        if (given(cmd, "--seed")) cfg.seed = o.seed;
        if (given(cmd, "--data")) cfg.data.root = o.data;
        if (given(cmd, "--size-scale")) cfg.data.augment.size_scale = o.scale;
        if (given(cmd, "--iters")) {
            if (pretrain_mode)
                cfg.pretrain.total_steps = o.iters;
            else
                cfg.train.total_iters = o.iters;
        }
        if (given(cmd, "--lr")) {
            if (pretrain_mode)
                cfg.pretrain.lr = o.lr;
            else
                cfg.train.lr = o.lr;
        }
        if (given(cmd, "--batch")) cfg.train.batch_size = o.batch;
        if (!pretrain_mode) {
            if (no_gp) cfg.train.use_gp = false;
            if (no_idt) cfg.train.use_identity = false;
            if (given(tr, "--pretrain"))
                cfg.train.pretrained_init = o.pretrain == "none" ? "" : o.pretrain;
        }
        cfg.resolve();
        cfg.validate();
        if (cfg.data.root.empty())
            throw ConfigError("no dataset root: set data.root in the config or pass --data");
        return cfg;
    };

    // Resumed runs continue in the checkpoint's precision.
    auto precision_for = [&] {
        return o.resume.empty() ? o.precision : checkpoint_scalar(o.resume);
    };

    if (pre->parsed())
        return guarded([&] {
            RunConfig cfg = assemble(pre, true);
            return with_precision(precision_for(), [&](auto tag) {
                return do_pretrain<decltype(tag)>(cfg, resolve_out(o.out), o.resume, o.run_iters,
                                                  o.ckpt_every);
            });
        });

    if (tr->parsed())
        return guarded([&] {
            RunConfig cfg = assemble(tr, false);
            return with_precision(precision_for(), [&](auto tag) {
                return do_train<decltype(tag)>(cfg, resolve_out(o.out), o.resume, o.run_iters,
                                               o.ckpt_every);
            });
        });

    if (tl->parsed())
        return guarded([&] {
            if (tl_dir != "a2b" && tl_dir != "b2a")
                throw ConfigError("translate: --direction must be a2b or b2a");
            if (tl_size <= 0) throw ConfigError("translate: --size must be positive");
            return with_precision(checkpoint_scalar(tl_ckpt), [&](auto tag) {
                return do_translate<decltype(tag)>(tl_ckpt, tl_in, resolve_out(o.out), tl_dir,
                                                   Index(tl_size));
            });
        });

    if (ev->parsed())
        return guarded([&] {
            RunConfig cfg = assemble(ev, false);
            if (given(ev, "--kid-subset")) cfg.metrics.kid_subset_size = ev_subset;
            if (given(ev, "--kid-subsets")) cfg.metrics.kid_n_subsets = ev_subsets;
            if (given(ev, "--extractor")) cfg.metrics.extractor_id = ev_extractor;
            cfg.metrics.validate();
            if (!ev_self && ev_ckpt.empty())
                throw ConfigError("evaluate: --ckpt is required unless --self is given");
            const std::string precision = ev_self ? "float32" : checkpoint_scalar(ev_ckpt);
            return with_precision(precision, [&](auto tag) {
                return do_evaluate<decltype(tag)>(cfg, ev_ckpt, resolve_out(ev_out), ev_self);
            });
        });

    return kExitConfig;
}

}  // namespace uvcgan::cli
