#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uvcgan/data/image_io.hpp"
#include "uvcgan/run_config.hpp"

using namespace uvcgan;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// RunConfig parsing

RunConfig parse(const nlohmann::json& j) { return parse_run_config(j); }

std::string error_of(const nlohmann::json& j) {
    try {
        parse_run_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("run config: empty document yields the defaults") {
    RunConfig c = parse(nlohmann::json::object());
    RunConfig expected;
    expected.resolve();
    CHECK(c == expected);

    CHECK(c.train.total_iters == 1'000'000);
    CHECK(c.train.lr == 1e-4);
    CHECK(c.train.batch_size == 1);
    CHECK(c.train.pool_size == 50);
    CHECK(c.train.use_identity);
    CHECK(c.train.use_gp);
    CHECK(c.loss.lambda_cyc == 10.0);
    CHECK(c.loss.lambda_idt == 5.0);
    CHECK(c.loss.lambda_gp == 0.1);
    CHECK(c.loss.gamma == 100.0);
    CHECK(c.pretrain.mask.patch_size == 32);
    CHECK(c.pretrain.mask.mask_prob == 0.40);
    CHECK(c.metrics.kid_subset_size == 50);
    CHECK(c.metrics.kid_n_subsets == 100);
    CHECK(c.metrics.fid_sample_policy == "full_test_set");
    CHECK(c.data.augment.task == AugmentTask::square);
    CHECK(c.data.augment.size_scale == 1);
    CHECK(c.data.augment.output_size() == 256);
}

TEST_CASE("run config: sections override only the keys they name") {
    RunConfig c = parse({{"train", {{"lr", 5e-4}}}, {"loss", {{"lambda_cyc", 4.0}}}});
    CHECK(c.train.lr == 5e-4);
    CHECK(c.train.total_iters == 1'000'000);
    CHECK(c.loss.lambda_cyc == 4.0);
    CHECK(c.loss.lambda_idt == 5.0);

    // resolve() mirrors the loss section into the trainer weights.
    CHECK(c.train.weights.lambda_cyc == 4.0);
    CHECK(c.train.weights.lambda_idt == 5.0);

    c = parse({{"generator", {{"vit_blocks", 3}, {"heads", 6}}}});
    CHECK(c.generator.vit_blocks == 3);
    CHECK(c.generator.heads == 6);
    GeneratorConfig defaults;
    CHECK(c.generator.base_features == defaults.base_features);
}

TEST_CASE("run config: the root seed fans out to every module") {
    RunConfig c = parse({{"seed", 42}});
    CHECK(c.seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.pretrain.seed == 42);
    CHECK(c.metrics.seed == 42);
}

TEST_CASE("run config: unknown keys are rejected with their full path") {
    CHECK(error_of({{"sneed", 1}}) == "config: unknown key 'sneed'");
    CHECK(error_of({{"train", {{"total_itres", 5}}}}) == "config: unknown key 'train.total_itres'");
    CHECK(error_of({{"generator", {{"blocks", 3}}}}) == "config: unknown key 'generator.blocks'");
    CHECK(error_of({{"metrics", {{"fid_subsets", 2}}}}) ==
          "config: unknown key 'metrics.fid_subsets'");
}

TEST_CASE("run config: malformed values and structure") {
    CHECK(error_of({{"train", {{"lr", "fast"}}}}).find("train.lr") != std::string::npos);
    CHECK(error_of({{"generator", 3}}).find("'generator' must be an object") !=
          std::string::npos);
    CHECK_THROWS_AS(parse_run_config(nlohmann::json::array()), ConfigError);
    CHECK(error_of({{"format_version", 2}}).find("format_version") != std::string::npos);
    CHECK(error_of({{"data", {{"task", "blimp"}}}}).find("blimp") != std::string::npos);

    // Values that parse but fail the module's own validation.
    CHECK_THROWS_AS(parse({{"train", {{"total_iters", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse({{"data", {{"size_scale", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse({{"loss", {{"lambda_cyc", -1.0}}}}), ConfigError);
}

TEST_CASE("run config: effective document round-trips") {
    RunConfig c = parse({{"seed", 9},
                         {"generator",
                          {{"base_features", 12}, {"levels", 3}, {"token_features", 48}}},
                         {"discriminator", {{"base_channels", 8}}},
                         {"loss", {{"lambda_gp", 0.0}}},
                         {"train", {{"total_iters", 7}, {"use_gp", false}}},
                         {"pretrain", {{"patch_size", 8}, {"total_steps", 5}}},
                         {"data", {{"root", "/tmp/x"}, {"task", "celeba"}, {"size_scale", 4}}},
                         {"metrics", {{"kid_subset_size", 3}}}});
    RunConfig back = parse(run_config_to_json(c));
    CHECK(back == c);
}

TEST_CASE("run config: file loading") {
    const fs::path dir = fs::temp_directory_path() / "uvcgan_test_config";
    fs::create_directories(dir);
    const fs::path good = dir / "good.json";
    std::ofstream(good) << R"({"seed": 3, "train": {"total_iters": 2}})";
    RunConfig c = load_run_config(good.string());
    CHECK(c.seed == 3);
    CHECK(c.train.total_iters == 2);

    const fs::path bad = dir / "bad.json";
    std::ofstream(bad) << "{ nope";
    CHECK_THROWS_AS(load_run_config(bad.string()), ConfigError);
    CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), ConfigError);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// End-to-end runs of the command-line binary

namespace {

struct RunResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
    std::ifstream in(p);
    std::vector<nlohmann::json> records;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) records.push_back(nlohmann::json::parse(line));
    return records;
}

// The test environment: a scratch directory, a 16x16 two-domain dataset, and
// a config file sized so that every stage finishes in seconds.
struct Env {
    fs::path dir, data_root, config;

    Env() {
        dir = fs::temp_directory_path() / "uvcgan_test_cli";
        fs::remove_all(dir);
        data_root = dir / "dataset";
        make_dataset();
        config = dir / "run.json";
        std::ofstream(config) << config_json().dump(2);
    }

    nlohmann::json config_json() const {
        return {{"seed", 5},
                {"generator",
                 {{"in_channels", 3},
                  {"base_features", 6},
                  {"levels", 2},
                  {"token_features", 12},
                  {"pe_features", 8},
                  {"vit_features", 8},
                  {"ffn_features", 16},
                  {"vit_blocks", 2},
                  {"heads", 2}}},
                {"discriminator", {{"in_channels", 3}, {"base_channels", 4}, {"n_layers", 2}}},
                {"train", {{"total_iters", 4}, {"lr", 1e-3}, {"pool_size", 2}}},
                {"pretrain", {{"patch_size", 8}, {"lr", 1e-3}, {"total_steps", 3}}},
                {"data", {{"root", data_root.string()}, {"size_scale", 16}}},
                {"metrics", {{"kid_subset_size", 2}, {"kid_n_subsets", 4}}}};
    }

    void make_dataset() const {
        int tag = 0;
        for (const char* split : {"trainA", "trainB", "testA", "testB"}) {
            const fs::path d = data_root / split;
            fs::create_directories(d);
            const int n = std::string(split).starts_with("train") ? 3 : 2;
            for (int i = 0; i < n; ++i, ++tag) {
                Image8 img;
                img.width = img.height = 16;
                img.pixels.resize(img.expected_bytes());
                for (std::size_t p = 0; p < img.pixels.size(); ++p)
                    img.pixels[p] = static_cast<unsigned char>((31 * tag + 7 * p) % 256);
                save_image((d / ("img" + std::to_string(i) + ".png")).string(), img);
            }
        }
    }

    RunResult run(const std::string& args) const {
        static int counter = 0;
        const fs::path out = dir / ("stdout" + std::to_string(counter));
        const fs::path err = dir / ("stderr" + std::to_string(counter));
        ++counter;
        const std::string cmd = std::string(UVCGAN_LAB_BIN) + " " + args + " >" + out.string() +
                                " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    std::string cfg_arg() const { return "--config " + config.string(); }
};

Env& env() {
    static Env e;
    return e;
}

// Stages later cases depend on, each run once.
const fs::path& pretrain_dir() {
    static fs::path p = [] {
        const fs::path out = env().dir / "pre";
        RunResult r = env().run("pretrain " + env().cfg_arg() + " --out " + out.string());
        REQUIRE(r.code == 0);
        return out;
    }();
    return p;
}

const fs::path& train_dir() {
    static fs::path p = [] {
        const fs::path out = env().dir / "train";
        RunResult r = env().run("train " + env().cfg_arg() + " --out " + out.string() +
                                " --pretrain " + (pretrain_dir() / "checkpoint").string());
        REQUIRE(r.code == 0);
        return out;
    }();
    return p;
}

}  // namespace

TEST_CASE("cli: pretraining runs, logs, and checkpoints") {
    const fs::path out = pretrain_dir();
    CHECK(fs::exists(out / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(out / "checkpoint" / "generator.bin"));
    CHECK(fs::exists(out / "config.json"));

    auto log = read_jsonl(out / "log.jsonl");
    REQUIRE(log.size() == 4);  // dataset summary + three steps
    CHECK(log[0].at("event") == "dataset");
    CHECK(log[0].at("domain_a") == 3);
    CHECK(log[0].at("domain_b") == 3);
    for (int i = 1; i <= 3; ++i) {
        CHECK(log[std::size_t(i)].at("iter") == i - 1);
        CHECK(log[std::size_t(i)].at("loss").get<double>() > 0.0);
    }

    // The echoed config is the effective document and parses back.
    RunConfig echoed = load_run_config((out / "config.json").string());
    CHECK(echoed.pretrain.total_steps == 3);
    CHECK(echoed.data.augment.size_scale == 16);
}

TEST_CASE("cli: training with a pretrained generator") {
    const fs::path out = train_dir();
    const auto manifest = nlohmann::json::parse(slurp(out / "checkpoint" / "manifest.json"));
    CHECK(manifest.at("kind") == "train");
    CHECK(manifest.at("iteration") == 4);
    CHECK(manifest.at("scalar") == "float32");

    auto log = read_jsonl(out / "log.jsonl");
    REQUIRE(log.size() == 5);
    for (int i = 1; i <= 4; ++i) {
        CHECK(log[std::size_t(i)].at("iter") == i - 1);
        CHECK(std::isfinite(log[std::size_t(i)].at("gen_total").get<double>()));
        CHECK(std::isfinite(log[std::size_t(i)].at("disc_total").get<double>()));
    }
    // Second half of a four-iteration schedule anneals the learning rate,
    // starting from the full rate at the halfway step.
    CHECK(log[3].at("lr").get<double>() == doctest::Approx(1e-3));
    CHECK(log[4].at("lr").get<double>() == doctest::Approx(1e-3 * 0.5));
}

TEST_CASE("cli: an interrupted run resumes bit-identically") {
    const fs::path full = env().dir / "resume_full";
    const fs::path part = env().dir / "resume_part";
    const fs::path cont = env().dir / "resume_cont";

    REQUIRE(env().run("train " + env().cfg_arg() + " --out " + full.string()).code == 0);
    REQUIRE(env()
                .run("train " + env().cfg_arg() + " --out " + part.string() + " --run-iters 2")
                .code == 0);
    REQUIRE(env()
                .run("train " + env().cfg_arg() + " --out " + cont.string() + " --resume " +
                     (part / "checkpoint").string())
                .code == 0);

    auto full_log = read_jsonl(full / "log.jsonl");
    auto part_log = read_jsonl(part / "log.jsonl");
    auto cont_log = read_jsonl(cont / "log.jsonl");
    REQUIRE(full_log.size() == 5);
    REQUIRE(part_log.size() == 3);
    REQUIRE(cont_log.size() == 3);

    // The first two iterations match between the full and partial runs, and
    // the continuation reproduces iterations 2 and 3 exactly.
    CHECK(full_log[1] == part_log[1]);
    CHECK(full_log[2] == part_log[2]);
    CHECK(full_log[3] == cont_log[1]);
    CHECK(full_log[4] == cont_log[2]);
}

TEST_CASE("cli: pretraining resumes through its checkpoint") {
    const fs::path part = env().dir / "pre_part";
    const fs::path cont = env().dir / "pre_cont";
    REQUIRE(env()
                .run("pretrain " + env().cfg_arg() + " --out " + part.string() + " --run-steps 1")
                .code == 0);
    REQUIRE(env()
                .run("pretrain " + env().cfg_arg() + " --out " + cont.string() + " --resume " +
                     (part / "checkpoint").string())
                .code == 0);

    auto full_log = read_jsonl(pretrain_dir() / "log.jsonl");
    auto cont_log = read_jsonl(cont / "log.jsonl");
    REQUIRE(cont_log.size() == 3);  // dataset summary + steps 1 and 2
    CHECK(full_log[2] == cont_log[1]);
    CHECK(full_log[3] == cont_log[2]);
}

TEST_CASE("cli: translation writes per-image outputs and a grid") {
    const fs::path out = env().dir / "translated";
    RunResult r = env().run("translate --ckpt " + (train_dir() / "checkpoint").string() +
                            " --in " + (env().data_root / "testA").string() + " --out " +
                            out.string() + " --direction a2b --size 16");
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "img0.png"));
    CHECK(fs::exists(out / "img1.png"));
    CHECK(fs::exists(out / "grid.png"));

    Image8 translated = load_image((out / "img0.png").string());
    CHECK(translated.width == 16);
    CHECK(translated.height == 16);
    Image8 grid = load_image((out / "grid.png").string());
    CHECK(grid.width == 32);   // input | output
    CHECK(grid.height == 32);  // one row per image
}

TEST_CASE("cli: evaluation writes a metric report") {
    const fs::path report = env().dir / "report.json";
    RunResult r = env().run("evaluate --ckpt " + (train_dir() / "checkpoint").string() + " " +
                            env().cfg_arg() + " --out " + report.string());
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(report));
    CHECK(j.at("manifest").at("kid_subset_size") == 2);
    CHECK(j.at("manifest").at("kid_n_subsets") == 4);
    CHECK(j.at("manifest").at("preprocess_id") == "central_crop_16");
    CHECK(j.at("manifest").at("seed") == 5);
    for (const char* dir : {"a2b", "b2a"}) {
        CHECK(j.at(dir).at("n_real") == 2);
        CHECK(j.at(dir).at("n_translated") == 2);
        CHECK(std::isfinite(j.at(dir).at("fid").get<double>()));
        CHECK(j.at(dir).at("kid_mean_x100").get<double>() ==
              doctest::Approx(100.0 * j.at(dir).at("kid_mean").get<double>()));
    }

    // Repeated evaluation is deterministic.
    const fs::path again = env().dir / "report2.json";
    REQUIRE(env()
                .run("evaluate --ckpt " + (train_dir() / "checkpoint").string() + " " +
                     env().cfg_arg() + " --out " + again.string())
                .code == 0);
    CHECK(nlohmann::json::parse(slurp(again)) == j);
}

TEST_CASE("cli: real-vs-real calibration needs no checkpoint") {
    const fs::path report = env().dir / "self.json";
    RunResult r = env().run("evaluate --self " + env().cfg_arg() + " --out " + report.string() +
                            " --kid-subset 1 --kid-subsets 2");
    // Subsets of one image cannot form an unbiased estimate.
    CHECK(r.code == 2);

    r = env().run("evaluate --self " + env().cfg_arg() + " --out " + report.string());
    // Two test images per domain leave single-image halves: below any valid
    // subset size, so the command reports the population instead.
    CHECK(r.code == 4);
    CHECK(r.err.find("population") != std::string::npos);
}

TEST_CASE("cli: config errors exit with code 2 and name the key") {
    nlohmann::json bad = env().config_json();
    bad["train"]["total_itres"] = 5;
    bad["train"].erase("total_iters");
    const fs::path path = env().dir / "bad.json";
    std::ofstream(path) << bad.dump();

    RunResult r = env().run("train --config " + path.string() + " --out " +
                            (env().dir / "never").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("train.total_itres") != std::string::npos);
    CHECK_FALSE(fs::exists(env().dir / "never"));

    // Flag-level misuse is also a config error.
    CHECK(env().run("train").code == 2);                       // missing --out
    CHECK(env().run("frobnicate --out /tmp/x").code == 2);     // unknown subcommand
    CHECK(env().run("translate --ckpt a --in b --out c --direction sideways").code == 2);
}

TEST_CASE("cli: a missing dataset exits with code 3") {
    RunResult r = env().run("train " + env().cfg_arg() + " --data " +
                            (env().dir / "no_such_dataset").string() + " --out " +
                            (env().dir / "never3").string());
    CHECK(r.code == 3);
    CHECK(r.err.find("missing dataset") != std::string::npos);
}

TEST_CASE("cli: an oversized kid subset exits with code 4") {
    RunResult r = env().run("evaluate --ckpt " + (train_dir() / "checkpoint").string() + " " +
                            env().cfg_arg() + " --out " + (env().dir / "never4.json").string() +
                            " --kid-subset 50");
    CHECK(r.code == 4);
    CHECK(r.err.find("kid_subset_size 50") != std::string::npos);
    CHECK_FALSE(fs::exists(env().dir / "never4.json"));
}

TEST_CASE("cli: relative outputs land under UVCGAN_OUT") {
    const fs::path base = env().dir / "envout";
    fs::create_directories(base);
    setenv("UVCGAN_OUT", base.string().c_str(), 1);
    RunResult r = env().run("pretrain " + env().cfg_arg() + " --out relrun --run-steps 1");
    unsetenv("UVCGAN_OUT");
    CHECK(r.code == 0);
    CHECK(fs::exists(base / "relrun" / "log.jsonl"));
}

TEST_CASE("cli: float64 runs record their scalar in the checkpoint") {
    const fs::path out = env().dir / "pre64";
    RunResult r = env().run("pretrain " + env().cfg_arg() + " --out " + out.string() +
                            " --run-steps 1 --precision float64");
    CHECK(r.code == 0);
    const auto manifest = nlohmann::json::parse(slurp(out / "checkpoint" / "manifest.json"));
    CHECK(manifest.at("scalar") == "float64");

    CHECK(env()
              .run("pretrain " + env().cfg_arg() + " --out " + (env().dir / "pre_badprec").string() +
                   " --precision float16")
              .code == 2);
}
