#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "uaplab/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("uaplab_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    std::string cmd = std::string(UAPLAB_CLI_PATH) + " " + args + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_cli_capture(const std::string& args, const fs::path& stdout_file) {
    std::string cmd = std::string(UAPLAB_CLI_PATH) + " " + args + " > " +
                      stdout_file.string() + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("uap") == 2);                 // --model is required
    CHECK(run_cli("definitely-not-a-command") == 2);
    CHECK(run_cli("") == 2);                    // a subcommand is required
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("stats --clean only.json") == 2); // --attacked missing
}

TEST_CASE("synth runs are byte-identical") {
    TempDir dir;
    fs::path out1 = dir.path / "run1";
    fs::path out2 = dir.path / "run2";
    REQUIRE(run_cli("synth --n 25 --seed 7 --size 16 --out " + out1.string()) == 0);
    REQUIRE(run_cli("synth --n 25 --seed 7 --size 16 --out " + out2.string()) == 0);

    auto m1 = uaplab::read_file((out1 / "manifest.json").string());
    auto m2 = uaplab::read_file((out2 / "manifest.json").string());
    CHECK(m1 == m2);
    CHECK(uaplab::read_file((out1 / "labels.csv").string()) ==
          uaplab::read_file((out2 / "labels.csv").string()));

    // a different seed changes the manifest
    fs::path out3 = dir.path / "run3";
    REQUIRE(run_cli("synth --n 25 --seed 8 --size 16 --out " + out3.string()) == 0);
    CHECK(m1 != uaplab::read_file((out3 / "manifest.json").string()));

    // CSV header matches the ingestion contract
    std::string csv = uaplab::read_file((out1 / "labels.csv").string());
    CHECK(csv.rfind("id_code,diagnosis\n", 0) == 0);
}

TEST_CASE("stats matches the reference p-value on frozen kappa vectors") {
    TempDir dir;
    json clean = json::array({0.8613, 0.8466, 0.8315, 0.8187, 0.8263, 0.8149, 0.8451});
    json attacked = json::array({0.2092, 0.2744, 0.1343, 0.4063, 0.0578, 0.4165, 0.4418});
    uaplab::write_file_atomic((dir.path / "t4.json").string(), clean.dump());
    uaplab::write_file_atomic((dir.path / "t5diag.json").string(), attacked.dump());

    fs::path out = dir.path / "stats.json";
    REQUIRE(run_cli_capture("stats --clean " + (dir.path / "t4.json").string() +
                                " --attacked " + (dir.path / "t5diag.json").string(),
                            out) == 0);
    json result = json::parse(uaplab::read_file(out.string()));
    CHECK(result["kind"] == "significance");
    double p = result["p_value"].get<double>();
    CHECK(p > 6.5e-05);
    CHECK(p < 8.5e-05);
    CHECK(std::fabs(p - 7.5411405808e-05) < 1e-9);

    // markdown format carries the rounded p-value
    fs::path out_md = dir.path / "stats.md";
    REQUIRE(run_cli_capture("stats --clean " + (dir.path / "t4.json").string() +
                                " --attacked " + (dir.path / "t5diag.json").string() +
                                " --format md",
                            out_md) == 0);
    CHECK(uaplab::read_file(out_md.string()).find("7.5411e-05") != std::string::npos);
}

TEST_CASE("preprocess writes per-image manifest entries") {
    TempDir dir;
    fs::path data = dir.path / "data";
    REQUIRE(run_cli("synth --n 12 --seed 3 --size 24 --out " + data.string()) == 0);
    fs::path out = dir.path / "prep";
    REQUIRE(run_cli("preprocess --csv " + (data / "labels.csv").string() + " --images " +
                    (data / "images").string() + " --out " + out.string()) == 0);
    json manifest = json::parse(uaplab::read_file((out / "manifest.json").string()));
    REQUIRE(manifest["items"].size() == 12);
    for (const auto& item : manifest["items"]) {
        CHECK(item.contains("id"));
        CHECK(item.contains("grade"));
        CHECK(item.contains("source_path"));
        CHECK(item.contains("preprocess_config_hash"));
        CHECK(fs::exists(out / (item["id"].get<std::string>() + ".png")));
    }
}

TEST_CASE("verify flags a missing or tampered run directory") {
    TempDir dir;
    CHECK(run_cli("verify --out " + (dir.path / "nothing").string()) == 1);
}

TEST_CASE("subcommand chain: train, uap, attack-eval, advft, transfer, repro-desk, verify") {
    TempDir dir;
    json cfg;
    cfg["dataset"] = {{"source", "synthetic"}, {"n", 100}, {"image_size", 16}, {"seed", 5}};
    cfg["train"] = {{"max_epochs_pretrain", 2},
                    {"max_epochs_finetune", 2},
                    {"early_stop_patience", 2}};
    cfg["attack"] = {{"target_fooling", 0.05}, {"xi", 0.08}, {"max_passes", 10}};
    fs::path cfg_path = dir.path / "cfg.json";
    uaplab::write_file_atomic(cfg_path.string(), cfg.dump());
    std::string with_cfg = "--config " + cfg_path.string();

    fs::path models = dir.path / "models";
    REQUIRE(run_cli("train " + with_cfg + " --arch small-cnn-a --out " + models.string()) ==
            0);
    fs::path ckpt = models / "small-cnn-a.ckpt";
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(models / "small-cnn-a.train.json"));

    fs::path uap = dir.path / "small-cnn-a.uapv";
    REQUIRE(run_cli("uap " + with_cfg + " --model " + ckpt.string() + " --out " +
                    uap.string()) == 0);
    REQUIRE(fs::exists(uap));
    json sidecar = json::parse(uaplab::read_file(uap.string() + ".json"));
    CHECK(sidecar["final_fooling_ratio"].get<double>() > 0.05);

    fs::path eval_out = dir.path / "eval.json";
    REQUIRE(run_cli_capture("attack-eval " + with_cfg + " --model " + ckpt.string() +
                                " --uap " + uap.string(),
                            eval_out) == 0);
    std::string eval_text = uaplab::read_file(eval_out.string());
    CHECK(eval_text.find("\"kappa\"") != std::string::npos);
    CHECK(eval_text.find("fooling_ratio") != std::string::npos);

    fs::path tuned = dir.path / "small-cnn-a.advft.ckpt";
    REQUIRE(run_cli("advft " + with_cfg + " --model " + ckpt.string() + " --uap " +
                    uap.string() + " --mix-ratio 0.5 --out " + tuned.string()) == 0);
    CHECK(fs::exists(tuned));

    fs::path zoo = dir.path / "zoo";
    fs::create_directories(zoo);
    fs::copy_file(ckpt, zoo / "small-cnn-a.ckpt");
    fs::copy_file(uap, zoo / "small-cnn-a.uapv");
    fs::path transfer_out = dir.path / "transfer.md";
    REQUIRE(run_cli_capture("transfer " + with_cfg + " --zoo " + zoo.string() +
                                " --format md",
                            transfer_out) == 0);
    CHECK(uaplab::read_file(transfer_out.string())
              .find("Perturbation vector created by small-cnn-a") != std::string::npos);

    // target -1 short-circuits UAP generation (returns v = 0 after zero
    // passes), keeping this a fast mechanics check of the full pipeline
    json desk_cfg = cfg;
    desk_cfg["attack"]["target_fooling"] = -1.0;
    fs::path desk_cfg_path = dir.path / "desk_cfg.json";
    uaplab::write_file_atomic(desk_cfg_path.string(), desk_cfg.dump());
    fs::path desk = dir.path / "desk";
    REQUIRE(run_cli("repro-desk --config " + desk_cfg_path.string() + " --out " +
                    desk.string()) == 0);
    CHECK(fs::exists(desk / "reports" / "summary.json"));
    CHECK(fs::exists(desk / "manifest.json"));
    CHECK(!fs::exists(desk / "FAILED"));

    CHECK(run_cli("verify --out " + desk.string()) == 0);

    // tampering with an artifact must break verification
    std::string victim = (desk / "reports" / "summary.json").string();
    std::string content = uaplab::read_file(victim);
    content[content.find("kappa")] = 'K';
    uaplab::write_file_atomic(victim, content);
    CHECK(run_cli("verify --out " + desk.string()) == 1);
}
