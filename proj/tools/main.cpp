#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "uaplab/analysis.hpp"
#include "uaplab/checkpoint.hpp"
#include "uaplab/errors.hpp"
#include "uaplab/experiment.hpp"
#include "uaplab/hash.hpp"
#include "uaplab/png_io.hpp"
#include "uaplab/robustness.hpp"
#include "uaplab/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string data_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> n;
    std::optional<int> jobs;
    std::optional<double> xi;
    std::optional<std::string> norm;
    std::optional<double> target_fool;
    std::optional<double> dp_frac;
    std::optional<double> mix_ratio;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config JSON");
    cmd->add_option("--data", flags.data_dir,
                    "dataset directory (labels.csv + images/), overrides config dataset");
    cmd->add_option("--seed", flags.seed, "master seed (dataset, training, attack)");
    cmd->add_option("--n", flags.n, "synthetic dataset size");
    cmd->add_option("--jobs", flags.jobs, "worker threads (default 1)");
    cmd->add_option("--xi", flags.xi, "perturbation budget");
    cmd->add_option("--p", flags.norm, "perturbation norm (inf or 2)")
        ->check(CLI::IsMember({"inf", "2"}));
    cmd->add_option("--target-fool", flags.target_fool, "fooling-ratio stopping target");
    cmd->add_option("--dp-frac", flags.dp_frac, "fraction of train used for D_p");
    cmd->add_option("--mix-ratio", flags.mix_ratio, "clean-data fraction in adversarial fine-tuning");
}

uaplab::ExperimentConfig resolve_config(const CommonFlags& flags) {
    uaplab::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = uaplab::load_experiment_config(flags.config_path);
    if (!flags.data_dir.empty()) {
        cfg.dataset.source = "csv";
        cfg.dataset.csv = (fs::path(flags.data_dir) / "labels.csv").string();
        cfg.dataset.images = (fs::path(flags.data_dir) / "images").string();
    }
    if (flags.seed) {
        cfg.dataset.seed = *flags.seed;
        cfg.train.seed = *flags.seed;
        cfg.attack.shuffle_seed = *flags.seed;
    }
    if (flags.n) cfg.dataset.n = *flags.n;
    if (flags.jobs) cfg.jobs = *flags.jobs;
    if (flags.xi) cfg.attack.xi = *flags.xi;
    if (flags.norm) cfg.attack.p = uaplab::parse_norm(*flags.norm);
    if (flags.target_fool) cfg.attack.target_fooling = *flags.target_fool;
    if (flags.dp_frac) cfg.dp_fraction = *flags.dp_frac;
    if (flags.mix_ratio) cfg.mix_ratio = *flags.mix_ratio;
    return cfg;
}

int cmd_synth(const CommonFlags& flags, const std::string& out_dir, int size) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    if (size > 0) cfg.dataset.image_size = size;
    uaplab::LabeledDataset data = uaplab::generate_synthetic_dataset(
        cfg.dataset.n, cfg.dataset.proportions, cfg.dataset.image_size, cfg.dataset.seed);

    fs::create_directories(fs::path(out_dir) / "images");
    std::string csv = "id_code,diagnosis\n";
    json manifest_items = json::array();
    for (const auto& item : data.items) {
        auto png = uaplab::encode_png(item.image);
        std::string rel = "images/" + item.id + ".png";
        uaplab::write_file_atomic((fs::path(out_dir) / rel).string(), png.data(), png.size());
        csv += item.id + "," + std::to_string(item.grade) + "\n";
        manifest_items.push_back({{"id", item.id},
                                  {"grade", item.grade},
                                  {"sha256", uaplab::Sha256::of(png.data(), png.size())}});
    }
    uaplab::write_file_atomic((fs::path(out_dir) / "labels.csv").string(), csv);
    json manifest;
    manifest["schema"] = "uaplab/synth/v1";
    manifest["n"] = cfg.dataset.n;
    manifest["image_size"] = cfg.dataset.image_size;
    manifest["seed"] = cfg.dataset.seed;
    manifest["proportions"] = cfg.dataset.proportions;
    manifest["items"] = manifest_items;
    uaplab::write_file_atomic((fs::path(out_dir) / "manifest.json").string(),
                              manifest.dump(2) + "\n");
    uaplab::log_info("synth: wrote " + std::to_string(data.size()) + " images to " + out_dir);
    return 0;
}

int cmd_preprocess(const CommonFlags& flags, const std::string& csv_path,
                   const std::string& image_dir, const std::string& out_dir) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::LabeledDataset data = uaplab::load_dataset_csv(csv_path, image_dir);
    std::string cfg_hash = uaplab::preprocess_config_hash(cfg.preprocess);

    fs::create_directories(out_dir);
    json manifest_items = json::array();
    for (const auto& item : data.items) {
        uaplab::ImageTensor processed = uaplab::preprocess_image(item.image, cfg.preprocess);
        uaplab::write_png((fs::path(out_dir) / (item.id + ".png")).string(), processed);
        manifest_items.push_back(
            {{"id", item.id},
             {"grade", item.grade},
             {"source_path", (fs::path(image_dir) / (item.id + ".png")).string()},
             {"preprocess_config_hash", cfg_hash}});
    }
    json manifest;
    manifest["schema"] = "uaplab/preprocess/v1";
    manifest["items"] = manifest_items;
    uaplab::write_file_atomic((fs::path(out_dir) / "manifest.json").string(),
                              manifest.dump(2) + "\n");
    uaplab::log_info("preprocess: " + std::to_string(data.size()) + " images to " + out_dir);
    return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& arch, const std::string& out_dir) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::LabeledDataset full = uaplab::prepare_dataset(cfg);
    uaplab::DatasetSplits splits = uaplab::split_dataset(full, cfg);

    uaplab::Shape shape = splits.fit.items.front().image.shape();
    std::uint64_t model_seed = cfg.train.seed;
    for (const auto& spec : cfg.zoo)
        if (spec.arch == arch) model_seed = spec.seed;
    uaplab::ClassifierModel model = uaplab::build_model(arch, uaplab::kNumGrades, shape,
                                                        model_seed);
    if (cfg.emulate_pretraining) {
        uaplab::pretrain_source_task(model, cfg.train);
        uaplab::reinitialize_head(model, uaplab::Rng::derive(model_seed, 7));
    }
    uaplab::TwoStageHistory history =
        uaplab::two_stage_finetune(model, splits.fit, cfg.train, splits.val);
    fs::create_directories(out_dir);
    std::string ckpt = (fs::path(out_dir) / (arch + ".ckpt")).string();
    uaplab::save_checkpoint(model, ckpt);

    uaplab::EvalMetrics metrics =
        uaplab::evaluate_model(model, uaplab::evaluation_split(splits, cfg), cfg.jobs);
    json report;
    report["arch"] = arch;
    report["checkpoint"] = ckpt;
    report["clean_kappa"] = metrics.kappa;
    report["agreement"] = uaplab::agreement_level(metrics.kappa);
    report["accuracy"] = metrics.accuracy;
    report["best_val_kappa"] = history.full_stage.best_epoch >= 0
                                   ? history.full_stage.best_val_kappa
                                   : history.head_stage.best_val_kappa;
    report["config_hash"] = cfg.hash();
    uaplab::write_file_atomic((fs::path(out_dir) / (arch + ".train.json")).string(),
                              report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_uap(const CommonFlags& flags, const std::string& model_path,
            const std::string& out_path) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::ClassifierModel model = uaplab::load_checkpoint(model_path);
    uaplab::LabeledDataset full = uaplab::prepare_dataset(cfg);
    uaplab::DatasetSplits splits = uaplab::split_dataset(full, cfg);

    std::string model_id = fs::path(model_path).stem().string();
    try {
        uaplab::PerturbationVector v =
            uaplab::generate_uap(model, splits.dp, cfg.attack, model_id, cfg.jobs);
        uaplab::save_perturbation(v, out_path);
        std::cout << "fooling_ratio " << uaplab::format_fixed(v.final_fooling_ratio, 4)
                  << " after " << v.passes << " passes\n";
        return 0;
    } catch (const uaplab::TargetNotReached& e) {
        uaplab::save_perturbation(e.best_so_far, out_path);
        uaplab::log_error(std::string(e.what()) + " (best vector saved)");
        return 1;
    }
}

int cmd_attack_eval(const CommonFlags& flags, const std::string& model_path,
                    const std::string& uap_path, const std::string& format) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::ClassifierModel model = uaplab::load_checkpoint(model_path);
    uaplab::PerturbationVector v = uaplab::load_perturbation(uap_path);
    uaplab::LabeledDataset full = uaplab::prepare_dataset(cfg);
    uaplab::DatasetSplits splits = uaplab::split_dataset(full, cfg);
    const uaplab::LabeledDataset& eval_ds = uaplab::evaluation_split(splits, cfg);

    uaplab::LabeledDataset perturbed = uaplab::perturb_dataset(eval_ds, v);
    uaplab::EvalMetrics metrics = uaplab::evaluate_model(model, perturbed, cfg.jobs);
    double ratio = uaplab::fooling_ratio(model, eval_ds, v, cfg.jobs);
    uaplab::ReportFormat fmt = uaplab::parse_report_format(format);
    std::cout << uaplab::render_report(metrics, fmt);
    if (fmt == uaplab::ReportFormat::markdown)
        std::cout << "| fooling ratio | " << uaplab::format_fixed(ratio, 4) << " |\n";
    else
        std::cout << json({{"fooling_ratio", ratio}}).dump(2) << "\n";
    return 0;
}

int cmd_advft(const CommonFlags& flags, const std::string& model_path,
              const std::string& uap_path, const std::string& out_path) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::ClassifierModel model = uaplab::load_checkpoint(model_path);
    uaplab::PerturbationVector v = uaplab::load_perturbation(uap_path);
    uaplab::LabeledDataset full = uaplab::prepare_dataset(cfg);
    uaplab::DatasetSplits splits = uaplab::split_dataset(full, cfg);

    std::string model_id = fs::path(model_path).stem().string();
    uaplab::adversarial_finetune(model, model_id, splits.fit, v, cfg.train, cfg.mix_ratio,
                                 splits.val);
    uaplab::save_checkpoint(model, out_path);
    std::cout << "adversarially fine-tuned checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_transfer(const CommonFlags& flags, const std::string& zoo_dir,
                 const std::string& format, const std::string& out_dir) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    uaplab::LabeledDataset full = uaplab::prepare_dataset(cfg);
    uaplab::DatasetSplits splits = uaplab::split_dataset(full, cfg);

    uaplab::ModelZoo zoo;
    std::vector<fs::path> ckpts;
    for (const auto& entry : fs::directory_iterator(zoo_dir))
        if (entry.path().extension() == ".ckpt") ckpts.push_back(entry.path());
    std::sort(ckpts.begin(), ckpts.end());
    for (const auto& ckpt : ckpts) {
        std::string id = ckpt.stem().string();
        fs::path uap_path = ckpt.parent_path() / (id + ".uapv");
        std::optional<uaplab::PerturbationVector> v;
        if (fs::exists(uap_path)) v = uaplab::load_perturbation(uap_path.string());
        zoo.add(id, uaplab::load_checkpoint(ckpt.string()), std::move(v));
    }

    uaplab::TransferMatrixReport report = uaplab::transfer_matrix(
        zoo, uaplab::evaluation_split(splits, cfg), cfg.eval_split, cfg.jobs);
    report.timestamp = uaplab::timestamp_utc();
    std::cout << uaplab::render_report(report, uaplab::parse_report_format(format));
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        uaplab::write_file_atomic(
            (fs::path(out_dir) / "transfer.json").string(),
            uaplab::render_report(report, uaplab::ReportFormat::json));
        uaplab::write_file_atomic(
            (fs::path(out_dir) / "transfer.md").string(),
            uaplab::render_report(report, uaplab::ReportFormat::markdown));
    }
    return 0;
}

std::vector<double> read_score_vector(const std::string& path) {
    json j = json::parse(uaplab::read_file(path));
    if (j.is_array()) return j.get<std::vector<double>>();
    if (j.is_object() && j.contains("values"))
        return j["values"].get<std::vector<double>>();
    throw uaplab::Error(path + ": expected a JSON array or {\"values\": [...]}");
}

int cmd_stats(const std::string& clean_path, const std::string& attacked_path,
              const std::string& format) {
    std::vector<double> clean = read_score_vector(clean_path);
    std::vector<double> attacked = read_score_vector(attacked_path);
    uaplab::SignificanceResult result = uaplab::paired_ttest(clean, attacked);
    std::cout << uaplab::render_report(result, uaplab::parse_report_format(format));
    return 0;
}

int cmd_repro_desk(const CommonFlags& flags, const std::string& out_dir) {
    uaplab::ExperimentConfig cfg = resolve_config(flags);
    if (!out_dir.empty()) cfg.out = out_dir;
    json summary = uaplab::run_desk_experiment(cfg);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_verify(const std::string& out_dir) {
    std::vector<std::string> problems = uaplab::verify_run(out_dir);
    if (problems.empty()) {
        std::cout << "OK: artifact chain verified\n";
        return 0;
    }
    for (const auto& p : problems) std::cerr << "problem: " << p << "\n";
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"universal adversarial perturbation lab"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string out, arch, model_path, uap_path, csv_path, image_dir, zoo_dir;
    std::string clean_path, attacked_path;
    std::string format = "json";
    int size = 0;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic graded dataset");
    add_common(synth, flags);
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--size", size, "image size (pixels)");

    CLI::App* preprocess = app.add_subcommand("preprocess", "run the fundus preprocessing chain");
    add_common(preprocess, flags);
    preprocess->add_option("--csv", csv_path, "id_code,diagnosis CSV")->required();
    preprocess->add_option("--images", image_dir, "PNG directory")->required();
    preprocess->add_option("--out", out, "output directory")->required();

    CLI::App* train = app.add_subcommand("train", "two-stage train one architecture");
    add_common(train, flags);
    train->add_option("--arch", arch, "architecture id")->required();
    train->add_option("--out", out, "output directory")->required();

    CLI::App* uap = app.add_subcommand("uap", "generate a universal adversarial perturbation");
    add_common(uap, flags);
    uap->add_option("--model", model_path, "model checkpoint")->required();
    uap->add_option("--out", out, "output .uapv path")->required();

    CLI::App* attack_eval = app.add_subcommand("attack-eval", "evaluate a model under a stored perturbation");
    add_common(attack_eval, flags);
    attack_eval->add_option("--model", model_path, "model checkpoint")->required();
    attack_eval->add_option("--uap", uap_path, "perturbation file")->required();
    attack_eval->add_option("--format", format, "json or md")
        ->check(CLI::IsMember({"json", "md"}));

    CLI::App* advft = app.add_subcommand("advft", "adversarially fine-tune on the model's own perturbation");
    add_common(advft, flags);
    advft->add_option("--model", model_path, "model checkpoint")->required();
    advft->add_option("--uap", uap_path, "perturbation file")->required();
    advft->add_option("--out", out, "output checkpoint path")->required();

    CLI::App* transfer = app.add_subcommand("transfer", "build the transfer-attack kappa matrix");
    add_common(transfer, flags);
    transfer->add_option("--zoo", zoo_dir, "directory of <id>.ckpt + <id>.uapv")->required();
    transfer->add_option("--format", format, "json or md")
        ->check(CLI::IsMember({"json", "md"}));
    transfer->add_option("--out", out, "directory for transfer.json/.md");

    CLI::App* stats = app.add_subcommand("stats", "paired t-test between two kappa vectors");
    stats->add_option("--clean", clean_path, "JSON vector of clean scores")->required();
    stats->add_option("--attacked", attacked_path, "JSON vector of attacked scores")->required();
    stats->add_option("--format", format, "json or md")
        ->check(CLI::IsMember({"json", "md"}));

    CLI::App* repro = app.add_subcommand("repro-desk", "run the full desk-scale pipeline");
    add_common(repro, flags);
    repro->add_option("--out", out, "output directory");

    CLI::App* verify = app.add_subcommand("verify", "re-check an output directory's artifact hashes");
    verify->add_option("--out", out, "run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(flags, out, size);
        if (preprocess->parsed()) return cmd_preprocess(flags, csv_path, image_dir, out);
        if (train->parsed()) return cmd_train(flags, arch, out);
        if (uap->parsed()) return cmd_uap(flags, model_path, out);
        if (attack_eval->parsed()) return cmd_attack_eval(flags, model_path, uap_path, format);
        if (advft->parsed()) return cmd_advft(flags, model_path, uap_path, out);
        if (transfer->parsed()) return cmd_transfer(flags, zoo_dir, format, out);
        if (stats->parsed()) return cmd_stats(clean_path, attacked_path, format);
        if (repro->parsed()) return cmd_repro_desk(flags, out);
        if (verify->parsed()) return cmd_verify(out);
    } catch (const std::exception& e) {
        uaplab::log_error(e.what());
        return 1;
    }
    return 0;
}
