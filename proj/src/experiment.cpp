#include "uaplab/experiment.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>

#include "uaplab/analysis.hpp"
#include "uaplab/checkpoint.hpp"
#include "uaplab/errors.hpp"
#include "uaplab/hash.hpp"
#include "uaplab/robustness.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

namespace fs = std::filesystem;

std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw Error("unknown optimizer '" + s + "'");
}

} // namespace

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = {{"source", dataset.source},
                    {"n", dataset.n},
                    {"image_size", dataset.image_size},
                    {"proportions", dataset.proportions},
                    {"seed", dataset.seed},
                    {"csv", dataset.csv},
                    {"images", dataset.images}};
    j["preprocess"] = {{"enabled", preprocess_enabled},
                       {"black_threshold", preprocess.black_threshold},
                       {"target_size", preprocess.target_size},
                       {"fill", preprocess.fill},
                       {"sigma", preprocess.sigma},
                       {"alpha", preprocess.alpha},
                       {"beta", preprocess.beta},
                       {"gamma", preprocess.gamma}};
    j["zoo"] = nlohmann::json::array();
    for (const auto& member : zoo)
        j["zoo"].push_back({{"arch", member.arch}, {"seed", member.seed}});
    j["emulate_pretraining"] = emulate_pretraining;
    j["train"] = {{"optimizer", optimizer_name(train.optimizer)},
                  {"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"max_epochs_pretrain", train.max_epochs_pretrain},
                  {"max_epochs_finetune", train.max_epochs_finetune},
                  {"early_stop_patience", train.early_stop_patience},
                  {"seed", train.seed}};
    j["attack"] = {{"xi", attack.xi},
                   {"p", norm_name(attack.p)},
                   {"target_fooling", attack.target_fooling},
                   {"max_passes", attack.max_passes},
                   {"deepfool_max_iter", attack.deepfool_max_iter},
                   {"overshoot", attack.overshoot},
                   {"shuffle_seed", attack.shuffle_seed}};
    j["test_fraction"] = test_fraction;
    j["dp_fraction"] = dp_fraction;
    j["eval_split"] = eval_split;
    j["mix_ratio"] = mix_ratio;
    j["advft_learning_rate"] = advft_learning_rate;
    j["fgsm_eps"] = fgsm_eps;
    j["kfold_k"] = kfold_k;
    j["jobs"] = jobs;
    j["out"] = out;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        cfg.dataset.source = d.value("source", cfg.dataset.source);
        cfg.dataset.n = d.value("n", cfg.dataset.n);
        cfg.dataset.image_size = d.value("image_size", cfg.dataset.image_size);
        if (d.contains("proportions"))
            cfg.dataset.proportions = d["proportions"].get<std::array<double, kNumGrades>>();
        cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
        cfg.dataset.csv = d.value("csv", cfg.dataset.csv);
        cfg.dataset.images = d.value("images", cfg.dataset.images);
    }
    cfg.preprocess = PreprocessConfig::for_target_size(
        cfg.dataset.source == "synthetic" ? cfg.dataset.image_size : 224);
    if (j.contains("preprocess")) {
        const auto& p = j["preprocess"];
        cfg.preprocess_enabled = p.value("enabled", cfg.preprocess_enabled);
        cfg.preprocess.black_threshold =
            p.value("black_threshold", cfg.preprocess.black_threshold);
        if (p.contains("target_size")) {
            cfg.preprocess.target_size = p["target_size"].get<int>();
            cfg.preprocess.sigma = cfg.preprocess.target_size / 30.0;
        }
        cfg.preprocess.fill = p.value("fill", cfg.preprocess.fill);
        cfg.preprocess.sigma = p.value("sigma", cfg.preprocess.sigma);
        cfg.preprocess.alpha = p.value("alpha", cfg.preprocess.alpha);
        cfg.preprocess.beta = p.value("beta", cfg.preprocess.beta);
        cfg.preprocess.gamma = p.value("gamma", cfg.preprocess.gamma);
    }
    if (j.contains("zoo")) {
        cfg.zoo.clear();
        for (const auto& m : j["zoo"])
            cfg.zoo.push_back({m.at("arch").get<std::string>(),
                               m.value("seed", std::uint64_t{0})});
    }
    cfg.emulate_pretraining = j.value("emulate_pretraining", cfg.emulate_pretraining);
    if (j.contains("train")) {
        const auto& t = j["train"];
        cfg.train.optimizer =
            parse_optimizer(t.value("optimizer", optimizer_name(cfg.train.optimizer)));
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.max_epochs_pretrain =
            t.value("max_epochs_pretrain", cfg.train.max_epochs_pretrain);
        cfg.train.max_epochs_finetune =
            t.value("max_epochs_finetune", cfg.train.max_epochs_finetune);
        cfg.train.early_stop_patience =
            t.value("early_stop_patience", cfg.train.early_stop_patience);
        cfg.train.seed = t.value("seed", cfg.train.seed);
    }
    if (j.contains("attack")) {
        const auto& a = j["attack"];
        cfg.attack.xi = a.value("xi", cfg.attack.xi);
        cfg.attack.p = parse_norm(a.value("p", std::string(norm_name(cfg.attack.p))));
        cfg.attack.target_fooling = a.value("target_fooling", cfg.attack.target_fooling);
        cfg.attack.max_passes = a.value("max_passes", cfg.attack.max_passes);
        cfg.attack.deepfool_max_iter =
            a.value("deepfool_max_iter", cfg.attack.deepfool_max_iter);
        cfg.attack.overshoot = a.value("overshoot", cfg.attack.overshoot);
        cfg.attack.shuffle_seed = a.value("shuffle_seed", cfg.attack.shuffle_seed);
    }
    cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
    cfg.dp_fraction = j.value("dp_fraction", cfg.dp_fraction);
    cfg.eval_split = j.value("eval_split", cfg.eval_split);
    cfg.mix_ratio = j.value("mix_ratio", cfg.mix_ratio);
    cfg.advft_learning_rate = j.value("advft_learning_rate", cfg.advft_learning_rate);
    cfg.fgsm_eps = j.value("fgsm_eps", cfg.fgsm_eps);
    cfg.kfold_k = j.value("kfold_k", cfg.kfold_k);
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.out = j.value("out", cfg.out);
    return cfg;
}

std::string ExperimentConfig::hash() const {
    nlohmann::json j = to_json();
    j.erase("out");
    j.erase("jobs");
    return Sha256::of(j.dump());
}

ExperimentConfig load_experiment_config(const std::string& path) {
    try {
        return ExperimentConfig::from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw Error("config " + path + ": " + e.what());
    }
}

LabeledDataset prepare_dataset(const ExperimentConfig& config) {
    LabeledDataset raw;
    if (config.dataset.source == "synthetic") {
        raw = generate_synthetic_dataset(config.dataset.n, config.dataset.proportions,
                                         config.dataset.image_size, config.dataset.seed);
    } else if (config.dataset.source == "csv") {
        raw = load_dataset_csv(config.dataset.csv, config.dataset.images);
    } else {
        throw Error("dataset source must be 'synthetic' or 'csv'");
    }
    if (!config.preprocess_enabled) return raw;
    LabeledDataset processed;
    processed.role = raw.role;
    processed.items.resize(raw.items.size());
    parallel_for(raw.items.size(), config.jobs, [&](std::size_t i) {
        processed.items[i].id = raw.items[i].id;
        processed.items[i].grade = raw.items[i].grade;
        processed.items[i].image = preprocess_image(raw.items[i].image, config.preprocess);
    });
    return processed;
}

DatasetSplits split_dataset(const LabeledDataset& full, const ExperimentConfig& config) {
    DatasetSplits splits;
    auto [test_ds, train_ds] =
        stratified_split(full, config.test_fraction, Rng::derive(config.dataset.seed, 101),
                         DatasetRole::test, DatasetRole::train);
    splits.test = std::move(test_ds);
    FoldAssignment folds =
        stratified_kfold(train_ds, config.kfold_k, Rng::derive(config.dataset.seed, 102));
    splits.fit.role = DatasetRole::train;
    splits.val.role = DatasetRole::train;
    for (std::size_t i = 0; i < train_ds.size(); ++i)
        (folds.fold_of[i] == 0 ? splits.val : splits.fit).items.push_back(train_ds.items[i]);
    auto [dp, dr] = split_perturb_robust(train_ds, config.dp_fraction,
                                         Rng::derive(config.dataset.seed, 103));
    splits.dp = std::move(dp);
    splits.dr = std::move(dr);
    return splits;
}

const LabeledDataset& evaluation_split(const DatasetSplits& splits,
                                       const ExperimentConfig& config) {
    if (config.eval_split == "robust") return splits.dr;
    if (config.eval_split == "test") return splits.test;
    throw Error("eval_split must be 'test' or 'robust'");
}

namespace {

class ArtifactWriter {
public:
    explicit ArtifactWriter(const std::string& out_dir, std::string config_hash)
        : out_dir_(out_dir), config_hash_(std::move(config_hash)) {
        fs::create_directories(out_dir_);
    }

    std::string path(const std::string& rel) const { return (out_dir_ / rel).string(); }

    void write_text(const std::string& rel, const std::string& text) {
        write_file_atomic(path(rel), text);
        record(rel);
    }

    void write_json(const std::string& rel, const nlohmann::json& j) {
        write_text(rel, j.dump(2) + "\n");
    }

    void record(const std::string& rel) {
        artifacts_.push_back({rel, Sha256::of_file(path(rel))});
    }

    void finish() {
        nlohmann::json manifest;
        manifest["schema"] = "uaplab/manifest/v1";
        manifest["config_hash"] = config_hash_;
        manifest["generated_at"] = timestamp_utc();
        manifest["artifacts"] = nlohmann::json::array();
        for (const auto& [rel, sha] : artifacts_)
            manifest["artifacts"].push_back({{"path", rel}, {"sha256", sha}});
        write_file_atomic(path("manifest.json"), manifest.dump(2) + "\n");
        std::error_code ec;
        fs::remove(out_dir_ / "FAILED", ec);
    }

    void mark_failed(const std::string& stage, const std::string& message) {
        write_file_atomic(path("FAILED"), stage + ": " + message + "\n");
    }

private:
    fs::path out_dir_;
    std::string config_hash_;
    std::vector<std::pair<std::string, std::string>> artifacts_;
};

struct DeskState {
    LabeledDataset fit, val, test, dp, dr;
    ModelZoo zoo_before;
    ModelZoo zoo_after;
    std::vector<double> clean_kappa;
};

nlohmann::json history_json(const TrainHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs)
        epochs.push_back({{"train_loss", e.train_loss}, {"val_kappa", e.val_kappa}});
    return {{"epochs", epochs},
            {"best_epoch", h.best_epoch},
            {"best_val_kappa", h.best_val_kappa}};
}

nlohmann::json significance_json(const SignificanceResult& s) {
    return {{"t_statistic", s.t_statistic},
            {"p_value", s.p_value},
            {"dof", s.dof},
            {"mean_diff", s.mean_diff}};
}

// identical score vectors (e.g. zero perturbations) make the test undefined;
// the bundle records that instead of aborting the run
nlohmann::json safe_ttest(std::span<const double> a, std::span<const double> b) {
    try {
        return significance_json(paired_ttest(a, b));
    } catch (const DegenerateVariance& e) {
        return {{"degenerate", true}, {"error", e.what()}};
    }
}

double offdiag_mean(const TransferMatrixReport& report) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < report.row_ids.size(); ++i) {
        for (std::size_t j = 0; j < report.row_ids.size(); ++j) {
            if (i == j) continue;
            sum += report.kappa[i][j];
            ++count;
        }
    }
    return count ? sum / count : 0.0;
}

std::vector<double> diagonal(const TransferMatrixReport& report) {
    std::vector<double> d;
    for (std::size_t i = 0; i < report.row_ids.size(); ++i) d.push_back(report.kappa[i][i]);
    return d;
}

} // namespace

nlohmann::json run_desk_experiment(const ExperimentConfig& config) {
    std::string config_hash = config.hash();
    ArtifactWriter writer(config.out, config_hash);
    std::string stage = "setup";
    auto t_start = std::chrono::steady_clock::now();

    try {
        nlohmann::json config_json = config.to_json();
        config_json["config_hash"] = config_hash;
        writer.write_json("config.json", config_json);

        stage = "dataset";
        LabeledDataset full = prepare_dataset(config);
        std::string dataset_sha = dataset_digest(full);
        writer.write_json("dataset_manifest.json",
                          {{"schema", "uaplab/dataset/v1"},
                           {"dataset_sha256", dataset_sha},
                           {"n", full.size()},
                           {"class_counts", full.class_counts()},
                           {"config_hash", config_hash}});

        stage = "split";
        DeskState state;
        {
            DatasetSplits splits = split_dataset(full, config);
            state.fit = std::move(splits.fit);
            state.val = std::move(splits.val);
            state.test = std::move(splits.test);
            state.dp = std::move(splits.dp);
            state.dr = std::move(splits.dr);
        }
        if (config.eval_split != "test" && config.eval_split != "robust")
            throw Error("eval_split must be 'test' or 'robust'");
        const LabeledDataset& eval_ds =
            config.eval_split == "robust" ? state.dr : state.test;

        stage = "train";
        nlohmann::json train_report = nlohmann::json::object();
        for (const ZooSpec& spec : config.zoo) {
            log_info("training " + spec.arch);
            Shape shape = state.fit.items.front().image.shape();
            ClassifierModel model = build_model(spec.arch, kNumGrades, shape, spec.seed);
            if (config.emulate_pretraining) {
                pretrain_source_task(model, config.train);
                reinitialize_head(model, Rng::derive(spec.seed, 7));
            }
            TwoStageHistory history =
                two_stage_finetune(model, state.fit, config.train, state.val);
            save_checkpoint(model, writer.path("models/" + spec.arch + ".ckpt"));
            writer.record("models/" + spec.arch + ".ckpt");
            train_report[spec.arch] = {{"head_stage", history_json(history.head_stage)},
                                       {"full_stage", history_json(history.full_stage)}};
            state.zoo_before.add(spec.arch, std::move(model));
        }
        writer.write_json("reports/train_history.json", train_report);

        stage = "clean-eval";
        nlohmann::json clean_report;
        clean_report["schema"] = "uaplab/report/v1";
        clean_report["kind"] = "clean_metrics";
        clean_report["config_hash"] = config_hash;
        clean_report["eval_split"] = config.eval_split;
        clean_report["models"] = nlohmann::json::object();
        for (const auto& member : state.zoo_before.members()) {
            EvalMetrics m = evaluate_model(member.model, eval_ds, config.jobs);
            state.clean_kappa.push_back(m.kappa);
            clean_report["models"][member.model_id] = {
                {"kappa", m.kappa},
                {"agreement", agreement_level(m.kappa)},
                {"accuracy", m.accuracy}};
        }
        {
            EvalMetrics m = evaluate_ensemble(state.zoo_before, eval_ds, {}, config.jobs);
            clean_report["ensemble"] = {{"kappa", m.kappa},
                                        {"agreement", agreement_level(m.kappa)},
                                        {"accuracy", m.accuracy}};
        }
        clean_report["timestamp"] = timestamp_utc();
        writer.write_json("reports/clean_metrics.json", clean_report);

        stage = "uap";
        nlohmann::json fooling_report;
        fooling_report["schema"] = "uaplab/report/v1";
        fooling_report["kind"] = "fooling_history";
        fooling_report["config_hash"] = config_hash;
        fooling_report["models"] = nlohmann::json::object();
        for (std::size_t mi = 0; mi < state.zoo_before.size(); ++mi) {
            auto& member = state.zoo_before.at(mi);
            log_info("generating UAP for " + member.model_id);
            AttackConfig attack = config.attack;
            attack.shuffle_seed = Rng::derive(config.attack.shuffle_seed, mi);
            PerturbationVector v =
                generate_uap(member.model, state.dp, attack, member.model_id, config.jobs);
            save_perturbation(v, writer.path("uaps/" + member.model_id + ".uapv"));
            writer.record("uaps/" + member.model_id + ".uapv");
            writer.record("uaps/" + member.model_id + ".uapv.json");
            fooling_report["models"][member.model_id] = {
                {"final_fooling_ratio", v.final_fooling_ratio},
                {"passes", v.passes},
                {"history", v.history}};
            member.uap = std::move(v);
        }
        fooling_report["timestamp"] = timestamp_utc();
        writer.write_json("reports/fooling_history.json", fooling_report);

        stage = "transfer-before";
        TransferMatrixReport before =
            transfer_matrix(state.zoo_before, eval_ds, config.eval_split, config.jobs);
        before.timestamp = timestamp_utc();
        before.configs["config_hash"] = config_hash;
        writer.write_text("reports/transfer_before.json",
                          render_report(before, ReportFormat::json));
        writer.write_text("reports/transfer_before.md",
                          render_report(before, ReportFormat::markdown));

        stage = "advft";
        TrainConfig advft_config = config.train;
        advft_config.learning_rate = config.advft_learning_rate;
        for (const auto& member : state.zoo_before.members()) {
            log_info("adversarial fine-tuning " + member.model_id);
            ClassifierModel tuned =
                load_checkpoint(writer.path("models/" + member.model_id + ".ckpt"));
            adversarial_finetune(tuned, member.model_id, state.fit, *member.uap,
                                 advft_config, config.mix_ratio, state.val);
            save_checkpoint(tuned, writer.path("models/" + member.model_id + ".advft.ckpt"));
            writer.record("models/" + member.model_id + ".advft.ckpt");
            state.zoo_after.add(member.model_id, std::move(tuned), *member.uap);
        }

        stage = "transfer-after";
        TransferMatrixReport after =
            transfer_matrix(state.zoo_after, eval_ds, config.eval_split, config.jobs);
        after.timestamp = timestamp_utc();
        after.configs["config_hash"] = config_hash;
        writer.write_text("reports/transfer_after.json",
                          render_report(after, ReportFormat::json));
        writer.write_text("reports/transfer_after.md",
                          render_report(after, ReportFormat::markdown));

        stage = "significance";
        std::vector<double> before_diag = diagonal(before);
        std::vector<double> after_diag = diagonal(after);
        nlohmann::json before_vs_clean = safe_ttest(state.clean_kappa, before_diag);
        nlohmann::json after_vs_before = safe_ttest(after_diag, before_diag);
        nlohmann::json after_vs_clean = safe_ttest(state.clean_kappa, after_diag);
        nlohmann::json significance;
        significance["schema"] = "uaplab/report/v1";
        significance["kind"] = "significance_suite";
        significance["config_hash"] = config_hash;
        significance["clean_kappa"] = state.clean_kappa;
        significance["before_diagonal"] = before_diag;
        significance["after_diagonal"] = after_diag;
        significance["before_vs_clean"] = before_vs_clean;
        significance["after_vs_before"] = after_vs_before;
        significance["after_vs_clean"] = after_vs_clean;
        significance["timestamp"] = timestamp_utc();
        writer.write_json("reports/significance.json", significance);

        stage = "fgsm";
        nlohmann::json fgsm_report;
        fgsm_report["schema"] = "uaplab/report/v1";
        fgsm_report["kind"] = "fgsm_eval";
        fgsm_report["config_hash"] = config_hash;
        fgsm_report["eps"] = config.fgsm_eps;
        fgsm_report["models"] = nlohmann::json::object();
        double fgsm_before_mean = 0.0, fgsm_after_mean = 0.0;
        for (std::size_t mi = 0; mi < state.zoo_before.size(); ++mi) {
            const auto& plain = state.zoo_before.at(mi);
            const auto& tuned = state.zoo_after.at(mi);
            auto attack_with = [&](const ClassifierModel& model) {
                LabeledDataset attacked;
                attacked.role = eval_ds.role;
                attacked.items.resize(eval_ds.size());
                parallel_for(eval_ds.size(), config.jobs, [&](std::size_t i) {
                    attacked.items[i].id = eval_ds.items[i].id;
                    attacked.items[i].grade = eval_ds.items[i].grade;
                    attacked.items[i].image = fgsm(model, eval_ds.items[i].image,
                                                   eval_ds.items[i].grade, config.fgsm_eps);
                });
                return attacked;
            };
            double kappa_before =
                evaluate_model(plain.model, attack_with(plain.model), config.jobs).kappa;
            double kappa_after =
                evaluate_model(tuned.model, attack_with(tuned.model), config.jobs).kappa;
            fgsm_before_mean += kappa_before / state.zoo_before.size();
            fgsm_after_mean += kappa_after / state.zoo_before.size();
            fgsm_report["models"][plain.model_id] = {{"before_finetune", kappa_before},
                                                     {"after_finetune", kappa_after}};
        }
        fgsm_report["mean_before_finetune"] = fgsm_before_mean;
        fgsm_report["mean_after_finetune"] = fgsm_after_mean;
        fgsm_report["timestamp"] = timestamp_utc();
        writer.write_json("reports/fgsm_eval.json", fgsm_report);

        stage = "summary";
        double runtime_s = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t_start)
                               .count();
        nlohmann::json summary;
        summary["schema"] = "uaplab/report/v1";
        summary["kind"] = "desk_summary";
        summary["config_hash"] = config_hash;
        summary["dataset_sha256"] = dataset_sha;
        summary["eval_split"] = config.eval_split;
        summary["models"] = nlohmann::json::array();
        for (std::size_t mi = 0; mi < state.zoo_before.size(); ++mi) {
            const auto& member = state.zoo_before.at(mi);
            summary["models"].push_back(
                {{"id", member.model_id},
                 {"clean_kappa", state.clean_kappa[mi]},
                 {"uap_fooling_ratio", member.uap->final_fooling_ratio},
                 {"uap_passes", member.uap->passes},
                 {"self_attack_kappa_before", before_diag[mi]},
                 {"self_attack_kappa_after", after_diag[mi]}});
        }
        summary["offdiag_mean_before"] = offdiag_mean(before);
        summary["offdiag_mean_after"] = offdiag_mean(after);
        summary["before_vs_clean"] = before_vs_clean;
        summary["after_vs_before"] = after_vs_before;
        summary["after_vs_clean"] = after_vs_clean;
        summary["fgsm"] = {{"mean_before_finetune", fgsm_before_mean},
                           {"mean_after_finetune", fgsm_after_mean}};
        summary["runtime_seconds"] = runtime_s;
        summary["timestamp"] = timestamp_utc();
        writer.write_json("reports/summary.json", summary);
        writer.finish();
        log_info("desk experiment finished in " + format_fixed(runtime_s, 1) + "s");
        return summary;
    } catch (const std::exception& e) {
        writer.mark_failed(stage, e.what());
        throw Error("stage '" + stage + "' failed: " + e.what());
    }
}

std::vector<std::string> verify_run(const std::string& out_dir) {
    std::vector<std::string> problems;
    fs::path dir(out_dir);
    if (fs::exists(dir / "FAILED"))
        problems.push_back("FAILED marker present: " + read_file((dir / "FAILED").string()));

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
    } catch (const std::exception& e) {
        problems.push_back(std::string("cannot read manifest.json: ") + e.what());
        return problems;
    }
    for (const auto& artifact : manifest.value("artifacts", nlohmann::json::array())) {
        std::string rel = artifact.at("path").get<std::string>();
        std::string expected = artifact.at("sha256").get<std::string>();
        try {
            std::string actual = Sha256::of_file((dir / rel).string());
            if (actual != expected)
                problems.push_back(rel + ": hash mismatch (expected " + expected +
                                   ", got " + actual + ")");
        } catch (const std::exception& e) {
            problems.push_back(rel + ": " + e.what());
        }
    }

    // config hash chain: every JSON artifact that embeds a config_hash (or a
    // configs.config_hash) must agree with the manifest
    std::string config_hash = manifest.value("config_hash", "");
    for (const auto& artifact : manifest.value("artifacts", nlohmann::json::array())) {
        std::string rel = artifact.at("path").get<std::string>();
        if (!rel.ends_with(".json")) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(read_file((dir / rel).string()));
            std::string embedded;
            if (j.contains("config_hash"))
                embedded = j["config_hash"].get<std::string>();
            else if (j.contains("configs") && j["configs"].contains("config_hash"))
                embedded = j["configs"]["config_hash"].get<std::string>();
            else
                continue;
            if (embedded != config_hash)
                problems.push_back(rel + ": config_hash differs from manifest");
        } catch (const std::exception&) {
            // unreadable files already reported via artifact hashing
        }
    }
    return problems;
}

} // namespace uaplab
