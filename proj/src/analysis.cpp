#include "uaplab/analysis.hpp"

#include <cmath>

#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

std::vector<std::vector<std::int64_t>> confusion_matrix(std::span<const int> y_true,
                                                        std::span<const int> y_pred,
                                                        int num_classes) {
    if (y_true.size() != y_pred.size())
        throw LengthMismatch("confusion_matrix: label vectors differ in length");
    std::vector<std::vector<std::int64_t>> counts(
        num_classes, std::vector<std::int64_t>(num_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw LabelOutOfRange("confusion_matrix: label outside [0, K)");
        counts[t][p]++;
    }
    return counts;
}

double quadratic_kappa_from_confusion(const std::vector<std::vector<std::int64_t>>& counts) {
    int k = static_cast<int>(counts.size());
    if (k < 2) throw Error("quadratic_kappa: need at least 2 classes");
    std::int64_t n = 0;
    std::vector<double> row_marginal(k, 0.0), col_marginal(k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) n += counts[i][j];
    if (n == 0) throw EmptyDataset("quadratic_kappa: no samples");

    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            double o = static_cast<double>(counts[i][j]) / static_cast<double>(n);
            row_marginal[i] += o;
            col_marginal[j] += o;
        }
    }
    double denom_scale = static_cast<double>(k - 1) * (k - 1);
    double weighted_observed = 0.0, weighted_expected = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            double w = static_cast<double>(i - j) * (i - j) / denom_scale;
            weighted_observed += w * (static_cast<double>(counts[i][j]) / n);
            weighted_expected += w * row_marginal[i] * col_marginal[j];
        }
    }
    if (weighted_expected <= 0.0)
        throw DegenerateMarginals(
            "quadratic_kappa: both raters constant and identical, kappa undefined");
    return 1.0 - weighted_observed / weighted_expected;
}

KappaScore quadratic_kappa(std::span<const int> y_true, std::span<const int> y_pred,
                           int num_classes) {
    auto counts = confusion_matrix(y_true, y_pred, num_classes);
    KappaScore score;
    score.value = quadratic_kappa_from_confusion(counts);
    score.n_samples = static_cast<int>(y_true.size());
    score.n_classes = num_classes;
    return score;
}

std::string agreement_level(double kappa) {
    if (kappa < -1.0 || kappa > 1.0)
        throw OutOfRange("agreement_level: kappa outside [-1, 1]");
    if (kappa > 0.8) return "Almost perfect";
    if (kappa > 0.6) return "Substantial";
    if (kappa > 0.4) return "Moderate";
    if (kappa > 0.2) return "Fair";
    if (kappa > 0.0) return "Slight";
    return "No agreement";
}

namespace {

// continued fraction for the incomplete beta function (modified Lentz)
double beta_continued_fraction(double a, double b, double x) {
    const double kTiny = 1e-300;
    const double kEps = 3e-16;
    const int kMaxIter = 2000;

    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kEps) return h;
    }
    throw Error("incomplete beta: continued fraction did not converge");
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw OutOfRange("incomplete beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed_p(double t, int dof) {
    if (dof < 1) throw Error("student t: dof must be >= 1");
    double nu = static_cast<double>(dof);
    return regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

SignificanceResult paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw LengthMismatch("paired_ttest: vectors differ in length");
    std::size_t n = a.size();
    if (n < 2) throw Error("paired_ttest: need at least 2 pairs");

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dev = (a[i] - b[i]) - mean;
        ss += dev * dev;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd <= 0.0)
        throw DegenerateVariance("paired_ttest: all differences identical");

    SignificanceResult result;
    result.dof = static_cast<int>(n) - 1;
    result.mean_diff = mean;
    result.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    result.p_value = student_t_two_tailed_p(result.t_statistic, result.dof);
    return result;
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "json") return ReportFormat::json;
    if (name == "md" || name == "markdown") return ReportFormat::markdown;
    throw UnsupportedFormat("unknown report format: " + name);
}

namespace {

constexpr const char* kSchema = "uaplab/report/v1";

std::string markdown_transfer(const TransferMatrixReport& r) {
    std::string out;
    out += "|  |";
    for (const auto& c : r.col_ids) out += " " + c + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < r.col_ids.size(); ++i) out += "---|";
    out += "\n";
    for (std::size_t i = 0; i < r.row_ids.size(); ++i) {
        out += "| Perturbation vector created by " + r.row_ids[i] + " |";
        for (double v : r.kappa[i]) out += " " + format_fixed(v, 4) + " |";
        out += "\n";
    }
    return out;
}

} // namespace

std::string render_report(const TransferMatrixReport& r, ReportFormat format) {
    if (format == ReportFormat::markdown) return markdown_transfer(r);
    nlohmann::json j;
    j["schema"] = kSchema;
    j["kind"] = "transfer_matrix";
    j["rows"] = r.row_ids;
    j["cols"] = r.col_ids;
    j["kappa"] = r.kappa;
    j["dataset_sha256"] = r.dataset_sha256;
    j["eval_split"] = r.eval_split;
    j["configs"] = r.configs;
    j["timestamp"] = r.timestamp;
    return j.dump(2) + "\n";
}

std::string render_report(const EvalMetrics& m, ReportFormat format) {
    if (format == ReportFormat::markdown) {
        std::string out;
        out += "| metric | value |\n|---|---|\n";
        out += "| quadratic kappa | " + format_fixed(m.kappa, 4) + " |\n";
        out += "| agreement | " + agreement_level(m.kappa) + " |\n";
        out += "| accuracy | " + format_fixed(m.accuracy, 4) + " |\n";
        out += "| samples | " + std::to_string(m.n_samples) + " |\n";
        return out;
    }
    nlohmann::json j;
    j["schema"] = kSchema;
    j["kind"] = "metrics";
    j["kappa"] = m.kappa;
    j["agreement"] = agreement_level(m.kappa);
    j["accuracy"] = m.accuracy;
    j["confusion"] = m.confusion;
    j["n_samples"] = m.n_samples;
    return j.dump(2) + "\n";
}

std::string render_report(const SignificanceResult& s, ReportFormat format) {
    if (format == ReportFormat::markdown) {
        std::string out;
        out += "| statistic | value |\n|---|---|\n";
        out += "| t | " + format_fixed(s.t_statistic, 4) + " |\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4e", s.p_value);
        out += "| p (two-tailed) | " + std::string(buf) + " |\n";
        out += "| dof | " + std::to_string(s.dof) + " |\n";
        out += "| mean difference | " + format_fixed(s.mean_diff, 4) + " |\n";
        return out;
    }
    nlohmann::json j;
    j["schema"] = kSchema;
    j["kind"] = "significance";
    j["t_statistic"] = s.t_statistic;
    j["p_value"] = s.p_value;
    j["dof"] = s.dof;
    j["mean_diff"] = s.mean_diff;
    return j.dump(2) + "\n";
}

TransferMatrixReport parse_transfer_report(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    if (j.value("schema", "") != kSchema || j.value("kind", "") != "transfer_matrix")
        throw UnsupportedFormat("not a transfer matrix report");
    TransferMatrixReport r;
    r.row_ids = j.at("rows").get<std::vector<std::string>>();
    r.col_ids = j.at("cols").get<std::vector<std::string>>();
    r.kappa = j.at("kappa").get<std::vector<std::vector<double>>>();
    r.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
    r.eval_split = j.at("eval_split").get<std::string>();
    r.configs = j.at("configs");
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
}

} // namespace uaplab
