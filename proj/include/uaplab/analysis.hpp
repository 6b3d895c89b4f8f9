#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace uaplab {

std::vector<std::vector<std::int64_t>> confusion_matrix(std::span<const int> y_true,
                                                        std::span<const int> y_pred,
                                                        int num_classes);

struct KappaScore {
    double value = 0.0;
    int n_samples = 0;
    int n_classes = 0;
};

// Quadratic weighted Cohen kappa with weights (i-j)^2 / (K-1)^2.
KappaScore quadratic_kappa(std::span<const int> y_true, std::span<const int> y_pred,
                           int num_classes);
double quadratic_kappa_from_confusion(const std::vector<std::vector<std::int64_t>>& counts);

// Landis-Koch style interpretation bands; boundary values resolve downward.
std::string agreement_level(double kappa);

struct SignificanceResult {
    double t_statistic = 0.0;
    double p_value = 1.0;
    int dof = 0;
    double mean_diff = 0.0;
};

// Two-tailed paired t-test on per-model score vectors.
SignificanceResult paired_ttest(std::span<const double> a, std::span<const double> b);

double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_tailed_p(double t, int dof);

struct EvalMetrics {
    double kappa = 0.0;
    double accuracy = 0.0;
    std::vector<std::vector<std::int64_t>> confusion;
    int n_samples = 0;
};

struct TransferMatrixReport {
    std::vector<std::string> row_ids;          // perturbation source models
    std::vector<std::string> col_ids;          // target models + "ensemble"
    std::vector<std::vector<double>> kappa;    // row-major, rows x cols
    std::string dataset_sha256;
    std::string eval_split;                    // which split the kappas were computed on
    nlohmann::json configs;
    std::string timestamp;

    bool operator==(const TransferMatrixReport&) const = default;
};

enum class ReportFormat { json, markdown };

ReportFormat parse_report_format(const std::string& name); // throws UnsupportedFormat

std::string render_report(const TransferMatrixReport& report, ReportFormat format);
std::string render_report(const EvalMetrics& metrics, ReportFormat format);
std::string render_report(const SignificanceResult& result, ReportFormat format);

TransferMatrixReport parse_transfer_report(const std::string& json_text);

} // namespace uaplab
