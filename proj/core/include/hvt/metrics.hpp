#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hvt {

/// Per-sample true label, predicted label and full probability vector.
struct PredictionSet {
    std::size_t num_classes = 0;
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> predictions;
    std::vector<std::vector<double>> probs;

    std::size_t size() const { return labels.size(); }
    /// Throws InputError on ragged rows, labels outside [0, C), or rows not summing to 1 within 1e-6.
    void validate() const;

    /// Softmax of each row; the prediction is the first maximal logit.
    static PredictionSet from_logits(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels,
                                     double temperature = 1.0);
    static PredictionSet from_probs(std::vector<std::vector<double>> probs, std::span<const std::int32_t> labels);
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    /// Set when the denominator was zero and the value was defined as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
};

struct MetricsReport {
    std::size_t samples = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
};

MetricsReport classification_metrics(const PredictionSet& preds);

struct McNemarResult {
    std::size_t b = 0; ///< A right, B wrong
    std::size_t c = 0; ///< A wrong, B right
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false; ///< exact binomial (b + c < 25) rather than chi-square
};

/// Continuity-corrected chi-square, (max(|b - c| - 1, 0))^2 / (b + c), when b + c >= 25;
/// otherwise the exact two-sided binomial test on min(b, c). b + c = 0 gives p = 1.
McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c);
McNemarResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);

struct ReliabilityBins {
    std::vector<double> edges; ///< bins + 1 values from 0 to 1
    std::vector<std::size_t> counts;
    std::vector<double> mean_confidence;
    std::vector<double> accuracy;
};

/// Equal-width bins over top-1 confidence; a confidence of exactly 1 falls in the last bin.
ReliabilityBins reliability_bins(const PredictionSet& preds, std::size_t bins = 15);
/// sum_m |B_m| / n * |acc(B_m) - conf(B_m)|, as a fraction in [0, 1].
double ece(const PredictionSet& preds, std::size_t bins = 15);

/// Mean negative log-likelihood of softmax(logits / T).
double nll(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels, double temperature = 1.0);
std::vector<std::vector<double>> apply_temperature(const std::vector<std::vector<double>>& logits, double temperature);

struct TemperatureOptions {
    double log_lo = -3.0;
    double log_hi = 3.0;
    double tolerance = 1e-4;
};

struct TemperatureFit {
    double temperature = 1.0;
    double nll_before = 0.0; ///< at T = 1
    double nll_after = 0.0;
    /// Every row of logits is constant, so the likelihood does not depend on T.
    bool degenerate = false;
};

/// Golden-section search for argmin_T NLL over log T. The returned T is never worse than T = 1.
TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels,
                               const TemperatureOptions& options = {});

// CSV: sample_id,true_label,pred_label,p_0..p_{C-1}
void write_predictions_csv(const std::filesystem::path& path, const PredictionSet& preds);
PredictionSet read_predictions_csv(const std::filesystem::path& path);

// CSV: sample_id,true_label,l_0..l_{C-1}
struct LogitSet {
    std::vector<std::int32_t> labels;
    std::vector<std::vector<double>> logits;
};
void write_logits_csv(const std::filesystem::path& path, const LogitSet& set);
LogitSet read_logits_csv(const std::filesystem::path& path);

/// bin,lower,upper,count,mean_confidence,accuracy
void write_reliability_csv(const std::filesystem::path& path, const ReliabilityBins& bins);

/// Pretty-printed JSON with fixed key order.
std::string metrics_json(const MetricsReport& report, double ece_value);

} // namespace hvt
