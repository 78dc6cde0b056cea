#include "hvt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hvt/errors.hpp"

namespace hvt {

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> softmax_row(const std::vector<double>& logits, double temperature)
{
    double mx = -INFINITY;
    for (double l : logits)
        mx = std::max(mx, l / temperature);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        z += p[i] = std::exp(logits[i] / temperature - mx);
    for (auto& v : p)
        v /= z;
    return p;
}

std::int32_t argmax_row(const std::vector<double>& v)
{
    return static_cast<std::int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::string& header)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open " + path.string());
    if (!std::getline(in, header))
        throw InputError(path.string() + ": empty file");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

double parse_double(const std::string& s, const std::filesystem::path& path)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw InputError("");
        return v;
    } catch (const std::exception&) {
        throw InputError(path.string() + ": bad number '" + s + "'");
    }
}

std::int32_t parse_label(const std::string& s, const std::filesystem::path& path)
{
    const double v = parse_double(s, path);
    if (v != std::floor(v))
        throw InputError(path.string() + ": bad label '" + s + "'");
    return static_cast<std::int32_t>(v);
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << text;
}

void check_logits(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels, const char* op)
{
    if (logits.empty() || logits.size() != labels.size())
        throw InputError(std::string(op) + ": need a non-empty set with one label per row");
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (logits[i].size() != logits[0].size() || labels[i] < 0 ||
            static_cast<std::size_t>(labels[i]) >= logits[i].size())
            throw InputError(std::string(op) + ": ragged row or label out of range at " + std::to_string(i));
}

} // namespace

void PredictionSet::validate() const
{
    if (labels.empty())
        throw InputError("PredictionSet: empty");
    if (predictions.size() != labels.size() || probs.size() != labels.size())
        throw InputError("PredictionSet: column lengths differ");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes || predictions[i] < 0 ||
            static_cast<std::size_t>(predictions[i]) >= num_classes)
            throw InputError("PredictionSet: label outside [0, " + std::to_string(num_classes) + ") at sample " +
                             std::to_string(i));
        if (probs[i].size() != num_classes)
            throw InputError("PredictionSet: probability row " + std::to_string(i) + " has wrong length");
        double s = 0.0;
        for (double p : probs[i])
            s += p;
        if (std::abs(s - 1.0) > 1e-6)
            throw InputError("PredictionSet: probability row " + std::to_string(i) + " sums to " + fmt(s));
    }
}

PredictionSet PredictionSet::from_logits(const std::vector<std::vector<double>>& logits,
                                         std::span<const std::int32_t> labels, double temperature)
{
    return from_probs(apply_temperature(logits, temperature), labels);
}

PredictionSet PredictionSet::from_probs(std::vector<std::vector<double>> probs, std::span<const std::int32_t> labels)
{
    PredictionSet p;
    p.num_classes = probs.empty() ? 0 : probs[0].size();
    p.labels.assign(labels.begin(), labels.end());
    for (const auto& row : probs)
        p.predictions.push_back(argmax_row(row));
    p.probs = std::move(probs);
    p.validate();
    return p;
}

MetricsReport classification_metrics(const PredictionSet& preds)
{
    preds.validate();
    const std::size_t C = preds.num_classes;
    MetricsReport r;
    r.samples = preds.size();
    r.confusion.assign(C, std::vector<std::size_t>(C, 0));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++r.confusion[static_cast<std::size_t>(preds.labels[i])][static_cast<std::size_t>(preds.predictions[i])];
        hit += preds.labels[i] == preds.predictions[i];
    }
    r.accuracy = static_cast<double>(hit) / static_cast<double>(preds.size());
    r.per_class.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t k = 0; k < C; ++k) {
            predicted += r.confusion[k][c];
            actual += r.confusion[c][k];
        }
        auto& m = r.per_class[c];
        const auto tp = static_cast<double>(r.confusion[c][c]);
        m.support = actual;
        m.precision_undefined = predicted == 0;
        m.recall_undefined = actual == 0;
        m.precision = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
        m.recall = actual == 0 ? 0.0 : tp / static_cast<double>(actual);
        m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
        r.macro_precision += m.precision / static_cast<double>(C);
        r.macro_recall += m.recall / static_cast<double>(C);
        r.macro_f1 += m.f1 / static_cast<double>(C);
    }
    return r;
}

McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c)
{
    McNemarResult r;
    r.b = b;
    r.c = c;
    const std::size_t n = b + c;
    if (n == 0)
        return r;
    if (n >= 25) {
        const double d = std::max(std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0, 0.0);
        r.statistic = d * d / static_cast<double>(n);
        r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
        return r;
    }
    r.exact = true;
    const std::size_t k = std::min(b, c);
    r.statistic = static_cast<double>(k);
    double tail = 0.0, term = std::pow(0.5, static_cast<double>(n)); // C(n, 0) / 2^n
    for (std::size_t i = 0; i <= k; ++i) {
        tail += term;
        term *= static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    r.p_value = std::min(1.0, 2.0 * tail);
    return r;
}

McNemarResult mcnemar_test(const std::vector<bool>& a, const std::vector<bool>& b)
{
    if (a.size() != b.size())
        throw InputError("mcnemar_test: outcome vectors differ in length");
    std::size_t only_a = 0, only_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        only_a += a[i] && !b[i];
        only_b += !a[i] && b[i];
    }
    return mcnemar_from_counts(only_a, only_b);
}

ReliabilityBins reliability_bins(const PredictionSet& preds, std::size_t bins)
{
    preds.validate();
    if (bins == 0)
        throw ConfigError("reliability_bins: need at least one bin");
    ReliabilityBins r;
    for (std::size_t m = 0; m <= bins; ++m)
        r.edges.push_back(static_cast<double>(m) / static_cast<double>(bins));
    r.counts.assign(bins, 0);
    r.mean_confidence.assign(bins, 0.0);
    r.accuracy.assign(bins, 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double conf = *std::max_element(preds.probs[i].begin(), preds.probs[i].end());
        const auto m = std::min(bins - 1, static_cast<std::size_t>(conf * static_cast<double>(bins)));
        ++r.counts[m];
        r.mean_confidence[m] += conf;
        r.accuracy[m] += preds.labels[i] == preds.predictions[i] ? 1.0 : 0.0;
    }
    for (std::size_t m = 0; m < bins; ++m)
        if (r.counts[m] > 0) {
            r.mean_confidence[m] /= static_cast<double>(r.counts[m]);
            r.accuracy[m] /= static_cast<double>(r.counts[m]);
        }
    return r;
}

double ece(const PredictionSet& preds, std::size_t bins)
{
    const ReliabilityBins r = reliability_bins(preds, bins);
    double e = 0.0;
    for (std::size_t m = 0; m < bins; ++m)
        e += static_cast<double>(r.counts[m]) / static_cast<double>(preds.size()) * std::abs(r.accuracy[m] - r.mean_confidence[m]);
    return e;
}

double nll(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels, double temperature)
{
    check_logits(logits, labels, "nll");
    if (!(temperature > 0.0))
        throw ConfigError("nll: temperature must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double mx = -INFINITY;
        for (double l : logits[i])
            mx = std::max(mx, l / temperature);
        double z = 0.0;
        for (double l : logits[i])
            z += std::exp(l / temperature - mx);
        total += std::log(z) + mx - logits[i][static_cast<std::size_t>(labels[i])] / temperature;
    }
    return total / static_cast<double>(logits.size());
}

std::vector<std::vector<double>> apply_temperature(const std::vector<std::vector<double>>& logits, double temperature)
{
    if (!(temperature > 0.0))
        throw ConfigError("apply_temperature: temperature must be positive");
    std::vector<std::vector<double>> out;
    out.reserve(logits.size());
    for (const auto& row : logits)
        out.push_back(softmax_row(row, temperature));
    return out;
}

TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits, std::span<const std::int32_t> labels,
                               const TemperatureOptions& o)
{
    check_logits(logits, labels, "fit_temperature");
    if (!(o.log_lo < o.log_hi) || !(o.tolerance > 0.0))
        throw ConfigError("fit_temperature: invalid search interval or tolerance");
    TemperatureFit fit;
    fit.nll_before = nll(logits, labels, 1.0);
    fit.degenerate = std::all_of(logits.begin(), logits.end(), [](const std::vector<double>& row) {
        return std::all_of(row.begin(), row.end(), [&](double v) { return v == row[0]; });
    });
    if (fit.degenerate) {
        fit.nll_after = fit.nll_before;
        return fit;
    }

    auto f = [&](double u) { return nll(logits, labels, std::exp(u)); };
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = o.log_lo, b = o.log_hi;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > o.tolerance) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    const double u = (a + b) / 2.0;
    const double fu = f(u);
    if (fu <= fit.nll_before) {
        fit.temperature = std::exp(u);
        fit.nll_after = fu;
    } else {
        fit.nll_after = fit.nll_before;
    }
    return fit;
}

void write_predictions_csv(const std::filesystem::path& path, const PredictionSet& preds)
{
    preds.validate();
    std::string s = "sample_id,true_label,pred_label";
    for (std::size_t c = 0; c < preds.num_classes; ++c)
        s += ",p_" + std::to_string(c);
    s += '\n';
    for (std::size_t i = 0; i < preds.size(); ++i) {
        s += std::to_string(i) + ',' + std::to_string(preds.labels[i]) + ',' + std::to_string(preds.predictions[i]);
        for (double p : preds.probs[i])
            s += ',' + fmt(p);
        s += '\n';
    }
    write_text(path, s);
}

PredictionSet read_predictions_csv(const std::filesystem::path& path)
{
    std::string header;
    const auto rows = read_csv(path, header);
    const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
    if (header.rfind("sample_id,true_label,pred_label", 0) != 0 || columns < 4)
        throw InputError(path.string() + ": expected header sample_id,true_label,pred_label,p_0,...");
    PredictionSet p;
    p.num_classes = columns - 3;
    for (const auto& r : rows) {
        if (r.size() != columns)
            throw InputError(path.string() + ": row with " + std::to_string(r.size()) + " columns, expected " +
                             std::to_string(columns));
        p.labels.push_back(parse_label(r[1], path));
        p.predictions.push_back(parse_label(r[2], path));
        std::vector<double> probs;
        for (std::size_t c = 3; c < r.size(); ++c)
            probs.push_back(parse_double(r[c], path));
        p.probs.push_back(std::move(probs));
    }
    p.validate();
    return p;
}

void write_logits_csv(const std::filesystem::path& path, const LogitSet& set)
{
    if (set.logits.size() != set.labels.size())
        throw InputError("write_logits_csv: label and row counts differ");
    const std::size_t C = set.logits.empty() ? 0 : set.logits[0].size();
    std::string s = "sample_id,true_label";
    for (std::size_t c = 0; c < C; ++c)
        s += ",l_" + std::to_string(c);
    s += '\n';
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        s += std::to_string(i) + ',' + std::to_string(set.labels[i]);
        for (double l : set.logits[i])
            s += ',' + fmt(l);
        s += '\n';
    }
    write_text(path, s);
}

LogitSet read_logits_csv(const std::filesystem::path& path)
{
    std::string header;
    const auto rows = read_csv(path, header);
    const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
    if (header.rfind("sample_id,true_label", 0) != 0 || columns < 3)
        throw InputError(path.string() + ": expected header sample_id,true_label,l_0,...");
    LogitSet set;
    for (const auto& r : rows) {
        if (r.size() != columns)
            throw InputError(path.string() + ": ragged row");
        set.labels.push_back(parse_label(r[1], path));
        std::vector<double> l;
        for (std::size_t c = 2; c < r.size(); ++c)
            l.push_back(parse_double(r[c], path));
        set.logits.push_back(std::move(l));
    }
    return set;
}

void write_reliability_csv(const std::filesystem::path& path, const ReliabilityBins& bins)
{
    std::string s = "bin,lower,upper,count,mean_confidence,accuracy\n";
    for (std::size_t m = 0; m < bins.counts.size(); ++m)
        s += std::to_string(m) + ',' + fmt(bins.edges[m]) + ',' + fmt(bins.edges[m + 1]) + ',' +
             std::to_string(bins.counts[m]) + ',' + fmt(bins.mean_confidence[m]) + ',' + fmt(bins.accuracy[m]) + '\n';
    write_text(path, s);
}

std::string metrics_json(const MetricsReport& r, double ece_value)
{
    nlohmann::ordered_json j;
    j["samples"] = r.samples;
    j["accuracy"] = r.accuracy;
    j["macro_precision"] = r.macro_precision;
    j["macro_recall"] = r.macro_recall;
    j["macro_f1"] = r.macro_f1;
    j["ece"] = ece_value;
    auto per_class = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        per_class.push_back({{"class", c},
                             {"support", m.support},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"precision_undefined", m.precision_undefined},
                             {"recall_undefined", m.recall_undefined}});
    }
    j["per_class"] = per_class;
    j["confusion"] = r.confusion;
    return j.dump(2) + "\n";
}

} // namespace hvt
