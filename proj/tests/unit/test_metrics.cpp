#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "hvt/errors.hpp"
#include "hvt/metrics.hpp"
#include "hvt/rng.hpp"
#include "json.hpp"

using namespace hvt;
namespace fs = std::filesystem;

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<double> softmax_row(const std::vector<double>& z)
{
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i)
        s += p[i] = std::exp(z[i] - m);
    for (auto& v : p)
        v /= s;
    return p;
}

// Labels drawn from softmax(logits): calibrated by construction.
struct CalibratedSample {
    Matrix logits;
    std::vector<std::int32_t> labels;
};

CalibratedSample calibrated(std::size_t n, std::size_t classes, std::uint64_t seed)
{
    RngStream rng(seed);
    CalibratedSample s;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(classes);
        for (auto& v : z)
            v = 2.0 * rng.normal();
        const auto p = softmax_row(z);
        double u = rng.uniform(), acc = 0;
        std::int32_t label = static_cast<std::int32_t>(classes - 1);
        for (std::size_t c = 0; c < classes; ++c) {
            acc += p[c];
            if (u < acc) {
                label = static_cast<std::int32_t>(c);
                break;
            }
        }
        s.logits.push_back(z);
        s.labels.push_back(label);
    }
    return s;
}

PredictionSet fixed_confidence(std::size_t n, double conf, std::size_t correct)
{
    Matrix probs;
    std::vector<std::int32_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
        probs.push_back({conf, 1 - conf});
        labels.push_back(i < correct ? 0 : 1);
    }
    return PredictionSet::from_probs(probs, labels);
}

fs::path temp_path(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "hvt_test_metrics";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("classification_metrics")
{
    SUBCASE("all correct")
    {
        const std::int32_t labels[] = {0, 1, 2, 2, 1};
        Matrix probs;
        for (auto l : labels) {
            std::vector<double> p(3, 0.0);
            p[static_cast<std::size_t>(l)] = 1.0;
            probs.push_back(p);
        }
        const MetricsReport r = classification_metrics(PredictionSet::from_probs(probs, labels));
        CHECK(r.accuracy == 1.0);
        CHECK(r.macro_f1 == 1.0);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK((r.confusion[i][j] > 0) == (i == j));
    }
    SUBCASE("constant predictor on a balanced two-class set")
    {
        const MetricsReport r = classification_metrics(fixed_confidence(10, 0.9, 5));
        CHECK(r.accuracy == doctest::Approx(0.5));
        CHECK(r.macro_f1 == doctest::Approx(1.0 / 3.0));
        CHECK(r.per_class[1].precision_undefined);
        CHECK(r.per_class[1].precision == 0.0);
        CHECK(r.per_class[0].precision == doctest::Approx(0.5));
    }
    SUBCASE("confusion rows sum to support")
    {
        const auto s = calibrated(300, 4, 1);
        const MetricsReport r = classification_metrics(PredictionSet::from_logits(s.logits, s.labels));
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0}) == r.per_class[c].support);
    }
    SUBCASE("invalid inputs")
    {
        const std::int32_t bad[] = {0, 3};
        CHECK_THROWS_AS(PredictionSet::from_probs({{0.5, 0.5}, {0.5, 0.5}}, bad), InputError);
        const std::int32_t ok[] = {0, 1};
        CHECK_THROWS_AS(PredictionSet::from_probs({{0.5, 0.6}, {0.5, 0.5}}, ok), InputError);
        CHECK_THROWS_AS(classification_metrics(PredictionSet{}), InputError);
    }
}

TEST_CASE("mcnemar")
{
    SUBCASE("exact binomial")
    {
        const McNemarResult r = mcnemar_from_counts(15, 0);
        CHECK(r.exact);
        CHECK(std::abs(r.p_value - 2 * std::pow(0.5, 15)) < 1e-12);
        CHECK(std::abs(r.p_value - 6.1e-5) < 1e-6);
    }
    SUBCASE("continuity-corrected chi-square")
    {
        const McNemarResult r = mcnemar_from_counts(40, 10);
        CHECK_FALSE(r.exact);
        CHECK(r.statistic == doctest::Approx(16.82));
        CHECK(r.p_value == doctest::Approx(std::erfc(std::sqrt(16.82 / 2))).epsilon(1e-9));
        CHECK(r.p_value < 1e-3);
    }
    SUBCASE("balanced discordance and conventions")
    {
        for (std::size_t b : {1, 5, 12, 13, 30, 200})
            CHECK(mcnemar_from_counts(b, b).p_value >= 0.75);
        CHECK(mcnemar_from_counts(0, 0).p_value == 1.0);
        CHECK(mcnemar_from_counts(13, 13).statistic == 0.0);
    }
    SUBCASE("paired outcomes and symmetry under swap")
    {
        RngStream rng(2);
        std::vector<bool> a, b;
        for (int i = 0; i < 200; ++i) {
            a.push_back(rng.bernoulli(0.8));
            b.push_back(rng.bernoulli(0.7));
        }
        const McNemarResult ab = mcnemar_test(a, b), ba = mcnemar_test(b, a);
        CHECK(ab.b == ba.c);
        CHECK(ab.c == ba.b);
        CHECK(ab.p_value == ba.p_value);
        CHECK(ab.statistic == ba.statistic);
        CHECK_THROWS_AS(mcnemar_test({true}, {true, false}), InputError);
    }
}

TEST_CASE("ece and reliability bins")
{
    SUBCASE("confident and correct")
    {
        const std::int32_t labels[] = {0, 1, 1};
        CHECK(ece(PredictionSet::from_probs({{1, 0}, {0, 1}, {0, 1}}, labels)) == 0.0);
    }
    SUBCASE("single occupied bin")
    {
        CHECK(ece(fixed_confidence(100, 0.8, 60)) == doctest::Approx(0.20).epsilon(1e-12));
    }
    SUBCASE("calibrated sampler")
    {
        const auto s = calibrated(10000, 5, 3);
        const PredictionSet p = PredictionSet::from_logits(s.logits, s.labels);
        CHECK(ece(p) < 0.02);
        const ReliabilityBins bins = reliability_bins(p);
        CHECK(bins.edges.size() == 16);
        CHECK(std::accumulate(bins.counts.begin(), bins.counts.end(), std::size_t{0}) == 10000);
    }
    SUBCASE("permutation invariance and range")
    {
        auto s = calibrated(500, 3, 4);
        const double e = ece(PredictionSet::from_logits(s.logits, s.labels), 10);
        std::reverse(s.logits.begin(), s.logits.end());
        std::reverse(s.labels.begin(), s.labels.end());
        CHECK(ece(PredictionSet::from_logits(s.logits, s.labels), 10) == doctest::Approx(e).epsilon(1e-12));
        CHECK(e >= 0.0);
        CHECK(e <= 1.0);
    }
}

TEST_CASE("temperature scaling")
{
    const auto s = calibrated(40000, 5, 5);

    SUBCASE("calibrated logits give T near 1")
    {
        const TemperatureFit f = fit_temperature(s.logits, s.labels);
        CHECK(f.temperature == doctest::Approx(1.0).epsilon(0.05));
        CHECK(f.nll_after <= f.nll_before);
    }
    SUBCASE("doubled logits recover T = 2")
    {
        auto scaled = s.logits;
        for (auto& row : scaled)
            for (auto& v : row)
                v *= 2.0;
        const TemperatureFit f = fit_temperature(scaled, s.labels);
        CHECK(std::abs(f.temperature - 2.0) < 0.05);
        CHECK(f.temperature == doctest::Approx(2.0 * fit_temperature(s.logits, s.labels).temperature).epsilon(1e-3));
        CHECK(f.nll_after <= f.nll_before);
        CHECK(nll(scaled, s.labels, f.temperature) == doctest::Approx(f.nll_after));
    }
    SUBCASE("argmax invariance")
    {
        for (double t : {0.5, 1.15, 10.0}) {
            const auto p = PredictionSet::from_logits(s.logits, s.labels, t);
            const auto q = PredictionSet::from_logits(s.logits, s.labels);
            CHECK(p.predictions == q.predictions);
        }
    }
    SUBCASE("limits and errors")
    {
        const auto p = PredictionSet::from_logits({{3.0, -1.0, 0.5}}, std::vector<std::int32_t>{0}, 1e6);
        for (double v : p.probs[0])
            CHECK(std::abs(v - 1.0 / 3.0) < 1e-3);
        const auto id = apply_temperature({{0.2, 0.1}}, 1.0);
        CHECK(id[0] == softmax_row({0.2, 0.1}));
        CHECK_THROWS_AS(apply_temperature(s.logits, 0.0), ConfigError);
        CHECK_THROWS_AS(apply_temperature(s.logits, -1.0), ConfigError);
    }
    SUBCASE("degenerate logits")
    {
        const std::int32_t labels[] = {0, 1};
        const TemperatureFit f = fit_temperature({{1.0, 1.0}, {2.0, 2.0}}, labels);
        CHECK(f.degenerate);
        CHECK(f.temperature == 1.0);
    }
}

TEST_CASE("csv and json artifacts")
{
    const auto s = calibrated(20, 3, 6);
    const PredictionSet p = PredictionSet::from_logits(s.logits, s.labels);

    SUBCASE("predictions round trip")
    {
        write_predictions_csv(temp_path("p.csv"), p);
        const PredictionSet q = read_predictions_csv(temp_path("p.csv"));
        CHECK(q.labels == p.labels);
        CHECK(q.predictions == p.predictions);
        CHECK(q.probs == p.probs);
    }
    SUBCASE("logits round trip")
    {
        write_logits_csv(temp_path("l.csv"), {s.labels, s.logits});
        const LogitSet l = read_logits_csv(temp_path("l.csv"));
        CHECK(l.labels == s.labels);
        CHECK(l.logits == s.logits);
    }
    SUBCASE("malformed csv")
    {
        std::ofstream(temp_path("bad.csv")) << "sample_id,true_label,pred_label,p_0\n0,0,x,1\n";
        CHECK_THROWS_AS(read_predictions_csv(temp_path("bad.csv")), InputError);
    }
    SUBCASE("metrics json")
    {
        const MetricsReport r = classification_metrics(p);
        const std::string text = metrics_json(r, ece(p));
        CHECK(text == metrics_json(r, ece(p)));
        const auto j = nlohmann::json::parse(text);
        CHECK(j["accuracy"].get<double>() == r.accuracy);
        CHECK(j["confusion"].size() == 3);
        CHECK(text.find("\"samples\"") < text.find("\"accuracy\""));
    }
}
