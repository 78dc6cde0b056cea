#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hvt/checkpoint.hpp"
#include "hvt/config.hpp"
#include "hvt/dataset.hpp"
#include "hvt/errors.hpp"
#include "hvt/finetune.hpp"
#include "hvt/metrics.hpp"
#include "hvt/model.hpp"
#include "hvt/parallel.hpp"
#include "hvt/rollout.hpp"
#include "hvt/ssl.hpp"

namespace hvt::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;

std::string num(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

/// One `key=value` record per line, event first.
class Log {
public:
    explicit Log(std::ostream& os) : os_(os) {}

    template <typename... Fields>
    void operator()(std::string_view event, const Fields&... fields)
    {
        os_ << "event=" << event;
        (write(fields), ...);
        os_ << '\n' << std::flush;
    }

private:
    void write(const std::pair<std::string_view, std::string>& f) { os_ << ' ' << f.first << '=' << f.second; }

    std::ostream& os_;
};

std::pair<std::string_view, std::string> kv(std::string_view k, const std::string& v) { return {k, v}; }
std::pair<std::string_view, std::string> kv(std::string_view k, const char* v) { return {k, v}; }
std::pair<std::string_view, std::string> kv(std::string_view k, double v) { return {k, num(v)}; }
std::pair<std::string_view, std::string> kv(std::string_view k, std::size_t v) { return {k, std::to_string(v)}; }

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig resolve_config(const Common& c, const Checkpoint* ckpt = nullptr)
{
    RunConfig cfg;
    if (!c.config.empty())
        cfg = load_config(c.config);
    else if (ckpt && !ckpt->config_text.empty())
        cfg = parse_config(ckpt->config_text);
    if (c.seed) {
        cfg.pretrain.seed = *c.seed;
        cfg.finetune.seed = *c.seed;
    }
    cfg.pretrain.threads = worker_count();
    cfg.finetune.threads = worker_count();
    return cfg;
}

fs::path out_dir(const Common& c)
{
    fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw InputError("cannot write " + path.string());
    f << text;
}

ImageSet load_split(const fs::path& data, const std::string& name)
{
    const fs::path p = data / (name + ".hvtimg");
    if (!fs::exists(p))
        throw InputError("missing image container " + p.string());
    return load_images(p);
}

void check_size(const ImageSet& set, const HVTConfig& model)
{
    if (set.height != model.image_height || set.width != model.image_width)
        throw InputError("images are " + std::to_string(set.height) + "x" + std::to_string(set.width) +
                         " but the model expects " + std::to_string(model.image_height) + "x" +
                         std::to_string(model.image_width));
}

std::string with_prefix(const std::string& prefix, const std::string& name) { return prefix + name; }

ParamSet strip_prefix(const ParamSet& set, const std::string& prefix)
{
    ParamSet out;
    for (const auto& e : set)
        if (e.name.starts_with(prefix))
            out.add(e.name.substr(prefix.size()), e.tensor);
    return out;
}

// ---- gen-data --------------------------------------------------------------

int cmd_gen_data(const Common& c, Log& log)
{
    const RunConfig cfg = resolve_config(c);
    SyntheticOptions opt;
    opt.per_class = cfg.data.per_class;
    opt.classes = cfg.model.num_classes;
    opt.size = cfg.model.image_height;
    opt.unlabeled = cfg.data.unlabeled;
    opt.seed = c.seed.value_or(0);
    if (cfg.model.image_height != cfg.model.image_width)
        throw ConfigError("gen-data produces square images; set image_height = image_width");

    const auto data = generate_synthetic(opt);
    const auto split = stratified_split(data.labeled, cfg.data.val_fraction, cfg.data.test_fraction, opt.seed);
    const fs::path dir = out_dir(c);
    save_images(dir / "labeled.hvtimg", data.labeled);
    save_images(dir / "unlabeled.hvtimg", data.unlabeled);
    save_images(dir / "train.hvtimg", split.train);
    save_images(dir / "val.hvtimg", split.val);
    save_images(dir / "test.hvtimg", split.test);
    write_text(dir / "config.ini", to_text(cfg));
    log("gen-data", kv("seed", std::to_string(opt.seed)), kv("size", opt.size), kv("classes", opt.classes),
        kv("labeled", data.labeled.size()), kv("unlabeled", data.unlabeled.size()), kv("train", split.train.size()),
        kv("val", split.val.size()), kv("test", split.test.size()), kv("out", dir.string()));
    return 0;
}

// ---- pretrain --------------------------------------------------------------

struct PretrainArgs {
    std::string data;
    std::string init;
    std::optional<std::size_t> max_steps;
};

int cmd_pretrain(const Common& c, const PretrainArgs& a, Log& log)
{
    RunConfig cfg = resolve_config(c);
    if (a.max_steps)
        cfg.pretrain.max_steps = *a.max_steps;
    const ImageSet pool = load_split(a.data, "unlabeled");
    check_size(pool, cfg.model);

    RngStream rng(cfg.pretrain.seed, kInitStream);
    ParamSet initial = init_params(cfg.model, rng);
    if (!a.init.empty())
        load_params_into(load_checkpoint(a.init).params, initial);

    const fs::path dir = out_dir(c);
    const std::string config_text = to_text(cfg);
    std::ofstream csv(dir / "pretrain_log.csv");
    csv << "step,epoch,lr,loss,grad_norm\n";
    PretrainOptions opt = cfg.pretrain;
    opt.on_step = [&](const PretrainStep& s) {
        csv << s.step << ',' << num(s.epoch) << ',' << num(s.lr) << ',' << num(s.loss) << ',' << num(s.grad_norm)
            << '\n';
        log("pretrain_step", kv("step", s.step), kv("epoch", s.epoch), kv("lr", s.lr), kv("loss", s.loss),
            kv("grad_norm", s.grad_norm));
    };
    opt.on_checkpoint = [&](std::size_t step, const ParamSet& backbone, const ParamSet& head) {
        const fs::path p = dir / ("pretrain_step" + std::to_string(step) + ".ckpt");
        save_checkpoint(p, {config_text, backbone, head});
        log("checkpoint", kv("step", step), kv("path", p.string()));
    };
    const PretrainResult result = pretrain(initial, cfg.model, pool, opt);
    const fs::path ckpt = dir / "pretrain.ckpt";
    save_checkpoint(ckpt, {config_text, result.backbone, result.head});
    log("pretrain_done", kv("steps", result.log.size()),
        kv("final_loss", result.log.empty() ? 0.0 : result.log.back().loss), kv("checkpoint", ckpt.string()));
    return 0;
}

// ---- finetune --------------------------------------------------------------

struct FinetuneArgs {
    std::string data;
    std::string init;
    std::optional<std::size_t> max_steps;
};

int cmd_finetune(const Common& c, const FinetuneArgs& a, Log& log)
{
    RunConfig cfg = resolve_config(c);
    if (a.max_steps)
        cfg.finetune.max_steps = *a.max_steps;
    const ImageSet train = load_split(a.data, "train");
    const ImageSet val = load_split(a.data, "val");
    check_size(train, cfg.model);

    RngStream rng(cfg.finetune.seed, kInitStream);
    ParamSet initial = init_params(cfg.model, rng);
    if (!a.init.empty()) {
        const Checkpoint src = load_checkpoint(a.init);
        ParamSet backbone;
        for (const auto& e : initial)
            if (!is_head_param(e.name))
                backbone.add(e.name, e.tensor);
        load_params_into(src.params, backbone);
        log("init", kv("checkpoint", a.init), kv("tensors", backbone.size()));
    }

    const fs::path dir = out_dir(c);
    std::ofstream csv(dir / "finetune_log.csv");
    csv << "epoch,steps,lr,train_loss,val_accuracy,val_accuracy_ema,backbone_frozen\n";
    FinetuneOptions opt = cfg.finetune;
    opt.on_epoch = [&](const FinetuneEpoch& e) {
        csv << e.epoch << ',' << e.steps << ',' << num(e.lr) << ',' << num(e.train_loss) << ',' << num(e.val_accuracy)
            << ',' << num(e.val_accuracy_ema) << ',' << (e.backbone_frozen ? 1 : 0) << '\n';
        log("finetune_epoch", kv("epoch", e.epoch), kv("steps", e.steps), kv("lr", e.lr), kv("train_loss", e.train_loss),
            kv("val_accuracy", e.val_accuracy), kv("val_accuracy_ema", e.val_accuracy_ema),
            kv("backbone_frozen", e.backbone_frozen ? "true" : "false"));
    };
    const FinetuneResult result = finetune(initial, cfg.model, train, val, opt);

    Checkpoint ckpt{to_text(cfg), result.best_params, {}};
    for (const auto& e : result.ema)
        ckpt.state.add(with_prefix("ema/", e.name), e.tensor);
    for (const auto& e : result.final_params)
        ckpt.state.add(with_prefix("final/", e.name), e.tensor);
    const fs::path path = dir / "finetune.ckpt";
    save_checkpoint(path, ckpt);
    log("finetune_done", kv("steps", result.steps), kv("best_epoch", result.best_epoch),
        kv("best_val_accuracy", result.best_val_accuracy), kv("checkpoint", path.string()));
    return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string data;
    std::string split = "test";
    std::string checkpoint;
    std::string weights = "best";
    std::string predictions;
};

ParamSet select_weights(const Checkpoint& ckpt, const std::string& which)
{
    if (which == "best")
        return ckpt.params;
    if (which == "ema" || which == "final") {
        ParamSet p = strip_prefix(ckpt.state, which + "/");
        if (p.size() == 0)
            throw InputError("checkpoint has no '" + which + "' weights");
        return p;
    }
    throw InputError("--weights must be best, ema or final");
}

void write_eval_artifacts(const fs::path& dir, const PredictionSet& preds, std::size_t bins, Log& log)
{
    const MetricsReport report = classification_metrics(preds);
    const double e = ece(preds, bins);
    write_text(dir / "metrics.json", metrics_json(report, e) + "\n");
    write_predictions_csv(dir / "predictions.csv", preds);
    write_reliability_csv(dir / "reliability.csv", reliability_bins(preds, bins));
    log("eval", kv("samples", report.samples), kv("accuracy", report.accuracy), kv("macro_f1", report.macro_f1),
        kv("ece", e), kv("metrics", (dir / "metrics.json").string()));
}

int cmd_eval(const Common& c, const EvalArgs& a, Log& log)
{
    const fs::path dir = out_dir(c);
    if (!a.predictions.empty()) {
        const RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
        const PredictionSet preds = read_predictions_csv(a.predictions);
        write_eval_artifacts(dir, preds, cfg.eval.ece_bins, log);
        return 0;
    }
    if (a.checkpoint.empty())
        throw InputError("eval needs --checkpoint or --predictions");
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const RunConfig cfg = resolve_config(c, &ckpt);
    RngStream rng(0);
    ParamSet params = init_params(cfg.model, rng);
    load_params_into(select_weights(ckpt, a.weights), params);
    const ImageSet set = load_split(a.data, a.split);
    check_size(set, cfg.model);
    if (set.size() == 0)
        throw InputError("split '" + a.split + "' is empty");
    for (auto l : set.labels)
        if (l < 0)
            throw InputError("eval needs labeled images");

    LogitSet logits;
    logits.labels = set.labels;
    if (cfg.eval.tta) {
        for (const auto& img : set.images) {
            const auto probs = tta_predict(normalize(img, cfg.data.norm), params, cfg.model, cfg.eval.tta_crop_ratio);
            std::vector<double> row;
            for (double p : probs)
                row.push_back(std::log(std::max(p, 1e-300)));
            logits.logits.push_back(std::move(row));
        }
    } else {
        logits.logits = predict_logits(params, cfg.model, set, cfg.data.norm, cfg.eval.batch_size);
    }
    write_logits_csv(dir / "logits.csv", logits);
    const PredictionSet preds = PredictionSet::from_logits(logits.logits, logits.labels);
    write_eval_artifacts(dir, preds, cfg.eval.ece_bins, log);
    return 0;
}

// ---- calibrate -------------------------------------------------------------

struct CalibrateArgs {
    std::string logits;
    std::string apply;
};

int cmd_calibrate(const Common& c, const CalibrateArgs& a, Log& log)
{
    const RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    const LogitSet fit_set = read_logits_csv(a.logits);
    const LogitSet target = a.apply.empty() ? fit_set : read_logits_csv(a.apply);
    const TemperatureFit fit = fit_temperature(fit_set.logits, fit_set.labels, cfg.eval.temperature);

    const PredictionSet before = PredictionSet::from_logits(target.logits, target.labels);
    const PredictionSet after = PredictionSet::from_logits(target.logits, target.labels, fit.temperature);
    const std::size_t bins = cfg.eval.ece_bins;
    const double ece_before = ece(before, bins);
    const double ece_after = ece(after, bins);

    const fs::path dir = out_dir(c);
    nlohmann::ordered_json j;
    j["temperature"] = fit.temperature;
    j["degenerate"] = fit.degenerate;
    j["fit_samples"] = fit_set.labels.size();
    j["fit_nll_before"] = fit.nll_before;
    j["fit_nll_after"] = fit.nll_after;
    j["samples"] = target.labels.size();
    j["nll_before"] = nll(target.logits, target.labels, 1.0);
    j["nll_after"] = nll(target.logits, target.labels, fit.temperature);
    j["ece_before"] = ece_before;
    j["ece_after"] = ece_after;
    write_text(dir / "calibration.json", j.dump(2) + "\n");
    write_predictions_csv(dir / "calibrated_predictions.csv", after);
    write_reliability_csv(dir / "reliability_before.csv", reliability_bins(before, bins));
    write_reliability_csv(dir / "reliability_after.csv", reliability_bins(after, bins));
    log("calibrate", kv("temperature", fit.temperature), kv("nll_before", fit.nll_before),
        kv("nll_after", fit.nll_after), kv("ece_before", ece_before), kv("ece_after", ece_after));
    return 0;
}

// ---- rollout ---------------------------------------------------------------

struct RolloutArgs {
    std::string data;
    std::string split = "test";
    std::string checkpoint;
    std::string weights = "best";
    std::size_t index = 0;
    std::size_t stage = kNumStages;
};

int cmd_rollout(const Common& c, const RolloutArgs& a, Log& log)
{
    if (a.checkpoint.empty())
        throw InputError("rollout needs --checkpoint");
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const RunConfig cfg = resolve_config(c, &ckpt);
    RngStream rng(0);
    ParamSet params = init_params(cfg.model, rng);
    load_params_into(select_weights(ckpt, a.weights), params);
    const ImageSet set = load_split(a.data, a.split);
    check_size(set, cfg.model);
    if (a.index >= set.size())
        throw InputError("--index " + std::to_string(a.index) + " is out of range for " + std::to_string(set.size()) +
                         " images");

    if (a.stage < 1 || a.stage > kNumStages)
        throw InputError("--stage must lie in 1.." + std::to_string(kNumStages));

    const std::size_t idx[] = {a.index};
    ForwardOptions fo;
    fo.capture_attention = true;
    fo.capture_all_stages = a.stage != kNumStages;
    const ForwardOutput fwd = forward(batch_tensor(set, idx, cfg.data.norm), params, cfg.model, fo);
    AttentionRecord record = fwd.attention;
    if (a.stage != kNumStages)
        record = {fwd.stage_attention[a.stage - 1], cfg.model.grid_height(a.stage - 1),
                  cfg.model.grid_width(a.stage - 1)};
    const RolloutResult r = attention_rollout(record, 0, set.height, set.width);

    double max_row_error = 0.0;
    for (const auto& m : r.steps)
        for (std::size_t i = 0; i < m.n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m.n; ++j)
                s += m(i, j);
            max_row_error = std::max(max_row_error, std::abs(s - 1.0));
        }

    const fs::path dir = out_dir(c);
    std::ofstream heat(dir / "heatmap.csv");
    for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t x = 0; x < r.width; ++x)
            heat << (x ? "," : "") << num(r.heatmap[y * r.width + x]);
        heat << '\n';
    }
    std::ofstream rel(dir / "relevance.csv");
    rel << "token,row,col,relevance\n";
    for (std::size_t t = 0; t < r.token_relevance.size(); ++t)
        rel << t << ',' << t / r.grid_w << ',' << t % r.grid_w << ',' << num(r.token_relevance[t]) << '\n';
    const auto [lo, hi] = std::minmax_element(r.heatmap.begin(), r.heatmap.end());
    log("rollout", kv("index", a.index), kv("stage", a.stage), kv("label", std::to_string(set.labels[a.index])), kv("blocks", r.steps.size()),
        kv("grid", std::to_string(r.grid_h) + "x" + std::to_string(r.grid_w)), kv("max_row_sum_error", max_row_error),
        kv("heatmap_min", *lo), kv("heatmap_max", *hi));
    return 0;
}

// ---- mcnemar ---------------------------------------------------------------

struct McNemarArgs {
    std::string a, b;
    std::optional<std::size_t> b_count, c_count;
};

std::vector<bool> correctness(const PredictionSet& p)
{
    std::vector<bool> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        out[i] = p.labels[i] == p.predictions[i];
    return out;
}

int cmd_mcnemar(const Common& c, const McNemarArgs& m, Log& log)
{
    McNemarResult r;
    if (m.b_count || m.c_count) {
        if (!m.b_count || !m.c_count)
            throw InputError("mcnemar needs both --b-count and --c-count");
        r = mcnemar_from_counts(*m.b_count, *m.c_count);
    } else {
        if (m.a.empty() || m.b.empty())
            throw InputError("mcnemar needs --a and --b prediction files, or --b-count and --c-count");
        const PredictionSet pa = read_predictions_csv(m.a);
        const PredictionSet pb = read_predictions_csv(m.b);
        if (pa.labels != pb.labels)
            throw InputError("prediction files disagree on sample count or true labels");
        r = mcnemar_test(correctness(pa), correctness(pb));
    }
    if (!c.out.empty()) {
        nlohmann::ordered_json j;
        j["b"] = r.b;
        j["c"] = r.c;
        j["statistic"] = r.statistic;
        j["p_value"] = r.p_value;
        j["exact"] = r.exact;
        write_text(out_dir(c) / "mcnemar.json", j.dump(2) + "\n");
    }
    log("mcnemar", kv("b", r.b), kv("c", r.c), kv("statistic", r.statistic), kv("p_value", r.p_value),
        kv("method", r.exact ? "exact" : "chi2"));
    return 0;
}

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config, "run configuration (INI)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "seed for data generation, initialization and training");
    app->add_option("--out", c.out, "output directory for artifacts");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Hierarchical vision transformer pipeline", "hvt"};
    app.require_subcommand(1);
    Log log(out);

    Common common;
    PretrainArgs pre;
    FinetuneArgs fin;
    EvalArgs ev;
    CalibrateArgs cal;
    RolloutArgs ro;
    McNemarArgs mc;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic labeled/unlabeled containers and splits");
    add_common(gen, common);

    auto* pt = app.add_subcommand("pretrain", "contrastive pre-training on the unlabeled pool");
    add_common(pt, common);
    pt->add_option("--data", pre.data, "directory written by gen-data")->required();
    pt->add_option("--init", pre.init, "checkpoint to start from");
    pt->add_option("--max-steps", pre.max_steps, "optimizer-step cap (overrides [pretrain] max_steps)");

    auto* ft = app.add_subcommand("finetune", "supervised fine-tuning on the train split");
    add_common(ft, common);
    ft->add_option("--data", fin.data, "directory written by gen-data")->required();
    ft->add_option("--init", fin.init, "pretrained checkpoint for the backbone");
    ft->add_option("--max-steps", fin.max_steps, "optimizer-step cap (overrides [finetune] max_steps)");

    auto* evc = app.add_subcommand("eval", "metrics, predictions and reliability bins");
    add_common(evc, common);
    evc->add_option("--data", ev.data, "directory written by gen-data");
    evc->add_option("--split", ev.split, "container name inside --data")->capture_default_str();
    evc->add_option("--checkpoint", ev.checkpoint, "fine-tuned checkpoint");
    evc->add_option("--weights", ev.weights, "best, ema or final")->capture_default_str();
    evc->add_option("--predictions", ev.predictions, "score an existing predictions CSV instead of a model");

    auto* ca = app.add_subcommand("calibrate", "fit a softmax temperature");
    add_common(ca, common);
    ca->add_option("--logits", cal.logits, "logits CSV to fit on")->required()->check(CLI::ExistingFile);
    ca->add_option("--apply", cal.apply, "logits CSV to report on (default: the fit set)")->check(CLI::ExistingFile);

    auto* rc = app.add_subcommand("rollout", "attention-rollout heatmap for one image");
    add_common(rc, common);
    rc->add_option("--data", ro.data, "directory written by gen-data")->required();
    rc->add_option("--split", ro.split, "container name inside --data")->capture_default_str();
    rc->add_option("--checkpoint", ro.checkpoint, "fine-tuned checkpoint")->required();
    rc->add_option("--weights", ro.weights, "best, ema or final")->capture_default_str();
    rc->add_option("--index", ro.index, "image index within the split")->capture_default_str();
    rc->add_option("--stage", ro.stage, "stage whose blocks are rolled out")->capture_default_str();

    auto* mn = app.add_subcommand("mcnemar", "paired significance test between two prediction files");
    add_common(mn, common);
    mn->add_option("--a", mc.a, "predictions CSV of model A");
    mn->add_option("--b", mc.b, "predictions CSV of model B");
    mn->add_option("--b-count", mc.b_count, "samples A got right and B wrong");
    mn->add_option("--c-count", mc.c_count, "samples A got wrong and B right");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0)
            return 0;
        err << app.help();
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(common, log);
        if (pt->parsed())
            return cmd_pretrain(common, pre, log);
        if (ft->parsed())
            return cmd_finetune(common, fin, log);
        if (evc->parsed())
            return cmd_eval(common, ev, log);
        if (ca->parsed())
            return cmd_calibrate(common, cal, log);
        if (rc->parsed())
            return cmd_rollout(common, ro, log);
        if (mn->parsed())
            return cmd_mcnemar(common, mc, log);
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

} // namespace hvt::cli
