#include "hvt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hvt/errors.hpp"

namespace hvt {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_double(const std::string& s)
{
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& s)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("expected a non-negative integer, got '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "1")
        return true;
    if (s == "false" || s == "0")
        return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(trim(item));
    return out;
}

template <typename T>
std::string join(const T& values)
{
    std::string out;
    for (const auto& v : values) {
        if (!out.empty())
            out += ", ";
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
            out += fmt(v);
        else
            out += std::to_string(v);
    }
    return out;
}

struct KeySpec {
    ConfigKey info;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
KeySpec real(std::string section, std::string key, std::string desc, Get member)
{
    return {{std::move(section), std::move(key), std::move(desc)},
            [member](RunConfig& c, const std::string& v) { member(c) = parse_double(v); },
            [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
KeySpec count(std::string section, std::string key, std::string desc, Get member)
{
    return {{std::move(section), std::move(key), std::move(desc)},
            [member](RunConfig& c, const std::string& v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(v));
            },
            [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
KeySpec flag(std::string section, std::string key, std::string desc, Get member)
{
    return {{std::move(section), std::move(key), std::move(desc)},
            [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); },
            [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Get>
KeySpec stage_list(std::string key, std::string desc, Get member)
{
    return {{"model", std::move(key), std::move(desc)},
            [member](RunConfig& c, const std::string& v) {
                const auto items = split_list(v);
                auto& arr = member(c);
                if (items.size() != arr.size())
                    throw ConfigError("expected " + std::to_string(arr.size()) + " comma-separated values");
                for (std::size_t i = 0; i < arr.size(); ++i)
                    arr[i] = parse_uint(items[i]);
            },
            [member](const RunConfig& c) { return join(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
KeySpec channel_list(std::string key, std::string desc, Get member)
{
    return {{"data", std::move(key), std::move(desc)},
            [member](RunConfig& c, const std::string& v) {
                const auto items = split_list(v);
                if (items.size() != 3)
                    throw ConfigError("expected 3 comma-separated values");
                auto& vec = member(c);
                vec.clear();
                for (const auto& s : items)
                    vec.push_back(parse_double(s));
            },
            [member](const RunConfig& c) { return join(member(const_cast<RunConfig&>(c))); }};
}

#define M(expr) [](RunConfig& c) -> auto& { return c.expr; }

std::vector<KeySpec> build_registry()
{
    std::vector<KeySpec> r;
    r.push_back({{"model", "preset", "architecture preset: xl, large, base, small, tiny, desk; applied before other [model] keys"},
                 [](RunConfig& c, const std::string& v) {
                     c.model = HVTConfig::preset(v);
                     c.preset = v;
                 },
                 [](const RunConfig& c) { return c.preset; }});
    r.push_back(count("model", "image_height", "input height (pixels)", M(model.image_height)));
    r.push_back(count("model", "image_width", "input width (pixels)", M(model.image_width)));
    r.push_back(count("model", "patch_size", "patch side P (pixels)", M(model.patch_size)));
    r.push_back(stage_list("depths", "blocks per stage (4 integers)", M(model.depths)));
    r.push_back(stage_list("dims", "token width per stage (4 integers)", M(model.dims)));
    r.push_back(stage_list("heads", "attention heads per stage (4 integers)", M(model.heads)));
    r.push_back(count("model", "ffn_ratio", "FFN hidden width / token width", M(model.ffn_ratio)));
    r.push_back(real("model", "drop_path", "stochastic-depth rate of the last block (probability)", M(model.drop_path_max)));
    r.push_back(count("model", "num_classes", "classifier outputs", M(model.num_classes)));
    r.push_back(flag("model", "output_projection", "learned projection after head concatenation", M(model.output_projection)));
    r.push_back(flag("model", "positional_embedding", "learned stage-1 positional embedding", M(model.positional_embedding)));
    r.push_back(flag("model", "allow_dim_override", "permit widths that do not double per stage", M(model.allow_dim_override)));
    r.push_back(real("model", "ln_eps", "layer-norm epsilon", M(model.ln_eps)));
    r.push_back(real("model", "init_std", "weight init standard deviation", M(model.init_std)));

    r.push_back(count("data", "per_class", "synthetic labeled images per class", M(data.per_class)));
    r.push_back(count("data", "unlabeled", "synthetic unlabeled images", M(data.unlabeled)));
    r.push_back(real("data", "val_fraction", "validation share per class (fraction)", M(data.val_fraction)));
    r.push_back(real("data", "test_fraction", "test share per class (fraction)", M(data.test_fraction)));
    r.push_back(channel_list("mean", "per-channel normalization mean (RGB, pixel units)", M(data.norm.mean)));
    r.push_back(channel_list("std", "per-channel normalization stddev (RGB, pixel units)", M(data.norm.stddev)));

    r.push_back(count("pretrain", "epochs", "passes over the unlabeled pool", M(pretrain.epochs)));
    r.push_back(count("pretrain", "max_steps", "optimizer-step cap, 0 = none", M(pretrain.max_steps)));
    r.push_back(count("pretrain", "batch_size", "images per micro-batch (2 views each)", M(pretrain.batch_size)));
    r.push_back(count("pretrain", "accumulation", "micro-batches per optimizer step", M(pretrain.accumulation)));
    r.push_back(real("pretrain", "lr", "peak learning rate", M(pretrain.lr)));
    r.push_back(real("pretrain", "weight_decay", "AdamW decoupled weight decay", M(pretrain.weight_decay)));
    r.push_back(real("pretrain", "warmup_epochs", "linear warmup length (epochs)", M(pretrain.warmup_epochs)));
    r.push_back(real("pretrain", "clip_norm", "global gradient-norm clip", M(pretrain.clip_norm)));
    r.push_back(real("pretrain", "temperature", "NT-Xent temperature tau", M(pretrain.temperature)));
    r.push_back(count("pretrain", "proj_hidden", "projection hidden width, 0 = backbone width", M(pretrain.proj_hidden)));
    r.push_back(count("pretrain", "proj_dim", "projection output width", M(pretrain.proj_dim)));
    r.push_back(flag("pretrain", "proj_batch_norm", "batch normalization on the projection hidden layer",
                     M(pretrain.proj_batch_norm)));
    r.push_back(real("pretrain", "crop_scale_min", "random crop minimum area (fraction)", M(pretrain.policy.crop_scale_min)));
    r.push_back(real("pretrain", "crop_scale_max", "random crop maximum area (fraction)", M(pretrain.policy.crop_scale_max)));
    r.push_back(real("pretrain", "jitter_brightness", "brightness jitter strength", M(pretrain.policy.jitter.brightness)));
    r.push_back(real("pretrain", "jitter_contrast", "contrast jitter strength", M(pretrain.policy.jitter.contrast)));
    r.push_back(real("pretrain", "jitter_saturation", "saturation jitter strength", M(pretrain.policy.jitter.saturation)));
    r.push_back(real("pretrain", "jitter_hue", "hue jitter strength (turns)", M(pretrain.policy.jitter.hue)));
    r.push_back(real("pretrain", "grayscale_prob", "grayscale probability", M(pretrain.policy.grayscale_prob)));
    r.push_back(count("pretrain", "blur_kernel", "Gaussian blur kernel side (pixels, odd)", M(pretrain.policy.blur_kernel)));
    r.push_back(real("pretrain", "blur_sigma_min", "blur sigma lower bound (pixels)", M(pretrain.policy.blur_sigma_min)));
    r.push_back(real("pretrain", "blur_sigma_max", "blur sigma upper bound (pixels)", M(pretrain.policy.blur_sigma_max)));
    r.push_back(real("pretrain", "hflip_prob", "horizontal flip probability", M(pretrain.policy.hflip_prob)));
    r.push_back(count("pretrain", "checkpoint_every", "steps between checkpoints, 0 = final only", M(pretrain.checkpoint_every)));

    r.push_back(count("finetune", "epochs", "passes over the training split", M(finetune.epochs)));
    r.push_back(count("finetune", "max_steps", "optimizer-step cap, 0 = none", M(finetune.max_steps)));
    r.push_back(count("finetune", "batch_size", "images per micro-batch", M(finetune.batch_size)));
    r.push_back(count("finetune", "accumulation", "micro-batches per optimizer step", M(finetune.accumulation)));
    r.push_back(real("finetune", "lr_max", "OneCycle peak learning rate", M(finetune.lr_max)));
    r.push_back(real("finetune", "lr_min", "OneCycle final learning rate", M(finetune.lr_min)));
    r.push_back(real("finetune", "warmup_fraction", "OneCycle warmup share of all steps (fraction)", M(finetune.warmup_fraction)));
    r.push_back(real("finetune", "weight_decay", "AdamW decoupled weight decay", M(finetune.weight_decay)));
    r.push_back(real("finetune", "clip_norm", "global gradient-norm clip", M(finetune.clip_norm)));
    r.push_back(real("finetune", "layer_decay", "layer-wise learning-rate decay per block", M(finetune.layer_decay)));
    r.push_back(count("finetune", "freeze_epochs", "epochs with the backbone frozen", M(finetune.freeze_epochs)));
    r.push_back(real("finetune", "ema_beta", "EMA decay per optimizer step", M(finetune.ema_beta)));
    r.push_back(real("finetune", "ce_weight", "cross-entropy weight in the combined loss", M(finetune.loss.ce_weight)));
    r.push_back(real("finetune", "focal_weight", "focal weight in the combined loss", M(finetune.loss.focal_weight)));
    r.push_back(real("finetune", "focal_gamma", "focal focusing exponent", M(finetune.loss.gamma)));
    r.push_back(real("finetune", "mixup_prob", "MixUp probability per batch", M(finetune.mix.mixup_prob)));
    r.push_back(real("finetune", "mixup_alpha", "MixUp Beta parameter", M(finetune.mix.mixup_alpha)));
    r.push_back(real("finetune", "cutmix_prob", "CutMix probability per batch", M(finetune.mix.cutmix_prob)));
    r.push_back(real("finetune", "cutmix_alpha", "CutMix Beta parameter", M(finetune.mix.cutmix_alpha)));
    r.push_back(flag("finetune", "augment", "apply the geometric and color policy", M(finetune.augment)));
    r.push_back(real("finetune", "crop_scale_min", "random crop minimum area (fraction)", M(finetune.policy.crop_scale_min)));
    r.push_back(real("finetune", "hflip_prob", "horizontal flip probability", M(finetune.policy.hflip_prob)));
    r.push_back(real("finetune", "vflip_prob", "vertical flip probability", M(finetune.policy.vflip_prob)));
    r.push_back(real("finetune", "rotation", "maximum rotation (degrees)", M(finetune.policy.max_rotation_degrees)));
    r.push_back(real("finetune", "jitter_brightness", "brightness jitter strength", M(finetune.policy.jitter.brightness)));
    r.push_back(real("finetune", "jitter_contrast", "contrast jitter strength", M(finetune.policy.jitter.contrast)));

    r.push_back(count("eval", "ece_bins", "equal-width confidence bins", M(eval.ece_bins)));
    r.push_back(flag("eval", "tta", "average softmax over 10 crop/flip views", M(eval.tta)));
    r.push_back(real("eval", "tta_crop_ratio", "TTA crop side / image side (fraction)", M(eval.tta_crop_ratio)));
    r.push_back(real("eval", "temperature_log_min", "lower bound of the log-temperature search", M(eval.temperature.log_lo)));
    r.push_back(real("eval", "temperature_log_max", "upper bound of the log-temperature search", M(eval.temperature.log_hi)));
    r.push_back(real("eval", "temperature_tolerance", "log-temperature search tolerance", M(eval.temperature.tolerance)));
    r.push_back(count("eval", "batch_size", "images per inference batch", M(eval.batch_size)));
    return r;
}

#undef M

const std::vector<KeySpec>& registry()
{
    static const std::vector<KeySpec> r = build_registry();
    return r;
}

const KeySpec* find_key(const std::string& section, const std::string& key)
{
    for (const auto& k : registry())
        if (k.info.section == section && k.info.key == key)
            return &k;
    return nullptr;
}

void finish(RunConfig& c)
{
    c.model.validate();
    if (c.data.val_fraction < 0 || c.data.test_fraction < 0 || c.data.val_fraction + c.data.test_fraction >= 1)
        throw ConfigError("config: [data] val_fraction + test_fraction must lie in [0, 1)");
    for (double s : c.data.norm.stddev)
        if (!(s > 0))
            throw ConfigError("config: [data] std entries must be positive");
    if (c.eval.ece_bins == 0)
        throw ConfigError("config: [eval] ece_bins must be positive");
    c.pretrain.norm = c.data.norm;
    c.finetune.norm = c.data.norm;
}

} // namespace

RunConfig parse_config(std::string_view text)
{
    struct Line {
        std::size_t number;
        std::string section, key, value;
    };
    std::vector<Line> lines;
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    std::string section;
    std::size_t number = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++number;
        const auto cut = raw.find_first_of("#;");
        const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (line.empty())
            continue;
        const std::string where = "config line " + std::to_string(number) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where + "unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section != "model" && section != "data" && section != "pretrain" && section != "finetune" &&
                section != "eval")
                throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + "expected key = value");
        if (section.empty())
            throw ConfigError(where + "key outside of a section");
        Line l{number, section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))};
        if (!find_key(l.section, l.key))
            throw ConfigError(where + "unknown key '" + l.key + "' in [" + l.section + "]");
        if (!seen.emplace(std::pair{l.section, l.key}, number).second)
            throw ConfigError(where + "duplicate key '" + l.key + "' in [" + l.section + "]");
        lines.push_back(std::move(l));
    }

    RunConfig c;
    auto apply = [&](const Line& l) {
        try {
            find_key(l.section, l.key)->set(c, l.value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(l.number) + ": [" + l.section + "] " + l.key + ": " +
                              e.what());
        }
    };
    for (const auto& l : lines)
        if (l.section == "model" && l.key == "preset")
            apply(l);
    for (const auto& l : lines)
        if (!(l.section == "model" && l.key == "preset"))
            apply(l);
    finish(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw InputError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const RunConfig& config)
{
    std::string out;
    std::string section;
    for (const auto& k : registry()) {
        if (k.info.section != section) {
            if (!section.empty())
                out += '\n';
            section = k.info.section;
            out += "[" + section + "]\n";
        }
        out += k.info.key + " = " + k.get(config) + "\n";
    }
    return out;
}

const std::vector<ConfigKey>& config_keys()
{
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& k : registry())
            out.push_back(k.info);
        return out;
    }();
    return keys;
}

} // namespace hvt
