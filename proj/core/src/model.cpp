#include "hvt/model.hpp"

#include <cmath>
#include <sstream>

#include "hvt/ops.hpp"

namespace hvt {

namespace {

std::string stage_name(std::size_t s) { return "stage" + std::to_string(s + 1); }

} // namespace

void HVTConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("HVTConfig: " + msg); };
    if (patch_size == 0 || image_height == 0 || image_width == 0)
        fail("image size and patch size must be positive");
    if (image_height % patch_size != 0 || image_width % patch_size != 0)
        fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
             " is not divisible by patch size " + std::to_string(patch_size));
    std::size_t gh = image_height / patch_size, gw = image_width / patch_size;
    for (std::size_t s = 0; s < kNumStages; ++s) {
        if (depths[s] == 0)
            fail("stage " + std::to_string(s + 1) + " has zero depth");
        if (dims[s] == 0 || heads[s] == 0)
            fail("stage widths and head counts must be positive");
        if (dims[s] % heads[s] != 0)
            fail("dim " + std::to_string(dims[s]) + " not divisible by " + std::to_string(heads[s]) + " heads");
        if (s + 1 < kNumStages) {
            if (gh % 2 != 0 || gw % 2 != 0)
                fail("stage " + std::to_string(s + 1) + " grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                     " cannot be merged (odd extent)");
            gh /= 2;
            gw /= 2;
            if (!allow_dim_override && dims[s + 1] != 2 * dims[s])
                fail("dims must double between stages unless allow_dim_override is set");
        }
    }
    if (ffn_ratio == 0)
        fail("ffn_ratio must be positive");
    if (!(drop_path_max >= 0.0 && drop_path_max < 1.0))
        fail("drop_path_max must lie in [0, 1)");
    if (num_classes < 2)
        fail("num_classes must be at least 2");
    if (!(ln_eps > 0.0) || !(init_std > 0.0))
        fail("ln_eps and init_std must be positive");
}

std::size_t HVTConfig::grid_height(std::size_t stage) const { return (image_height / patch_size) >> stage; }
std::size_t HVTConfig::grid_width(std::size_t stage) const { return (image_width / patch_size) >> stage; }

std::size_t HVTConfig::total_blocks() const
{
    std::size_t n = 0;
    for (auto d : depths)
        n += d;
    return n;
}

HVTConfig HVTConfig::xl() { return HVTConfig{}; }

HVTConfig HVTConfig::large()
{
    HVTConfig c;
    c.depths = {2, 4, 18, 2};
    c.dims = {160, 320, 640, 1280};
    c.heads = {5, 10, 20, 40};
    return c;
}

HVTConfig HVTConfig::base()
{
    HVTConfig c;
    c.depths = {2, 2, 18, 2};
    c.dims = {128, 256, 512, 1024};
    c.heads = {4, 8, 16, 32};
    return c;
}

HVTConfig HVTConfig::small()
{
    HVTConfig c;
    c.depths = {2, 2, 6, 2};
    c.dims = {96, 192, 384, 768};
    c.heads = {3, 6, 12, 24};
    return c;
}

HVTConfig HVTConfig::tiny()
{
    HVTConfig c;
    c.image_height = c.image_width = 64;
    c.patch_size = 8;
    c.depths = {1, 1, 1, 1};
    c.dims = {8, 16, 32, 64};
    c.heads = {2, 2, 4, 4};
    return c;
}

HVTConfig HVTConfig::desk()
{
    HVTConfig c;
    c.image_height = c.image_width = 64;
    c.patch_size = 8;
    c.depths = {1, 1, 2, 1};
    c.dims = {16, 32, 64, 128};
    c.heads = {2, 4, 4, 8};
    return c;
}

HVTConfig HVTConfig::preset(std::string_view name)
{
    if (name == "xl")
        return xl();
    if (name == "large")
        return large();
    if (name == "base")
        return base();
    if (name == "small")
        return small();
    if (name == "tiny")
        return tiny();
    if (name == "desk")
        return desk();
    throw ConfigError("unknown model preset: " + std::string(name));
}

std::string block_prefix(std::size_t stage, std::size_t block)
{
    return stage_name(stage) + "/block" + std::to_string(block);
}

bool is_head_param(std::string_view name) { return name.starts_with("head/"); }

ParamSet init_params(const HVTConfig& config, RngStream& rng, DType dtype)
{
    config.validate();
    ParamSet p;
    auto weight = [&](std::string name, Shape shape) {
        Tensor t = Tensor::zeros(shape, dtype, true);
        dispatch(dtype, [&]<typename T>() {
            for (auto& v : t.mutable_data<T>())
                v = static_cast<T>(rng.truncated_normal(config.init_std));
        });
        p.add(std::move(name), std::move(t));
    };
    auto constant = [&](std::string name, Shape shape, double value) {
        p.add(std::move(name), Tensor::full(std::move(shape), value, dtype, true));
    };

    const std::size_t d1 = config.dims[0];
    weight("patch_embed/weight", {config.patch_dim(), d1});
    constant("patch_embed/bias", {d1}, 0.0);
    if (config.positional_embedding)
        weight("pos_embed", {config.tokens(0), d1});

    for (std::size_t s = 0; s < kNumStages; ++s) {
        const std::size_t d = config.dims[s];
        const std::size_t hidden = d * config.ffn_ratio;
        for (std::size_t k = 0; k < config.depths[s]; ++k) {
            const std::string b = block_prefix(s, k);
            constant(b + "/norm1/gain", {d}, 1.0);
            constant(b + "/norm1/bias", {d}, 0.0);
            for (const char* proj : {"q", "k", "v"}) {
                weight(b + "/attn/w" + proj, {d, d});
                constant(b + "/attn/b" + proj, {d}, 0.0);
            }
            if (config.output_projection) {
                weight(b + "/attn/wo", {d, d});
                constant(b + "/attn/bo", {d}, 0.0);
            }
            constant(b + "/norm2/gain", {d}, 1.0);
            constant(b + "/norm2/bias", {d}, 0.0);
            weight(b + "/ffn/w1", {d, hidden});
            constant(b + "/ffn/b1", {hidden}, 0.0);
            weight(b + "/ffn/w2", {hidden, d});
            constant(b + "/ffn/b2", {d}, 0.0);
        }
        if (s + 1 < kNumStages) {
            weight("merge" + std::to_string(s + 1) + "/weight", {4 * d, config.dims[s + 1]});
            constant("merge" + std::to_string(s + 1) + "/bias", {config.dims[s + 1]}, 0.0);
        }
    }
    weight("head/weight", {config.dims[kNumStages - 1], config.num_classes});
    constant("head/bias", {config.num_classes}, 0.0);
    return p;
}

std::size_t count_params(const ParamSet& params) { return params.count(); }

AttentionWeights attention_weights(const ParamSet& params, std::string_view prefix)
{
    const std::string a = std::string(prefix) + "/attn/";
    AttentionWeights w{params.at(a + "wq"), params.at(a + "bq"), params.at(a + "wk"),
                       params.at(a + "bk"), params.at(a + "wv"), params.at(a + "bv"),
                       {},                  {}};
    if (params.contains(a + "wo")) {
        w.wo = params.at(a + "wo");
        w.bo = params.at(a + "bo");
    }
    return w;
}

FfnWeights ffn_weights(const ParamSet& params, std::string_view prefix)
{
    const std::string f = std::string(prefix) + "/ffn/";
    return {params.at(f + "w1"), params.at(f + "b1"), params.at(f + "w2"), params.at(f + "b2")};
}

BlockWeights block_weights(const ParamSet& params, std::string_view prefix)
{
    const std::string b(prefix);
    return {params.at(b + "/norm1/gain"), params.at(b + "/norm1/bias"), attention_weights(params, prefix),
            params.at(b + "/norm2/gain"), params.at(b + "/norm2/bias"), ffn_weights(params, prefix)};
}

Tensor patch_embed(const Tensor& images, const ParamSet& params, const HVTConfig& config)
{
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != config.image_height || s[2] != config.image_width || s[3] != 3)
        throw DimensionError("patch_embed: expected [B," + std::to_string(config.image_height) + "," +
                             std::to_string(config.image_width) + ",3] images, got " + shape_str(s));
    const std::size_t B = s[0], P = config.patch_size;
    const std::size_t gh = config.image_height / P, gw = config.image_width / P;
    Tensor patches = reshape(images, {B, gh, P, gw, P, 3});
    patches = permute(patches, {0, 1, 3, 2, 4, 5});
    patches = reshape(patches, {B, gh * gw, P * P * 3});
    Tensor tokens = linear(patches, params.at("patch_embed/weight"), params.at("patch_embed/bias"));
    if (params.contains("pos_embed"))
        tokens = add(tokens, params.at("pos_embed"));
    return tokens;
}

AttentionOutput mha(const Tensor& x, const AttentionWeights& w, std::size_t heads)
{
    if (x.dim() == 2) {
        AttentionOutput r = mha(reshape(x, {1, x.size(0), x.size(1)}), w, heads);
        r.output = reshape(r.output, x.shape());
        return r;
    }
    if (x.dim() != 3)
        throw DimensionError("mha: expected [B,N,D] tokens, got " + shape_str(x.shape()));
    const std::size_t B = x.size(0), N = x.size(1), D = x.size(2);
    if (heads == 0 || D % heads != 0)
        throw ConfigError("mha: width " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dh = D / heads;

    auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {B, N, heads, dh}), {0, 2, 1, 3}); };
    Tensor q = split_heads(linear(x, w.wq, w.bq));
    Tensor kt = permute(reshape(linear(x, w.wk, w.bk), {B, N, heads, dh}), {0, 2, 3, 1});
    Tensor v = split_heads(linear(x, w.wv, w.bv));

    Tensor scores = scale(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor probs = softmax(scores, 3);
    Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {B, N, D});
    if (w.wo.defined())
        ctx = linear(ctx, w.wo, w.bo);
    return {ctx, probs};
}

Tensor ffn(const Tensor& x, const FfnWeights& w) { return linear(gelu(linear(x, w.w1, w.b1)), w.w2, w.b2); }

Tensor drop_path(const Tensor& x, double p, Mode mode, RngStream* rng)
{
    if (!(p >= 0.0 && p < 1.0))
        throw ConfigError("drop_path: probability must lie in [0, 1), got " + std::to_string(p));
    if (mode == Mode::infer || p == 0.0)
        return x;
    if (rng == nullptr)
        throw ContractError("drop_path: train mode requires an RngStream");
    const std::size_t B = x.size(0);
    const std::size_t per = x.numel() / B;
    std::vector<double> gate(x.numel());
    for (std::size_t b = 0; b < B; ++b) {
        const double g = rng->bernoulli(1.0 - p) ? 1.0 / (1.0 - p) : 0.0;
        std::fill_n(gate.begin() + static_cast<std::ptrdiff_t>(b * per), per, g);
    }
    return mul(x, Tensor::from_values(x.shape(), gate, x.dtype()));
}

double drop_path_schedule(std::size_t layer, std::size_t total_layers, double p_max)
{
    if (layer > total_layers || total_layers == 0)
        throw ContractError("drop_path_schedule: layer index out of range");
    return p_max * static_cast<double>(layer) / static_cast<double>(total_layers);
}

BlockOutput transformer_block(const Tensor& x, const BlockWeights& w, std::size_t heads, const BlockOptions& options)
{
    AttentionOutput attn = mha(layer_norm(x, w.norm1_gain, w.norm1_bias, options.ln_eps), w.attn, heads);
    Tensor z = add(x, drop_path(attn.output, options.drop_prob, options.mode, options.rng));
    Tensor f = ffn(layer_norm(z, w.norm2_gain, w.norm2_bias, options.ln_eps), w.ffn);
    Tensor out = add(z, drop_path(f, options.drop_prob, options.mode, options.rng));
    return {out, attn.probs};
}

Tensor patch_merge(const Tensor& x, std::size_t grid_h, std::size_t grid_w, const Tensor& weight, const Tensor& bias)
{
    if (x.dim() != 3 || x.size(1) != grid_h * grid_w)
        throw DimensionError("patch_merge: tokens " + shape_str(x.shape()) + " do not match a " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    if (grid_h % 2 != 0 || grid_w % 2 != 0)
        throw DimensionError("patch_merge: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                             " has an odd extent");
    const std::size_t B = x.size(0), D = x.size(2);
    Tensor t = reshape(x, {B, grid_h / 2, 2, grid_w / 2, 2, D});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    t = reshape(t, {B, grid_h * grid_w / 4, 4 * D});
    return linear(t, weight, bias);
}

ForwardOutput forward_features(const Tensor& images_in, const ParamSet& params, const HVTConfig& config,
                               const ForwardOptions& options)
{
    config.validate();
    const DType dtype = params.at("patch_embed/weight").dtype();
    const Tensor images = images_in.dtype() == dtype ? images_in : images_in.to(dtype);
    if (options.mode == Mode::train && config.drop_path_max > 0.0 && options.rng == nullptr)
        throw ContractError("forward: train mode with stochastic depth requires an RngStream");

    ForwardOutput out;
    Tensor x = patch_embed(images, params, config);
    const std::size_t total = config.total_blocks();
    std::size_t layer = 0;
    for (std::size_t s = 0; s < kNumStages; ++s) {
        const bool keep_attention = options.capture_all_stages || (options.capture_attention && s + 1 == kNumStages);
        for (std::size_t k = 0; k < config.depths[s]; ++k) {
            ++layer;
            BlockOptions bo;
            bo.drop_prob = drop_path_schedule(layer, total, config.drop_path_max);
            bo.mode = options.mode;
            bo.rng = options.rng;
            bo.ln_eps = config.ln_eps;
            BlockOutput r = transformer_block(x, block_weights(params, block_prefix(s, k)), config.heads[s], bo);
            x = r.output;
            if (keep_attention) {
                Tensor a = r.attention.detach();
                if (s + 1 == kNumStages && (options.capture_attention || options.capture_all_stages))
                    out.attention.blocks.push_back(a);
                if (options.capture_all_stages)
                    out.stage_attention[s].push_back(a);
            }
        }
        out.stages.push_back(x);
        if (s + 1 < kNumStages) {
            const std::string m = "merge" + std::to_string(s + 1);
            x = patch_merge(x, config.grid_height(s), config.grid_width(s), params.at(m + "/weight"),
                            params.at(m + "/bias"));
        }
    }
    out.attention.grid_h = config.grid_height(kNumStages - 1);
    out.attention.grid_w = config.grid_width(kNumStages - 1);
    out.features = mean(x, 1);
    return out;
}

ForwardOutput forward(const Tensor& images, const ParamSet& params, const HVTConfig& config,
                      const ForwardOptions& options)
{
    ForwardOutput out = forward_features(images, params, config, options);
    out.logits = linear(out.features, params.at("head/weight"), params.at("head/bias"));
    return out;
}

} // namespace hvt
