#include "hvt/rollout.hpp"

#include <algorithm>

namespace hvt {

namespace {

SquareMatrix multiply(const SquareMatrix& a, const SquareMatrix& b)
{
    const std::size_t n = a.n;
    SquareMatrix c{n, std::vector<double>(n * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double v = a.values[i * n + k];
            for (std::size_t j = 0; j < n; ++j)
                c.values[i * n + j] += v * b.values[k * n + j];
        }
    return c;
}

} // namespace

RolloutResult rollout_from_matrices(const std::vector<SquareMatrix>& attention, std::size_t grid_h,
                                    std::size_t grid_w, std::size_t height, std::size_t width)
{
    if (attention.empty())
        throw ContractError("attention_rollout: empty attention record");
    const std::size_t n = attention.front().n;
    if (n != grid_h * grid_w)
        throw DimensionError("attention_rollout: " + std::to_string(n) + " tokens do not fill a " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    if (height == 0 || width == 0)
        throw DimensionError("attention_rollout: empty output size");

    RolloutResult r;
    r.grid_h = grid_h;
    r.grid_w = grid_w;
    r.height = height;
    r.width = width;
    SquareMatrix acc;
    for (const auto& a : attention) {
        if (a.n != n || a.values.size() != n * n)
            throw DimensionError("attention_rollout: inconsistent attention matrix size");
        SquareMatrix mixed{n, std::vector<double>(n * n)};
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = 0.5 * a.values[i * n + j] + (i == j ? 0.5 : 0.0);
                mixed.values[i * n + j] = v;
                row += v;
            }
            for (std::size_t j = 0; j < n; ++j)
                mixed.values[i * n + j] /= row;
        }
        acc = acc.n == 0 ? mixed : multiply(mixed, acc);
        r.steps.push_back(acc);
    }

    r.token_relevance.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            r.token_relevance[j] += acc.values[i * n + j] / static_cast<double>(n);

    const auto [lo_it, hi_it] = std::minmax_element(r.token_relevance.begin(), r.token_relevance.end());
    const double lo = *lo_it, span = *hi_it - *lo_it;
    r.heatmap.resize(height * width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t ty = y * grid_h / height, tx = x * grid_w / width;
            const double v = r.token_relevance[ty * grid_w + tx];
            r.heatmap[y * width + x] = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 1.0;
        }
    return r;
}

RolloutResult attention_rollout(const AttentionRecord& record, std::size_t sample, std::size_t height,
                                std::size_t width)
{
    if (record.blocks.empty())
        throw ContractError("attention_rollout: empty attention record");
    std::vector<SquareMatrix> averaged;
    for (const auto& block : record.blocks) {
        const Shape& s = block.shape();
        if (s.size() != 4 || s[2] != s[3] || sample >= s[0])
            throw DimensionError("attention_rollout: bad attention block " + shape_str(s));
        const std::size_t heads = s[1], n = s[2];
        const auto v = block.to_vector();
        SquareMatrix m{n, std::vector<double>(n * n, 0.0)};
        for (std::size_t h = 0; h < heads; ++h) {
            const double* src = v.data() + (sample * heads + h) * n * n;
            for (std::size_t k = 0; k < n * n; ++k)
                m.values[k] += src[k] / static_cast<double>(heads);
        }
        averaged.push_back(std::move(m));
    }
    return rollout_from_matrices(averaged, record.grid_h, record.grid_w, height, width);
}

} // namespace hvt
