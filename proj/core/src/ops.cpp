#include "hvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "gemm.hpp"

namespace hvt {

using detail::Node;

namespace {

void require(const Tensor& t, const char* op)
{
    if (!t.defined())
        throw ContractError(std::string(op) + ": undefined tensor");
}

void same_dtype(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.dtype() != b.dtype())
        throw ContractError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                            dtype_name(b.dtype()) + ")");
}

template <typename T>
std::shared_ptr<Node> new_node(const Shape& shape)
{
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->dtype = std::is_same_v<T, double> ? DType::f64 : DType::f32;
    n->data = std::vector<T>(shape_numel(shape), T(0));
    return n;
}

// Attaches history when any input needs a gradient and recording is enabled.
Tensor finish(std::shared_ptr<Node> out, std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> fn)
{
    bool track = false;
    if (grad_enabled())
        for (const Tensor* t : inputs)
            track = track || t->requires_grad();
    if (track) {
        out->requires_grad = true;
        for (const Tensor* t : inputs)
            out->parents.push_back(t->node());
        out->backward_fn = std::move(fn);
    }
    return Tensor(std::move(out));
}

Tensor finish_n(std::shared_ptr<Node> out, std::span<const Tensor> inputs, std::function<void(Node&)> fn)
{
    bool track = false;
    if (grad_enabled())
        for (const Tensor& t : inputs)
            track = track || t.requires_grad();
    if (track) {
        out->requires_grad = true;
        for (const Tensor& t : inputs)
            out->parents.push_back(t.node());
        out->backward_fn = std::move(fn);
    }
    return Tensor(std::move(out));
}

bool is_suffix(const Shape& small, const Shape& big)
{
    if (small.size() > big.size())
        return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis)
{
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i)
        r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        r.inner *= s[i];
    return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim)
{
    Shape out = s;
    if (keepdim || s.size() == 1)
        out[axis] = 1;
    else
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    return out;
}

enum class BinKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* name)
{
    require(a, name);
    require(b, name);
    same_dtype(a, b, name);
    // The larger operand fixes the output shape; the other must be a trailing suffix.
    const bool a_big = a.dim() >= b.dim();
    const Shape& big = a_big ? a.shape() : b.shape();
    const Shape& small = a_big ? b.shape() : a.shape();
    if (!is_suffix(small, big))
        throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " do not conform");
    const std::size_t n = shape_numel(big);
    const std::size_t period = shape_numel(small);

    return dispatch(a.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(big);
        const auto& av = a.node()->values<T>();
        const auto& bv = b.node()->values<T>();
        auto& ov = out->values<T>();
        const std::size_t pa = av.size(), pb = bv.size();
        for (std::size_t base = 0; base < n; base += period) {
            const T* pa_ = av.data() + (pa == n ? base : 0);
            const T* pb_ = bv.data() + (pb == n ? base : 0);
            T* po = ov.data() + base;
            switch (kind) {
            case BinKind::add:
                for (std::size_t j = 0; j < period; ++j)
                    po[j] = pa_[j] + pb_[j];
                break;
            case BinKind::sub:
                for (std::size_t j = 0; j < period; ++j)
                    po[j] = pa_[j] - pb_[j];
                break;
            case BinKind::mul:
                for (std::size_t j = 0; j < period; ++j)
                    po[j] = pa_[j] * pb_[j];
                break;
            }
        }
        return finish(out, {&a, &b}, [kind, n, period](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            const auto& g = self.grads<T>();
            const std::size_t sa = shape_numel(na.shape), sb = shape_numel(nb.shape);
            for (std::size_t base = 0; base < n; base += period) {
                const T* gp = g.data() + base;
                if (na.requires_grad) {
                    T* ga = na.ensure_grad<T>().data() + (sa == n ? base : 0);
                    const T* other = nb.values<T>().data() + (sb == n ? base : 0);
                    for (std::size_t j = 0; j < period; ++j)
                        ga[j] += kind == BinKind::mul ? gp[j] * other[j] : gp[j];
                }
                if (nb.requires_grad) {
                    T* gb = nb.ensure_grad<T>().data() + (sb == n ? base : 0);
                    const T* other = na.values<T>().data() + (sa == n ? base : 0);
                    for (std::size_t j = 0; j < period; ++j)
                        gb[j] += kind == BinKind::mul ? gp[j] * other[j] : (kind == BinKind::sub ? -gp[j] : gp[j]);
                }
            }
        });
    });
}

// Elementwise map whose derivative is expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df)
{
    require(x, name);
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        for (std::size_t i = 0; i < xv.size(); ++i)
            ov[i] = static_cast<T>(f(static_cast<double>(xv[i])));
        return finish(out, {&x}, [df](Node& self) {
            Node& nx = *self.parents[0];
            const auto& g = self.grads<T>();
            const auto& xv = nx.values<T>();
            const auto& yv = self.values<T>();
            auto& gx = nx.ensure_grad<T>();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += static_cast<T>(static_cast<double>(g[i]) *
                                        df(static_cast<double>(xv[i]), static_cast<double>(yv[i])));
        });
    });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require(a, "matmul");
    require(b, "matmul");
    same_dtype(a, b, "matmul");
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw DimensionError("matmul: operands need at least 2 axes, got " + shape_str(as) + " x " + shape_str(bs));
    const std::size_t M = as[as.size() - 2], K = as.back();
    const std::size_t K2 = bs[bs.size() - 2], N = bs.back();
    if (K != K2)
        throw DimensionError("matmul: inner extents differ, " + shape_str(as) + " x " + shape_str(bs));

    const bool shared_b = bs.size() == 2;
    if (!shared_b && (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())))
        throw DimensionError("matmul: batch axes differ, " + shape_str(as) + " x " + shape_str(bs));
    const std::size_t batch = shape_numel(as) / (M * K);
    Shape out_shape = as;
    out_shape.back() = N;

    return dispatch(a.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(out_shape);
        const T* A = a.node()->values<T>().data();
        const T* B = b.node()->values<T>().data();
        T* C = out->values<T>().data();
        if (shared_b)
            detail::gemm_nn(batch * M, N, K, A, B, C);
        else
            for (std::size_t p = 0; p < batch; ++p)
                detail::gemm_nn(M, N, K, A + p * M * K, B + p * K * N, C + p * M * N);

        return finish(out, {&a, &b}, [=](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            const T* G = self.grads<T>().data();
            const T* A = na.values<T>().data();
            const T* B = nb.values<T>().data();
            if (shared_b) {
                if (na.requires_grad)
                    detail::gemm_nt(batch * M, K, N, G, B, na.ensure_grad<T>().data());
                if (nb.requires_grad)
                    detail::gemm_tn(K, N, batch * M, A, G, nb.ensure_grad<T>().data());
                return;
            }
            for (std::size_t p = 0; p < batch; ++p) {
                if (na.requires_grad)
                    detail::gemm_nt(M, K, N, G + p * M * N, B + p * K * N, na.ensure_grad<T>().data() + p * M * K);
                if (nb.requires_grad)
                    detail::gemm_tn(K, N, M, A + p * M * K, G + p * M * N, nb.ensure_grad<T>().data() + p * K * N);
            }
        });
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    if (bias.dim() != 1 || bias.size(0) != weight.shape().back())
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    return add(matmul(x, weight), bias);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor)
{
    require(x, "scale");
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        const T f = static_cast<T>(factor);
        for (std::size_t i = 0; i < xv.size(); ++i)
            ov[i] = xv[i] * f;
        return finish(out, {&x}, [f](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * f;
        });
    });
}

Tensor add_scalar(const Tensor& x, double value)
{
    require(x, "add_scalar");
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        const T c = static_cast<T>(value);
        for (std::size_t i = 0; i < xv.size(); ++i)
            ov[i] = xv[i] + c;
        return finish(out, {&x}, [](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i];
        });
    });
}

Tensor exp(const Tensor& x)
{
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x)
{
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow_scalar(const Tensor& x, double exponent)
{
    if (exponent == 0.0)
        return Tensor::full(x.shape(), 1.0, x.dtype());
    return unary(
        x, "pow_scalar", [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) { return exponent == 1.0 ? 1.0 : exponent * std::pow(v, exponent - 1.0); });
}

Tensor clamp_min(const Tensor& x, double floor)
{
    return unary(
        x, "clamp_min", [floor](double v) { return std::max(v, floor); },
        [floor](double v, double) { return v >= floor ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x)
{
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(c * (v + k * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
        });
}

Tensor sum(const Tensor& x) { return sum(reshape(x, {x.numel()}), 0, false); }

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim)
{
    require(x, "sum");
    const AxisSplit sp = split_axis(x.shape(), axis);
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(reduced_shape(x.shape(), axis, keepdim));
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e) {
                const T* src = xv.data() + (o * sp.extent + e) * sp.inner;
                T* dst = ov.data() + o * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i)
                    dst[i] += src[i];
            }
        return finish(out, {&x}, [sp](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    T* dst = gx.data() + (o * sp.extent + e) * sp.inner;
                    const T* src = g.data() + o * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        dst[i] += src[i];
                }
        });
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim)
{
    return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(split_axis(x.shape(), axis).extent));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim)
{
    require(x, "max");
    const AxisSplit sp = split_axis(x.shape(), axis);
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(reduced_shape(x.shape(), axis, keepdim));
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        auto where = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner, 0);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                std::size_t best = 0;
                T bv = xv[o * sp.extent * sp.inner + i];
                for (std::size_t e = 1; e < sp.extent; ++e) {
                    const T v = xv[(o * sp.extent + e) * sp.inner + i];
                    if (v > bv) {
                        bv = v;
                        best = e;
                    }
                }
                ov[o * sp.inner + i] = bv;
                (*where)[o * sp.inner + i] = best;
            }
        return finish(out, {&x}, [sp, where](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    gx[(o * sp.extent + (*where)[o * sp.inner + i]) * sp.inner + i] += g[o * sp.inner + i];
        });
    });
}

Tensor argmax(const Tensor& x, std::size_t axis)
{
    NoGradGuard guard;
    require(x, "argmax");
    const AxisSplit sp = split_axis(x.shape(), axis);
    Tensor out = Tensor::zeros(reduced_shape(x.shape(), axis, false), x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        const auto& xv = x.node()->values<T>();
        auto ov = out.mutable_data<T>();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                std::size_t best = 0;
                for (std::size_t e = 1; e < sp.extent; ++e)
                    if (xv[(o * sp.extent + e) * sp.inner + i] > xv[(o * sp.extent + best) * sp.inner + i])
                        best = e;
                ov[o * sp.inner + i] = static_cast<T>(best);
            }
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape shape)
{
    require(x, "reshape");
    if (shape_numel(shape) != x.numel() || shape.empty())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    for (auto e : shape)
        if (e == 0)
            throw DimensionError("reshape: zero extent in " + shape_str(shape));
    return dispatch(x.dtype(), [&]<typename T>() {
        auto out = std::make_shared<Node>();
        out->shape = std::move(shape);
        out->dtype = x.dtype();
        out->data = x.node()->values<T>();
        return finish(out, {&x}, [](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i];
        });
    });
}

namespace {

// Maps every output flat index of a permutation to its input flat index.
std::vector<std::size_t> permutation_map(const Shape& in, std::span<const std::size_t> order)
{
    const std::size_t rank = in.size();
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;)
        in_stride[i - 1] = in_stride[i] * in[i];
    Shape out(rank);
    std::vector<std::size_t> stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out[i] = in[order[i]];
        stride[i] = in_stride[order[i]];
    }
    const std::size_t n = shape_numel(in);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t f = 0; f < n; ++f) {
        map[f] = src;
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < out[ax]) {
                src += stride[ax];
                break;
            }
            src -= stride[ax] * (out[ax] - 1);
            idx[ax] = 0;
        }
    }
    return map;
}

} // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> order)
{
    require(x, "permute");
    const std::size_t rank = x.dim();
    if (order.size() != rank)
        throw DimensionError("permute: order has wrong length for " + shape_str(x.shape()));
    std::vector<bool> used(rank, false);
    for (auto o : order) {
        if (o >= rank || used[o])
            throw DimensionError("permute: invalid axis order");
        used[o] = true;
    }
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i)
        out_shape[i] = x.shape()[order[i]];
    auto map = std::make_shared<std::vector<std::size_t>>(permutation_map(x.shape(), order));
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(out_shape);
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        for (std::size_t f = 0; f < ov.size(); ++f)
            ov[f] = xv[(*map)[f]];
        return finish(out, {&x}, [map](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t f = 0; f < g.size(); ++f)
                gx[(*map)[f]] += g[f];
        });
    });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order)
{
    return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

Tensor transpose(const Tensor& x)
{
    require(x, "transpose");
    if (x.dim() < 2)
        throw DimensionError("transpose: needs at least 2 axes");
    std::vector<std::size_t> order(x.dim());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::swap(order[order.size() - 1], order[order.size() - 2]);
    return permute(x, order);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis)
{
    if (parts.empty())
        throw DimensionError("concat: no inputs");
    for (const auto& p : parts) {
        require(p, "concat");
        same_dtype(parts[0], p, "concat");
    }
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size())
        throw DimensionError("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw DimensionError("concat: " + shape_str(s) + " does not conform to " + shape_str(s0));
        out_shape[axis] += s[axis];
    }
    const AxisSplit sp = split_axis(out_shape, axis);
    for (const auto& p : parts)
        widths.push_back(p.shape()[axis] * sp.inner);
    const std::size_t row = sp.extent * sp.inner;

    return dispatch(parts[0].dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(out_shape);
        auto& ov = out->values<T>();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const auto& pv = parts[k].node()->values<T>();
            for (std::size_t o = 0; o < sp.outer; ++o)
                std::copy_n(pv.data() + o * widths[k], widths[k], ov.data() + o * row + offset);
            offset += widths[k];
        }
        return finish_n(out, parts, [widths, row, outer = sp.outer](Node& self) {
            const auto& g = self.grads<T>();
            std::size_t offset = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                Node& p = *self.parents[k];
                if (p.requires_grad) {
                    auto& gp = p.ensure_grad<T>();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            gp[o * widths[k] + j] += g[o * row + offset + j];
                }
                offset += widths[k];
            }
        });
    });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis)
{
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length)
{
    require(x, "slice");
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (length == 0 || start + length > sp.extent)
        throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for axis extent " + std::to_string(sp.extent));
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    const std::size_t src_row = sp.extent * sp.inner, dst_row = length * sp.inner, off = start * sp.inner;
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(out_shape);
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(xv.data() + o * src_row + off, dst_row, ov.data() + o * dst_row);
        return finish(out, {&x}, [=, outer = sp.outer](Node& self) {
            const auto& g = self.grads<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < dst_row; ++j)
                    gx[o * src_row + off + j] += g[o * dst_row + j];
        });
    });
}

namespace {

template <typename T>
void softmax_rows(const T* x, T* y, const AxisSplit& sp, bool log_space)
{
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            T m = x[base];
            for (std::size_t e = 1; e < sp.extent; ++e)
                m = std::max(m, x[base + e * sp.inner]);
            double z = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e)
                z += std::exp(static_cast<double>(x[base + e * sp.inner] - m));
            if (log_space) {
                const double lz = std::log(z);
                for (std::size_t e = 0; e < sp.extent; ++e)
                    y[base + e * sp.inner] = static_cast<T>(static_cast<double>(x[base + e * sp.inner] - m) - lz);
            } else {
                for (std::size_t e = 0; e < sp.extent; ++e)
                    y[base + e * sp.inner] = static_cast<T>(std::exp(static_cast<double>(x[base + e * sp.inner] - m)) / z);
            }
        }
}

} // namespace

Tensor softmax(const Tensor& x, std::size_t axis)
{
    require(x, "softmax");
    const AxisSplit sp = split_axis(x.shape(), axis);
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        softmax_rows(x.node()->values<T>().data(), out->values<T>().data(), sp, false);
        return finish(out, {&x}, [sp](Node& self) {
            const auto& g = self.grads<T>();
            const auto& y = self.values<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            // dx = y * (g - <g, y>)
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.extent * sp.inner + i;
                    T dot = 0;
                    for (std::size_t e = 0; e < sp.extent; ++e)
                        dot += g[base + e * sp.inner] * y[base + e * sp.inner];
                    for (std::size_t e = 0; e < sp.extent; ++e) {
                        const std::size_t k = base + e * sp.inner;
                        gx[k] += y[k] * (g[k] - dot);
                    }
                }
        });
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis)
{
    require(x, "log_softmax");
    const AxisSplit sp = split_axis(x.shape(), axis);
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        softmax_rows(x.node()->values<T>().data(), out->values<T>().data(), sp, true);
        return finish(out, {&x}, [sp](Node& self) {
            const auto& g = self.grads<T>();
            const auto& y = self.values<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            // dx = g - softmax * sum(g)
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.extent * sp.inner + i;
                    T total = 0;
                    for (std::size_t e = 0; e < sp.extent; ++e)
                        total += g[base + e * sp.inner];
                    for (std::size_t e = 0; e < sp.extent; ++e) {
                        const std::size_t k = base + e * sp.inner;
                        gx[k] += g[k] - static_cast<T>(std::exp(static_cast<double>(y[k]))) * total;
                    }
                }
        });
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps)
{
    require(x, "layer_norm");
    same_dtype(x, gain, "layer_norm");
    same_dtype(x, bias, "layer_norm");
    const std::size_t D = x.shape().back();
    if (gain.shape() != Shape{D} || bias.shape() != Shape{D})
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(D) + "]");
    const std::size_t rows = x.numel() / D;
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        const auto& xv = x.node()->values<T>();
        const auto& gv = gain.node()->values<T>();
        const auto& bv = bias.node()->values<T>();
        auto& ov = out->values<T>();
        // Cache normalized values and inverse std for the backward pass.
        auto xhat = std::make_shared<std::vector<T>>(xv.size());
        auto inv_std = std::make_shared<std::vector<T>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = xv.data() + r * D;
            double mu = 0.0;
            for (std::size_t j = 0; j < D; ++j)
                mu += xr[j];
            mu /= static_cast<double>(D);
            double var = 0.0;
            for (std::size_t j = 0; j < D; ++j)
                var += (xr[j] - mu) * (xr[j] - mu);
            var /= static_cast<double>(D);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[r] = static_cast<T>(is);
            for (std::size_t j = 0; j < D; ++j) {
                const T h = static_cast<T>((xr[j] - mu) * is);
                (*xhat)[r * D + j] = h;
                ov[r * D + j] = h * gv[j] + bv[j];
            }
        }
        return finish(out, {&x, &gain, &bias}, [D, rows, xhat, inv_std](Node& self) {
            Node& nx = *self.parents[0];
            Node& ng = *self.parents[1];
            Node& nb = *self.parents[2];
            const auto& g = self.grads<T>();
            const auto& gv = ng.values<T>();
            if (ng.requires_grad) {
                auto& gg = ng.ensure_grad<T>();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < D; ++j)
                        gg[j] += g[r * D + j] * (*xhat)[r * D + j];
            }
            if (nb.requires_grad) {
                auto& gb = nb.ensure_grad<T>();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < D; ++j)
                        gb[j] += g[r * D + j];
            }
            if (nx.requires_grad) {
                auto& gx = nx.ensure_grad<T>();
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < D; ++j) {
                        const double dh = static_cast<double>(g[r * D + j]) * gv[j];
                        m1 += dh;
                        m2 += dh * (*xhat)[r * D + j];
                    }
                    m1 /= static_cast<double>(D);
                    m2 /= static_cast<double>(D);
                    for (std::size_t j = 0; j < D; ++j) {
                        const double dh = static_cast<double>(g[r * D + j]) * gv[j];
                        gx[r * D + j] += static_cast<T>((*inv_std)[r] * (dh - m1 - (*xhat)[r * D + j] * m2));
                    }
                }
            }
        });
    });
}

Tensor l2_normalize(const Tensor& x, double eps)
{
    require(x, "l2_normalize");
    const std::size_t D = x.shape().back();
    const std::size_t rows = x.numel() / D;
    return dispatch(x.dtype(), [&]<typename T>() {
        std::shared_ptr<Node> out = new_node<T>(x.shape());
        const auto& xv = x.node()->values<T>();
        auto& ov = out->values<T>();
        auto norms = std::make_shared<std::vector<double>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < D; ++j)
                s += static_cast<double>(xv[r * D + j]) * xv[r * D + j];
            const double n = std::max(std::sqrt(s), eps);
            (*norms)[r] = n;
            for (std::size_t j = 0; j < D; ++j)
                ov[r * D + j] = static_cast<T>(xv[r * D + j] / n);
        }
        return finish(out, {&x}, [D, rows, norms, eps](Node& self) {
            const auto& g = self.grads<T>();
            const auto& y = self.values<T>();
            auto& gx = self.parents[0]->ensure_grad<T>();
            for (std::size_t r = 0; r < rows; ++r) {
                const double n = (*norms)[r];
                if (n <= eps) {
                    for (std::size_t j = 0; j < D; ++j)
                        gx[r * D + j] += static_cast<T>(g[r * D + j] / n);
                    continue;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < D; ++j)
                    dot += static_cast<double>(g[r * D + j]) * y[r * D + j];
                for (std::size_t j = 0; j < D; ++j)
                    gx[r * D + j] += static_cast<T>((g[r * D + j] - y[r * D + j] * dot) / n);
            }
        });
    });
}

} // namespace hvt
