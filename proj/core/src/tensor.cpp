#include "hvt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace hvt {

namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
detail::Buffer make_buffer(std::size_t n, T value)
{
    return detail::Buffer(std::vector<T>(n, value));
}

detail::Buffer filled(DType dtype, std::size_t n, double value)
{
    if (dtype == DType::f64)
        return make_buffer<double>(n, value);
    return make_buffer<float>(n, static_cast<float>(value));
}
} // namespace

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto e : shape)
        n *= e;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f64 ? "f64" : "f32"; }

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

static void validate_shape(const Shape& shape)
{
    if (shape.empty())
        throw DimensionError("tensor shape must have at least one axis");
    for (auto e : shape)
        if (e == 0)
            throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) { return full(std::move(shape), 0.0, dtype, requires_grad); }

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad)
{
    validate_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->data = filled(dtype, shape_numel(shape), value);
    node->shape = std::move(shape);
    node->dtype = dtype;
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype, bool requires_grad)
{
    validate_shape(shape);
    if (shape_numel(shape) != values.size())
        throw DimensionError("from_values: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), dtype, requires_grad);
    dispatch(dtype, [&]<typename T>() {
        auto& v = t.node_->values<T>();
        std::transform(values.begin(), values.end(), v.begin(), [](double x) { return static_cast<T>(x); });
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype, bool requires_grad)
{
    return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype, requires_grad);
}

Tensor Tensor::from_floats(Shape shape, std::vector<float> values, bool requires_grad)
{
    validate_shape(shape);
    if (shape_numel(shape) != values.size())
        throw DimensionError("from_floats: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->dtype = DType::f32;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, DType dtype, bool requires_grad) { return full({1}, value, dtype, requires_grad); }

void Tensor::require_defined() const
{
    if (!node_)
        throw ContractError("operation on an undefined tensor");
}

const Shape& Tensor::shape() const
{
    require_defined();
    return node_->shape;
}

std::size_t Tensor::size(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const
{
    require_defined();
    return node_->dtype;
}

bool Tensor::requires_grad() const
{
    require_defined();
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag)
{
    require_defined();
    if (!node_->parents.empty())
        throw ContractError("set_requires_grad is only valid on leaf tensors");
    node_->requires_grad = flag;
}

bool Tensor::has_grad() const
{
    require_defined();
    return node_->grad.has_value();
}

Tensor Tensor::grad() const
{
    if (!has_grad())
        throw ContractError("tensor has no gradient");
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->dtype = node_->dtype;
    node->data = *node_->grad;
    return Tensor(std::move(node));
}

void Tensor::clear_grad()
{
    require_defined();
    node_->grad.reset();
}

double Tensor::item() const
{
    if (numel() != 1)
        throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
    return at(0);
}

double Tensor::at(std::size_t flat) const
{
    require_defined();
    return dispatch(node_->dtype, [&]<typename T>() -> double { return node_->values<T>().at(flat); });
}

std::vector<double> Tensor::to_vector() const
{
    require_defined();
    return dispatch(node_->dtype, [&]<typename T>() {
        const auto& v = node_->values<T>();
        return std::vector<double>(v.begin(), v.end());
    });
}

std::vector<double> Tensor::grad_vector() const
{
    if (!has_grad())
        throw ContractError("tensor has no gradient");
    return dispatch(node_->dtype, [&]<typename T>() {
        const auto& v = node_->grads<T>();
        return std::vector<double>(v.begin(), v.end());
    });
}

Tensor Tensor::detach() const
{
    require_defined();
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->dtype = node_->dtype;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::to(DType dtype) const
{
    require_defined();
    if (dtype == node_->dtype)
        return detach();
    return from_values(node_->shape, to_vector(), dtype);
}

void Tensor::swap_values(Tensor& other)
{
    require_defined();
    other.require_defined();
    if (node_->shape != other.node_->shape || node_->dtype != other.node_->dtype)
        throw DimensionError("swap_values: shape or dtype mismatch");
    std::swap(node_->data, other.node_->data);
}

void Tensor::assign(const Tensor& other)
{
    require_defined();
    if (node_->shape != other.shape())
        throw DimensionError("assign: shape mismatch " + shape_str(node_->shape) + " vs " + shape_str(other.shape()));
    if (other.dtype() == node_->dtype) {
        node_->data = other.node_->data;
        return;
    }
    const auto v = other.to_vector();
    dispatch(node_->dtype, [&]<typename T>() {
        auto& dst = node_->values<T>();
        std::transform(v.begin(), v.end(), dst.begin(), [](double x) { return static_cast<T>(x); });
    });
}

void Tensor::backward() const
{
    require_defined();
    if (numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad)
        throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order)
        n->grad = filled(n->dtype, shape_numel(n->shape), 0.0);
    node_->grad = filled(node_->dtype, 1, 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn)
            (*it)->backward_fn(**it);
}

} // namespace hvt
