#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hvt/errors.hpp"

namespace hvt {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct Node {
    Shape shape;
    DType dtype = DType::f32;
    Buffer data;
    std::optional<Buffer> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and adds contributions into the parents' grads.
    std::function<void(Node&)> backward_fn;

    template <typename T>
    std::vector<T>& values() { return std::get<std::vector<T>>(data); }
    template <typename T>
    const std::vector<T>& values() const { return std::get<std::vector<T>>(data); }
    template <typename T>
    std::vector<T>& grads() { return std::get<std::vector<T>>(*grad); }
    // Zero-fills the gradient buffer if it does not exist yet.
    template <typename T>
    std::vector<T>& ensure_grad()
    {
        if (!grad)
            grad = Buffer(std::vector<T>(std::get<std::vector<T>>(data).size(), T(0)));
        return std::get<std::vector<T>>(*grad);
    }
};

} // namespace detail

/// Dense row-major tensor participating in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same node. Operation outputs are
/// never mutated after creation; leaves (parameters) may be updated in place by
/// optimizers through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dtype = DType::f32, bool requires_grad = false);
    static Tensor full(Shape shape, double value, DType dtype = DType::f32, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::f32,
                              bool requires_grad = false);
    static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = DType::f32,
                              bool requires_grad = false);
    static Tensor from_floats(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(double value, DType dtype = DType::f32, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const;
    DType dtype() const;

    bool requires_grad() const;
    /// Only valid on leaves (tensors without a recorded history).
    void set_requires_grad(bool flag);
    bool has_grad() const;
    /// Gradient as a fresh constant tensor; throws if absent.
    Tensor grad() const;
    void clear_grad();

    double item() const;
    double at(std::size_t flat) const;
    std::vector<double> to_vector() const;
    std::vector<double> grad_vector() const;

    template <typename T>
    std::span<const T> data() const { return node_->values<T>(); }
    template <typename T>
    std::span<T> mutable_data() { return node_->values<T>(); }
    template <typename T>
    std::span<const T> grad_data() const { return node_->grads<T>(); }

    /// Deep copy of the values without history.
    Tensor detach() const;
    /// Same values converted to another dtype, without history.
    Tensor to(DType dtype) const;
    /// Exchanges value buffers with another tensor of identical shape and dtype.
    void swap_values(Tensor& other);
    /// Overwrites values from another tensor of identical shape (dtype converted).
    void assign(const Tensor& other);

    /// Populates dLoss/dLeaf for every reachable requires_grad tensor.
    ///
    /// Gradients are overwritten, not accumulated: every reachable gradient buffer
    /// is reset before propagation.
    void backward() const;

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    void require_defined() const;
    std::shared_ptr<detail::Node> node_;
};

/// Whether newly created op outputs record history on this thread.
bool grad_enabled() noexcept;

/// Disables history recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Calls `fn.template operator()<T>()` with T = float or double for the dtype.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn)
{
    if (dtype == DType::f64)
        return fn.template operator()<double>();
    return fn.template operator()<float>();
}

} // namespace hvt
