#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hvt/tensor.hpp"

namespace hvt {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Insertion-ordered set of uniquely named tensors.
class ParamSet {
public:
    void add(std::string name, Tensor tensor);
    bool contains(std::string_view name) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    std::size_t index_of(std::string_view name) const;

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    /// Total number of scalar values across all tensors.
    std::size_t count() const;

    const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
    NamedTensor& operator[](std::size_t i) { return entries_[i]; }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    /// Deep copy; the copy's leaves keep the requires_grad flags.
    ParamSet clone() const;
    /// Copy converted to another dtype.
    ParamSet to(DType dtype) const;
    void set_requires_grad(bool flag);
    void clear_grads();
    /// Same names, shapes and dtypes, in the same order.
    bool same_layout(const ParamSet& other) const;
    /// Bit-exact equality of every value.
    bool identical(const ParamSet& other) const;

private:
    std::vector<NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients aligned index-for-index with a ParamSet.
using GradSet = std::vector<Tensor>;

/// Copies current gradients out of a parameter set; missing gradients become zeros.
GradSet collect_grads(const ParamSet& params);
/// into += weight * grads
void accumulate_grads(GradSet& into, const GradSet& grads, double weight);
GradSet zero_grads_like(const ParamSet& params);

} // namespace hvt
