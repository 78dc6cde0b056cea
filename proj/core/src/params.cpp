#include "hvt/params.hpp"

#include <cstring>

namespace hvt {

void ParamSet::add(std::string name, Tensor tensor)
{
    if (!tensor.defined())
        throw ContractError("ParamSet::add: undefined tensor for " + name);
    if (index_.contains(name))
        throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamSet::index_of(std::string_view name) const
{
    auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw ContractError("unknown parameter: " + std::string(name));
    return it->second;
}

const Tensor& ParamSet::at(std::string_view name) const { return entries_[index_of(name)].tensor; }
Tensor& ParamSet::at(std::string_view name) { return entries_[index_of(name)].tensor; }

std::size_t ParamSet::count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_)
        n += e.tensor.numel();
    return n;
}

ParamSet ParamSet::clone() const
{
    ParamSet out;
    for (const auto& e : entries_) {
        Tensor t = e.tensor.detach();
        t.set_requires_grad(e.tensor.requires_grad());
        out.add(e.name, std::move(t));
    }
    return out;
}

ParamSet ParamSet::to(DType dtype) const
{
    ParamSet out;
    for (const auto& e : entries_) {
        Tensor t = e.tensor.to(dtype);
        t.set_requires_grad(e.tensor.requires_grad());
        out.add(e.name, std::move(t));
    }
    return out;
}

void ParamSet::set_requires_grad(bool flag)
{
    for (auto& e : entries_)
        e.tensor.set_requires_grad(flag);
}

void ParamSet::clear_grads()
{
    for (auto& e : entries_)
        e.tensor.clear_grad();
}

bool ParamSet::same_layout(const ParamSet& other) const
{
    if (size() != other.size())
        return false;
    for (std::size_t i = 0; i < size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.tensor.shape() != b.tensor.shape() || a.tensor.dtype() != b.tensor.dtype())
            return false;
    }
    return true;
}

bool ParamSet::identical(const ParamSet& other) const
{
    if (!same_layout(other))
        return false;
    for (std::size_t i = 0; i < size(); ++i) {
        const bool eq = dispatch(entries_[i].tensor.dtype(), [&]<typename T>() {
            auto a = entries_[i].tensor.data<T>();
            auto b = other.entries_[i].tensor.data<T>();
            return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
        });
        if (!eq)
            return false;
    }
    return true;
}

GradSet collect_grads(const ParamSet& params)
{
    GradSet out;
    out.reserve(params.size());
    for (const auto& e : params)
        out.push_back(e.tensor.has_grad() ? e.tensor.grad() : Tensor::zeros(e.tensor.shape(), e.tensor.dtype()));
    return out;
}

GradSet zero_grads_like(const ParamSet& params)
{
    GradSet out;
    out.reserve(params.size());
    for (const auto& e : params)
        out.push_back(Tensor::zeros(e.tensor.shape(), e.tensor.dtype()));
    return out;
}

void accumulate_grads(GradSet& into, const GradSet& grads, double weight)
{
    if (into.size() != grads.size())
        throw ContractError("accumulate_grads: size mismatch");
    for (std::size_t i = 0; i < into.size(); ++i) {
        if (into[i].shape() != grads[i].shape())
            throw DimensionError("accumulate_grads: shape mismatch at index " + std::to_string(i));
        dispatch(into[i].dtype(), [&]<typename T>() {
            auto dst = into[i].mutable_data<T>();
            auto src = grads[i].data<T>();
            const T w = static_cast<T>(weight);
            for (std::size_t k = 0; k < dst.size(); ++k)
                dst[k] += w * src[k];
        });
    }
}

} // namespace hvt
