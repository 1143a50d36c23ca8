#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

template <typename Scalar>
struct NamedTensor {
    std::string name;
    Tensor<Scalar> tensor;
    bool trainable = true;  // false for buffers such as running statistics
};

/// Ordered, name-unique collection of a network's tensors. Order is registration
/// order and is what checkpoints and optimizers iterate.
template <typename Scalar>
class ParameterTable {
public:
    Tensor<Scalar>& add(std::string name, Tensor<Scalar> tensor, bool trainable = true) {
        if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(tensor), trainable});
        return entries_.back().tensor;
    }

    const Tensor<Scalar>& at(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return entries_[it->second].tensor;
    }
    Tensor<Scalar>& at(const std::string& name) {
        return const_cast<Tensor<Scalar>&>(std::as_const(*this).at(name));
    }
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    const NamedTensor<Scalar>& operator[](std::size_t i) const { return entries_[i]; }
    NamedTensor<Scalar>& operator[](std::size_t i) { return entries_[i]; }

    Index trainable_count() const {
        Index total = 0;
        for (const auto& e : entries_) total += e.trainable ? e.tensor.size() : 0;
        return total;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<NamedTensor<Scalar>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gaussian-initialized trainable leaf.
template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, Rng& rng) {
    typename Tensor<Scalar>::Vector v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(stddev * rng.normal());
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

/// Converts every tensor of a table to another scalar type, preserving names and flags.
template <typename To, typename From>
ParameterTable<To> cast_table(const ParameterTable<From>& table) {
    ParameterTable<To> out;
    for (const auto& e : table) {
        out.add(e.name, Tensor<To>(e.tensor.shape(), e.tensor.values().template cast<To>(), e.tensor.requires_grad()),
                e.trainable);
    }
    return out;
}

}  // namespace glyphforge
