#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "vqseq/common.hpp"

namespace vqseq {

// Dense row-major tensor. 32-bit floats everywhere in the pipeline; the
// double instantiation exists for finite-difference gradient checks.
template <typename T>
struct TensorT {
    std::vector<size_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t numel() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace vqseq
