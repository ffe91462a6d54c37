#pragma once

// Stacking single images (c, h, w) into batches (b, c, h, w) and back.

#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

template <typename S>
Tensor<S> stack_batch(const std::vector<Tensor<S>>& images) {
    if (images.empty()) throw ValueError("stack_batch: empty batch");
    const Shape& first = images.front().shape();
    if (first.rank() != 3) throw ShapeError("stack_batch: expected (c, h, w) images");
    for (const Tensor<S>& img : images)
        if (img.shape() != first) throw ShapeError("stack_batch: mismatched image shapes");

    Tensor<S> out(Shape{Index(images.size()), first[0], first[1], first[2]});
    const Index stride = first.numel();
    for (Index b = 0; b < Index(images.size()); ++b)
        for (Index i = 0; i < stride; ++i) out[b * stride + i] = images[std::size_t(b)][i];
    return out;
}

template <typename S>
std::vector<Tensor<S>> unstack_batch(const Tensor<S>& batch) {
    if (batch.rank() != 4) throw ShapeError("unstack_batch: expected (b, c, h, w)");
    const Index b = batch.shape()[0];
    const Shape each{batch.shape()[1], batch.shape()[2], batch.shape()[3]};
    const Index stride = each.numel();
    std::vector<Tensor<S>> out;
    out.reserve(std::size_t(b));
    for (Index i = 0; i < b; ++i) {
        Tensor<S> img(each);
        for (Index j = 0; j < stride; ++j) img[j] = batch[i * stride + j];
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace uvcgan
