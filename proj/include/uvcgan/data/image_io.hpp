#pragma once

// 8-bit RGB image I/O (PNG and binary PPM) and the exact conversions between
// interleaved bytes and (channels, height, width) tensors in [0, 1].

#include <cmath>
#include <string>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

struct Image8 {
    Index width = 0, height = 0;
    std::vector<unsigned char> pixels;  // interleaved RGB, row-major

    std::size_t expected_bytes() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3u;
    }
};

// Format chosen by extension: .png, .ppm (case-insensitive).
Image8 load_image(const std::string& path);
void save_image(const std::string& path, const Image8& img);

template <typename S>
Tensor<S> image_to_tensor(const Image8& img) {
    if (img.width <= 0 || img.height <= 0 || img.pixels.size() != img.expected_bytes())
        throw ValueError("image_to_tensor: malformed image");
    Tensor<S> t(Shape{3, img.height, img.width});
    const Index hw = img.height * img.width;
    for (Index p = 0; p < hw; ++p)
        for (Index c = 0; c < 3; ++c)
            t[c * hw + p] = S(img.pixels[std::size_t(3 * p + c)]) / S(255);
    return t;
}

template <typename S>
Image8 tensor_to_image(const Tensor<S>& t) {
    if (t.rank() != 3 || t.shape()[0] != 3)
        throw ShapeError("tensor_to_image: expected (3, h, w)");
    Image8 img;
    img.height = t.shape()[1];
    img.width = t.shape()[2];
    img.pixels.resize(img.expected_bytes());
    const Index hw = img.height * img.width;
    for (Index p = 0; p < hw; ++p)
        for (Index c = 0; c < 3; ++c) {
            double v = std::round(double(t[c * hw + p]) * 255.0);
            v = v < 0 ? 0 : (v > 255 ? 255 : v);
            img.pixels[std::size_t(3 * p + c)] = static_cast<unsigned char>(v);
        }
    return img;
}

}  // namespace uvcgan
