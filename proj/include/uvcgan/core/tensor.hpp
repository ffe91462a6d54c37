#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "uvcgan/core/error.hpp"

namespace uvcgan {

using Index = Eigen::Index;

// Dense shape of rank 1..4. Images are (batch, channels, height, width),
// token matrices (batch, tokens, features), vectors (n).
class Shape {
public:
    Shape() = default;

    Shape(std::initializer_list<Index> dims) {
        if (dims.size() < 1 || dims.size() > 4)
            throw ShapeError("Shape: rank must be between 1 and 4");
        rank_ = static_cast<int>(dims.size());
        int i = 0;
        for (Index d : dims) d_[i++] = d;
    }

    static Shape of_rank(int rank, const std::array<Index, 4>& dims) {
        Shape s;
        s.rank_ = rank;
        s.d_ = dims;
        return s;
    }

    int rank() const { return rank_; }

    Index operator[](int i) const { return d_[i]; }
    Index& operator[](int i) { return d_[i]; }

    Index numel() const {
        Index n = 1;
        for (int i = 0; i < rank_; ++i) n *= d_[i];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (d_[i] != o.d_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << d_[i];
        os << ')';
        return os.str();
    }

private:
    std::array<Index, 4> d_{1, 1, 1, 1};
    int rank_ = 0;
};

// Dense tensor templated on scalar, flat row-major (C order) storage in an
// Eigen array. Eigen map views expose the data for matrix algebra without
// copies.
template <typename S>
class Tensor {
public:
    using Scalar = S;
    using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(shape), data_(shape.numel()) {}

    static Tensor zeros(Shape shape) {
        Tensor t(shape);
        t.data_.setZero();
        return t;
    }

    static Tensor full(Shape shape, S value) {
        Tensor t(shape);
        t.data_.setConstant(value);
        return t;
    }

    static Tensor scalar(S value) { return full(Shape{1}, value); }

    static Tensor from(Shape shape, const std::vector<S>& values) {
        if (static_cast<Index>(values.size()) != shape.numel())
            throw ShapeError("Tensor::from: element count does not match shape " + shape.str());
        Tensor t(shape);
        for (Index i = 0; i < t.numel(); ++i) t.data_[i] = values[static_cast<size_t>(i)];
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank(); }
    Index dim(int i) const { return shape_[i]; }
    Index numel() const { return data_.size(); }
    bool defined() const { return shape_.rank() > 0; }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](Index i) { return data_[i]; }
    S operator[](Index i) const { return data_[i]; }

    // Rank-4 accessor (b, c, y, x).
    S& at(Index b, Index c, Index y, Index x) {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    S at(Index b, Index c, Index y, Index x) const {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    // Rank-3 accessor (c, y, x).
    S& at(Index c, Index y, Index x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
    S at(Index c, Index y, Index x) const { return data_[(c * shape_[1] + y) * shape_[2] + x]; }

    auto array() { return data_.topRows(data_.size()); }
    const Storage& array() const { return data_; }
    Storage& storage() { return data_; }

    using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixMap =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    // View the flat data as a (rows, cols) row-major matrix.
    MatrixMap matrix(Index rows, Index cols) {
        if (rows * cols != numel())
            throw ShapeError("Tensor::matrix: view does not cover tensor of shape " + shape_.str());
        return MatrixMap(data(), rows, cols);
    }
    ConstMatrixMap matrix(Index rows, Index cols) const {
        if (rows * cols != numel())
            throw ShapeError("Tensor::matrix: view does not cover tensor of shape " + shape_.str());
        return ConstMatrixMap(data(), rows, cols);
    }

    Tensor reshaped(Shape shape) const {
        if (shape.numel() != numel())
            throw ShapeError("Tensor::reshaped: cannot view " + shape_.str() + " as " + shape.str());
        Tensor t = *this;
        t.shape_ = shape;
        return t;
    }

    bool all_finite() const { return data_.isFinite().all(); }

    bool same_bits(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        for (Index i = 0; i < numel(); ++i)
            if (data_[i] != o.data_[i]) return false;
        return true;
    }

private:
    Shape shape_;
    Storage data_;
};

template <typename S>
Tensor<S> zeros_like(const Tensor<S>& t) {
    return Tensor<S>::zeros(t.shape());
}

}  // namespace uvcgan
