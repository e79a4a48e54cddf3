#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sacvit/error.hpp"

namespace sacvit {

// Dense row-major 2-D matrix. float is the default precision across the
// library; double instantiations exist for gradient checking.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Multiply-accumulate counter. One MAC is one reported FLOP; only matmuls
// are counted, so softmax/normalization/activations never touch it.
struct MacCounter {
    std::uint64_t total_macs = 0;
    std::map<std::string, std::uint64_t> per_label;

    void add(const std::string& label, std::uint64_t macs) {
        total_macs += macs;
        per_label[label] += macs;
    }
};

// 3-D image tensor, channel-major: data[c*h*w + y*w + x].
template <typename T>
struct ImageT {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    ImageT() = default;
    ImageT(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}

    T& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    T at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

using Image = ImageT<float>;

// c = a * b. Adds a.rows*a.cols*b.cols MACs to the counter when present.
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b, MacCounter* counter = nullptr,
              const std::string& label = "matmul");

// c = a * b^T, counted the same way (m*k*n).
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b, MacCounter* counter = nullptr,
                 const std::string& label = "matmul");

// c = a^T * b.
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b);

// Row-wise softmax with per-row max subtraction.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& a);

// Per-row normalization to mean 0 / variance 1 (population variance, eps
// inside the square root), followed by the gain/bias affine map.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, T eps);

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <typename T>
Mat<T> gelu(const Mat<T>& x);

// 2x2 mean pooling per channel; requires even height and width.
template <typename T>
ImageT<T> avg_pool_2x2(const ImageT<T>& img);

template <typename T>
Mat<T> transpose(const Mat<T>& a);

template <typename T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b);

// Adds a 1 x cols row vector to every row of a.
template <typename T>
Mat<T> add_row_broadcast(const Mat<T>& a, const Mat<T>& row);

template <typename T>
Mat<T> scale(const Mat<T>& a, T s);

template <typename T>
bool all_finite(const Mat<T>& a);

extern template struct Mat<float>;
extern template struct Mat<double>;

} // namespace sacvit
