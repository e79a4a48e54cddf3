#include "sacvit/tensor.hpp"

#include <cmath>

namespace sacvit {

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b, MacCounter* counter, const std::string& label) {
    if (a.cols != b.rows) {
        throw_shape("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                    " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    Mat<T> c(a.rows, b.cols);
    // ikj order keeps the b row contiguous in the inner loop.
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    if (counter) {
        counter->add(label, static_cast<std::uint64_t>(a.rows) * a.cols * b.cols);
    }
    return c;
}

template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b, MacCounter* counter, const std::string& label) {
    if (a.cols != b.cols) {
        throw_shape("matmul_nt: inner dims differ");
    }
    Mat<T> c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const T* brow = b.row(j);
            T acc = T(0);
            for (int k = 0; k < a.cols; ++k) {
                acc += arow[k] * brow[k];
            }
            crow[j] = acc;
        }
    }
    if (counter) {
        counter->add(label, static_cast<std::uint64_t>(a.rows) * a.cols * b.rows);
    }
    return c;
}

template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
    if (a.rows != b.rows) {
        throw_shape("matmul_tn: inner dims differ");
    }
    Mat<T> c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const T* arow = a.row(k);
        const T* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T aki = arow[i];
            if (aki == T(0)) continue;
            T* crow = c.row(i);
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aki * brow[j];
            }
        }
    }
    return c;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& a) {
    Mat<T> out(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* in = a.row(i);
        T* o = out.row(i);
        T mx = in[0];
        for (int j = 1; j < a.cols; ++j) mx = in[j] > mx ? in[j] : mx;
        T sum = T(0);
        for (int j = 0; j < a.cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < a.cols; ++j) o[j] *= inv;
    }
    return out;
}

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, T eps) {
    if (gain.cols != x.cols || bias.cols != x.cols || gain.rows != 1 || bias.rows != 1) {
        throw_shape("layer_norm: gain/bias must be 1 x cols");
    }
    Mat<T> out(x.rows, x.cols);
    const T* g = gain.row(0);
    const T* b = bias.row(0);
    for (int i = 0; i < x.rows; ++i) {
        const T* in = x.row(i);
        T* o = out.row(i);
        T mean = T(0);
        for (int j = 0; j < x.cols; ++j) mean += in[j];
        mean /= T(x.cols);
        T var = T(0);
        for (int j = 0; j < x.cols; ++j) {
            const T d = in[j] - mean;
            var += d * d;
        }
        var /= T(x.cols);
        const T inv_std = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j) {
            o[j] = (in[j] - mean) * inv_std * g[j] + b[j];
        }
    }
    return out;
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
    // tanh approximation constants: sqrt(2/pi) and the cubic coefficient
    // 0.044715 from the published approximation.
    const T k = T(0.7978845608028654);
    const T c = T(0.044715);
    Mat<T> out(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) {
        const T v = x.data[i];
        out.data[i] = T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v)));
    }
    return out;
}

template <typename T>
ImageT<T> avg_pool_2x2(const ImageT<T>& img) {
    if (img.height % 2 != 0 || img.width % 2 != 0) {
        throw_shape("avg_pool_2x2: spatial dims must be even");
    }
    ImageT<T> out(img.channels, img.height / 2, img.width / 2);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                const T s = img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                            img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1);
                out.at(c, y, x) = s * T(0.25);
            }
        }
    }
    return out;
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
    Mat<T> out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

template <typename T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) {
        throw_shape("add: shape mismatch");
    }
    Mat<T> out(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <typename T>
Mat<T> add_row_broadcast(const Mat<T>& a, const Mat<T>& row) {
    if (row.rows != 1 || row.cols != a.cols) {
        throw_shape("add_row_broadcast: row must be 1 x cols");
    }
    Mat<T> out(a.rows, a.cols);
    const T* r = row.row(0);
    for (int i = 0; i < a.rows; ++i) {
        const T* in = a.row(i);
        T* o = out.row(i);
        for (int j = 0; j < a.cols; ++j) o[j] = in[j] + r[j];
    }
    return out;
}

template <typename T>
Mat<T> scale(const Mat<T>& a, T s) {
    Mat<T> out(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * s;
    return out;
}

template <typename T>
bool all_finite(const Mat<T>& a) {
    for (T v : a.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template struct Mat<float>;
template struct Mat<double>;

#define SACVIT_INSTANTIATE(T)                                                              \
    template Mat<T> matmul(const Mat<T>&, const Mat<T>&, MacCounter*, const std::string&); \
    template Mat<T> matmul_nt(const Mat<T>&, const Mat<T>&, MacCounter*,                   \
                              const std::string&);                                         \
    template Mat<T> matmul_tn(const Mat<T>&, const Mat<T>&);                               \
    template Mat<T> softmax_rows(const Mat<T>&);                                           \
    template Mat<T> layer_norm(const Mat<T>&, const Mat<T>&, const Mat<T>&, T);            \
    template Mat<T> gelu(const Mat<T>&);                                                   \
    template ImageT<T> avg_pool_2x2(const ImageT<T>&);                                     \
    template Mat<T> transpose(const Mat<T>&);                                              \
    template Mat<T> add(const Mat<T>&, const Mat<T>&);                                     \
    template Mat<T> add_row_broadcast(const Mat<T>&, const Mat<T>&);                       \
    template Mat<T> scale(const Mat<T>&, T);                                               \
    template bool all_finite(const Mat<T>&);

SACVIT_INSTANTIATE(float)
SACVIT_INSTANTIATE(double)

#undef SACVIT_INSTANTIATE

} // namespace sacvit
