#include "sacvit/autodiff.hpp"

#include <cmath>

namespace sacvit::ad {

namespace {

template <typename T>
Mat<T> col_slice(const Mat<T>& a, int c0, int cols) {
    Mat<T> out(a.rows, cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* in = a.row(i) + c0;
        T* o = out.row(i);
        for (int j = 0; j < cols; ++j) o[j] = in[j];
    }
    return out;
}

template <typename T>
void col_slice_accum(Mat<T>& dst, const Mat<T>& src, int c0) {
    for (int i = 0; i < src.rows; ++i) {
        T* o = dst.row(i) + c0;
        const T* in = src.row(i);
        for (int j = 0; j < src.cols; ++j) o[j] += in[j];
    }
}

// Backward of row-softmax given the softmax output p and upstream dy:
// dx = p * (dy - rowsum(dy * p)).
template <typename T>
Mat<T> softmax_backward(const Mat<T>& p, const Mat<T>& dy) {
    Mat<T> dx(p.rows, p.cols);
    for (int i = 0; i < p.rows; ++i) {
        const T* pr = p.row(i);
        const T* dr = dy.row(i);
        T dot = T(0);
        for (int j = 0; j < p.cols; ++j) dot += pr[j] * dr[j];
        T* o = dx.row(i);
        for (int j = 0; j < p.cols; ++j) o[j] = pr[j] * (dr[j] - dot);
    }
    return dx;
}

} // namespace

template <typename T>
int op_matmul(Tape<T>& t, int a, int b, MacCounter* counter, const std::string& label) {
    Mat<T> v = matmul(t.val(a), t.val(b), counter, label);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(v), ng, [a, b](Tape<T>& tp, const Mat<T>& dc) {
        if (tp.needs_grad(a)) tp.accum_grad(a, matmul_nt(dc, tp.val(b)));
        if (tp.needs_grad(b)) tp.accum_grad(b, matmul_tn(tp.val(a), dc));
    });
}

template <typename T>
int op_matmul_nt(Tape<T>& t, int a, int b, MacCounter* counter, const std::string& label) {
    Mat<T> v = matmul_nt(t.val(a), t.val(b), counter, label);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(v), ng, [a, b](Tape<T>& tp, const Mat<T>& dc) {
        if (tp.needs_grad(a)) tp.accum_grad(a, matmul(dc, tp.val(b)));
        if (tp.needs_grad(b)) tp.accum_grad(b, matmul_tn(dc, tp.val(a)));
    });
}

template <typename T>
int op_add(Tape<T>& t, int a, int b) {
    Mat<T> v = add(t.val(a), t.val(b));
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(v), ng, [a, b](Tape<T>& tp, const Mat<T>& dc) {
        tp.accum_grad(a, dc);
        tp.accum_grad(b, dc);
    });
}

template <typename T>
int op_sub(Tape<T>& t, int a, int b) {
    const Mat<T>& va = t.val(a);
    const Mat<T>& vb = t.val(b);
    if (!va.same_shape(vb)) throw_shape("op_sub: shape mismatch");
    Mat<T> v(va.rows, va.cols);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = va.data[i] - vb.data[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(v), ng, [a, b](Tape<T>& tp, const Mat<T>& dc) {
        tp.accum_grad(a, dc);
        tp.accum_grad_scaled(b, dc, T(-1));
    });
}

template <typename T>
int op_mul(Tape<T>& t, int a, int b) {
    const Mat<T>& va = t.val(a);
    const Mat<T>& vb = t.val(b);
    if (!va.same_shape(vb)) throw_shape("op_mul: shape mismatch");
    Mat<T> v(va.rows, va.cols);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = va.data[i] * vb.data[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return t.push(std::move(v), ng, [a, b](Tape<T>& tp, const Mat<T>& dc) {
        if (tp.needs_grad(a)) {
            const Mat<T>& vb2 = tp.val(b);
            Mat<T> g(dc.rows, dc.cols);
            for (size_t i = 0; i < g.size(); ++i) g.data[i] = dc.data[i] * vb2.data[i];
            tp.accum_grad(a, g);
        }
        if (tp.needs_grad(b)) {
            const Mat<T>& va2 = tp.val(a);
            Mat<T> g(dc.rows, dc.cols);
            for (size_t i = 0; i < g.size(); ++i) g.data[i] = dc.data[i] * va2.data[i];
            tp.accum_grad(b, g);
        }
    });
}

template <typename T>
int op_add_row(Tape<T>& t, int a, int row) {
    Mat<T> v = add_row_broadcast(t.val(a), t.val(row));
    const bool ng = t.needs_grad(a) || t.needs_grad(row);
    return t.push(std::move(v), ng, [a, row](Tape<T>& tp, const Mat<T>& dc) {
        tp.accum_grad(a, dc);
        if (tp.needs_grad(row)) {
            Mat<T> g(1, dc.cols);
            for (int i = 0; i < dc.rows; ++i) {
                const T* r = dc.row(i);
                for (int j = 0; j < dc.cols; ++j) g.data[j] += r[j];
            }
            tp.accum_grad(row, g);
        }
    });
}

template <typename T>
int op_scale(Tape<T>& t, int a, T s) {
    Mat<T> v = scale(t.val(a), s);
    return t.push(std::move(v), t.needs_grad(a), [a, s](Tape<T>& tp, const Mat<T>& dc) {
        tp.accum_grad_scaled(a, dc, s);
    });
}

template <typename T>
int op_softmax_rows(Tape<T>& t, int a) {
    Mat<T> p = softmax_rows(t.val(a));
    Mat<T> p_saved = p;
    return t.push(std::move(p), t.needs_grad(a),
                  [a, p_saved = std::move(p_saved)](Tape<T>& tp, const Mat<T>& dc) {
                      tp.accum_grad(a, softmax_backward(p_saved, dc));
                  });
}

template <typename T>
int op_layer_norm(Tape<T>& t, int x, int gain, int bias, T eps) {
    const Mat<T>& vx = t.val(x);
    const Mat<T>& vg = t.val(gain);
    const Mat<T>& vb = t.val(bias);
    if (vg.cols != vx.cols || vb.cols != vx.cols) throw_shape("op_layer_norm: gain/bias");

    Mat<T> xhat(vx.rows, vx.cols);
    std::vector<T> inv_std(vx.rows);
    Mat<T> out(vx.rows, vx.cols);
    for (int i = 0; i < vx.rows; ++i) {
        const T* in = vx.row(i);
        T mean = T(0);
        for (int j = 0; j < vx.cols; ++j) mean += in[j];
        mean /= T(vx.cols);
        T var = T(0);
        for (int j = 0; j < vx.cols; ++j) {
            const T d = in[j] - mean;
            var += d * d;
        }
        var /= T(vx.cols);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[i] = is;
        T* xh = xhat.row(i);
        T* o = out.row(i);
        for (int j = 0; j < vx.cols; ++j) {
            xh[j] = (in[j] - mean) * is;
            o[j] = xh[j] * vg.data[j] + vb.data[j];
        }
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
    return t.push(std::move(out), ng,
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape<T>& tp, const Mat<T>& dy) {
                      const Mat<T>& vg2 = tp.val(gain);
                      const int rows = dy.rows, cols = dy.cols;
                      if (tp.needs_grad(gain)) {
                          Mat<T> dgain(1, cols);
                          for (int i = 0; i < rows; ++i)
                              for (int j = 0; j < cols; ++j)
                                  dgain.data[j] += dy.at(i, j) * xhat.at(i, j);
                          tp.accum_grad(gain, dgain);
                      }
                      if (tp.needs_grad(bias)) {
                          Mat<T> dbias(1, cols);
                          for (int i = 0; i < rows; ++i)
                              for (int j = 0; j < cols; ++j) dbias.data[j] += dy.at(i, j);
                          tp.accum_grad(bias, dbias);
                      }
                      if (tp.needs_grad(x)) {
                          Mat<T> dx(rows, cols);
                          for (int i = 0; i < rows; ++i) {
                              T m1 = T(0), m2 = T(0);
                              const T* dr = dy.row(i);
                              const T* xh = xhat.row(i);
                              std::vector<T> dxhat(cols);
                              for (int j = 0; j < cols; ++j) {
                                  dxhat[j] = dr[j] * vg2.data[j];
                                  m1 += dxhat[j];
                                  m2 += dxhat[j] * xh[j];
                              }
                              m1 /= T(cols);
                              m2 /= T(cols);
                              T* o = dx.row(i);
                              for (int j = 0; j < cols; ++j) {
                                  o[j] = inv_std[i] * (dxhat[j] - m1 - xh[j] * m2);
                              }
                          }
                          tp.accum_grad(x, dx);
                      }
                  });
}

template <typename T>
int op_gelu(Tape<T>& t, int x) {
    Mat<T> v = gelu(t.val(x));
    return t.push(std::move(v), t.needs_grad(x), [x](Tape<T>& tp, const Mat<T>& dc) {
        const T k = T(0.7978845608028654);
        const T c = T(0.044715);
        const Mat<T>& vx = tp.val(x);
        Mat<T> g(dc.rows, dc.cols);
        for (size_t i = 0; i < g.size(); ++i) {
            const T xv = vx.data[i];
            const T u = k * (xv + c * xv * xv * xv);
            const T th = std::tanh(u);
            const T sech2 = T(1) - th * th;
            const T grad = T(0.5) * (T(1) + th) +
                           T(0.5) * xv * sech2 * k * (T(1) + T(3) * c * xv * xv);
            g.data[i] = dc.data[i] * grad;
        }
        tp.accum_grad(x, g);
    });
}

template <typename T>
int op_gather_rows(Tape<T>& t, int x, std::vector<int> rows) {
    const Mat<T>& vx = t.val(x);
    Mat<T> out(static_cast<int>(rows.size()), vx.cols);
    for (size_t k = 0; k < rows.size(); ++k) {
        const int r = rows[k];
        if (r < 0 || r >= vx.rows) throw_invalid("op_gather_rows: index out of range");
        const T* in = vx.row(r);
        T* o = out.row(static_cast<int>(k));
        for (int j = 0; j < vx.cols; ++j) o[j] = in[j];
    }
    return t.push(std::move(out), t.needs_grad(x),
                  [x, rows = std::move(rows)](Tape<T>& tp, const Mat<T>& dc) {
                      Mat<T>& gx = tp.grad(x);
                      for (size_t k = 0; k < rows.size(); ++k) {
                          T* o = gx.row(rows[k]);
                          const T* in = dc.row(static_cast<int>(k));
                          for (int j = 0; j < dc.cols; ++j) o[j] += in[j];
                      }
                  });
}

template <typename T>
int op_concat_rows(Tape<T>& t, const std::vector<int>& parts) {
    if (parts.empty()) throw_invalid("op_concat_rows: empty");
    const int cols = t.val(parts[0]).cols;
    int rows = 0;
    bool ng = false;
    for (int p : parts) {
        if (t.val(p).cols != cols) throw_shape("op_concat_rows: column mismatch");
        rows += t.val(p).rows;
        ng = ng || t.needs_grad(p);
    }
    Mat<T> out(rows, cols);
    int at = 0;
    for (int p : parts) {
        const Mat<T>& vp = t.val(p);
        for (int i = 0; i < vp.rows; ++i) {
            const T* in = vp.row(i);
            T* o = out.row(at++);
            for (int j = 0; j < cols; ++j) o[j] = in[j];
        }
    }
    std::vector<int> parts_copy = parts;
    return t.push(std::move(out), ng,
                  [parts = std::move(parts_copy)](Tape<T>& tp, const Mat<T>& dc) {
                      int at2 = 0;
                      for (int p : parts) {
                          const int pr = tp.val(p).rows;
                          if (tp.needs_grad(p)) {
                              Mat<T>& gp = tp.grad(p);
                              for (int i = 0; i < pr; ++i) {
                                  const T* in = dc.row(at2 + i);
                                  T* o = gp.row(i);
                                  for (int j = 0; j < dc.cols; ++j) o[j] += in[j];
                              }
                          }
                          at2 += pr;
                      }
                  });
}

template <typename T>
int op_rows_to_blocks(Tape<T>& t, int x, int block) {
    const Mat<T>& vx = t.val(x);
    if (vx.cols % block != 0) throw_shape("op_rows_to_blocks: cols not divisible");
    const int out_cols = vx.cols / block;
    Mat<T> out(vx.rows * block, out_cols);
    for (int m = 0; m < vx.rows; ++m) {
        const T* in = vx.row(m);
        for (int k = 0; k < block; ++k) {
            T* o = out.row(m * block + k);
            for (int j = 0; j < out_cols; ++j) o[j] = in[k * out_cols + j];
        }
    }
    return t.push(std::move(out), t.needs_grad(x),
                  [x, block, out_cols](Tape<T>& tp, const Mat<T>& dc) {
                      Mat<T>& gx = tp.grad(x);
                      for (int m = 0; m < gx.rows; ++m) {
                          T* o = gx.row(m);
                          for (int k = 0; k < block; ++k) {
                              const T* in = dc.row(m * block + k);
                              for (int j = 0; j < out_cols; ++j) o[k * out_cols + j] += in[j];
                          }
                      }
                  });
}

template <typename T>
int op_log_clamped(Tape<T>& t, int x, T eps) {
    const Mat<T>& vx = t.val(x);
    Mat<T> out(vx.rows, vx.cols);
    for (size_t i = 0; i < out.size(); ++i) {
        out.data[i] = std::log(vx.data[i] > eps ? vx.data[i] : eps);
    }
    return t.push(std::move(out), t.needs_grad(x), [x, eps](Tape<T>& tp, const Mat<T>& dc) {
        const Mat<T>& vx2 = tp.val(x);
        Mat<T> g(dc.rows, dc.cols);
        for (size_t i = 0; i < g.size(); ++i) {
            g.data[i] = vx2.data[i] > eps ? dc.data[i] / vx2.data[i] : T(0);
        }
        tp.accum_grad(x, g);
    });
}

template <typename T>
int op_sum_all(Tape<T>& t, int a) {
    const Mat<T>& va = t.val(a);
    T s = T(0);
    for (T v : va.data) s += v;
    Mat<T> out(1, 1);
    out.data[0] = s;
    return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& tp, const Mat<T>& dc) {
        Mat<T>& ga = tp.grad(a);
        const T d = dc.data[0];
        for (size_t i = 0; i < ga.size(); ++i) ga.data[i] += d;
    });
}

template <typename T>
int op_pick(Tape<T>& t, int a, int r, int c) {
    const Mat<T>& va = t.val(a);
    if (r < 0 || r >= va.rows || c < 0 || c >= va.cols) throw_invalid("op_pick: out of range");
    Mat<T> out(1, 1);
    out.data[0] = va.at(r, c);
    return t.push(std::move(out), t.needs_grad(a), [a, r, c](Tape<T>& tp, const Mat<T>& dc) {
        tp.grad(a).at(r, c) += dc.data[0];
    });
}

template <typename T>
int op_attention_heads(Tape<T>& t, int q, int k, int v, int heads, T logit_scale,
                       MacCounter* counter, const std::string& label_prefix,
                       std::vector<Mat<T>>* head_attn_row0) {
    const Mat<T>& vq = t.val(q);
    const Mat<T>& vk = t.val(k);
    const Mat<T>& vv = t.val(v);
    if (!vq.same_shape(vk) || !vq.same_shape(vv)) throw_shape("attention: q/k/v shapes");
    if (vq.cols % heads != 0) throw_shape("attention: cols not divisible by heads");
    const int n = vq.rows;
    const int dh = vq.cols / heads;

    Mat<T> out(n, vq.cols);
    std::vector<Mat<T>> probs(heads); // per-head softmax matrices, kept for backward
    for (int h = 0; h < heads; ++h) {
        Mat<T> qh = col_slice(vq, h * dh, dh);
        Mat<T> kh = col_slice(vk, h * dh, dh);
        Mat<T> vh = col_slice(vv, h * dh, dh);
        Mat<T> s = matmul_nt(qh, kh, counter, label_prefix + "scores");
        for (T& e : s.data) e *= logit_scale;
        probs[h] = softmax_rows(s);
        if (head_attn_row0) {
            Mat<T> r0(1, n);
            for (int j = 0; j < n; ++j) r0.data[j] = probs[h].at(0, j);
            head_attn_row0->push_back(std::move(r0));
        }
        Mat<T> oh = matmul(probs[h], vh, counter, label_prefix + "values");
        col_slice_accum(out, oh, h * dh); // out starts zeroed, so this writes
    }

    const bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
    return t.push(std::move(out), ng,
                  [q, k, v, heads, dh, logit_scale, probs = std::move(probs)](
                      Tape<T>& tp, const Mat<T>& dout) {
                      const Mat<T>& vq2 = tp.val(q);
                      const Mat<T>& vk2 = tp.val(k);
                      const Mat<T>& vv2 = tp.val(v);
                      Mat<T> dq(vq2.rows, vq2.cols), dk(vq2.rows, vq2.cols),
                          dv(vq2.rows, vq2.cols);
                      for (int h = 0; h < heads; ++h) {
                          Mat<T> qh = col_slice(vq2, h * dh, dh);
                          Mat<T> kh = col_slice(vk2, h * dh, dh);
                          Mat<T> vh = col_slice(vv2, h * dh, dh);
                          Mat<T> doh = col_slice(dout, h * dh, dh);
                          const Mat<T>& p = probs[h];
                          Mat<T> dp = matmul_nt(doh, vh);
                          Mat<T> ds = softmax_backward(p, dp);
                          for (T& e : ds.data) e *= logit_scale;
                          col_slice_accum(dq, matmul(ds, kh), h * dh);
                          col_slice_accum(dk, matmul_tn(ds, qh), h * dh);
                          col_slice_accum(dv, matmul_tn(p, doh), h * dh);
                      }
                      tp.accum_grad(q, dq);
                      tp.accum_grad(k, dk);
                      tp.accum_grad(v, dv);
                  });
}

template <typename T>
int op_pool_pos_grid(Tape<T>& t, int pos, int gh, int gw) {
    const Mat<T>& vp = t.val(pos);
    const int n_low = gh * gw;
    if (vp.rows != 4 * n_low + 1) throw_shape("op_pool_pos_grid: grid size mismatch");
    const int hw = 2 * gw; // high-res grid width
    Mat<T> out(n_low + 1, vp.cols);
    for (int j = 0; j < vp.cols; ++j) out.at(0, j) = vp.at(0, j);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            const int lo = r * gw + c;
            const int h0 = 2 * r * hw + 2 * c;
            for (int j = 0; j < vp.cols; ++j) {
                const T s = vp.at(1 + h0, j) + vp.at(1 + h0 + 1, j) +
                            vp.at(1 + h0 + hw, j) + vp.at(1 + h0 + hw + 1, j);
                out.at(1 + lo, j) = s * T(0.25);
            }
        }
    }
    return t.push(std::move(out), t.needs_grad(pos),
                  [pos, gh, gw, hw](Tape<T>& tp, const Mat<T>& dc) {
                      Mat<T>& gp = tp.grad(pos);
                      for (int j = 0; j < dc.cols; ++j) gp.at(0, j) += dc.at(0, j);
                      for (int r = 0; r < gh; ++r) {
                          for (int c = 0; c < gw; ++c) {
                              const int lo = r * gw + c;
                              const int h0 = 2 * r * hw + 2 * c;
                              for (int j = 0; j < dc.cols; ++j) {
                                  const T g = dc.at(1 + lo, j) * T(0.25);
                                  gp.at(1 + h0, j) += g;
                                  gp.at(1 + h0 + 1, j) += g;
                                  gp.at(1 + h0 + hw, j) += g;
                                  gp.at(1 + h0 + hw + 1, j) += g;
                              }
                          }
                      }
                  });
}

#define SACVIT_AD_INSTANTIATE(T)                                                          \
    template int op_matmul(Tape<T>&, int, int, MacCounter*, const std::string&);          \
    template int op_matmul_nt(Tape<T>&, int, int, MacCounter*, const std::string&);       \
    template int op_add(Tape<T>&, int, int);                                              \
    template int op_sub(Tape<T>&, int, int);                                              \
    template int op_mul(Tape<T>&, int, int);                                              \
    template int op_add_row(Tape<T>&, int, int);                                          \
    template int op_scale(Tape<T>&, int, T);                                              \
    template int op_softmax_rows(Tape<T>&, int);                                          \
    template int op_layer_norm(Tape<T>&, int, int, int, T);                               \
    template int op_gelu(Tape<T>&, int);                                                  \
    template int op_gather_rows(Tape<T>&, int, std::vector<int>);                         \
    template int op_concat_rows(Tape<T>&, const std::vector<int>&);                       \
    template int op_rows_to_blocks(Tape<T>&, int, int);                                   \
    template int op_log_clamped(Tape<T>&, int, T);                                        \
    template int op_sum_all(Tape<T>&, int);                                               \
    template int op_pick(Tape<T>&, int, int, int);                                        \
    template int op_attention_heads(Tape<T>&, int, int, int, int, T, MacCounter*,         \
                                    const std::string&, std::vector<Mat<T>>*);            \
    template int op_pool_pos_grid(Tape<T>&, int, int, int);

SACVIT_AD_INSTANTIATE(float)
SACVIT_AD_INSTANTIATE(double)

#undef SACVIT_AD_INSTANTIATE

} // namespace sacvit::ad
