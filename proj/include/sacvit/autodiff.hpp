#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sacvit/tensor.hpp"

namespace sacvit::ad {

// Reverse-mode tape over Mat<T>. Nodes are created in topological order by
// the op_* builders below; backward() replays them in reverse. With
// grad_enabled == false the tape stores values only, so the same forward
// code serves inference.
template <typename T>
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    // Constant input: never receives a gradient.
    int leaf(Mat<T> v) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, false});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Trainable leaf.
    int param(Mat<T> v) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, grad_enabled_});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // bwd receives the accumulated gradient of this node's output.
    using Backward = std::function<void(Tape&, const Mat<T>&)>;

    int push(Mat<T> v, bool needs_grad, Backward bwd) {
        if (!grad_enabled_ || !needs_grad) {
            return leaf(std::move(v));
        }
        nodes_.push_back(Node{std::move(v), {}, std::move(bwd), true});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Mat<T>& val(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    bool grad_enabled() const { return grad_enabled_; }

    // Gradient buffer, allocated as zeros on first touch.
    Mat<T>& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.rows == 0) {
            n.grad = Mat<T>(n.value.rows, n.value.cols);
        }
        return n.grad;
    }

    void accum_grad(int id, const Mat<T>& g) {
        if (!nodes_[id].needs_grad) return;
        Mat<T>& dst = grad(id);
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
    }

    void accum_grad_scaled(int id, const Mat<T>& g, T s) {
        if (!nodes_[id].needs_grad) return;
        Mat<T>& dst = grad(id);
        for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += s * g.data[i];
    }

    // Seeds d(loss)=1 and runs every recorded closure in reverse order.
    void backward(int loss_id) {
        if (!grad_enabled_) {
            throw_internal("backward on a no-grad tape");
        }
        const Mat<T>& lv = nodes_[loss_id].value;
        if (lv.rows != 1 || lv.cols != 1) {
            throw_shape("backward: loss must be 1x1");
        }
        grad(loss_id).data[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.bwd && n.grad.rows != 0) {
                n.bwd(*this, n.grad);
            }
        }
    }

    void reset() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat<T> value;
        Mat<T> grad;
        Backward bwd;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

template <typename T>
int op_matmul(Tape<T>& t, int a, int b, MacCounter* counter = nullptr,
              const std::string& label = "matmul");

// c = a * b^T
template <typename T>
int op_matmul_nt(Tape<T>& t, int a, int b, MacCounter* counter = nullptr,
                 const std::string& label = "matmul");

template <typename T>
int op_add(Tape<T>& t, int a, int b);

template <typename T>
int op_sub(Tape<T>& t, int a, int b);

// Elementwise product.
template <typename T>
int op_mul(Tape<T>& t, int a, int b);

// Adds a 1 x cols row vector to every row.
template <typename T>
int op_add_row(Tape<T>& t, int a, int row);

template <typename T>
int op_scale(Tape<T>& t, int a, T s);

template <typename T>
int op_softmax_rows(Tape<T>& t, int a);

template <typename T>
int op_layer_norm(Tape<T>& t, int x, int gain, int bias, T eps);

template <typename T>
int op_gelu(Tape<T>& t, int x);

// out[k] = x[rows[k]]
template <typename T>
int op_gather_rows(Tape<T>& t, int x, std::vector<int> rows);

// Vertical concatenation of parts in order.
template <typename T>
int op_concat_rows(Tape<T>& t, const std::vector<int>& parts);

// (M x block*C) -> (block*M x C); output row block*m + k is columns
// [k*C, (k+1)*C) of input row m.
template <typename T>
int op_rows_to_blocks(Tape<T>& t, int x, int block);

// log(max(x, eps)) elementwise; gradient is zero on the clamped region.
template <typename T>
int op_log_clamped(Tape<T>& t, int x, T eps);

// sum of all entries -> 1x1
template <typename T>
int op_sum_all(Tape<T>& t, int a);

// single entry -> 1x1
template <typename T>
int op_pick(Tape<T>& t, int a, int r, int c);

// Multi-head scaled dot-product attention over full q/k/v of shape n x D.
// Head slices are contiguous column ranges. If head_rows is non-null it
// receives, per head, the softmaxed attention matrix's row 0 (detached).
template <typename T>
int op_attention_heads(Tape<T>& t, int q, int k, int v, int heads, T logit_scale,
                       MacCounter* counter, const std::string& label_prefix,
                       std::vector<Mat<T>>* head_attn_row0 = nullptr);

// Pools the patch-position part of a (4N+1) x D positional grid down to the
// low-resolution (N+1) x D grid: row 0 is kept, every low-res position is the
// mean of its 2x2 block of high-res positions. gh/gw are the low-res grid dims.
template <typename T>
int op_pool_pos_grid(Tape<T>& t, int pos, int gh, int gw);

} // namespace sacvit::ad
