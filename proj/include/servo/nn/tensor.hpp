#pragma once

// Dense-matrix reverse-mode autodiff: just the ops the servo controller needs.
// Values are double precision; a backward pass walks the recorded graph in
// reverse topological order.

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

namespace servo::nn {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // allocated lazily at backward time
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;  // pushes grad into parents

    int rows() const { return static_cast<int>(value.rows()); }
    int cols() const { return static_cast<int>(value.cols()); }
    void ensure_grad() {
        if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    }
};

TensorPtr make_tensor(Eigen::MatrixXd value, bool requires_grad = false);
TensorPtr make_scalar(double v);

// Reverse-mode sweep from a scalar (or seeded) root.
void backward(const TensorPtr& root);

// --- elementwise / scalar ---
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr cmul(const TensorPtr& a, const TensorPtr& b);  // Hadamard
TensorPtr cdiv(const TensorPtr& a, const TensorPtr& b);  // elementwise a/b
TensorPtr scale(const TensorPtr& a, double s);
TensorPtr add_scalar(const TensorPtr& a, double s);
TensorPtr tanh_t(const TensorPtr& a);
TensorPtr sigmoid_t(const TensorPtr& a);
TensorPtr square(const TensorPtr& a);
TensorPtr sqrt_t(const TensorPtr& a);  // d/dx sqrt(x+eps) variant, eps fixed inside

// --- linear algebra ---
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose_t(const TensorPtr& a);
// x (n x c) * W (c x k) + broadcast row bias b (1 x k)
TensorPtr affine(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// --- shape ---
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr slice_cols(const TensorPtr& a, int c0, int c1);
TensorPtr slice_rows(const TensorPtr& a, int r0, int r1);

// --- reductions ---
TensorPtr mean_rows(const TensorPtr& a);   // n x c -> 1 x c
TensorPtr sum_all(const TensorPtr& a);     // -> 1 x 1
TensorPtr mean_all(const TensorPtr& a);    // -> 1 x 1
TensorPtr rowwise_dot(const TensorPtr& a, const TensorPtr& b);  // n x c -> n x 1
TensorPtr softmax_rows(const TensorPtr& a);

// --- graph gather/scatter ---
TensorPtr gather_rows(const TensorPtr& a, std::vector<int> idx);
// edge rows (E x c) summed into n rows by destination
TensorPtr scatter_add_rows(const TensorPtr& edges, std::vector<int> dst, int n);
// fused per-edge dot products: out_e = a[dst_e] . b[src_e]  (E x 1)
TensorPtr edge_dot(const TensorPtr& a, const TensorPtr& b, std::vector<int> src,
                   std::vector<int> dst);
// fused weighted aggregation: out_i = sum_{e: dst_e=i} w_e * v[src_e]  (n x c)
TensorPtr edge_weighted_sum(const TensorPtr& v, const TensorPtr& w, std::vector<int> src,
                            std::vector<int> dst, int n);
// same with constant edge features: out_i = sum_{e: dst_e=i} w_e * rel_e
TensorPtr edge_weighted_const_sum(Eigen::MatrixXd rel, const TensorPtr& w, std::vector<int> dst,
                                  int n);
// softmax of edge logits (E x 1) within destination segments
TensorPtr segment_softmax(const TensorPtr& logits, std::vector<int> seg, int n_seg);
// per-segment columnwise max with argmax backward routing; empty segments -> 0
TensorPtr segment_max_rows(const TensorPtr& edges, std::vector<int> seg, int n_seg);
// rows of a (n x c) scaled by column vector w (n x 1)
TensorPtr mul_colvec(const TensorPtr& a, const TensorPtr& w);

// --- gradient checking ---
// Central finite differences of fn's scalar output against reverse-mode
// gradients at every component of every leaf. Returns the max relative error.
double grad_check(const std::function<TensorPtr()>& fn, const std::vector<TensorPtr>& leaves,
                  double eps = 1e-5);

}  // namespace servo::nn
