#include "servo/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace servo::nn {

TensorPtr make_tensor(Eigen::MatrixXd value, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->value = std::move(value);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_scalar(double v) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    return make_tensor(std::move(m));
}

namespace {

TensorPtr node(Eigen::MatrixXd value, std::vector<TensorPtr> parents,
               std::function<void(Tensor&)> backward_fn) {
    auto t = std::make_shared<Tensor>();
    t->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    t->requires_grad = rg;
    if (rg) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

// Iterative DFS: training unrolls long sequences, recursion would overflow.
void topo_visit(Tensor* root, std::unordered_set<Tensor*>& seen, std::vector<Tensor*>& order) {
    std::vector<std::pair<Tensor*, size_t>> stack;
    if (!seen.count(root)) {
        stack.emplace_back(root, 0);
        seen.insert(root);
    }
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (next < t->parents.size()) {
            Tensor* p = t->parents[next++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }
}

}  // namespace

void backward(const TensorPtr& root) {
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> order;
    topo_visit(root.get(), seen, order);
    root->ensure_grad();
    if (root->value.size() == 1) root->grad(0, 0) = 1.0;
    else root->grad.setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (!t->backward_fn) continue;
        t->ensure_grad();
        for (const auto& p : t->parents) p->ensure_grad();
        t->backward_fn(*t);
    }
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    return node(a->value + b->value, {a, b}, [a, b](Tensor& t) {
        a->grad += t.grad;
        b->grad += t.grad;
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    return node(a->value - b->value, {a, b}, [a, b](Tensor& t) {
        a->grad += t.grad;
        b->grad -= t.grad;
    });
}

TensorPtr cmul(const TensorPtr& a, const TensorPtr& b) {
    return node(a->value.cwiseProduct(b->value), {a, b}, [a, b](Tensor& t) {
        a->grad += t.grad.cwiseProduct(b->value);
        b->grad += t.grad.cwiseProduct(a->value);
    });
}

TensorPtr cdiv(const TensorPtr& a, const TensorPtr& b) {
    return node(a->value.cwiseQuotient(b->value), {a, b}, [a, b](Tensor& t) {
        a->grad += t.grad.cwiseQuotient(b->value);
        b->grad -= t.grad.cwiseProduct(a->value).cwiseQuotient(b->value.cwiseProduct(b->value));
    });
}

TensorPtr scale(const TensorPtr& a, double s) {
    return node(a->value * s, {a}, [a, s](Tensor& t) { a->grad += t.grad * s; });
}

TensorPtr add_scalar(const TensorPtr& a, double s) {
    return node(a->value.array() + s, {a}, [a](Tensor& t) { a->grad += t.grad; });
}

TensorPtr tanh_t(const TensorPtr& a) {
    Eigen::MatrixXd v = a->value.array().tanh();
    return node(v, {a}, [a, v](Tensor& t) {
        a->grad += t.grad.cwiseProduct((1.0 - v.array().square()).matrix());
    });
}

TensorPtr sigmoid_t(const TensorPtr& a) {
    Eigen::MatrixXd v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
    return node(v, {a}, [a, v](Tensor& t) {
        a->grad += t.grad.cwiseProduct((v.array() * (1.0 - v.array())).matrix());
    });
}

TensorPtr square(const TensorPtr& a) {
    return node(a->value.array().square(), {a}, [a](Tensor& t) {
        a->grad += 2.0 * t.grad.cwiseProduct(a->value);
    });
}

TensorPtr sqrt_t(const TensorPtr& a) {
    constexpr double kEps = 1e-12;
    Eigen::MatrixXd v = (a->value.array() + kEps).sqrt();
    return node(v, {a, }, [a, v](Tensor& t) {
        a->grad += t.grad.cwiseQuotient(2.0 * v);
    });
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->cols() != b->rows()) throw std::invalid_argument("matmul: shape mismatch");
    return node(a->value * b->value, {a, b}, [a, b](Tensor& t) {
        a->grad.noalias() += t.grad * b->value.transpose();
        b->grad.noalias() += a->value.transpose() * t.grad;
    });
}

TensorPtr transpose_t(const TensorPtr& a) {
    return node(a->value.transpose(), {a}, [a](Tensor& t) { a->grad += t.grad.transpose(); });
}

TensorPtr affine(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->cols() != w->rows() || w->cols() != b->cols() || b->rows() != 1)
        throw std::invalid_argument("affine: shape mismatch");
    Eigen::MatrixXd v = x->value * w->value;
    v.rowwise() += b->value.row(0);
    return node(std::move(v), {x, w, b}, [x, w, b](Tensor& t) {
        x->grad.noalias() += t.grad * w->value.transpose();
        w->grad.noalias() += x->value.transpose() * t.grad;
        b->grad.row(0) += t.grad.colwise().sum();
    });
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int rows = parts[0]->rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->cols();
    }
    Eigen::MatrixXd v(rows, cols);
    int at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p->cols()) = p->value;
        at += p->cols();
    }
    std::vector<TensorPtr> parents = parts;
    return node(std::move(v), std::move(parents), [parts](Tensor& t) {
        int at = 0;
        for (const auto& p : parts) {
            p->grad += t.grad.middleCols(at, p->cols());
            at += p->cols();
        }
    });
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int cols = parts[0]->cols();
    int rows = 0;
    for (const auto& p : parts) {
        if (p->cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
        rows += p->rows();
    }
    Eigen::MatrixXd v(rows, cols);
    int at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p->rows()) = p->value;
        at += p->rows();
    }
    std::vector<TensorPtr> parents = parts;
    return node(std::move(v), std::move(parents), [parts](Tensor& t) {
        int at = 0;
        for (const auto& p : parts) {
            p->grad += t.grad.middleRows(at, p->rows());
            at += p->rows();
        }
    });
}

TensorPtr slice_cols(const TensorPtr& a, int c0, int c1) {
    return node(a->value.middleCols(c0, c1 - c0), {a}, [a, c0, c1](Tensor& t) {
        a->grad.middleCols(c0, c1 - c0) += t.grad;
    });
}

TensorPtr slice_rows(const TensorPtr& a, int r0, int r1) {
    return node(a->value.middleRows(r0, r1 - r0), {a}, [a, r0, r1](Tensor& t) {
        a->grad.middleRows(r0, r1 - r0) += t.grad;
    });
}

TensorPtr mean_rows(const TensorPtr& a) {
    const double inv = 1.0 / static_cast<double>(a->rows());
    Eigen::MatrixXd v = a->value.colwise().sum() * inv;
    return node(std::move(v), {a}, [a, inv](Tensor& t) {
        a->grad += (Eigen::VectorXd::Ones(a->rows()) * t.grad.row(0)) * inv;
    });
}

TensorPtr sum_all(const TensorPtr& a) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = a->value.sum();
    return node(std::move(v), {a}, [a](Tensor& t) {
        a->grad.array() += t.grad(0, 0);
    });
}

TensorPtr mean_all(const TensorPtr& a) {
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = a->value.sum() * inv;
    return node(std::move(v), {a}, [a, inv](Tensor& t) {
        a->grad.array() += t.grad(0, 0) * inv;
    });
}

TensorPtr rowwise_dot(const TensorPtr& a, const TensorPtr& b) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw std::invalid_argument("rowwise_dot: shape mismatch");
    Eigen::MatrixXd v = a->value.cwiseProduct(b->value).rowwise().sum();
    return node(std::move(v), {a, b}, [a, b](Tensor& t) {
        a->grad += (b->value.array().colwise() * t.grad.col(0).array()).matrix();
        b->grad += (a->value.array().colwise() * t.grad.col(0).array()).matrix();
    });
}

TensorPtr softmax_rows(const TensorPtr& a) {
    Eigen::MatrixXd v = a->value;
    for (int r = 0; r < v.rows(); ++r) {
        const double m = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - m).exp();
        v.row(r) /= v.row(r).sum();
    }
    return node(v, {a}, [a, v](Tensor& t) {
        for (int r = 0; r < v.rows(); ++r) {
            const double dot = t.grad.row(r).dot(v.row(r));
            a->grad.row(r) +=
                (v.row(r).array() * (t.grad.row(r).array() - dot)).matrix();
        }
    });
}

TensorPtr gather_rows(const TensorPtr& a, std::vector<int> idx) {
    Eigen::MatrixXd v(static_cast<int>(idx.size()), a->cols());
    for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<int>(i)) = a->value.row(idx[i]);
    return node(std::move(v), {a}, [a, idx = std::move(idx)](Tensor& t) {
        for (size_t i = 0; i < idx.size(); ++i)
            a->grad.row(idx[i]) += t.grad.row(static_cast<int>(i));
    });
}

TensorPtr scatter_add_rows(const TensorPtr& edges, std::vector<int> dst, int n) {
    if (static_cast<int>(dst.size()) != edges->rows())
        throw std::invalid_argument("scatter_add_rows: dst size mismatch");
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, edges->cols());
    for (size_t e = 0; e < dst.size(); ++e) v.row(dst[e]) += edges->value.row(static_cast<int>(e));
    return node(std::move(v), {edges}, [edges, dst = std::move(dst)](Tensor& t) {
        for (size_t e = 0; e < dst.size(); ++e)
            edges->grad.row(static_cast<int>(e)) += t.grad.row(dst[e]);
    });
}

TensorPtr edge_dot(const TensorPtr& a, const TensorPtr& b, std::vector<int> src,
                   std::vector<int> dst) {
    if (a->cols() != b->cols() || src.size() != dst.size())
        throw std::invalid_argument("edge_dot: shape mismatch");
    const int e = static_cast<int>(src.size());
    Eigen::MatrixXd v(e, 1);
    for (int i = 0; i < e; ++i) v(i, 0) = a->value.row(dst[i]).dot(b->value.row(src[i]));
    return node(std::move(v), {a, b},
                [a, b, src = std::move(src), dst = std::move(dst)](Tensor& t) {
                    for (size_t i = 0; i < src.size(); ++i) {
                        const double g = t.grad(static_cast<int>(i), 0);
                        a->grad.row(dst[i]) += g * b->value.row(src[i]);
                        b->grad.row(src[i]) += g * a->value.row(dst[i]);
                    }
                });
}

TensorPtr edge_weighted_sum(const TensorPtr& v, const TensorPtr& w, std::vector<int> src,
                            std::vector<int> dst, int n) {
    if (w->cols() != 1 || w->rows() != static_cast<int>(src.size()))
        throw std::invalid_argument("edge_weighted_sum: bad weights");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, v->cols());
    for (size_t e = 0; e < src.size(); ++e)
        out.row(dst[e]) += w->value(static_cast<int>(e), 0) * v->value.row(src[e]);
    return node(std::move(out), {v, w},
                [v, w, src = std::move(src), dst = std::move(dst)](Tensor& t) {
                    for (size_t e = 0; e < src.size(); ++e) {
                        const int ei = static_cast<int>(e);
                        v->grad.row(src[e]) += w->value(ei, 0) * t.grad.row(dst[e]);
                        w->grad(ei, 0) += v->value.row(src[e]).dot(t.grad.row(dst[e]));
                    }
                });
}

TensorPtr edge_weighted_const_sum(Eigen::MatrixXd rel, const TensorPtr& w, std::vector<int> dst,
                                  int n) {
    if (w->cols() != 1 || w->rows() != rel.rows())
        throw std::invalid_argument("edge_weighted_const_sum: bad weights");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, rel.cols());
    for (int e = 0; e < rel.rows(); ++e) out.row(dst[e]) += w->value(e, 0) * rel.row(e);
    auto rel_ptr = std::make_shared<Eigen::MatrixXd>(std::move(rel));
    return node(std::move(out), {w}, [w, rel_ptr, dst = std::move(dst)](Tensor& t) {
        for (int e = 0; e < rel_ptr->rows(); ++e)
            w->grad(e, 0) += rel_ptr->row(e).dot(t.grad.row(dst[e]));
    });
}

TensorPtr segment_softmax(const TensorPtr& logits, std::vector<int> seg, int n_seg) {
    if (logits->cols() != 1 || static_cast<int>(seg.size()) != logits->rows())
        throw std::invalid_argument("segment_softmax: bad shapes");
    const int e = logits->rows();
    std::vector<double> seg_max(n_seg, -std::numeric_limits<double>::infinity());
    for (int i = 0; i < e; ++i) seg_max[seg[i]] = std::max(seg_max[seg[i]], logits->value(i, 0));
    std::vector<double> seg_sum(n_seg, 0.0);
    Eigen::MatrixXd v(e, 1);
    for (int i = 0; i < e; ++i) {
        v(i, 0) = std::exp(logits->value(i, 0) - seg_max[seg[i]]);
        seg_sum[seg[i]] += v(i, 0);
    }
    for (int i = 0; i < e; ++i) v(i, 0) /= seg_sum[seg[i]];
    return node(v, {logits}, [logits, v, seg = std::move(seg), n_seg](Tensor& t) {
        std::vector<double> seg_dot(n_seg, 0.0);
        for (int i = 0; i < v.rows(); ++i) seg_dot[seg[i]] += t.grad(i, 0) * v(i, 0);
        for (int i = 0; i < v.rows(); ++i)
            logits->grad(i, 0) += v(i, 0) * (t.grad(i, 0) - seg_dot[seg[i]]);
    });
}

TensorPtr segment_max_rows(const TensorPtr& edges, std::vector<int> seg, int n_seg) {
    if (static_cast<int>(seg.size()) != edges->rows())
        throw std::invalid_argument("segment_max_rows: seg size mismatch");
    const int c = edges->cols();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n_seg, c);
    // argmax routing; -1 marks an empty segment slot (stays zero)
    std::vector<std::vector<int>> arg(n_seg, std::vector<int>(c, -1));
    for (int e = 0; e < edges->rows(); ++e) {
        const int s = seg[e];
        for (int j = 0; j < c; ++j) {
            if (arg[s][j] < 0 || edges->value(e, j) > v(s, j)) {
                v(s, j) = edges->value(e, j);
                arg[s][j] = e;
            }
        }
    }
    return node(v, {edges}, [edges, arg = std::move(arg)](Tensor& t) {
        for (size_t s = 0; s < arg.size(); ++s)
            for (size_t j = 0; j < arg[s].size(); ++j)
                if (arg[s][j] >= 0)
                    edges->grad(arg[s][j], static_cast<int>(j)) +=
                        t.grad(static_cast<int>(s), static_cast<int>(j));
    });
}

TensorPtr mul_colvec(const TensorPtr& a, const TensorPtr& w) {
    if (w->cols() != 1 || w->rows() != a->rows())
        throw std::invalid_argument("mul_colvec: shape mismatch");
    Eigen::MatrixXd v = a->value.array().colwise() * w->value.col(0).array();
    return node(std::move(v), {a, w}, [a, w](Tensor& t) {
        a->grad += (t.grad.array().colwise() * w->value.col(0).array()).matrix();
        w->grad.col(0) += t.grad.cwiseProduct(a->value).rowwise().sum();
    });
}

double grad_check(const std::function<TensorPtr()>& fn, const std::vector<TensorPtr>& leaves,
                  double eps) {
    TensorPtr out = fn();
    if (out->value.size() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
    for (const auto& leaf : leaves) leaf->grad.resize(0, 0);
    backward(out);

    double max_rel = 0.0;
    for (const auto& leaf : leaves) {
        leaf->ensure_grad();
        for (int i = 0; i < leaf->value.rows(); ++i) {
            for (int j = 0; j < leaf->value.cols(); ++j) {
                const double saved = leaf->value(i, j);
                leaf->value(i, j) = saved + eps;
                const double up = fn()->value(0, 0);
                leaf->value(i, j) = saved - eps;
                const double dn = fn()->value(0, 0);
                leaf->value(i, j) = saved;
                const double numeric = (up - dn) / (2.0 * eps);
                const double analytic = leaf->grad(i, j);
                const double rel = std::abs(analytic - numeric) /
                                   std::max({std::abs(analytic), std::abs(numeric), 1.0});
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

}  // namespace servo::nn
