#pragma once

#include <algorithm>
#include <deque>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lll/tensor.hpp"

namespace lll {

enum class OpKind {
    kLeaf,
    kMatmul,
    kAdd,
    kMul,
    kSub,
    kBroadcast,
    kEmbeddingGather,
    kLayerNorm,
    kGelu,
    kSoftmax,
    kLogSoftmax,
    kReduceSum,
    kReduceMean,
    kTranspose,
    kReshape,
    kMaskedFill,
    kConcat,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kAdd: return "add";
        case OpKind::kMul: return "mul";
        case OpKind::kSub: return "sub";
        case OpKind::kBroadcast: return "broadcast";
        case OpKind::kEmbeddingGather: return "embedding_gather";
        case OpKind::kLayerNorm: return "layernorm";
        case OpKind::kGelu: return "gelu";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kLogSoftmax: return "log_softmax";
        case OpKind::kReduceSum: return "reduce_sum";
        case OpKind::kReduceMean: return "reduce_mean";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kReshape: return "reshape";
        case OpKind::kMaskedFill: return "masked_fill";
        case OpKind::kConcat: return "concat";
    }
    return "?";
}

/// Op-specific arguments that are data, not differentiable inputs.
struct OpArgs {
    std::vector<int> perm;       // transpose
    Shape shape;                 // broadcast / reshape targets
    int axis = 0;                // concat
    std::vector<int> ids;        // embedding_gather row indices
    std::vector<uint8_t> mask;   // masked_fill (1 = replace)
    double fill = 0.0;           // masked_fill value
    double eps = 1e-5;           // layernorm
};

namespace detail {

inline std::vector<long> strides_of(const Shape& shape) {
    std::vector<long> st(shape.size());
    long acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return st;
}

}  // namespace detail

/// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
/// order; backward walks them in strict reverse insertion order exactly once.
/// One tape per training step, cleared afterwards; not shareable across
/// concurrent steps.
class Tape {
public:
    struct Node {
        OpKind op = OpKind::kLeaf;
        std::vector<int> inputs;
        Tensor owned;                      // value storage for computed nodes
        const Tensor* external = nullptr;  // leaf nodes alias caller storage
        Tensor* param = nullptr;           // set for trainable leaves
        std::vector<double> grad;
        OpArgs args;
    };

    /// Registers a trainable leaf. Gradients accumulate into `t.grad` on
    /// backward. The tensor must outlive the tape.
    int param(Tensor& t) {
        check_finite(t.data, detail::str("leaf tensor ", shape_str(t.shape)));
        Node n;
        n.external = &t;
        n.param = &t;
        nodes_.push_back(std::move(n));
        t.node_id = static_cast<int>(nodes_.size()) - 1;
        return t.node_id;
    }

    /// Registers a read-only leaf aliasing caller storage (no gradient
    /// accumulation into the tensor). Used for frozen teacher parameters.
    int input(const Tensor& t) {
        check_finite(t.data, detail::str("leaf tensor ", shape_str(t.shape)));
        Node n;
        n.external = &t;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Registers an owned constant leaf.
    int constant(Tensor t) {
        check_finite(t.data, detail::str("constant tensor ", shape_str(t.shape)));
        Node n;
        n.owned = std::move(t);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int constant(Shape shape, std::vector<double> data) {
        return constant(Tensor(std::move(shape), std::move(data)));
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    const Tensor& value(int id) const {
        const Node& n = node(id);
        return n.external ? *n.external : n.owned;
    }

    /// Gradient of the last backward() target w.r.t. node `id`. Empty span if
    /// the node did not participate.
    std::span<const double> grad(int id) const { return node(id).grad; }

    /// Backpropagates from a scalar node, accumulating into the `grad` of
    /// every registered parameter tensor (adds into existing contents).
    void backward(int loss_id) {
        const Tensor& loss = value(loss_id);
        if (loss.size() != 1)
            throw std::invalid_argument(detail::str("backward: loss node must be scalar, got shape ",
                                                    shape_str(loss.shape)));
        for (auto& n : nodes_) n.grad.clear();
        nodes_[static_cast<size_t>(loss_id)].grad.assign(1, 1.0);

        for (int i = loss_id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad.empty() || n.op == OpKind::kLeaf) continue;
            backward_node(n);
        }
        for (auto& n : nodes_) {
            if (n.param && !n.grad.empty()) {
                n.param->ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
                check_finite(n.param->grad, "parameter gradient");
            }
        }
    }

    /// Drops all nodes but keeps vector capacity for reuse across steps.
    void clear() { nodes_.clear(); }

    int push(OpKind op, std::vector<int> inputs, Tensor value, OpArgs args = {}) {
        check_finite(value.data, detail::str(op_name(op), " output"));
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.owned = std::move(value);
        n.args = std::move(args);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Node& node(int id) const {
        if (id < 0 || id >= size())
            throw std::invalid_argument(detail::str("tape: node id ", id, " is detached or out of range"));
        return nodes_[static_cast<size_t>(id)];
    }

private:
    std::vector<double>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(value(id).data.size(), 0.0);
        return n.grad;
    }

    void backward_node(Node& n);

    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_2d(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<long>(i) * n;
        const double* ai = a + static_cast<long>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace detail

inline int matmul(Tape& tape, int a_id, int b_id) {
    const Tensor& a = tape.value(a_id);
    const Tensor& b = tape.value(b_id);
    const bool batched = a.rank() == 3 && b.rank() == 3;
    detail::require((a.rank() == 2 && b.rank() == 2) || batched,
                    detail::str("matmul: ranks must be 2x2 or 3x3, got shapes ", shape_str(a.shape),
                                " and ", shape_str(b.shape)));
    const int bs = batched ? a.shape[0] : 1;
    const int m = a.shape[batched ? 1 : 0];
    const int k = a.shape[batched ? 2 : 1];
    const int k2 = b.shape[batched ? 1 : 0];
    const int n = b.shape[batched ? 2 : 1];
    detail::require(k == k2 && (!batched || a.shape[0] == b.shape[0]),
                    detail::str("matmul: incompatible shapes ", shape_str(a.shape), " and ",
                                shape_str(b.shape)));
    Shape out_shape = batched ? Shape{bs, m, n} : Shape{m, n};
    Tensor out = Tensor::zeros(out_shape);
    for (int i = 0; i < bs; ++i)
        detail::matmul_2d(a.data.data() + static_cast<long>(i) * m * k,
                          b.data.data() + static_cast<long>(i) * k * n,
                          out.data.data() + static_cast<long>(i) * m * n, m, k, n);
    return tape.push(OpKind::kMatmul, {a_id, b_id}, std::move(out));
}

namespace detail {

inline int elementwise(Tape& tape, OpKind op, int a_id, int b_id) {
    const Tensor& a = tape.value(a_id);
    const Tensor& b = tape.value(b_id);
    require(a.shape == b.shape, str(op_name(op), ": shape mismatch ", shape_str(a.shape), " vs ",
                                    shape_str(b.shape)));
    Tensor out = Tensor::zeros(a.shape);
    for (long i = 0; i < a.size(); ++i) {
        const double x = a.data[static_cast<size_t>(i)];
        const double y = b.data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(i)] = op == OpKind::kAdd ? x + y
                                         : op == OpKind::kSub ? x - y
                                                              : x * y;
    }
    return tape.push(op, {a_id, b_id}, std::move(out));
}

// Right-aligned broadcast index map: flat output index -> flat source index.
inline long broadcast_src_index(long out_idx, const Shape& out_shape, const Shape& src_shape,
                                const std::vector<long>& src_strides) {
    const int off = static_cast<int>(out_shape.size() - src_shape.size());
    long idx = 0;
    long rem = out_idx;
    for (int d = static_cast<int>(out_shape.size()) - 1, mul = 1; d >= 0; --d) {
        (void)mul;
        const long dim = out_shape[static_cast<size_t>(d)];
        const long coord = rem % dim;
        rem /= dim;
        const int sd = d - off;
        if (sd >= 0 && src_shape[static_cast<size_t>(sd)] != 1)
            idx += coord * src_strides[static_cast<size_t>(sd)];
    }
    return idx;
}

}  // namespace detail

inline int add(Tape& tape, int a, int b) { return detail::elementwise(tape, OpKind::kAdd, a, b); }
inline int sub(Tape& tape, int a, int b) { return detail::elementwise(tape, OpKind::kSub, a, b); }
inline int mul(Tape& tape, int a, int b) { return detail::elementwise(tape, OpKind::kMul, a, b); }

inline int broadcast(Tape& tape, int x_id, Shape target) {
    const Tensor& x = tape.value(x_id);
    detail::require(x.shape.size() <= target.size(),
                    detail::str("broadcast: source rank exceeds target, ", shape_str(x.shape), " -> ",
                                shape_str(target)));
    const int off = static_cast<int>(target.size() - x.shape.size());
    for (size_t d = 0; d < x.shape.size(); ++d)
        detail::require(x.shape[d] == 1 || x.shape[d] == target[d + static_cast<size_t>(off)],
                        detail::str("broadcast: cannot expand ", shape_str(x.shape), " to ",
                                    shape_str(target)));
    Tensor out = Tensor::zeros(target);
    const auto st = detail::strides_of(x.shape);
    for (long i = 0; i < out.size(); ++i)
        out.data[static_cast<size_t>(i)] =
            x.data[static_cast<size_t>(detail::broadcast_src_index(i, target, x.shape, st))];
    OpArgs args;
    args.shape = std::move(target);
    return tape.push(OpKind::kBroadcast, {x_id}, std::move(out), std::move(args));
}

inline int embedding_gather(Tape& tape, int table_id, std::vector<int> ids) {
    const Tensor& table = tape.value(table_id);
    detail::require(table.rank() == 2,
                    detail::str("embedding_gather: table must be 2-D, got ", shape_str(table.shape)));
    const int rows = table.shape[0];
    const int dim = table.shape[1];
    for (int id : ids)
        detail::require(id >= 0 && id < rows,
                        detail::str("embedding_gather: index ", id, " out of range for table ",
                                    shape_str(table.shape)));
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), dim});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data.begin() + static_cast<long>(ids[i]) * dim, dim,
                    out.data.begin() + static_cast<long>(i) * dim);
    OpArgs args;
    args.ids = std::move(ids);
    return tape.push(OpKind::kEmbeddingGather, {table_id}, std::move(out), std::move(args));
}

/// Normalizes the last dimension to zero mean / unit variance (epsilon in the
/// denominator), then applies elementwise gain and bias.
inline int layernorm(Tape& tape, int x_id, int gain_id, int bias_id, double eps = 1e-5) {
    const Tensor& x = tape.value(x_id);
    const Tensor& g = tape.value(gain_id);
    const Tensor& b = tape.value(bias_id);
    detail::require(x.rank() >= 1, "layernorm: input must have rank >= 1");
    const int d = x.shape.back();
    detail::require(g.shape == Shape{d} && b.shape == Shape{d},
                    detail::str("layernorm: gain/bias must have shape [", d, "], got ",
                                shape_str(g.shape), " and ", shape_str(b.shape)));
    Tensor out = Tensor::zeros(x.shape);
    const long rows = x.size() / d;
    for (long r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < d; ++i)
            yr[i] = (xr[i] - mean) * inv * g.data[static_cast<size_t>(i)] + b.data[static_cast<size_t>(i)];
    }
    OpArgs args;
    args.eps = eps;
    return tape.push(OpKind::kLayerNorm, {x_id, gain_id, bias_id}, std::move(out), std::move(args));
}

inline int gelu(Tape& tape, int x_id) {
    const Tensor& x = tape.value(x_id);
    Tensor out = Tensor::zeros(x.shape);
    for (long i = 0; i < x.size(); ++i) {
        const double v = x.data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(i)] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    return tape.push(OpKind::kGelu, {x_id}, std::move(out));
}

namespace detail {

inline void softmax_rows(const Tensor& x, Tensor& out, bool log_form) {
    const int d = x.shape.back();
    const long rows = x.size() / d;
    for (long r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mx = xr[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        double sum = 0.0;
        for (int i = 0; i < d; ++i) sum += std::exp(xr[i] - mx);
        if (log_form) {
            const double lse = mx + std::log(sum);
            for (int i = 0; i < d; ++i) yr[i] = xr[i] - lse;
        } else {
            for (int i = 0; i < d; ++i) yr[i] = std::exp(xr[i] - mx) / sum;
        }
    }
}

}  // namespace detail

inline int softmax(Tape& tape, int x_id) {
    const Tensor& x = tape.value(x_id);
    detail::require(x.rank() >= 1, "softmax: input must have rank >= 1");
    Tensor out = Tensor::zeros(x.shape);
    detail::softmax_rows(x, out, false);
    return tape.push(OpKind::kSoftmax, {x_id}, std::move(out));
}

inline int log_softmax(Tape& tape, int x_id) {
    const Tensor& x = tape.value(x_id);
    detail::require(x.rank() >= 1, "log_softmax: input must have rank >= 1");
    Tensor out = Tensor::zeros(x.shape);
    detail::softmax_rows(x, out, true);
    return tape.push(OpKind::kLogSoftmax, {x_id}, std::move(out));
}

inline int reduce_sum(Tape& tape, int x_id) {
    const Tensor& x = tape.value(x_id);
    double s = 0.0;
    for (double v : x.data) s += v;
    return tape.push(OpKind::kReduceSum, {x_id}, Tensor::scalar(s));
}

inline int reduce_mean(Tape& tape, int x_id) {
    const Tensor& x = tape.value(x_id);
    double s = 0.0;
    for (double v : x.data) s += v;
    return tape.push(OpKind::kReduceMean, {x_id}, Tensor::scalar(s / static_cast<double>(x.size())));
}

inline int transpose(Tape& tape, int x_id, std::vector<int> perm) {
    const Tensor& x = tape.value(x_id);
    detail::require(perm.size() == x.shape.size(),
                    detail::str("transpose: perm size ", perm.size(), " vs rank ", x.rank()));
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        detail::require(p >= 0 && p < x.rank() && !seen[static_cast<size_t>(p)],
                        "transpose: perm must be a permutation of the axes");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) out_shape[d] = x.shape[static_cast<size_t>(perm[d])];
    Tensor out = Tensor::zeros(out_shape);
    const auto in_st = detail::strides_of(x.shape);
    const auto out_st = detail::strides_of(out_shape);
    for (long i = 0; i < out.size(); ++i) {
        long rem = i;
        long src = 0;
        for (size_t d = 0; d < perm.size(); ++d) {
            const long coord = rem / out_st[d];
            rem %= out_st[d];
            src += coord * in_st[static_cast<size_t>(perm[d])];
        }
        out.data[static_cast<size_t>(i)] = x.data[static_cast<size_t>(src)];
    }
    OpArgs args;
    args.perm = std::move(perm);
    return tape.push(OpKind::kTranspose, {x_id}, std::move(out), std::move(args));
}

inline int reshape(Tape& tape, int x_id, Shape new_shape) {
    const Tensor& x = tape.value(x_id);
    detail::require(numel(new_shape) == x.size(),
                    detail::str("reshape: cannot view ", shape_str(x.shape), " as ",
                                shape_str(new_shape)));
    Tensor out(new_shape, x.data);
    return tape.push(OpKind::kReshape, {x_id}, std::move(out));
}

inline int masked_fill(Tape& tape, int x_id, std::vector<uint8_t> mask, double fill) {
    const Tensor& x = tape.value(x_id);
    detail::require(static_cast<long>(mask.size()) == x.size(),
                    detail::str("masked_fill: mask length ", mask.size(), " vs tensor ",
                                shape_str(x.shape)));
    Tensor out = Tensor::zeros(x.shape);
    for (long i = 0; i < x.size(); ++i)
        out.data[static_cast<size_t>(i)] =
            mask[static_cast<size_t>(i)] ? fill : x.data[static_cast<size_t>(i)];
    OpArgs args;
    args.mask = std::move(mask);
    args.fill = fill;
    return tape.push(OpKind::kMaskedFill, {x_id}, std::move(out), std::move(args));
}

inline int concat(Tape& tape, std::span<const int> ids, int axis) {
    detail::require(!ids.empty(), "concat: needs at least one input");
    const Tensor& first = tape.value(ids[0]);
    const int rank = first.rank();
    detail::require(axis >= 0 && axis < rank, detail::str("concat: axis ", axis, " out of range"));
    Shape out_shape = first.shape;
    for (size_t i = 1; i < ids.size(); ++i) {
        const Tensor& t = tape.value(ids[i]);
        detail::require(t.rank() == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            detail::require(d == axis || t.shape[static_cast<size_t>(d)] == first.shape[static_cast<size_t>(d)],
                            detail::str("concat: shape mismatch ", shape_str(first.shape), " vs ",
                                        shape_str(t.shape)));
        out_shape[static_cast<size_t>(axis)] += t.shape[static_cast<size_t>(axis)];
    }
    Tensor out = Tensor::zeros(out_shape);
    // Copy block-by-block: outer = product of dims before axis, inner = after.
    long outer = 1;
    for (int d = 0; d < axis; ++d) outer *= first.shape[static_cast<size_t>(d)];
    long inner = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= first.shape[static_cast<size_t>(d)];
    const long out_axis = out_shape[static_cast<size_t>(axis)];
    long offset = 0;
    for (int id : ids) {
        const Tensor& t = tape.value(id);
        const long ax = t.shape[static_cast<size_t>(axis)];
        for (long o = 0; o < outer; ++o)
            std::copy_n(t.data.begin() + o * ax * inner, ax * inner,
                        out.data.begin() + (o * out_axis + offset) * inner);
        offset += ax;
    }
    OpArgs args;
    args.axis = axis;
    return tape.push(OpKind::kConcat, std::vector<int>(ids.begin(), ids.end()), std::move(out),
                     std::move(args));
}

/// Uniform dispatch over the primitive set; used by generic property tests.
inline int apply_primitive(Tape& tape, OpKind op, std::span<const int> inputs, const OpArgs& args = {}) {
    auto need = [&](size_t n) {
        detail::require(inputs.size() == n,
                        detail::str(op_name(op), ": expected ", n, " inputs, got ", inputs.size()));
    };
    switch (op) {
        case OpKind::kMatmul: need(2); return matmul(tape, inputs[0], inputs[1]);
        case OpKind::kAdd: need(2); return add(tape, inputs[0], inputs[1]);
        case OpKind::kMul: need(2); return mul(tape, inputs[0], inputs[1]);
        case OpKind::kSub: need(2); return sub(tape, inputs[0], inputs[1]);
        case OpKind::kBroadcast: need(1); return broadcast(tape, inputs[0], args.shape);
        case OpKind::kEmbeddingGather: need(1); return embedding_gather(tape, inputs[0], args.ids);
        case OpKind::kLayerNorm: need(3); return layernorm(tape, inputs[0], inputs[1], inputs[2], args.eps);
        case OpKind::kGelu: need(1); return gelu(tape, inputs[0]);
        case OpKind::kSoftmax: need(1); return softmax(tape, inputs[0]);
        case OpKind::kLogSoftmax: need(1); return log_softmax(tape, inputs[0]);
        case OpKind::kReduceSum: need(1); return reduce_sum(tape, inputs[0]);
        case OpKind::kReduceMean: need(1); return reduce_mean(tape, inputs[0]);
        case OpKind::kTranspose: need(1); return transpose(tape, inputs[0], args.perm);
        case OpKind::kReshape: need(1); return reshape(tape, inputs[0], args.shape);
        case OpKind::kMaskedFill: need(1); return masked_fill(tape, inputs[0], args.mask, args.fill);
        case OpKind::kConcat: return concat(tape, inputs, args.axis);
        case OpKind::kLeaf: break;
    }
    throw std::invalid_argument("apply_primitive: not a primitive op");
}

// ---------------------------------------------------------------------------
// backward rules
// ---------------------------------------------------------------------------

inline void Tape::backward_node(Node& n) {
    const std::vector<double>& dy = n.grad;
    const Tensor& y = n.external ? *n.external : n.owned;
    switch (n.op) {
        case OpKind::kMatmul: {
            const Tensor& a = value(n.inputs[0]);
            const Tensor& b = value(n.inputs[1]);
            auto& da = grad_buf(n.inputs[0]);
            auto& db = grad_buf(n.inputs[1]);
            const bool batched = a.rank() == 3;
            const int bs = batched ? a.shape[0] : 1;
            const int m = a.shape[batched ? 1 : 0];
            const int k = a.shape[batched ? 2 : 1];
            const int nn = b.shape[batched ? 2 : 1];
            for (int bi = 0; bi < bs; ++bi) {
                const double* ap = a.data.data() + static_cast<long>(bi) * m * k;
                const double* bp = b.data.data() + static_cast<long>(bi) * k * nn;
                const double* dyp = dy.data() + static_cast<long>(bi) * m * nn;
                double* dap = da.data() + static_cast<long>(bi) * m * k;
                double* dbp = db.data() + static_cast<long>(bi) * k * nn;
                // dA = dY * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* dyr = dyp + static_cast<long>(i) * nn;
                        const double* br = bp + static_cast<long>(p) * nn;
                        for (int j = 0; j < nn; ++j) s += dyr[j] * br[j];
                        dap[static_cast<long>(i) * k + p] += s;
                    }
                // dB = A^T * dY
                for (int i = 0; i < m; ++i) {
                    const double* ar = ap + static_cast<long>(i) * k;
                    const double* dyr = dyp + static_cast<long>(i) * nn;
                    for (int p = 0; p < k; ++p) {
                        const double av = ar[p];
                        double* dbr = dbp + static_cast<long>(p) * nn;
                        for (int j = 0; j < nn; ++j) dbr[j] += av * dyr[j];
                    }
                }
            }
            break;
        }
        case OpKind::kAdd: {
            auto& da = grad_buf(n.inputs[0]);
            auto& db = grad_buf(n.inputs[1]);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i] += dy[i];
            }
            break;
        }
        case OpKind::kSub: {
            auto& da = grad_buf(n.inputs[0]);
            auto& db = grad_buf(n.inputs[1]);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i] -= dy[i];
            }
            break;
        }
        case OpKind::kMul: {
            const Tensor& a = value(n.inputs[0]);
            const Tensor& b = value(n.inputs[1]);
            auto& da = grad_buf(n.inputs[0]);
            auto& db = grad_buf(n.inputs[1]);
            for (size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i] * b.data[i];
                db[i] += dy[i] * a.data[i];
            }
            break;
        }
        case OpKind::kBroadcast: {
            const Tensor& x = value(n.inputs[0]);
            auto& dx = grad_buf(n.inputs[0]);
            const auto st = detail::strides_of(x.shape);
            for (long i = 0; i < static_cast<long>(dy.size()); ++i)
                dx[static_cast<size_t>(detail::broadcast_src_index(i, y.shape, x.shape, st))] +=
                    dy[static_cast<size_t>(i)];
            break;
        }
        case OpKind::kEmbeddingGather: {
            const Tensor& table = value(n.inputs[0]);
            auto& dt = grad_buf(n.inputs[0]);
            const int dim = table.shape[1];
            for (size_t i = 0; i < n.args.ids.size(); ++i) {
                double* row = dt.data() + static_cast<long>(n.args.ids[i]) * dim;
                const double* dyr = dy.data() + static_cast<long>(i) * dim;
                for (int j = 0; j < dim; ++j) row[j] += dyr[j];
            }
            break;
        }
        case OpKind::kLayerNorm: {
            const Tensor& x = value(n.inputs[0]);
            const Tensor& g = value(n.inputs[1]);
            auto& dx = grad_buf(n.inputs[0]);
            auto& dg = grad_buf(n.inputs[1]);
            auto& db = grad_buf(n.inputs[2]);
            const int d = x.shape.back();
            const long rows = x.size() / d;
            for (long r = 0; r < rows; ++r) {
                const double* xr = x.data.data() + r * d;
                const double* dyr = dy.data() + r * d;
                double mean = 0.0;
                for (int i = 0; i < d; ++i) mean += xr[i];
                mean /= d;
                double var = 0.0;
                for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
                var /= d;
                const double inv = 1.0 / std::sqrt(var + n.args.eps);
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double xhat = (xr[i] - mean) * inv;
                    const double dxhat = dyr[i] * g.data[static_cast<size_t>(i)];
                    dg[static_cast<size_t>(i)] += dyr[i] * xhat;
                    db[static_cast<size_t>(i)] += dyr[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                double* dxr = dx.data() + r * d;
                for (int i = 0; i < d; ++i) {
                    const double xhat = (xr[i] - mean) * inv;
                    const double dxhat = dyr[i] * g.data[static_cast<size_t>(i)];
                    dxr[i] += inv * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
                }
            }
            break;
        }
        case OpKind::kGelu: {
            const Tensor& x = value(n.inputs[0]);
            auto& dx = grad_buf(n.inputs[0]);
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            for (size_t i = 0; i < dy.size(); ++i) {
                const double v = x.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
            break;
        }
        case OpKind::kSoftmax: {
            auto& dx = grad_buf(n.inputs[0]);
            const int d = y.shape.back();
            const long rows = y.size() / d;
            for (long r = 0; r < rows; ++r) {
                const double* yr = y.data.data() + r * d;
                const double* dyr = dy.data() + r * d;
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += dyr[i] * yr[i];
                double* dxr = dx.data() + r * d;
                for (int i = 0; i < d; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
            }
            break;
        }
        case OpKind::kLogSoftmax: {
            auto& dx = grad_buf(n.inputs[0]);
            const int d = y.shape.back();
            const long rows = y.size() / d;
            for (long r = 0; r < rows; ++r) {
                const double* yr = y.data.data() + r * d;
                const double* dyr = dy.data() + r * d;
                double sum = 0.0;
                for (int i = 0; i < d; ++i) sum += dyr[i];
                double* dxr = dx.data() + r * d;
                for (int i = 0; i < d; ++i) dxr[i] += dyr[i] - std::exp(yr[i]) * sum;
            }
            break;
        }
        case OpKind::kReduceSum: {
            auto& dx = grad_buf(n.inputs[0]);
            for (auto& v : dx) v += dy[0];
            break;
        }
        case OpKind::kReduceMean: {
            auto& dx = grad_buf(n.inputs[0]);
            const double scale = dy[0] / static_cast<double>(dx.size());
            for (auto& v : dx) v += scale;
            break;
        }
        case OpKind::kTranspose: {
            const Tensor& x = value(n.inputs[0]);
            auto& dx = grad_buf(n.inputs[0]);
            const auto in_st = detail::strides_of(x.shape);
            const auto out_st = detail::strides_of(y.shape);
            for (long i = 0; i < static_cast<long>(dy.size()); ++i) {
                long rem = i;
                long src = 0;
                for (size_t d = 0; d < n.args.perm.size(); ++d) {
                    const long coord = rem / out_st[d];
                    rem %= out_st[d];
                    src += coord * in_st[static_cast<size_t>(n.args.perm[d])];
                }
                dx[static_cast<size_t>(src)] += dy[static_cast<size_t>(i)];
            }
            break;
        }
        case OpKind::kReshape: {
            auto& dx = grad_buf(n.inputs[0]);
            for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            break;
        }
        case OpKind::kMaskedFill: {
            auto& dx = grad_buf(n.inputs[0]);
            for (size_t i = 0; i < dy.size(); ++i)
                if (!n.args.mask[i]) dx[i] += dy[i];
            break;
        }
        case OpKind::kConcat: {
            const int axis = n.args.axis;
            long outer = 1;
            for (int d = 0; d < axis; ++d) outer *= y.shape[static_cast<size_t>(d)];
            long inner = 1;
            for (int d = axis + 1; d < y.rank(); ++d) inner *= y.shape[static_cast<size_t>(d)];
            const long out_axis = y.shape[static_cast<size_t>(axis)];
            long offset = 0;
            for (int id : n.inputs) {
                const Tensor& t = value(id);
                auto& dx = grad_buf(id);
                const long ax = t.shape[static_cast<size_t>(axis)];
                for (long o = 0; o < outer; ++o) {
                    const double* src = dy.data() + (o * out_axis + offset) * inner;
                    double* dst = dx.data() + o * ax * inner;
                    for (long i = 0; i < ax * inner; ++i) dst[i] += src[i];
                }
                offset += ax;
            }
            break;
        }
        case OpKind::kLeaf:
            break;
    }
}

}  // namespace lll
