#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "framecast/tensor.hpp"

namespace framecast {

// Named trainable tensor. Networks own their parameters; tapes bind to them
// by address, so parameters must outlive any tape using them.
struct Param {
    std::string name;
    Tensor value;
};

namespace ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid once the tape is gone.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. A fresh tape is built per forward pass; backward() seeds
// the scalar root with 1 and accumulates gradients in reverse creation order.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backward;  // (tape, own node id)
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Binds a parameter; repeated calls for the same parameter return the same
    // node so its gradient accumulates across all uses.
    Var param(Param& p);

    int add_node(Tensor value, std::vector<int> parents,
                 std::function<void(Tape&, int)> backward);

    void backward(Var root);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id())].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v.id())].grad; }
    bool has_grad_for(const Param& p) const { return param_nodes_.count(&p) > 0; }
    // Zero tensor if the parameter is not bound or unreached by backward.
    Tensor grad_of(const Param& p) const;

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::unordered_map<const Param*, int> param_nodes_;
};

// ---- elementwise ------------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// s*a + c, elementwise.
Var affine(Var a, double s, double c);
Var leaky_relu(Var a, double negative_slope);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh_(Var a);
Var abs_(Var a);
// log(max(x, eps)); gradient is zero on the clamped region.
Var log_clamped(Var a, double eps = 1e-7);
Var stop_gradient(Var a);

// ---- shape ------------------------------------------------------------------
Var reshape(Var a, std::vector<int> shape);
Var concat_cols(Var a, Var b);              // (N,A) + (N,B) -> (N,A+B)
Var slice_cols(Var a, int start, int len);  // (N,D) -> (N,len)
Var gather_rows(Var a, std::vector<int> rows);
Var concat_rows(std::span<const Var> parts);  // stack (Ni,D) -> (sum Ni, D)

// ---- linear algebra -----------------------------------------------------------
Var matmul(Var a, Var b);                 // (N,A) x (A,B) -> (N,B)
Var linear(Var x, Var weight, Var bias);  // x:(N,A) w:(A,B) b:(1,B)

// ---- reductions ----------------------------------------------------------------
Var sum(Var a);                           // -> (1,1)
Var mean(Var a);                          // -> (1,1)
Var row_norm(Var a, double eps = 1e-12);  // (N,D) -> (N,1), sqrt(sum x^2 + eps)

// ---- convolution (NCHW) ---------------------------------------------------------
Var conv2d(Var x, Var kernel, Var bias, int stride, int pad);
// Adjoint of conv2d; out_h/out_w select among the valid output sizes.
Var conv2d_transpose(Var x, Var kernel, Var bias, int stride, int pad, int out_h, int out_w);
Var upsample_nearest(Var x, int out_h, int out_w);
Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

inline int conv_out_size(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace ad
}  // namespace framecast
