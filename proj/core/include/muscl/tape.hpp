#pragma once

#include <functional>
#include <vector>

#include "muscl/tensor.hpp"

namespace muscl {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    const Tensor& value() const;
};

/// Define-by-run reverse-mode tape. Nodes are appended in topological order
/// (parents always precede children); backward() replays them once in reverse.
/// One tape per training step; tapes never share state.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Gradient leaf. Leaves are collected in registration order; backward()
    /// returns one gradient per leaf in that order.
    Var leaf(Tensor value);
    /// Non-differentiated input.
    Var constant(Tensor value);

    const Tensor& value(int id) const { return nodes_[id].value; }
    std::size_t n_leaves() const { return leaves_.size(); }
    std::size_t n_nodes() const { return nodes_.size(); }

    /// Reverse sweep from a scalar output. Returns d(out)/d(leaf) for every
    /// registered leaf, zeros for leaves the output does not depend on.
    /// Repeated calls are independent (fresh adjoint buffers each time).
    std::vector<Tensor> backward(const Var& out);

    // --- internal: op recording ---------------------------------------
    using BackFn = std::function<void(const Tensor& g, std::vector<Tensor>& adj)>;
    Var record(Tensor value, BackFn back, const char* op);

private:
    struct Node {
        Tensor value;
        BackFn back;  // null for leaves/constants
    };
    std::vector<Node> nodes_;
    std::vector<int> leaves_;
};

/// Accumulate g into adj[id] (empty tensor means zero so far).
void accumulate(std::vector<Tensor>& adj, int id, const Tensor& g);

// --- primitive ops -----------------------------------------------------
// Broadcasting is exact-shape or scalar-vs-tensor only; mismatches throw
// std::invalid_argument naming both shapes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
Var relu(Var a);
Var sigmoid(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var sqrt_op(Var a);
Var abs_op(Var a);
Var clamp_min(Var a, double lo);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, std::vector<std::size_t> shape);

Var matmul(Var a, Var b);                 // [m,k] x [k,n] -> [m,n]
Var matmul_nt(Var a, Var b);              // [m,k] x [n,k]^T -> [m,n]
Var matvec(Var w, Var x);                 // [m,n] x [n] -> [m]
Var add_rowvec(Var m, Var v);             // [r,c] + [c] broadcast over rows
Var row(Var m, std::size_t i);            // [r,c] -> [c]
Var element(Var v, std::size_t i);        // [n] -> scalar
Var slice(Var v, std::size_t start, std::size_t len);  // 1-D
Var concat(const std::vector<Var>& parts);             // 1-D
Var stack_rows(const std::vector<Var>& rows);          // k x [n] -> [k,n]

/// Zero padding of p pixels on each spatial side of a [C,H,W] tensor.
Var pad2d(Var x, std::size_t p);
/// Valid cross-correlation, stride 1: x [Ci,H,W], w [Co,Ci,kh,kw], b [Co].
Var conv2d(Var x, Var w, Var b);
/// Non-overlapping 2x2 mean pool (trailing odd row/col dropped).
Var mean_pool2(Var x);
/// [C,H,W] -> [C] spatial mean.
Var global_mean_pool(Var x);

/// Backward stability floor of normalize_rows: the 1/||z|| gradient prefactor
/// is evaluated as 1/max(||z||, floor) so near-collapsed rows cannot emit
/// unbounded gradients. Direction is unaffected; rows with ||z|| above the
/// floor get the exact gradient.
inline constexpr double kGradNormFloor = 0.1;

/// Row-wise z / max(||z||, eps). Rows with ||z|| < eps get zero gradient.
Var normalize_rows(Var z, double eps);

}  // namespace muscl
