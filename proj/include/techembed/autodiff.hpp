#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "techembed/tensor.hpp"

namespace techembed {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}

    void zero_grad();
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Matrix& value() const;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order and
/// backward() walks them in reverse. Parameter gradients accumulate into
/// Parameter::grad for trainable parameters only.
///
/// With gradients disabled the tape records values only (inference).
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }

    Var constant(Matrix value);
    /// Leaf node carrying a copy of the parameter value.
    Var param(Parameter& p);

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Seeds d(root) with `seed` (ones if empty) and propagates.
    void backward(Var root, const Matrix& seed = {});

    /// Records an op node. `backward` receives (tape, node id) and reads the
    /// node's gradient via grad_of(id); it is dropped when no input needs grad.
    Var record(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> backward);

    Matrix& grad_of(std::size_t id) { return nodes_[id].grad; }
    const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad_of(std::size_t id) const { return nodes_[id].needs_grad; }
    /// Adds g into the gradient of node `id` (allocating on first use).
    void accumulate(std::size_t id, const Matrix& g);
    /// Zero-initialized gradient buffer of node `id` for in-place accumulation.
    Matrix& grad_buffer(std::size_t id);

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void(Tape&, std::size_t)> backward;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

namespace ad {

/// Rows of an embedding table selected by id.
Var embed(Tape& t, Parameter& table, std::span<const std::uint32_t> ids);
/// Rows of a parameter used as-is (soft prompt rows).
Var rows_of(Tape& t, Parameter& p);
Var concat_rows(Var a, Var b);
/// Stacks 1 x d rows into an n x d matrix.
Var stack_rows(std::span<const Var> rows);
Var add(Var a, Var b);
Var add_const(Var a, const Matrix& c);
Var scale(Var a, double s);
/// x * W + b, b broadcast over rows.
Var linear(Var x, Parameter& w, Parameter& b);
/// Row-wise layer normalization with learned gain and bias.
Var layer_norm(Var x, Parameter& gain, Parameter& bias, double eps = 1e-5);
/// Exact (erf) GELU.
Var gelu(Var x);
/// Scaled dot-product attention split across `heads` column blocks.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);
/// Mean of rows [from, rows) as a 1 x d row.
Var mean_rows(Var x, std::size_t from);
/// Row-wise L2 normalization.
Var l2_normalize_rows(Var x);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// Mean over rows of -log softmax(row)[i] with target index i == row index.
/// Output is 1 x 1.
Var softmax_cross_entropy_diagonal(Var logits);

}  // namespace ad
}  // namespace techembed
