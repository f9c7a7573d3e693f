#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmldroid/nn/matrix.hpp"
#include "dmldroid/nn/param_store.hpp"

namespace dmldroid::nn {

// Stable binary cross-entropy with logits: max(z,0) - z*y + log1p(exp(-|z|)).
double bce_logit_loss(double z, double y);
// d loss / d z = sigmoid(z) - y.
double bce_logit_grad(double z, double y);

// Reverse-mode autodiff over matrices. Each op computes its output eagerly
// and registers a backward closure; backward(root) replays the closures in
// reverse creation order and flushes leaf gradients into the bound ParamStore.
// A Tape lives for one forward/backward pass; build a fresh one per batch.
class Tape {
public:
    struct Value {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    explicit Tape(ParamStore* store = nullptr, std::uint64_t dropout_seed = 0);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. input() holds a constant; param() binds a store entry so that
    // backward() accumulates into the entry's grad matrix.
    Value input(Matrix m);
    Value param(const std::string& name);

    const Matrix& value(Value v) const;
    const Matrix& grad(Value v);
    double scalar(Value v) const;

    Value matmul(Value a, Value b);
    Value matmul_nt(Value a, Value b);
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double s);
    Value add_const(Value a, double c);
    // Broadcast a 1 x C row across every row of a B x C matrix.
    Value add_rowvec(Value a, Value row);
    // Scale row i of a B x C matrix by the scalar in row i of a B x 1 column.
    Value row_scale(Value a, Value col);
    Value relu(Value a);
    Value sigmoid(Value a);
    Value softmax_rows(Value a);
    Value concat_cols(Value a, Value b);
    Value concat_cols(const std::vector<Value>& parts);
    Value concat_rows(Value a, Value b);
    Value concat_rows(const std::vector<Value>& parts);
    Value slice_cols(Value a, std::size_t c0, std::size_t c1);
    Value slice_rows(Value a, std::size_t r0, std::size_t r1);
    Value sum_all(Value a);

    // Gather rows of an embedding table; grads scatter-add back.
    Value embed_rows(Value table, const std::vector<std::size_t>& ids);

    // Images ride in rows with HWC layout: row b is sample b's H*W*C grid.
    // 3x3 kernel, stride 1, no padding. Weight shape (9*Cin) x Cout with row
    // index (dy*3+dx)*Cin + c; bias 1 x Cout. Output is (H-2)x(W-2)xCout rows.
    Value conv2d(Value img, Value w, Value bias,
                 std::size_t H, std::size_t W, std::size_t Cin, std::size_t Cout);
    // 2x2 max-pool, stride 2, floor semantics on odd extents.
    Value maxpool2(Value a, std::size_t H, std::size_t W, std::size_t C);

    // Per-feature standardization over the batch with learned scale/shift.
    // Uses store entries <prefix>.gamma/.beta (trainable) and
    // <prefix>.running_mean/.running_var (frozen stats used at eval time);
    // entries are created on first use.
    Value batchnorm(Value x, const std::string& prefix, bool training,
                    double momentum = 0.1, double eps = 1e-5);
    // Per-row standardization; gamma/beta are 1 x C Values.
    Value layernorm(Value x, Value gamma, Value beta, double eps = 1e-5);
    // Inverted dropout from the tape's seeded generator; identity when not
    // training or p == 0.
    Value dropout(Value a, double p, bool training);

    // Mean stable BCE over a B x 1 logit column. Throws NumericError on a
    // non-finite logit.
    Value bce_with_logits(Value logits, const std::vector<double>& labels);

    // Seeds d(root)/d(root) = 1 (root must be 1 x 1), replays closures, then
    // adds every param leaf's gradient into its store entry.
    void backward(Value root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Matrix val;
        Matrix grad;
        bool grad_alloc = false;
        std::function<void()> back;
        std::string param_name;
    };

    Value push(Matrix val);
    Node& node(Value v);
    const Node& node(Value v) const;
    Matrix& grad_ref(int id);
    bool has_grad(int id) const;

    std::vector<Node> nodes_;
    ParamStore* store_ = nullptr;
    Rng rng_;
};

}  // namespace dmldroid::nn
