#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "fusenet/matrix.hpp"

namespace fusenet {

// Trainable parameter. Lives outside any graph; each forward pass copies the
// value into a leaf node and backward accumulates into grad.
struct Param {
    Matrix value;
    Matrix grad;

    Param() = default;
    explicit Param(Matrix v) : value(v), grad(v.rows, v.cols) {}
    Param(std::size_t r, std::size_t c) : value(r, c), grad(r, c) {}

    void zero_grad() { grad.zero(); }
};

class Graph;

// Handle to a node of one Graph. Cheap to copy; valid as long as the graph lives.
struct TensorRef {
    Graph* g = nullptr;
    std::size_t id = 0;
};

// Reverse-mode tape over dense 2-D tensors. Nodes are recorded in
// construction order, which is a topological order by construction; backward
// walks the tape in exact reverse. One graph serves one forward/backward
// step and is rebuilt per batch.
class Graph {
  public:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Param* param = nullptr;  // set for leaves bound to a Param
    };

    // ---- leaves ----
    TensorRef constant(Matrix m);
    TensorRef leaf(Param& p);  // copies p.value in; backward adds into p.grad

    // ---- ops ----
    TensorRef matmul(TensorRef a, TensorRef b);
    TensorRef add(TensorRef a, TensorRef b);
    TensorRef sub(TensorRef a, TensorRef b);
    TensorRef mul(TensorRef a, TensorRef b);
    TensorRef scale(TensorRef a, double s);
    // product with a trainable 1x1 scalar node, broadcast over a matrix
    TensorRef smul(TensorRef scalar, TensorRef m);
    // broadcast over rows: y[i,:] = x[i,:] + r / y[i,:] = x[i,:] * r, r is 1 x cols
    TensorRef row_add(TensorRef x, TensorRef r);
    TensorRef row_mul(TensorRef x, TensorRef r);
    TensorRef relu(TensorRef a);
    TensorRef sigmoid(TensorRef a);
    TensorRef tanh(TensorRef a);
    TensorRef sum_all(TensorRef a);                  // 1x1
    TensorRef concat_cols(std::span<const TensorRef> parts);
    // per-column batch normalization over the batch dimension; see layers.hpp
    TensorRef batchnorm_train(TensorRef x, TensorRef gamma, TensorRef beta, double epsilon,
                              std::vector<double>* batch_mean_out = nullptr,
                              std::vector<double>* batch_var_out = nullptr);
    // mean over batch of softmax cross-entropy against one-hot labels
    TensorRef softmax_cross_entropy(TensorRef logits, const Matrix& onehot);
    // mean over entries of -y*log(w*sigmoid(z)) - (1-y)*log(1-sigmoid(z));
    // sigmoid clamped to [1e-12, 1-1e-12] before the logs
    TensorRef weighted_bce(TensorRef logits, const Matrix& multihot, double pos_weight);

    // ---- access ----
    const Matrix& value(TensorRef t) const { return node(t).value; }
    const Matrix& grad(TensorRef t) const { return node(t).grad; }
    double scalar_value(TensorRef t) const;
    std::size_t num_nodes() const { return nodes_.size(); }

    // Seeds loss.grad with 1 and propagates through the tape in reverse,
    // accumulating into every requires_grad node and flushing leaf gradients
    // into their Params. loss must be 1x1.
    void backward(TensorRef loss);

  private:
    enum class OpKind {
        leaf,
        constant,
        matmul,
        add,
        sub,
        mul,
        scale,
        smul,
        row_add,
        row_mul,
        relu,
        sigmoid,
        tanh,
        sum_all,
        concat_cols,
        batchnorm,
        softmax_ce,
        weighted_bce,
    };

    struct Record {
        OpKind kind;
        std::size_t out;
        std::vector<std::size_t> in;
        double c0 = 0.0;                // scale factor / epsilon / pos_weight
        Matrix saved0;                  // op-specific forward state
        std::vector<double> saved1;     // op-specific forward state
    };

    Node& node(TensorRef t) { return nodes_[t.id]; }
    const Node& node(TensorRef t) const { return nodes_[t.id]; }
    Node& node(std::size_t id) { return nodes_[id]; }

    TensorRef new_node(std::size_t rows, std::size_t cols, bool requires_grad);
    void check_same_graph(TensorRef t) const;

    std::deque<Node> nodes_;       // deque: stable addresses as the tape grows
    std::vector<Record> tape_;
};

// Max over all parameter entries of the relative disagreement between the
// analytic gradient and central finite differences with the given step.
// loss_fn must run a full forward+backward pass, reading current parameter
// values and accumulating gradients, and must be deterministic (dropout off,
// batch norm in a fixed mode) -- this is checked by evaluating it twice.
double grad_check(const std::function<double()>& loss_fn, std::span<Param* const> params,
                  double step);

}  // namespace fusenet
