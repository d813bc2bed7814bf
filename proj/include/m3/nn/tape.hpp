#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "m3/nn/tensor.hpp"

namespace m3::nn {

struct NodeId {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over a fixed op vocabulary. Nodes hold column-batched
/// matrices (features x batch); a plain vector is a one-column matrix.
/// Ops append nodes in topological order, so backward is a single reverse
/// sweep. Parameter leaves accumulate into their TensorBuffer gradient.
class Tape {
public:
    struct Node {
        Matrix val;
        Matrix grad;                      // lazily sized, zero-initialized
        std::function<void(Tape&)> back;  // empty for leaves/constants
        TensorBuffer* param = nullptr;    // set for parameter leaves
    };

    NodeId leaf(TensorBuffer& tb);
    NodeId constant(Matrix m);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);                 // same shape
    NodeId add_bias(NodeId a, NodeId bias);         // bias is m x 1, broadcast over columns
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);                 // elementwise
    NodeId scale(NodeId a, double k);
    NodeId add_scalar(NodeId a, double k);
    NodeId tanh_(NodeId a);
    NodeId sigmoid_(NodeId a);
    NodeId softplus_(NodeId a);
    NodeId exp_(NodeId a);
    NodeId log_(NodeId a);
    NodeId square_(NodeId a);
    NodeId clamp_(NodeId a, double lo, double hi);   // zero gradient outside [lo, hi]
    NodeId min_elem(NodeId a, NodeId b);            // subgradient routed to the smaller side
    NodeId softmax_cols(NodeId a);
    NodeId log_softmax_cols(NodeId a);
    NodeId logsumexp_cols(NodeId a);                // -> 1 x cols
    NodeId sum_rows(NodeId a);                      // -> 1 x cols
    NodeId sum_all(NodeId a);                       // -> 1 x 1
    NodeId mean_all(NodeId a);                      // -> 1 x 1
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId slice_rows(NodeId a, int start, int len);

    const Matrix& value(NodeId id) const { return nodes_[id.idx].val; }
    const Matrix& grad(NodeId id) const { return nodes_[id.idx].grad; }

    /// Backward pass from a scalar loss node. Writes parameter gradients
    /// into their TensorBuffers and clears the tape.
    void backward(NodeId loss);

    double scalar(NodeId id) const;
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

private:
    Node& node(NodeId id) { return nodes_[id.idx]; }
    NodeId push(Matrix val, std::function<void(Tape&)> back = {});
    Matrix& grad_of(NodeId id);

    std::deque<Node> nodes_;
};

}  // namespace m3::nn
