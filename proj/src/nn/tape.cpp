#include "m3/nn/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace m3::nn {

NodeId Tape::push(Matrix val, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(val), Matrix(), std::move(back), nullptr});
    return NodeId{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_of(NodeId id) {
    Node& n = nodes_[id.idx];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

NodeId Tape::leaf(TensorBuffer& tb) {
    NodeId id = push(tb.as_matrix());
    nodes_[id.idx].param = &tb;
    return id;
}

NodeId Tape::constant(Matrix m) { return push(std::move(m)); }

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: dimension mismatch");
    NodeId out = push(A * B);
    int oi = out.idx;
    nodes_[oi].back = [a, b, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        t.grad_of(a).noalias() += g * t.value(b).transpose();
        t.grad_of(b).noalias() += t.value(a).transpose() * g;
    };
    return out;
}

NodeId Tape::add(NodeId a, NodeId b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw std::invalid_argument("add: shape mismatch");
    NodeId out = push(value(a) + value(b));
    int oi = out.idx;
    nodes_[oi].back = [a, b, oi](Tape& t) {
        t.grad_of(a) += t.nodes_[oi].grad;
        t.grad_of(b) += t.nodes_[oi].grad;
    };
    return out;
}

NodeId Tape::add_bias(NodeId a, NodeId bias) {
    const Matrix& A = value(a);
    const Matrix& B = value(bias);
    if (B.cols() != 1 || B.rows() != A.rows()) throw std::invalid_argument("add_bias: shape mismatch");
    NodeId out = push(A.colwise() + B.col(0));
    int oi = out.idx;
    nodes_[oi].back = [a, bias, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        t.grad_of(a) += g;
        t.grad_of(bias).col(0) += g.rowwise().sum();
    };
    return out;
}

NodeId Tape::sub(NodeId a, NodeId b) {
    NodeId out = push(value(a) - value(b));
    int oi = out.idx;
    nodes_[oi].back = [a, b, oi](Tape& t) {
        t.grad_of(a) += t.nodes_[oi].grad;
        t.grad_of(b) -= t.nodes_[oi].grad;
    };
    return out;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw std::invalid_argument("mul: shape mismatch");
    NodeId out = push(value(a).cwiseProduct(value(b)));
    int oi = out.idx;
    nodes_[oi].back = [a, b, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        t.grad_of(a) += g.cwiseProduct(t.value(b));
        t.grad_of(b) += g.cwiseProduct(t.value(a));
    };
    return out;
}

NodeId Tape::scale(NodeId a, double k) {
    NodeId out = push(value(a) * k);
    int oi = out.idx;
    nodes_[oi].back = [a, k, oi](Tape& t) { t.grad_of(a) += t.nodes_[oi].grad * k; };
    return out;
}

NodeId Tape::add_scalar(NodeId a, double k) {
    NodeId out = push(value(a).array() + k);
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) { t.grad_of(a) += t.nodes_[oi].grad; };
    return out;
}

NodeId Tape::tanh_(NodeId a) {
    NodeId out = push(value(a).array().tanh());
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& y = t.nodes_[oi].val;
        t.grad_of(a).array() += t.nodes_[oi].grad.array() * (1.0 - y.array().square());
    };
    return out;
}

NodeId Tape::sigmoid_(NodeId a) {
    Matrix y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    NodeId out = push(std::move(y));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& y = t.nodes_[oi].val;
        t.grad_of(a).array() += t.nodes_[oi].grad.array() * y.array() * (1.0 - y.array());
    };
    return out;
}

NodeId Tape::softplus_(NodeId a) {
    // log(1+exp(x)) computed stably as max(x,0) + log1p(exp(-|x|))
    Matrix y = value(a).unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    NodeId out = push(std::move(y));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        Matrix s = t.value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        t.grad_of(a).array() += t.nodes_[oi].grad.array() * s.array();
    };
    return out;
}

NodeId Tape::exp_(NodeId a) {
    NodeId out = push(value(a).array().exp());
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        t.grad_of(a).array() += t.nodes_[oi].grad.array() * t.nodes_[oi].val.array();
    };
    return out;
}

NodeId Tape::log_(NodeId a) {
    NodeId out = push(value(a).array().log());
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        t.grad_of(a).array() += t.nodes_[oi].grad.array() / t.value(a).array();
    };
    return out;
}

NodeId Tape::square_(NodeId a) {
    NodeId out = push(value(a).array().square());
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        t.grad_of(a).array() += 2.0 * t.nodes_[oi].grad.array() * t.value(a).array();
    };
    return out;
}

NodeId Tape::clamp_(NodeId a, double lo, double hi) {
    NodeId out = push(value(a).array().min(hi).max(lo));
    int oi = out.idx;
    nodes_[oi].back = [a, lo, hi, oi](Tape& t) {
        const Matrix& x = t.value(a);
        Matrix inside = ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
        t.grad_of(a).array() += t.nodes_[oi].grad.array() * inside.array();
    };
    return out;
}

NodeId Tape::min_elem(NodeId a, NodeId b) {
    NodeId out = push(value(a).cwiseMin(value(b)));
    int oi = out.idx;
    nodes_[oi].back = [a, b, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        const Matrix& A = t.value(a);
        const Matrix& B = t.value(b);
        Matrix pick_a = (A.array() <= B.array()).cast<double>();
        t.grad_of(a).array() += g.array() * pick_a.array();
        t.grad_of(b).array() += g.array() * (1.0 - pick_a.array());
    };
    return out;
}

NodeId Tape::softmax_cols(NodeId a) {
    const Matrix& A = value(a);
    Matrix y(A.rows(), A.cols());
    for (int c = 0; c < A.cols(); ++c) {
        Eigen::VectorXd z = A.col(c).array() - A.col(c).maxCoeff();
        Eigen::VectorXd e = z.array().exp();
        y.col(c) = e / e.sum();
    }
    NodeId out = push(std::move(y));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& y = t.nodes_[oi].val;
        const Matrix& g = t.nodes_[oi].grad;
        Matrix& ga = t.grad_of(a);
        for (int c = 0; c < y.cols(); ++c) {
            double dot = y.col(c).dot(g.col(c));
            ga.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
        }
    };
    return out;
}

NodeId Tape::log_softmax_cols(NodeId a) {
    const Matrix& A = value(a);
    Matrix y(A.rows(), A.cols());
    for (int c = 0; c < A.cols(); ++c) {
        double mx = A.col(c).maxCoeff();
        double lse = mx + std::log((A.col(c).array() - mx).exp().sum());
        y.col(c) = A.col(c).array() - lse;
    }
    NodeId out = push(std::move(y));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& y = t.nodes_[oi].val;
        const Matrix& g = t.nodes_[oi].grad;
        Matrix& ga = t.grad_of(a);
        for (int c = 0; c < y.cols(); ++c) {
            double gsum = g.col(c).sum();
            ga.col(c).array() += g.col(c).array() - y.col(c).array().exp() * gsum;
        }
    };
    return out;
}

NodeId Tape::logsumexp_cols(NodeId a) {
    const Matrix& A = value(a);
    Matrix y(1, A.cols());
    for (int c = 0; c < A.cols(); ++c) {
        double mx = A.col(c).maxCoeff();
        y(0, c) = mx + std::log((A.col(c).array() - mx).exp().sum());
    }
    NodeId out = push(std::move(y));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& y = t.nodes_[oi].val;
        const Matrix& g = t.nodes_[oi].grad;
        const Matrix& A = t.value(a);
        Matrix& ga = t.grad_of(a);
        for (int c = 0; c < A.cols(); ++c)
            ga.col(c).array() += g(0, c) * (A.col(c).array() - y(0, c)).exp();
    };
    return out;
}

NodeId Tape::sum_rows(NodeId a) {
    NodeId out = push(value(a).colwise().sum());
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        Matrix& ga = t.grad_of(a);
        for (int c = 0; c < ga.cols(); ++c) ga.col(c).array() += g(0, c);
    };
    return out;
}

NodeId Tape::sum_all(NodeId a) {
    Matrix s(1, 1);
    s(0, 0) = value(a).sum();
    NodeId out = push(std::move(s));
    int oi = out.idx;
    nodes_[oi].back = [a, oi](Tape& t) { t.grad_of(a).array() += t.nodes_[oi].grad(0, 0); };
    return out;
}

NodeId Tape::mean_all(NodeId a) {
    double n = static_cast<double>(value(a).size());
    Matrix s(1, 1);
    s(0, 0) = value(a).sum() / n;
    NodeId out = push(std::move(s));
    int oi = out.idx;
    nodes_[oi].back = [a, oi, n](Tape& t) { t.grad_of(a).array() += t.nodes_[oi].grad(0, 0) / n; };
    return out;
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int cols = static_cast<int>(value(parts[0]).cols());
    int rows = 0;
    for (NodeId p : parts) {
        if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += static_cast<int>(value(p).rows());
    }
    Matrix y(rows, cols);
    int at = 0;
    for (NodeId p : parts) {
        y.middleRows(at, static_cast<int>(value(p).rows())) = value(p);
        at += static_cast<int>(value(p).rows());
    }
    NodeId out = push(std::move(y));
    int oi = out.idx;
    auto parts_copy = parts;
    nodes_[oi].back = [parts_copy, oi](Tape& t) {
        const Matrix& g = t.nodes_[oi].grad;
        int at = 0;
        for (NodeId p : parts_copy) {
            int r = static_cast<int>(t.value(p).rows());
            t.grad_of(p) += g.middleRows(at, r);
            at += r;
        }
    };
    return out;
}

NodeId Tape::slice_rows(NodeId a, int start, int len) {
    if (start < 0 || len < 0 || start + len > value(a).rows())
        throw std::invalid_argument("slice_rows: out of range");
    NodeId out = push(value(a).middleRows(start, len));
    int oi = out.idx;
    nodes_[oi].back = [a, start, len, oi](Tape& t) {
        t.grad_of(a).middleRows(start, len) += t.nodes_[oi].grad;
    };
    return out;
}

double Tape::scalar(NodeId id) const {
    const Matrix& v = value(id);
    if (v.size() != 1) throw std::invalid_argument("scalar: node is not 1x1");
    return v(0, 0);
}

void Tape::backward(NodeId loss) {
    if (nodes_.empty()) throw std::logic_error("backward: no forward tape recorded");
    if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad_of(loss)(0, 0) = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) continue;  // node did not contribute to the loss
        if (n.back) n.back(*this);
        if (n.param) n.param->accumulate_gradient(n.grad);
    }
    nodes_.clear();
}

}  // namespace m3::nn
