#pragma once

#include <functional>
#include <vector>

#include "coetal/tensor.hpp"

namespace coetal {

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double matrices. Values are computed eagerly
// when an op is recorded, so data-dependent control flow (top-m selection,
// run extraction) can read them mid-graph; backward() then accumulates
// gradients for every node reachable from the seeded scalar.
//
// The op set is exactly what the model needs: attention, pointwise and
// temporal convolutions, cosine maps, pooling, and the loss. Non-smooth ops
// (relu, max, clamp, row gathers driven by similarity ranking) use the
// conventional subgradient that routes to the active branch.
class Tape {
  public:
    Var input(Mat value);

    const Mat& val(Var v) const { return nodes_[check(v)].value; }
    const Mat& grad(Var v) const { return nodes_[check(v)].grad; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b); // elementwise
    Var scale(Var a, double c);
    Var matmul(Var a, Var b);    // A * B
    Var matmul_nt(Var a, Var b); // A * B^T
    Var add_rowvec(Var a, Var r); // r is 1xC, broadcast over rows of a
    Var relu(Var a);
    Var sigmoid(Var a);
    Var log(Var a);
    Var reciprocal(Var a); // elementwise 1/x
    Var clamp(Var a, double lo, double hi);
    Var softmax_rows(Var a);
    // index -1 selects an implicit zero row (used for zero padding)
    Var gather_rows(Var a, std::vector<int> indices);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    // L2-normalizes each row; all-zero rows stay zero
    Var normalize_rows(Var a);
    // per-row maximum -> n x 1; gradient routed to the first argmax
    Var max_cols(Var a);
    Var sum(Var a); // 1x1

    // Seeds d(out)/d(out) = 1 for a 1x1 node and runs the reverse sweep.
    void backward(Var scalar_out);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&, const Mat&)> back; // empty for leaves
    };

    int check(Var v) const;
    Var push(Mat value, std::function<void(Tape&, const Mat&)> back);
    void accumulate(Var v, const Mat& g);

    std::vector<Node> nodes_;
};

} // namespace coetal
