#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coetal/autodiff.hpp"
#include "coetal/rng.hpp"

namespace coetal::stpe {

using ParamVisitor = std::function<void(const std::string&, Mat&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Mat&)>;

struct PyramidConfig {
    int levels = 3;   // pyramid layers taking part in attention
    int m_nodes = 6;  // semantic neighbors per node
    int n_blocks = 2; // stacked encoder blocks
    int dim = 0;
    int ffn_hidden = 0; // 0 => 2 * dim

    int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 2 * dim; }
    void validate() const;
};

// Level lengths follow len(k+1) = floor(len(k) / 3); levels that would be
// empty are not built. Node t of level k has parent floor(t/3) on level k+1
// when that node exists (trailing remainder nodes have none).
struct PyramidLayout {
    std::vector<int> len;

    static PyramidLayout make(int t, int max_levels);
    int levels() const { return static_cast<int>(len.size()); }
    int offset(int level) const; // row offset of a level in the flattened node matrix
    int total() const;
    int parent(int level, int node) const; // node index on level+1, or -1
};

// One encoder block: stride-3 pyramid convolutions, shared temporal and
// semantic attention projections, and the feed-forward tail.
struct BlockParams {
    std::vector<Mat> pyramid_conv; // levels-1 kernels, each (3D x D): taps stacked row-wise
    Mat temporal_wq, temporal_wk, temporal_wv; // D x D
    Mat semantic_wq, semantic_wk, semantic_wv; // D x D
    Mat ffn_w1, ffn_b1, ffn_w2, ffn_b2;        // D x H, 1 x H, H x D, 1 x D
};

struct StpeParams {
    std::vector<BlockParams> blocks;

    static StpeParams zeros(const PyramidConfig& cfg);
    // uniform in +-1/sqrt(fan_in), biases zero
    static StpeParams init(const PyramidConfig& cfg, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& cb);
    void visit(const std::string& prefix, const ConstParamVisitor& cb) const;
};

struct BlockVars {
    std::vector<Var> pyramid_conv;
    Var temporal_wq, temporal_wk, temporal_wv;
    Var semantic_wq, semantic_wk, semantic_wv;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct StpeVars {
    std::vector<BlockVars> blocks;
};

// Registers every parameter on the tape, in visit() order.
StpeVars bind(Tape& tape, const StpeParams& params);

struct PyramidVars {
    PyramidLayout layout;
    std::vector<Var> levels; // level k is len[k] x D
};

// F^{k+1}[j] = kernel applied to rows (3j, 3j+1, 3j+2) of F^k. Kernel count
// may exceed the number of built transitions; extras are ignored.
PyramidVars build_pyramid(Tape& tape, Var f, const std::vector<Var>& conv_kernels,
                          int max_levels);

// Scaled dot-product attention where node t attends over {t-1, t, t+1} on
// its own level plus its parent, when present. Boundary neighbors are
// omitted, not padded. Shape-preserving per level.
PyramidVars temporal_attention(Tape& tape, const PyramidVars& pyr, Var wq, Var wk, Var wv);

// For each row, the min(m, n-1) other rows with highest cosine similarity,
// ties broken by lower index. Zero-norm rows compare as similarity 0.
// Requires n >= 2.
std::vector<std::vector<int>> semantic_topm(const Mat& f_level, int m);

// Attention over the top-m similar rows (self excluded). Levels with a
// single node have no candidates and pass through unchanged.
Var semantic_attention(Tape& tape, Var f_level, Var wq, Var wk, Var wv, int m);

// Per block: pyramid -> temporal attention -> semantic attention on every
// built level -> level-1 plus the block input -> feed-forward with relu ->
// residual. Returns the final block's level-1 nodes (T x D). Throws on
// non-finite intermediates.
Var stpe_forward(Tape& tape, Var f, const PyramidConfig& cfg, const StpeVars& vars);

// Convenience wrapper that binds params on a local tape and returns values.
Mat stpe_forward_values(const Mat& f, const PyramidConfig& cfg, const StpeParams& params);

} // namespace coetal::stpe
