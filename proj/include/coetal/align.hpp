#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coetal/autodiff.hpp"
#include "coetal/rng.hpp"

namespace coetal::align {

using ParamVisitor = std::function<void(const std::string&, Mat&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Mat&)>;

// Query-support snippet affinity metric. Cosine is the default; the others
// are bounded inverse-distance transforms (1/(1+d^2) and 1/(1+d1)) exposed
// for ablations only.
enum class Similarity { cosine, euclidean, manhattan };

Similarity similarity_from_name(const std::string& name);
const char* similarity_name(Similarity s);

struct AlignParams {
    // video-text fusion: two pointwise convolutions over concatenated features
    Mat fuse_w1, fuse_b1; // 2D x D, 1 x D
    Mat fuse_w2, fuse_b2; // D x D, 1 x D
    // prediction head: two width-3 temporal convolutions over K pooled channels
    Mat head_w1, head_b1; // 3K x H, 1 x H
    Mat head_w2, head_b2; // 3H x 1, 1 x 1

    static AlignParams zeros(int dim, int shots, int head_hidden);
    static AlignParams init(int dim, int shots, int head_hidden, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& cb);
    void visit(const std::string& prefix, const ConstParamVisitor& cb) const;
};

struct AlignVars {
    Var fuse_w1, fuse_b1, fuse_w2, fuse_b2;
    Var head_w1, head_b1, head_w2, head_b2;
};

AlignVars bind(Tape& tape, const AlignParams& params);

// values[i, j] = cos(f_q row i, f_s row j); zero-norm rows compare as 0.
Var cosine_map(Tape& tape, Var f_q, Var f_s);

Var alignment_map(Tape& tape, Var f_q, Var f_s, Similarity metric);

// Conv2(relu(Conv1(f_t (+) f_s))) with feature-dim concatenation, text block
// first; both convolutions are pointwise over time.
Var fuse_video_text(Tape& tape, Var f_t, Var f_s, const AlignVars& vars);

// T_q x T_s matrix whose column j repeats support_mask[j]: columns of
// background support snippets are zeroed, query rows untouched.
Mat support_background_mask(const Vec& support_mask, int t_q);

Var combine_maps(Tape& tape, Var m_v, Var m_vt, Var m_mask);

// Per query snippet: max over support time of each of the K combined maps,
// stacked as channels, then two width-3 zero-padded temporal convolutions
// (K -> H -> 1, relu between) and a sigmoid. Returns T_q x 1 probabilities.
Var predict_foreground(Tape& tape, const std::vector<Var>& combined_maps, const AlignVars& vars);

} // namespace coetal::align
