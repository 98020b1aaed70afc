#pragma once

#include <functional>
#include <string>
#include <utility>

#include "coetal/autodiff.hpp"
#include "coetal/datapack.hpp"
#include "coetal/providers.hpp"

namespace coetal::textfuse {

using ParamVisitor = std::function<void(const std::string&, Mat&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Mat&)>;

struct TextFuseParams {
    Mat proj;           // provider dim D' -> model dim D
    Mat wq, wk, wv;     // D x D cross-attention projections

    static TextFuseParams zeros(int provider_dim, int dim);
    static TextFuseParams init(int provider_dim, int dim, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& cb);
    void visit(const std::string& prefix, const ConstParamVisitor& cb) const;
};

struct TextFuseVars {
    Var proj, wq, wk, wv;
};

TextFuseVars bind(Tape& tape, const TextFuseParams& params);

// Raw provider embeddings for one support's bundle: captions (T x D') and
// chain sentences (T' x D'). Provider failures are rethrown with the
// offending string identified.
struct EncodedBundle {
    Mat captions; // T x D'
    Mat coe;      // T' x D'
};
EncodedBundle encode_bundle_raw(EmbeddingProvider& provider, const datapack::TextBundle& bundle);

// Projected caption / chain features (T x D, T' x D).
std::pair<Mat, Mat> encode_bundle(EmbeddingProvider& provider, const datapack::TextBundle& bundle,
                                  const Mat& proj);

// Caption rows query the chain sentences:
//   out = softmax(F_cap Wq (F_coe Wk)^T / sqrt(D)) (F_coe Wv)
// Output keeps the caption's temporal order. Throws when f_coe is empty.
Var cross_attend(Tape& tape, Var f_cap, Var f_coe, Var wq, Var wk, Var wv);

} // namespace coetal::textfuse
