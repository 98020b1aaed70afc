#include "coetal/textfuse.hpp"

#include <cmath>
#include <stdexcept>

namespace coetal::textfuse {

static Mat uniform_init(int rows, int cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

TextFuseParams TextFuseParams::zeros(int provider_dim, int dim) {
    if (provider_dim < 1 || dim < 1) throw std::invalid_argument("textfuse: dims must be >= 1");
    TextFuseParams p;
    p.proj = Mat::Zero(provider_dim, dim);
    p.wq = p.wk = p.wv = Mat::Zero(dim, dim);
    return p;
}

TextFuseParams TextFuseParams::init(int provider_dim, int dim, Rng& rng) {
    TextFuseParams p = zeros(provider_dim, dim);
    p.proj = uniform_init(provider_dim, dim, rng);
    p.wq = uniform_init(dim, dim, rng);
    p.wk = uniform_init(dim, dim, rng);
    p.wv = uniform_init(dim, dim, rng);
    return p;
}

template <class Self, class Cb>
static void visit_impl(Self& self, const std::string& prefix, const Cb& cb) {
    cb(prefix + "proj", self.proj);
    cb(prefix + "wq", self.wq);
    cb(prefix + "wk", self.wk);
    cb(prefix + "wv", self.wv);
}

void TextFuseParams::visit(const std::string& prefix, const ParamVisitor& cb) {
    visit_impl(*this, prefix, cb);
}
void TextFuseParams::visit(const std::string& prefix, const ConstParamVisitor& cb) const {
    visit_impl(*this, prefix, cb);
}

TextFuseVars bind(Tape& tape, const TextFuseParams& params) {
    TextFuseVars v;
    v.proj = tape.input(params.proj);
    v.wq = tape.input(params.wq);
    v.wk = tape.input(params.wk);
    v.wv = tape.input(params.wv);
    return v;
}

EncodedBundle encode_bundle_raw(EmbeddingProvider& provider, const datapack::TextBundle& bundle) {
    if (bundle.coe_sentences.empty())
        throw std::invalid_argument("encode_bundle: bundle has no chain sentences");
    EncodedBundle out;
    try {
        out.captions = provider.encode_texts(bundle.captions);
    } catch (const EmbedError& e) {
        throw std::runtime_error("caption " + std::to_string(e.index) +
                                 " failed to encode: " + e.what());
    }
    try {
        out.coe = provider.encode_texts(bundle.coe_sentences);
    } catch (const EmbedError& e) {
        throw std::runtime_error("chain sentence " + std::to_string(e.index) +
                                 " failed to encode: " + e.what());
    }
    return out;
}

std::pair<Mat, Mat> encode_bundle(EmbeddingProvider& provider, const datapack::TextBundle& bundle,
                                  const Mat& proj) {
    if (provider.dim() != proj.rows())
        throw std::invalid_argument("encode_bundle: provider dim != projection rows");
    EncodedBundle raw = encode_bundle_raw(provider, bundle);
    return {raw.captions * proj, raw.coe * proj};
}

Var cross_attend(Tape& tape, Var f_cap, Var f_coe, Var wq, Var wk, Var wv) {
    if (tape.val(f_coe).rows() == 0)
        throw std::invalid_argument("cross_attend: no chain sentences to attend over");
    if (tape.val(f_cap).cols() != tape.val(f_coe).cols())
        throw std::invalid_argument("cross_attend: feature dims differ");
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.val(wq).cols()));
    Var q = tape.matmul(f_cap, wq);
    Var k = tape.matmul(f_coe, wk);
    Var v = tape.matmul(f_coe, wv);
    Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), scale));
    return tape.matmul(weights, v);
}

} // namespace coetal::textfuse
