#include "coetal/align.hpp"

#include <cmath>
#include <stdexcept>

namespace coetal::align {

Similarity similarity_from_name(const std::string& name) {
    if (name == "cosine") return Similarity::cosine;
    if (name == "euclidean") return Similarity::euclidean;
    if (name == "manhattan") return Similarity::manhattan;
    throw std::runtime_error("unknown similarity metric: " + name);
}

const char* similarity_name(Similarity s) {
    switch (s) {
    case Similarity::cosine: return "cosine";
    case Similarity::euclidean: return "euclidean";
    case Similarity::manhattan: return "manhattan";
    }
    throw std::logic_error("bad similarity");
}

static Mat uniform_init(int rows, int cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

AlignParams AlignParams::zeros(int dim, int shots, int head_hidden) {
    if (dim < 1 || shots < 1 || head_hidden < 1)
        throw std::invalid_argument("align: dim, shots and head_hidden must be >= 1");
    AlignParams p;
    p.fuse_w1 = Mat::Zero(2 * dim, dim);
    p.fuse_b1 = Mat::Zero(1, dim);
    p.fuse_w2 = Mat::Zero(dim, dim);
    p.fuse_b2 = Mat::Zero(1, dim);
    p.head_w1 = Mat::Zero(3 * shots, head_hidden);
    p.head_b1 = Mat::Zero(1, head_hidden);
    p.head_w2 = Mat::Zero(3 * head_hidden, 1);
    p.head_b2 = Mat::Zero(1, 1);
    return p;
}

AlignParams AlignParams::init(int dim, int shots, int head_hidden, Rng& rng) {
    AlignParams p = zeros(dim, shots, head_hidden);
    // Fusion starts near a pass-through of the visual half (text rows small,
    // visual rows identity, second conv identity), so the video-text map is
    // meaningful before the text pathway has trained.
    p.fuse_w1 = uniform_init(2 * dim, dim, rng);
    p.fuse_w1.bottomRows(dim) += Mat::Identity(dim, dim);
    p.fuse_w2 = Mat::Identity(dim, dim);
    p.head_w1 = uniform_init(3 * shots, head_hidden, rng);
    p.head_w2 = uniform_init(3 * head_hidden, 1, rng);
    return p;
}

template <class Self, class Cb>
static void visit_impl(Self& self, const std::string& prefix, const Cb& cb) {
    cb(prefix + "fuse_w1", self.fuse_w1);
    cb(prefix + "fuse_b1", self.fuse_b1);
    cb(prefix + "fuse_w2", self.fuse_w2);
    cb(prefix + "fuse_b2", self.fuse_b2);
    cb(prefix + "head_w1", self.head_w1);
    cb(prefix + "head_b1", self.head_b1);
    cb(prefix + "head_w2", self.head_w2);
    cb(prefix + "head_b2", self.head_b2);
}

void AlignParams::visit(const std::string& prefix, const ParamVisitor& cb) {
    visit_impl(*this, prefix, cb);
}
void AlignParams::visit(const std::string& prefix, const ConstParamVisitor& cb) const {
    visit_impl(*this, prefix, cb);
}

AlignVars bind(Tape& tape, const AlignParams& params) {
    AlignVars v;
    v.fuse_w1 = tape.input(params.fuse_w1);
    v.fuse_b1 = tape.input(params.fuse_b1);
    v.fuse_w2 = tape.input(params.fuse_w2);
    v.fuse_b2 = tape.input(params.fuse_b2);
    v.head_w1 = tape.input(params.head_w1);
    v.head_b1 = tape.input(params.head_b1);
    v.head_w2 = tape.input(params.head_w2);
    v.head_b2 = tape.input(params.head_b2);
    return v;
}

Var cosine_map(Tape& tape, Var f_q, Var f_s) {
    if (tape.val(f_q).cols() != tape.val(f_s).cols())
        throw std::invalid_argument("cosine_map: feature dims differ");
    return tape.matmul_nt(tape.normalize_rows(f_q), tape.normalize_rows(f_s));
}

Var alignment_map(Tape& tape, Var f_q, Var f_s, Similarity metric) {
    if (metric == Similarity::cosine) return cosine_map(tape, f_q, f_s);

    const Eigen::Index tq = tape.val(f_q).rows();
    const Eigen::Index ts = tape.val(f_s).rows();
    const Eigen::Index d = tape.val(f_q).cols();
    if (d != tape.val(f_s).cols()) throw std::invalid_argument("alignment_map: feature dims differ");

    Var ones_col = tape.input(Mat::Ones(d, 1));
    if (metric == Similarity::euclidean) {
        // d2 = |q_i|^2 + |s_j|^2 - 2 q_i . s_j, sim = 1 / (1 + d2)
        Var q2 = tape.matmul(tape.mul(f_q, f_q), ones_col); // T_q x 1
        Var s2 = tape.matmul(tape.mul(f_s, f_s), ones_col); // T_s x 1
        Var q2_grid = tape.matmul(q2, tape.input(Mat::Ones(1, ts)));
        Var s2_grid = tape.matmul_nt(tape.input(Mat::Ones(tq, 1)), s2);
        Var d2 = tape.sub(tape.add(q2_grid, s2_grid), tape.scale(tape.matmul_nt(f_q, f_s), 2.0));
        return tape.reciprocal(tape.add(d2, tape.input(Mat::Ones(tq, ts))));
    }

    // manhattan: per query row, |q_i - s_j| summed over features, sim = 1/(1+d1)
    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(tq));
    Var ones_ts = tape.input(Mat::Ones(ts, 1));
    for (Eigen::Index i = 0; i < tq; ++i) {
        Var qi = tape.gather_rows(f_q, {static_cast<int>(i)});
        Var qi_grid = tape.matmul(ones_ts, qi); // T_s x D
        Var diff = tape.sub(qi_grid, f_s);
        Var abs = tape.add(tape.relu(diff), tape.relu(tape.scale(diff, -1.0)));
        Var d1 = tape.matmul(abs, ones_col); // T_s x 1
        Var sim = tape.reciprocal(tape.add(d1, tape.input(Mat::Ones(ts, 1))));
        rows.push_back(tape.matmul_nt(tape.input(Mat::Ones(1, 1)), sim)); // 1 x T_s
    }
    return rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
}

Var fuse_video_text(Tape& tape, Var f_t, Var f_s, const AlignVars& vars) {
    if (tape.val(f_t).rows() != tape.val(f_s).rows() ||
        tape.val(f_t).cols() != tape.val(f_s).cols())
        throw std::invalid_argument("fuse_video_text: shapes differ");
    Var cat = tape.concat_cols({f_t, f_s});
    Var hidden = tape.relu(tape.add_rowvec(tape.matmul(cat, vars.fuse_w1), vars.fuse_b1));
    return tape.add_rowvec(tape.matmul(hidden, vars.fuse_w2), vars.fuse_b2);
}

Mat support_background_mask(const Vec& support_mask, int t_q) {
    if (t_q < 1) throw std::invalid_argument("support_background_mask: t_q must be >= 1");
    Mat m(t_q, support_mask.size());
    for (int i = 0; i < t_q; ++i) m.row(i) = support_mask.transpose();
    return m;
}

Var combine_maps(Tape& tape, Var m_v, Var m_vt, Var m_mask) {
    return tape.mul(tape.mul(m_v, m_vt), m_mask);
}

// rows (t-1, t, t+1) of x side by side, zero rows past the boundary
static Var unroll_width3(Tape& tape, Var x) {
    const int n = static_cast<int>(tape.val(x).rows());
    std::vector<int> prev(static_cast<size_t>(n)), self(static_cast<size_t>(n)),
        next(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) {
        prev[static_cast<size_t>(t)] = t - 1;
        self[static_cast<size_t>(t)] = t;
        next[static_cast<size_t>(t)] = t + 1 < n ? t + 1 : -1;
    }
    return tape.concat_cols({tape.gather_rows(x, prev), tape.gather_rows(x, self),
                             tape.gather_rows(x, next)});
}

Var predict_foreground(Tape& tape, const std::vector<Var>& combined_maps, const AlignVars& vars) {
    if (combined_maps.empty()) throw std::invalid_argument("predict_foreground: no maps");
    std::vector<Var> pooled;
    pooled.reserve(combined_maps.size());
    for (Var m : combined_maps) pooled.push_back(tape.max_cols(m)); // T_q x 1 each
    Var channels = pooled.size() == 1 ? pooled[0] : tape.concat_cols(pooled); // T_q x K

    Var h = tape.relu(
        tape.add_rowvec(tape.matmul(unroll_width3(tape, channels), vars.head_w1), vars.head_b1));
    Var logits = tape.add_rowvec(tape.matmul(unroll_width3(tape, h), vars.head_w2), vars.head_b2);
    Var probs = tape.sigmoid(logits);
    if (!all_finite(tape.val(probs)))
        throw std::runtime_error("predict_foreground: non-finite activations");
    return probs;
}

} // namespace coetal::align
