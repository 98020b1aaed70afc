#include "coetal/stpe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coetal::stpe {

void PyramidConfig::validate() const {
    if (levels < 1) throw std::invalid_argument("pyramid: levels must be >= 1");
    if (m_nodes < 1) throw std::invalid_argument("pyramid: m_nodes must be >= 1");
    if (n_blocks < 1) throw std::invalid_argument("pyramid: n_blocks must be >= 1");
    if (dim < 1) throw std::invalid_argument("pyramid: dim must be >= 1");
}

PyramidLayout PyramidLayout::make(int t, int max_levels) {
    if (t < 1) throw std::invalid_argument("pyramid: t must be >= 1");
    if (max_levels < 1) throw std::invalid_argument("pyramid: levels must be >= 1");
    PyramidLayout layout;
    int len = t;
    layout.len.push_back(len);
    while (static_cast<int>(layout.len.size()) < max_levels && len / 3 >= 1) {
        len /= 3;
        layout.len.push_back(len);
    }
    return layout;
}

int PyramidLayout::offset(int level) const {
    int off = 0;
    for (int k = 0; k < level; ++k) off += len[static_cast<size_t>(k)];
    return off;
}

int PyramidLayout::total() const {
    return std::accumulate(len.begin(), len.end(), 0);
}

int PyramidLayout::parent(int level, int node) const {
    if (level + 1 >= levels()) return -1;
    const int p = node / 3;
    return p < len[static_cast<size_t>(level + 1)] ? p : -1;
}

static Mat uniform_init(int rows, int cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    return m;
}

static BlockParams block_zeros(const PyramidConfig& cfg) {
    BlockParams b;
    const int d = cfg.dim;
    for (int l = 0; l + 1 < cfg.levels; ++l) b.pyramid_conv.push_back(Mat::Zero(3 * d, d));
    b.temporal_wq = b.temporal_wk = b.temporal_wv = Mat::Zero(d, d);
    b.semantic_wq = b.semantic_wk = b.semantic_wv = Mat::Zero(d, d);
    b.ffn_w1 = Mat::Zero(d, cfg.hidden());
    b.ffn_b1 = Mat::Zero(1, cfg.hidden());
    b.ffn_w2 = Mat::Zero(cfg.hidden(), d);
    b.ffn_b2 = Mat::Zero(1, d);
    return b;
}

StpeParams StpeParams::zeros(const PyramidConfig& cfg) {
    cfg.validate();
    StpeParams p;
    for (int i = 0; i < cfg.n_blocks; ++i) p.blocks.push_back(block_zeros(cfg));
    return p;
}

StpeParams StpeParams::init(const PyramidConfig& cfg, Rng& rng) {
    StpeParams p = zeros(cfg);
    for (BlockParams& b : p.blocks) {
        for (Mat& k : b.pyramid_conv) k = uniform_init(static_cast<int>(k.rows()), static_cast<int>(k.cols()), rng);
        b.temporal_wq = uniform_init(cfg.dim, cfg.dim, rng);
        b.temporal_wk = uniform_init(cfg.dim, cfg.dim, rng);
        b.semantic_wq = uniform_init(cfg.dim, cfg.dim, rng);
        b.semantic_wk = uniform_init(cfg.dim, cfg.dim, rng);
        b.ffn_w1 = uniform_init(cfg.dim, cfg.hidden(), rng);
        // value projections and the feed-forward output start at zero, so a
        // fresh encoder is the identity map (residual stream) and the
        // attention branches grow only as training demands
        b.temporal_wv = Mat::Zero(cfg.dim, cfg.dim);
        b.semantic_wv = Mat::Zero(cfg.dim, cfg.dim);
        b.ffn_w2 = Mat::Zero(cfg.hidden(), cfg.dim);
    }
    return p;
}

template <class Self, class Cb>
static void visit_impl(Self& self, const std::string& prefix, const Cb& cb) {
    for (size_t i = 0; i < self.blocks.size(); ++i) {
        auto& b = self.blocks[i];
        const std::string bp = prefix + "block" + std::to_string(i) + ".";
        for (size_t l = 0; l < b.pyramid_conv.size(); ++l)
            cb(bp + "pyramid_conv" + std::to_string(l), b.pyramid_conv[l]);
        cb(bp + "temporal_wq", b.temporal_wq);
        cb(bp + "temporal_wk", b.temporal_wk);
        cb(bp + "temporal_wv", b.temporal_wv);
        cb(bp + "semantic_wq", b.semantic_wq);
        cb(bp + "semantic_wk", b.semantic_wk);
        cb(bp + "semantic_wv", b.semantic_wv);
        cb(bp + "ffn_w1", b.ffn_w1);
        cb(bp + "ffn_b1", b.ffn_b1);
        cb(bp + "ffn_w2", b.ffn_w2);
        cb(bp + "ffn_b2", b.ffn_b2);
    }
}

void StpeParams::visit(const std::string& prefix, const ParamVisitor& cb) {
    visit_impl(*this, prefix, cb);
}
void StpeParams::visit(const std::string& prefix, const ConstParamVisitor& cb) const {
    visit_impl(*this, prefix, cb);
}

StpeVars bind(Tape& tape, const StpeParams& params) {
    StpeVars vars;
    for (const BlockParams& b : params.blocks) {
        BlockVars v;
        for (const Mat& k : b.pyramid_conv) v.pyramid_conv.push_back(tape.input(k));
        v.temporal_wq = tape.input(b.temporal_wq);
        v.temporal_wk = tape.input(b.temporal_wk);
        v.temporal_wv = tape.input(b.temporal_wv);
        v.semantic_wq = tape.input(b.semantic_wq);
        v.semantic_wk = tape.input(b.semantic_wk);
        v.semantic_wv = tape.input(b.semantic_wv);
        v.ffn_w1 = tape.input(b.ffn_w1);
        v.ffn_b1 = tape.input(b.ffn_b1);
        v.ffn_w2 = tape.input(b.ffn_w2);
        v.ffn_b2 = tape.input(b.ffn_b2);
        vars.blocks.push_back(std::move(v));
    }
    return vars;
}

PyramidVars build_pyramid(Tape& tape, Var f, const std::vector<Var>& conv_kernels,
                          int max_levels) {
    PyramidVars pyr;
    pyr.layout = PyramidLayout::make(static_cast<int>(tape.val(f).rows()), max_levels);
    pyr.levels.push_back(f);
    for (int k = 0; k + 1 < pyr.layout.levels(); ++k) {
        if (static_cast<size_t>(k) >= conv_kernels.size())
            throw std::invalid_argument("build_pyramid: not enough conv kernels");
        const int n_out = pyr.layout.len[static_cast<size_t>(k + 1)];
        std::vector<int> tap0, tap1, tap2;
        for (int j = 0; j < n_out; ++j) {
            tap0.push_back(3 * j);
            tap1.push_back(3 * j + 1);
            tap2.push_back(3 * j + 2);
        }
        Var prev = pyr.levels.back();
        Var grouped = tape.concat_cols({tape.gather_rows(prev, tap0),
                                        tape.gather_rows(prev, tap1),
                                        tape.gather_rows(prev, tap2)});
        pyr.levels.push_back(tape.matmul(grouped, conv_kernels[static_cast<size_t>(k)]));
    }
    return pyr;
}

PyramidVars temporal_attention(Tape& tape, const PyramidVars& pyr, Var wq, Var wk, Var wv) {
    const PyramidLayout& lay = pyr.layout;
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.val(wq).cols()));

    Var flat = lay.levels() == 1 ? pyr.levels[0] : tape.concat_rows(pyr.levels);
    Var q_all = tape.matmul(flat, wq);
    Var k_all = tape.matmul(flat, wk);
    Var v_all = tape.matmul(flat, wv);

    PyramidVars out;
    out.layout = lay;
    for (int level = 0; level < lay.levels(); ++level) {
        const int n = lay.len[static_cast<size_t>(level)];
        const int off = lay.offset(level);
        std::vector<Var> rows;
        rows.reserve(static_cast<size_t>(n));
        for (int t = 0; t < n; ++t) {
            std::vector<int> nbr;
            if (t > 0) nbr.push_back(off + t - 1);
            nbr.push_back(off + t);
            if (t + 1 < n) nbr.push_back(off + t + 1);
            const int par = lay.parent(level, t);
            if (par >= 0) nbr.push_back(lay.offset(level + 1) + par);

            Var q = tape.gather_rows(q_all, {off + t});
            Var keys = tape.gather_rows(k_all, nbr);
            Var vals = tape.gather_rows(v_all, nbr);
            Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(q, keys), scale));
            rows.push_back(tape.matmul(weights, vals));
        }
        out.levels.push_back(n == 1 ? rows[0] : tape.concat_rows(rows));
    }
    return out;
}

std::vector<std::vector<int>> semantic_topm(const Mat& f_level, int m) {
    const int n = static_cast<int>(f_level.rows());
    if (n < 2) throw std::invalid_argument("semantic_topm: needs at least 2 rows");
    if (m < 1) throw std::invalid_argument("semantic_topm: m must be >= 1");

    Vec norms(n);
    for (int i = 0; i < n; ++i) norms(i) = f_level.row(i).norm();

    const int take = std::min(m, n - 1);
    std::vector<std::vector<int>> sets(static_cast<size_t>(n));
    std::vector<std::pair<double, int>> scored;
    for (int t = 0; t < n; ++t) {
        scored.clear();
        for (int j = 0; j < n; ++j) {
            if (j == t) continue;
            const double denom = norms(t) * norms(j);
            const double sim = denom > 0.0 ? f_level.row(t).dot(f_level.row(j)) / denom : 0.0;
            scored.emplace_back(sim, j);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int r = 0; r < take; ++r)
            sets[static_cast<size_t>(t)].push_back(scored[static_cast<size_t>(r)].second);
    }
    return sets;
}

Var semantic_attention(Tape& tape, Var f_level, Var wq, Var wk, Var wv, int m) {
    const int n = static_cast<int>(tape.val(f_level).rows());
    if (n < 2) return f_level; // no candidates to attend over

    const auto sets = semantic_topm(tape.val(f_level), m);
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.val(wq).cols()));
    Var q_all = tape.matmul(f_level, wq);
    Var k_all = tape.matmul(f_level, wk);
    Var v_all = tape.matmul(f_level, wv);

    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) {
        Var q = tape.gather_rows(q_all, {t});
        Var keys = tape.gather_rows(k_all, sets[static_cast<size_t>(t)]);
        Var vals = tape.gather_rows(v_all, sets[static_cast<size_t>(t)]);
        Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(q, keys), scale));
        rows.push_back(tape.matmul(weights, vals));
    }
    return n == 1 ? rows[0] : tape.concat_rows(rows);
}

Var stpe_forward(Tape& tape, Var f, const PyramidConfig& cfg, const StpeVars& vars) {
    cfg.validate();
    if (tape.val(f).cols() != cfg.dim)
        throw std::invalid_argument("stpe_forward: input dim != cfg.dim");
    if (vars.blocks.size() != static_cast<size_t>(cfg.n_blocks))
        throw std::invalid_argument("stpe_forward: block count mismatch");

    Var cur = f;
    for (const BlockVars& b : vars.blocks) {
        PyramidVars pyr = build_pyramid(tape, cur, b.pyramid_conv, cfg.levels);
        PyramidVars tmp = temporal_attention(tape, pyr, b.temporal_wq, b.temporal_wk, b.temporal_wv);
        std::vector<Var> sem(tmp.levels.size());
        for (size_t l = 0; l < tmp.levels.size(); ++l)
            sem[l] = semantic_attention(tape, tmp.levels[l], b.semantic_wq, b.semantic_wk,
                                        b.semantic_wv, cfg.m_nodes);
        Var h = tape.add(sem[0], cur);
        Var hidden = tape.relu(tape.add_rowvec(tape.matmul(h, b.ffn_w1), b.ffn_b1));
        Var ffn = tape.add_rowvec(tape.matmul(hidden, b.ffn_w2), b.ffn_b2);
        cur = tape.add(ffn, h);
        if (!all_finite(tape.val(cur)))
            throw std::runtime_error("stpe_forward: non-finite block output");
    }
    return cur;
}

Mat stpe_forward_values(const Mat& f, const PyramidConfig& cfg, const StpeParams& params) {
    Tape tape;
    Var in = tape.input(f);
    StpeVars vars = bind(tape, params);
    return tape.val(stpe_forward(tape, in, cfg, vars));
}

} // namespace coetal::stpe
