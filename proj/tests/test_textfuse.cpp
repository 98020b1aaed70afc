#include <doctest.h>

#include <cmath>

#include "coetal/textfuse.hpp"

using namespace coetal;
using namespace coetal::textfuse;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
}

// the documented mock embedding rule, recomputed independently
Vec mock_rule(std::string_view text, int dim, std::uint64_t seed) {
    std::uint64_t state = fnv1a64(text) ^ (seed * 0x9e3779b97f4a7c15ull);
    std::uint64_t stream = splitmix64(state);
    Rng rng(stream);
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    return v / v.norm();
}

} // namespace

TEST_CASE("mock embedder follows its documented rule") {
    MockEmbedder provider(16, 7);
    const Mat got = provider.encode_texts({"a person performs the action0 movement"});
    const Vec want = mock_rule("a person performs the action0 movement", 16, 7);
    CHECK((got.row(0).transpose() - want).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(got.row(0).norm() == doctest::Approx(1.0));

    // identical strings embed identically
    const Mat twice = provider.encode_texts({"x y", "x y"});
    CHECK(twice.row(0) == twice.row(1));

    // frames keyed by their data share the text space
    const Mat frame = provider.encode_frames({{"id0", "x y"}});
    CHECK(frame.row(0) == twice.row(0));
}

TEST_CASE("encode_bundle shapes and failure context") {
    MockEmbedder provider(16, 7);
    datapack::TextBundle bundle;
    bundle.captions = {"first snippet", "second snippet", "third snippet"};
    bundle.coe_sentences = {"an event happens", "which causes another"};
    Rng rng(2);
    const Mat proj = random_mat(16, 8, rng);

    auto [cap, coe] = encode_bundle(provider, bundle, proj);
    CHECK(cap.rows() == 3);
    CHECK(cap.cols() == 8);
    CHECK(coe.rows() == 2);
    CHECK(coe.cols() == 8);

    // projection applied
    const Mat raw = provider.encode_texts(bundle.captions);
    CHECK((cap - raw * proj).cwiseAbs().maxCoeff() < 1e-12);

    provider.fail_on("second");
    CHECK_THROWS_WITH_AS(encode_bundle(provider, bundle, proj), doctest::Contains("caption 1"),
                         std::runtime_error);
}

TEST_CASE("cross attention single key and shapes") {
    Rng rng(3);
    const int d = 6;
    const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng), wv = random_mat(d, d, rng);

    SUBCASE("one chain sentence: every row is its value projection") {
        const Mat cap = random_mat(4, d, rng);
        const Mat coe = random_mat(1, d, rng);
        Tape tape;
        Var out = cross_attend(tape, tape.input(cap), tape.input(coe), tape.input(wq),
                               tape.input(wk), tape.input(wv));
        const Mat expect = coe * wv;
        for (int i = 0; i < 4; ++i)
            CHECK((tape.val(out).row(i) - expect).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("output shape follows the captions") {
        const Mat cap = random_mat(5, d, rng);
        const Mat coe = random_mat(3, d, rng);
        Tape tape;
        Var out = cross_attend(tape, tape.input(cap), tape.input(coe), tape.input(wq),
                               tape.input(wk), tape.input(wv));
        CHECK(tape.val(out).rows() == 5);
        CHECK(tape.val(out).cols() == d);
    }

    SUBCASE("empty chain rejected") {
        const Mat cap = random_mat(4, d, rng);
        Tape tape;
        CHECK_THROWS(cross_attend(tape, tape.input(cap), tape.input(Mat(0, d)), tape.input(wq),
                                  tape.input(wk), tape.input(wv)));
    }
}

TEST_CASE("cross attention matches a per-row softmax oracle") {
    Rng rng(4);
    const int d = 8, t = 4, tp = 3, shots = 2;
    const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng), wv = random_mat(d, d, rng);
    for (int k = 0; k < shots; ++k) {
        const Mat cap = random_mat(t, d, rng);
        const Mat coe = random_mat(tp, d, rng);
        Tape tape;
        Var out = cross_attend(tape, tape.input(cap), tape.input(coe), tape.input(wq),
                               tape.input(wk), tape.input(wv));

        const Mat q = cap * wq, kk = coe * wk, v = coe * wv;
        for (int i = 0; i < t; ++i) {
            Eigen::VectorXd logits(tp);
            for (int j = 0; j < tp; ++j)
                logits(j) = q.row(i).dot(kk.row(j)) / std::sqrt(static_cast<double>(d));
            Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
            w /= w.sum();
            Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(d);
            for (int j = 0; j < tp; ++j) expect += w(j) * v.row(j);
            CHECK((tape.val(out).row(i) - expect).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("cross attention row properties") {
    Rng rng(5);
    const int d = 5, t = 6, tp = 4;
    const Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng), wv = random_mat(d, d, rng);
    const Mat cap = random_mat(t, d, rng);
    const Mat coe = random_mat(tp, d, rng);

    Tape base;
    const Mat out = base.val(cross_attend(base, base.input(cap), base.input(coe), base.input(wq),
                                          base.input(wk), base.input(wv)));

    SUBCASE("query-order equivariance") {
        std::vector<int> perm = {4, 2, 0, 5, 1, 3};
        Mat pcap(t, d);
        for (int i = 0; i < t; ++i) pcap.row(i) = cap.row(perm[static_cast<size_t>(i)]);
        Tape tape;
        const Mat pout = tape.val(cross_attend(tape, tape.input(pcap), tape.input(coe),
                                               tape.input(wq), tape.input(wk), tape.input(wv)));
        for (int i = 0; i < t; ++i)
            CHECK((pout.row(i) - out.row(perm[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() <
                  1e-12);
    }

    SUBCASE("key-order invariance") {
        std::vector<int> perm = {2, 0, 3, 1};
        Mat pcoe(tp, d);
        for (int j = 0; j < tp; ++j) pcoe.row(j) = coe.row(perm[static_cast<size_t>(j)]);
        Tape tape;
        const Mat pout = tape.val(cross_attend(tape, tape.input(cap), tape.input(pcoe),
                                               tape.input(wq), tape.input(wk), tape.input(wv)));
        CHECK((pout - out).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("rows are convex combinations of the projected chain rows") {
        // weights sum to one, so subtracting any fixed projected row keeps the
        // output inside the convex hull; verify via the softmax weights directly
        const Mat q = cap * wq, kk = coe * wk;
        for (int i = 0; i < t; ++i) {
            Eigen::VectorXd logits(tp);
            for (int j = 0; j < tp; ++j)
                logits(j) = q.row(i).dot(kk.row(j)) / std::sqrt(static_cast<double>(d));
            Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
            w /= w.sum();
            CHECK(w.sum() == doctest::Approx(1.0));
            CHECK(w.minCoeff() >= 0.0);
        }
    }
}
