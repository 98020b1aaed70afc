#include "coetal/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace coetal {

int Tape::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::logic_error("invalid tape handle");
    return v.id;
}

Var Tape::push(Mat value, std::function<void(Tape&, const Mat&)> back) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(check(v))];
    if (n.grad.size() == 0)
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
}

Var Tape::input(Mat value) { return push(std::move(value), {}); }

static void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Var Tape::add(Var a, Var b) {
    require_same_shape(val(a), val(b), "add");
    return push(val(a) + val(b), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(val(a), val(b), "sub");
    return push(val(a) - val(b), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(val(a), val(b), "mul");
    return push(val(a).cwiseProduct(val(b)), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g.cwiseProduct(t.val(b)));
        t.accumulate(b, g.cwiseProduct(t.val(a)));
    });
}

Var Tape::scale(Var a, double c) {
    return push(val(a) * c, [a, c](Tape& t, const Mat& g) { t.accumulate(a, Mat(g * c)); });
}

Var Tape::matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows()) throw std::invalid_argument("matmul: inner dims differ");
    return push(val(a) * val(b), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, Mat(g * t.val(b).transpose()));
        t.accumulate(b, Mat(t.val(a).transpose() * g));
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    if (val(a).cols() != val(b).cols()) throw std::invalid_argument("matmul_nt: inner dims differ");
    return push(val(a) * val(b).transpose(), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, Mat(g * t.val(b)));
        t.accumulate(b, Mat(g.transpose() * t.val(a)));
    });
}

Var Tape::add_rowvec(Var a, Var r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
        throw std::invalid_argument("add_rowvec: r must be 1 x cols(a)");
    Mat out = val(a);
    out.rowwise() += val(r).row(0);
    return push(std::move(out), [a, r](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(r, Mat(g.colwise().sum()));
    });
}

Var Tape::relu(Var a) {
    return push(val(a).cwiseMax(0.0), [a](Tape& t, const Mat& g) {
        Mat masked = ((t.val(a).array() > 0.0).cast<double>() * g.array()).matrix();
        t.accumulate(a, masked);
    });
}

Var Tape::sigmoid(Var a) {
    Mat out = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    Var self = push(std::move(out), {});
    nodes_.back().back = [a, self](Tape& t, const Mat& g) {
        const Mat& y = t.val(self);
        Mat dx = (g.array() * y.array() * (1.0 - y.array())).matrix();
        t.accumulate(a, dx);
    };
    return self;
}

Var Tape::log(Var a) {
    return push(val(a).array().log().matrix(), [a](Tape& t, const Mat& g) {
        Mat dx = (g.array() / t.val(a).array()).matrix();
        t.accumulate(a, dx);
    });
}

Var Tape::reciprocal(Var a) {
    Mat out = val(a).cwiseInverse();
    Var self = push(std::move(out), {});
    nodes_.back().back = [a, self](Tape& t, const Mat& g) {
        const Mat& y = t.val(self);
        t.accumulate(a, Mat((-g.array() * y.array() * y.array()).matrix()));
    };
    return self;
}

Var Tape::clamp(Var a, double lo, double hi) {
    return push(val(a).cwiseMax(lo).cwiseMin(hi), [a, lo, hi](Tape& t, const Mat& g) {
        const Mat& x = t.val(a);
        Mat inside = ((x.array() > lo) && (x.array() < hi)).cast<double>();
        t.accumulate(a, Mat(g.cwiseProduct(inside)));
    });
}

Var Tape::softmax_rows(Var a) {
    const Mat& x = val(a);
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        Eigen::ArrayXd e = (x.row(i).array() - m).exp();
        y.row(i) = (e / e.sum()).matrix();
    }
    Var self = push(std::move(y), {});
    nodes_.back().back = [a, self](Tape& t, const Mat& g) {
        const Mat& yv = t.val(self);
        Mat dx(yv.rows(), yv.cols());
        for (Eigen::Index i = 0; i < yv.rows(); ++i) {
            const double dot = g.row(i).dot(yv.row(i));
            dx.row(i) = (yv.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
        t.accumulate(a, dx);
    };
    return self;
}

Var Tape::gather_rows(Var a, std::vector<int> indices) {
    const Mat& x = val(a);
    Mat out = Mat::Zero(static_cast<Eigen::Index>(indices.size()), x.cols());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx >= 0) {
            if (idx >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
            out.row(static_cast<Eigen::Index>(i)) = x.row(idx);
        }
    }
    return push(std::move(out), [a, idx = std::move(indices)](Tape& t, const Mat& g) {
        Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
        for (size_t i = 0; i < idx.size(); ++i)
            if (idx[i] >= 0) da.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(a, da);
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    Eigen::Index rows = 0;
    const Eigen::Index cols = val(parts[0]).cols();
    for (Var p : parts) {
        if (val(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += val(p).rows();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleRows(at, val(p).rows()) = val(p);
        at += val(p).rows();
    }
    return push(std::move(out), [ps = parts](Tape& t, const Mat& g) {
        Eigen::Index at = 0;
        for (Var p : ps) {
            const Eigen::Index r = t.val(p).rows();
            t.accumulate(p, Mat(g.middleRows(at, r)));
            at += r;
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index cols = 0;
    const Eigen::Index rows = val(parts[0]).rows();
    for (Var p : parts) {
        if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += val(p).cols();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleCols(at, val(p).cols()) = val(p);
        at += val(p).cols();
    }
    return push(std::move(out), [ps = parts](Tape& t, const Mat& g) {
        Eigen::Index at = 0;
        for (Var p : ps) {
            const Eigen::Index c = t.val(p).cols();
            t.accumulate(p, Mat(g.middleCols(at, c)));
            at += c;
        }
    });
}

Var Tape::normalize_rows(Var a) {
    const Mat& x = val(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        if (n > 0.0)
            out.row(i) = x.row(i) / n;
        else
            out.row(i).setZero();
    }
    return push(std::move(out), [a](Tape& t, const Mat& g) {
        const Mat& x = t.val(a);
        Mat dx(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double n = x.row(i).norm();
            if (n > 0.0) {
                const Eigen::RowVectorXd xhat = x.row(i) / n;
                const double along = xhat.dot(g.row(i));
                dx.row(i) = (g.row(i) - xhat * along) / n;
            } else {
                dx.row(i).setZero();
            }
        }
        t.accumulate(a, dx);
    });
}

Var Tape::max_cols(Var a) {
    const Mat& x = val(a);
    if (x.cols() == 0) throw std::invalid_argument("max_cols: empty");
    Mat out(x.rows(), 1);
    std::vector<int> arg(static_cast<size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index j;
        out(i, 0) = x.row(i).maxCoeff(&j);
        arg[static_cast<size_t>(i)] = static_cast<int>(j);
    }
    return push(std::move(out), [a, arg = std::move(arg)](Tape& t, const Mat& g) {
        Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
        for (Eigen::Index i = 0; i < da.rows(); ++i)
            da(i, arg[static_cast<size_t>(i)]) += g(i, 0);
        t.accumulate(a, da);
    });
}

Var Tape::sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    return push(std::move(out), [a](Tape& t, const Mat& g) {
        t.accumulate(a, Mat(Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0))));
    });
}

void Tape::backward(Var scalar_out) {
    const int seed = check(scalar_out);
    if (nodes_[static_cast<size_t>(seed)].value.size() != 1)
        throw std::invalid_argument("backward: seed must be 1x1");
    for (int i = 0; i <= seed; ++i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    nodes_[static_cast<size_t>(seed)].grad(0, 0) = 1.0;
    for (int i = seed; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back && n.grad.size() > 0 && n.grad.cwiseAbs().maxCoeff() != 0.0)
            n.back(*this, n.grad);
    }
}

} // namespace coetal
