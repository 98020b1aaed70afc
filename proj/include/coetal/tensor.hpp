#pragma once

#include <Eigen/Core>

namespace coetal {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

} // namespace coetal
