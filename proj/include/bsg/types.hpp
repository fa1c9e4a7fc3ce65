#pragma once

#include <Eigen/Dense>

namespace bsg {

// Activation matrices: one row per (sequence, position).
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace bsg
