#pragma once

#include <gtest/gtest.h>

#include "memix/tensor.hpp"

namespace memix::test {

inline ::testing::AssertionResult matrices_near(const Matrix& actual, const Matrix& expected, double tol) {
  if (!actual.same_shape(expected)) {
    return ::testing::AssertionFailure() << "shape " << actual.shape_str() << " vs " << expected.shape_str();
  }
  const double dev = max_abs_diff(actual, expected);
  if (dev > tol) return ::testing::AssertionFailure() << "max abs deviation " << dev << " > " << tol;
  return ::testing::AssertionSuccess();
}

inline ::testing::AssertionResult rows_sum_to_one(const Matrix& m, double tol = 1e-12) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v;
    if (std::abs(s - 1.0) > tol) return ::testing::AssertionFailure() << "row " << i << " sums to " << s;
  }
  return ::testing::AssertionSuccess();
}

}  // namespace memix::test
