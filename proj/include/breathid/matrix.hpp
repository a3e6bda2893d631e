#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace breathid {

// Dense row-major matrix. Feature matrices and caches use float storage;
// the analysis path uses double.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;  // row-major, rows*cols

  Mat() = default;
  Mat(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative dimension");
  }

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  T* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const T* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && data == o.data; }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

}  // namespace breathid
