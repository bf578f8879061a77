#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "elvit/tensor.hpp"

namespace elvit {

// labeled image set: images are [n, S, S, C] with values in [0,1]
template <typename R>
struct Dataset {
  Tensor<R> images{Shape{1, 1, 1, 1}};
  std::vector<int64_t> labels;
  uint64_t seed = 0;  // generation seed, 0 when loaded from files

  int64_t size() const { return static_cast<int64_t>(labels.size()); }

  void validate() const {
    if (images.ndim() != 4)
      throw std::runtime_error("dataset: images must be rank 4, got " +
                               shape_str(images.shape));
    // empty datasets keep a dummy image tensor (zero extents are rejected)
    if (size() > 0 && images.dim(0) != size())
      throw std::runtime_error("dataset: image count " + std::to_string(images.dim(0)) +
                               " does not match label count " + std::to_string(size()));
  }

  // copy rows [i0, i0+count) into a fresh batch tensor
  Tensor<R> batch_images(int64_t i0, int64_t count) const {
    const int64_t row = images.size() / images.dim(0);
    Tensor<R> out = Tensor<R>::uninit({count, images.dim(1), images.dim(2), images.dim(3)});
    std::copy(images.ptr() + i0 * row, images.ptr() + (i0 + count) * row, out.ptr());
    return out;
  }

  std::vector<int64_t> batch_labels(int64_t i0, int64_t count) const {
    return std::vector<int64_t>(labels.begin() + i0, labels.begin() + i0 + count);
  }

  // gathered copy in the given index order
  Dataset<R> subset(const std::vector<int64_t>& idx) const {
    const int64_t row = images.size() / images.dim(0);
    Dataset<R> out;
    out.images = Tensor<R>::uninit({static_cast<int64_t>(idx.size()), images.dim(1),
                                    images.dim(2), images.dim(3)});
    out.labels.reserve(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(images.ptr() + idx[i] * row, images.ptr() + (idx[i] + 1) * row,
                out.images.ptr() + static_cast<int64_t>(i) * row);
      out.labels.push_back(labels[static_cast<size_t>(idx[i])]);
    }
    out.seed = seed;
    return out;
  }
};

}  // namespace elvit
