#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elvit/dataset.hpp"
#include "elvit/kernels.hpp"
#include "elvit/tensor.hpp"

namespace elvit {

inline constexpr int64_t kShapeClasses = 4;  // circle, square, triangle, cross

// signed distance to the class shape at pixel offset (x, y) from the center,
// in pixels; negative inside
double shape_sdf(int64_t cls, double x, double y, double r);

// deterministic per-seed synthetic dataset: anti-aliased shapes on noise.
// labels cycle 0..3 so classes stay balanced within one image.
template <typename R>
Dataset<R> generate_shapes(int64_t n, int64_t side, uint64_t seed, int64_t channels = 1);

// raw IDX contents (byte pixels) before any resizing/scaling
struct IdxRaw {
  int64_t count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> pixels;  // count*rows*cols
  std::vector<uint8_t> labels;  // count
};

IdxRaw load_idx_raw(const std::string& images_path, const std::string& labels_path);
void write_idx(const IdxRaw& raw, const std::string& images_path,
               const std::string& labels_path);

// full pipeline: read, scale to [0,1], replicate channels, resize to side
template <typename R>
Dataset<R> load_idx(const std::string& images_path, const std::string& labels_path,
                    int64_t side, int64_t channels);

// ---- templated definitions ----

template <typename R>
Dataset<R> generate_shapes(int64_t n, int64_t side, uint64_t seed, int64_t channels) {
  if (side < 16)
    throw std::runtime_error("generate_shapes: image side " + std::to_string(side) +
                             " below minimum 16");
  if (n < kShapeClasses)
    throw std::runtime_error("generate_shapes: n=" + std::to_string(n) +
                             " smaller than class count " + std::to_string(kShapeClasses));
  Dataset<R> ds;
  ds.seed = seed;
  ds.images = Tensor<R>({n, side, side, channels});
  ds.labels.resize(static_cast<size_t>(n));
  const double s = static_cast<double>(side);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const int64_t cls = i % kShapeClasses;
    ds.labels[static_cast<size_t>(i)] = cls;
    Rng rng = derive_rng(seed, static_cast<uint64_t>(i));
    // shapes are kept small relative to the coarsest patch so that finer grids
    // genuinely resolve more boundary detail than coarse ones
    const double cx = rng.uniform(0.3, 0.7) * s;
    const double cy = rng.uniform(0.3, 0.7) * s;
    const double r = rng.uniform(0.09, 0.16) * s;
    const double fg = rng.uniform(0.62, 1.0);
    R* img = ds.images.ptr() + i * side * side * channels;
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) {
        const double bg = rng.uniform(0.0, 0.35);
        const double d =
            shape_sdf(cls, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
        const double cov = std::min(1.0, std::max(0.0, 0.5 - d));  // 1px AA band
        const double v = bg + cov * (fg - bg);
        for (int64_t c = 0; c < channels; ++c)
          img[(y * side + x) * channels + c] = static_cast<R>(v);
      }
  }
  return ds;
}

template <typename R>
Dataset<R> load_idx(const std::string& images_path, const std::string& labels_path,
                    int64_t side, int64_t channels) {
  IdxRaw raw = load_idx_raw(images_path, labels_path);
  Tensor<R> gray({raw.count, raw.rows, raw.cols, 1});
  for (int64_t i = 0; i < gray.size(); ++i)
    gray[i] = static_cast<R>(raw.pixels[static_cast<size_t>(i)]) / static_cast<R>(255);
  Tensor<R> sized({raw.count, side, side, 1});
  kern::bilinear_resize(gray.ptr(), sized.ptr(), raw.count, raw.rows, raw.cols, side, side, 1);
  Dataset<R> ds;
  ds.images = Tensor<R>({raw.count, side, side, channels});
  for (int64_t i = 0; i < raw.count * side * side; ++i)
    for (int64_t c = 0; c < channels; ++c) ds.images[i * channels + c] = sized[i];
  ds.labels.assign(raw.labels.begin(), raw.labels.end());
  return ds;
}

}  // namespace elvit
