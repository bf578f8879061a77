#pragma once

// Dense row-major tensor and the deterministic RNG used everywhere.
// Two element types are supported: float (standard precision, training)
// and double (high precision, tests and determinism checks).

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace elvit {

// Allocator whose default-construct is a no-op, so buffers that are fully
// overwritten by a kernel skip the redundant zero fill. Value construction
// (e.g. vector(n, R(0))) still initializes as usual.
template <typename T>
struct UninitAlloc {
  using value_type = T;
  UninitAlloc() = default;
  template <typename U>
  UninitAlloc(const UninitAlloc<U>&) {}
  T* allocate(std::size_t n) { return std::allocator<T>().allocate(n); }
  void deallocate(T* p, std::size_t n) { std::allocator<T>().deallocate(p, n); }
  template <typename U>
  void construct(U*) noexcept {}
  template <typename U, typename A0, typename... Args>
  void construct(U* p, A0&& a0, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<A0>(a0), std::forward<Args>(args)...);
  }
  template <typename U>
  bool operator==(const UninitAlloc<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const UninitAlloc<U>&) const {
    return false;
  }
};

template <typename R>
using Buf = std::vector<R, UninitAlloc<R>>;

template <typename R>
bool operator==(const Buf<R>& a, const std::vector<R>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename R>
struct Tensor {
  Shape shape;
  Buf<R> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_extents();
    data.assign(static_cast<size_t>(numel(shape)), R(0));
  }
  Tensor(Shape s, Buf<R> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw std::runtime_error("tensor: element count " + std::to_string(data.size()) +
                               " does not match shape " + shape_str(shape));
  }

  // contents left unwritten; callers must overwrite every element
  static Tensor uninit(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.check_extents();
    t.data.resize(static_cast<size_t>(numel(t.shape)));
    return t;
  }

  void check_extents() const {
    for (int64_t e : shape)
      if (e <= 0) throw std::runtime_error("tensor: nonpositive extent in " + shape_str(shape));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  R* ptr() { return data.data(); }
  const R* ptr() const { return data.data(); }

  R& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const R& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 2D convenience accessor (row-major).
  R& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  const R& at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(R v) {
    for (auto& x : data) x = v;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, R v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  template <typename R2>
  Tensor<R2> cast() const {
    Tensor<R2> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<R2>(data[i]);
    return out;
  }

  bool all_finite() const {
    for (R v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

inline void check_same_shape(const Shape& a, const Shape& b, const std::string& op) {
  if (a != b) throw std::runtime_error(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core: tiny state, well mixed, and the same
// stream on every platform, which is what the reproducibility tests pin.
// ---------------------------------------------------------------------------
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  // Standard normal via Box-Muller (one value per call; the sine twin is dropped
  // so the draw count per call is fixed).
  double normal() {
    double u1 = uniform01(), u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Normal truncated to +-2 sigma (resampled), the usual ViT init.
  double trunc_normal(double stddev) {
    double z = normal();
    int guard = 0;
    while (std::fabs(z) > 2.0 && ++guard < 64) z = normal();
    if (std::fabs(z) > 2.0) z = 0.0;
    return z * stddev;
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }
};

// Independent stream derived from (seed, stream); used so that e.g. each
// generated image or each epoch gets its own reproducible generator.
inline Rng derive_rng(uint64_t seed, uint64_t stream) {
  Rng mix(seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  mix.state ^= mix.next_u64() + stream * 0xd1342543de82ef95ULL;
  mix.next_u64();
  return mix;
}

template <typename R>
Tensor<R> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<R> t(std::move(s));
  for (auto& v : t.data) v = static_cast<R>(rng.uniform(lo, hi));
  return t;
}

}  // namespace elvit
