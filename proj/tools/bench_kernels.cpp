// Benchmark: OpenMP kernels vs the serial reference loops. Every pair must
// agree bit-exactly (same accumulation order by construction); the table
// reports the timings and the speedup. --quick shrinks sizes for CI smoke.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "elvit/serial_ref.hpp"
#include "elvit/tensor.hpp"

using namespace elvit;

namespace {

double time_best_ms(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

Buf<float> random_buf(int64_t n, uint64_t seed) {
  Rng rng = derive_rng(seed, 0);
  Buf<float> b(static_cast<size_t>(n));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return b;
}

bool bitwise_equal(const Buf<float>& a, const Buf<float>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct Row {
  std::string op, size;
  double ref_ms, kern_ms;
  bool match;
};

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--quick") quick = true;

  const int reps = quick ? 2 : 5;
  std::vector<Row> rows;

  {  // gemm_nn
    const int64_t m = quick ? 96 : 512, k = quick ? 80 : 384, n = quick ? 112 : 512;
    const Buf<float> a = random_buf(m * k, 1), b = random_buf(k * n, 2);
    Buf<float> cr(static_cast<size_t>(m * n)), ck(static_cast<size_t>(m * n));
    const double tr = time_best_ms([&] { ref::gemm_nn(a.data(), b.data(), cr.data(), m, k, n); }, reps);
    const double tk = time_best_ms([&] { kern::gemm_nn(a.data(), b.data(), ck.data(), m, k, n); }, reps);
    rows.push_back({"gemm_nn", std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n),
                    tr, tk, bitwise_equal(cr, ck)});
  }
  {  // softmax_rows
    const int64_t r = quick ? 512 : 8192, c = quick ? 64 : 256;
    const Buf<float> x = random_buf(r * c, 3);
    Buf<float> yr(static_cast<size_t>(r * c)), yk(static_cast<size_t>(r * c));
    const double tr = time_best_ms([&] { ref::softmax_rows(x.data(), yr.data(), r, c); }, reps);
    const double tk = time_best_ms([&] { kern::softmax_rows(x.data(), yk.data(), r, c); }, reps);
    rows.push_back({"softmax_rows", std::to_string(r) + "x" + std::to_string(c), tr, tk,
                    bitwise_equal(yr, yk)});
  }
  {  // layer_norm_rows
    const int64_t r = quick ? 512 : 8192, d = quick ? 64 : 256;
    const Buf<float> x = random_buf(r * d, 4), g = random_buf(d, 5), be = random_buf(d, 6);
    Buf<float> yr(static_cast<size_t>(r * d)), yk(static_cast<size_t>(r * d));
    Buf<float> mean(static_cast<size_t>(r)), rstd(static_cast<size_t>(r));
    const double tr = time_best_ms(
        [&] { ref::layer_norm_rows(x.data(), g.data(), be.data(), 1e-6f, yr.data(), r, d); }, reps);
    const double tk = time_best_ms(
        [&] {
          kern::layer_norm_rows(x.data(), g.data(), be.data(), 1e-6f, yk.data(), mean.data(),
                                rstd.data(), r, d);
        },
        reps);
    rows.push_back({"layer_norm_rows", std::to_string(r) + "x" + std::to_string(d), tr, tk,
                    bitwise_equal(yr, yk)});
  }
  {  // gelu
    const int64_t n = quick ? (1 << 16) : (1 << 22);
    const Buf<float> x = random_buf(n, 7);
    Buf<float> yr(static_cast<size_t>(n)), yk(static_cast<size_t>(n));
    const double tr = time_best_ms([&] { ref::gelu(x.data(), yr.data(), n); }, reps);
    const double tk = time_best_ms([&] { kern::gelu(x.data(), yk.data(), n); }, reps);
    rows.push_back({"gelu", std::to_string(n), tr, tk, bitwise_equal(yr, yk)});
  }
  {  // bilinear_resize
    const int64_t count = quick ? 16 : 128, h = 40, w = 40, oh = 96, ow = 96;
    const Buf<float> x = random_buf(count * h * w, 8);
    Buf<float> yr(static_cast<size_t>(count * oh * ow)), yk(static_cast<size_t>(count * oh * ow));
    const double tr =
        time_best_ms([&] { ref::bilinear_resize(x.data(), yr.data(), count, h, w, 1, oh, ow); }, reps);
    const double tk =
        time_best_ms([&] { kern::bilinear_resize(x.data(), yk.data(), count, h, w, 1, oh, ow); }, reps);
    rows.push_back({"bilinear_resize",
                    std::to_string(count) + "x(40->96)", tr, tk, bitwise_equal(yr, yk)});
  }

  std::printf("%-16s %-14s %10s %10s %8s %6s\n", "op", "size", "ref_ms", "kern_ms", "speedup",
              "match");
  bool all_match = true;
  for (const Row& r : rows) {
    std::printf("%-16s %-14s %10.3f %10.3f %7.2fx %6s\n", r.op.c_str(), r.size.c_str(), r.ref_ms,
                r.kern_ms, r.ref_ms / r.kern_ms, r.match ? "yes" : "NO");
    all_match = all_match && r.match;
  }
  if (!all_match) {
    std::fprintf(stderr, "error: kernel/reference mismatch\n");
    return 1;
  }
  return 0;
}
