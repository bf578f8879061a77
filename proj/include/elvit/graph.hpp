#pragma once

// Reverse-mode automatic differentiation over Tensor. Each op returns a node
// holding the forward value plus a backward closure; backward() walks the
// recorded graph once in reverse topological order, accumulating gradients
// additively at fan-out. A thread-local flag disables recording for
// evaluation and teacher forwards.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "elvit/kernels.hpp"
#include "elvit/tensor.hpp"

namespace elvit {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename R>
struct Node {
  Tensor<R> value;
  Tensor<R> grad;  // empty until backward reaches this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::string name;

  bool has_grad() const { return grad.size() > 0; }
  void ensure_grad() {
    if (!has_grad()) grad = Tensor<R>::zeros(value.shape);
  }
  Tensor<R>& grad_ref() {
    if (!has_grad())
      throw std::runtime_error("grad: no recorded gradient for tensor '" +
                               (name.empty() ? std::string("<unnamed>") : name) + "'");
    return grad;
  }
  void zero_grad() {
    if (has_grad()) grad.fill(R(0));
  }
};

template <typename R>
using NodeP = std::shared_ptr<Node<R>>;

template <typename R>
NodeP<R> leaf(Tensor<R> value, bool requires_grad = false, std::string name = "") {
  auto n = std::make_shared<Node<R>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

template <typename R>
NodeP<R> parameter(Tensor<R> value, std::string name) {
  return leaf(std::move(value), true, std::move(name));
}

// Common op plumbing: the node records parents and a backward closure only
// when recording is enabled and some parent needs a gradient; otherwise the
// subgraph is dropped and only the value is kept.
template <typename R>
NodeP<R> make_op(Tensor<R> value, std::vector<NodeP<R>> parents,
                 std::function<void(Node<R>&)> bwd) {
  auto out = std::make_shared<Node<R>>();
  out->value = std::move(value);
  bool need = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    out->parents = std::move(parents);
    out->backward_fn = std::move(bwd);
    out->requires_grad = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------
template <typename R>
void backward(const NodeP<R>& loss) {
  if (loss->value.size() != 1) throw std::runtime_error("backward: loss must be a scalar");
  if (!loss->requires_grad)
    throw std::runtime_error("backward: loss does not depend on any gradient-enabled tensor");

  // Iterative post-order DFS; only gradient-requiring parents are traversed.
  std::vector<Node<R>*> topo;
  std::unordered_set<Node<R>*> visited;
  std::vector<std::pair<Node<R>*, size_t>> stack;
  visited.insert(loss.get());
  stack.push_back({loss.get(), 0});
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<R>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  loss->ensure_grad();
  loss->grad[0] = R(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<R>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

template <typename R>
NodeP<R> matmul(const NodeP<R>& a, const NodeP<R>& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
    throw std::runtime_error("matmul: shape mismatch " + shape_str(a->value.shape) + " vs " +
                             shape_str(b->value.shape));
  const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor<R> out = Tensor<R>::uninit({m, n});
  kern::gemm_nn(a->value.ptr(), b->value.ptr(), out.ptr(), m, k, n);
  return make_op<R>(std::move(out), {a, b}, [a, b, m, k, n](Node<R>& self) {
    if (a->requires_grad) {
      a->ensure_grad();  // dA[m,k] += dC[m,n] * B^T (B transposed once; it is small)
      std::vector<R> bt(static_cast<size_t>(n * k));
      kern::transpose(b->value.ptr(), bt.data(), k, n);
      kern::gemm_nn(self.grad.ptr(), bt.data(), a->grad.ptr(), m, n, k, true);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB[k,n] += A^T * dC
      kern::bmm_tn(a->value.ptr(), self.grad.ptr(), b->grad.ptr(), 1, m, k, n, true);
    }
  });
}

// x [rows... x D] * w [D x E] + bias [E]; bias may be null.
template <typename R>
NodeP<R> linear(const NodeP<R>& x, const NodeP<R>& w, const NodeP<R>& bias) {
  if (x->value.ndim() < 1 || w->value.ndim() != 2 ||
      x->value.dim(x->value.ndim() - 1) != w->value.dim(0))
    throw std::runtime_error("linear: shape mismatch " + shape_str(x->value.shape) + " vs " +
                             shape_str(w->value.shape));
  const int64_t d = w->value.dim(0), e = w->value.dim(1);
  const int64_t rows = x->value.size() / d;
  if (bias && bias->value.size() != e)
    throw std::runtime_error("linear: bias shape " + shape_str(bias->value.shape) +
                             " does not match output dim " + std::to_string(e));
  Shape os = x->value.shape;
  os.back() = e;
  Tensor<R> out = Tensor<R>::uninit(os);
  kern::gemm_nn(x->value.ptr(), w->value.ptr(), out.ptr(), rows, d, e);
  if (bias) kern::add_bias_rows(out.ptr(), bias->value.ptr(), rows, e);
  std::vector<NodeP<R>> parents = {x, w};
  if (bias) parents.push_back(bias);
  return make_op<R>(std::move(out), std::move(parents),
                    [x, w, bias, rows, d, e](Node<R>& self) {
                      if (x->requires_grad) {
                        x->ensure_grad();  // dX[rows,d] += dY[rows,e] * W^T (W transposed once)
                        std::vector<R> wt(static_cast<size_t>(d * e));
                        kern::transpose(w->value.ptr(), wt.data(), d, e);
                        kern::gemm_nn(self.grad.ptr(), wt.data(), x->grad.ptr(), rows, e, d,
                                      true);
                      }
                      if (w->requires_grad) {
                        w->ensure_grad();  // dW[d,e] += X^T * dY
                        kern::bmm_tn(x->value.ptr(), self.grad.ptr(), w->grad.ptr(), 1, rows, d,
                                     e, true);
                      }
                      if (bias && bias->requires_grad) {
                        bias->ensure_grad();
                        kern::colsum_accum(self.grad.ptr(), bias->grad.ptr(), rows, e);
                      }
                    });
}

template <typename R>
NodeP<R> add(const NodeP<R>& a, const NodeP<R>& b) {
  check_same_shape(a->value.shape, b->value.shape, "add");
  Tensor<R> out = Tensor<R>::uninit(a->value.shape);
  kern::add(a->value.ptr(), b->value.ptr(), out.ptr(), out.size());
  return make_op<R>(std::move(out), {a, b}, [a, b](Node<R>& self) {
    for (const auto& p : {a, b})
      if (p->requires_grad) {
        p->ensure_grad();
        kern::accum(p->grad.ptr(), self.grad.ptr(), self.grad.size());
      }
  });
}

template <typename R>
NodeP<R> mul(const NodeP<R>& a, const NodeP<R>& b) {
  check_same_shape(a->value.shape, b->value.shape, "mul");
  Tensor<R> out = Tensor<R>::uninit(a->value.shape);
  kern::mul(a->value.ptr(), b->value.ptr(), out.ptr(), out.size());
  return make_op<R>(std::move(out), {a, b}, [a, b](Node<R>& self) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i] * a->value[i];
    }
  });
}

template <typename R>
NodeP<R> scale(const NodeP<R>& a, double s) {
  Tensor<R> out = Tensor<R>::uninit(a->value.shape);
  kern::scale(a->value.ptr(), static_cast<R>(s), out.ptr(), out.size());
  return make_op<R>(std::move(out), {a}, [a, s](Node<R>& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int64_t i = 0; i < self.grad.size(); ++i)
      a->grad[i] += self.grad[i] * static_cast<R>(s);
  });
}

// x [B x inner...] + p [inner...] broadcast over the first axis.
template <typename R>
NodeP<R> add_broadcast0(const NodeP<R>& x, const NodeP<R>& p) {
  if (x->value.ndim() < 2 ||
      Shape(x->value.shape.begin() + 1, x->value.shape.end()) != p->value.shape)
    throw std::runtime_error("add_broadcast0: shape mismatch " + shape_str(x->value.shape) +
                             " vs " + shape_str(p->value.shape));
  const int64_t b = x->value.dim(0), inner = p->value.size();
  Tensor<R> out = Tensor<R>::uninit(x->value.shape);
  for (int64_t bi = 0; bi < b; ++bi)
    kern::add(x->value.ptr() + bi * inner, p->value.ptr(), out.ptr() + bi * inner, inner);
  return make_op<R>(std::move(out), {x, p}, [x, p, b, inner](Node<R>& self) {
    if (x->requires_grad) {
      x->ensure_grad();
      kern::accum(x->grad.ptr(), self.grad.ptr(), self.grad.size());
    }
    if (p->requires_grad) {
      p->ensure_grad();
      kern::colsum_accum(self.grad.ptr(), p->grad.ptr(), b, inner);
    }
  });
}

// cls [D] prepended to x [B x N x D] -> [B x (N+1) x D].
template <typename R>
NodeP<R> prepend_cls(const NodeP<R>& cls, const NodeP<R>& x) {
  if (x->value.ndim() != 3 || cls->value.ndim() != 1 || cls->value.dim(0) != x->value.dim(2))
    throw std::runtime_error("prepend_cls: shape mismatch " + shape_str(cls->value.shape) +
                             " vs " + shape_str(x->value.shape));
  const int64_t b = x->value.dim(0), n = x->value.dim(1), d = x->value.dim(2);
  Tensor<R> out = Tensor<R>::uninit({b, n + 1, d});
  for (int64_t bi = 0; bi < b; ++bi) {
    R* dst = out.ptr() + bi * (n + 1) * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = cls->value[j];
    const R* src = x->value.ptr() + bi * n * d;
    for (int64_t i = 0; i < n * d; ++i) dst[d + i] = src[i];
  }
  return make_op<R>(std::move(out), {cls, x}, [cls, x, b, n, d](Node<R>& self) {
    if (cls->requires_grad) {
      cls->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi) {
        const R* g = self.grad.ptr() + bi * (n + 1) * d;
        for (int64_t j = 0; j < d; ++j) cls->grad[j] += g[j];
      }
    }
    if (x->requires_grad) {
      x->ensure_grad();
      for (int64_t bi = 0; bi < b; ++bi)
        kern::accum(x->grad.ptr() + bi * n * d, self.grad.ptr() + bi * (n + 1) * d + d, n * d);
    }
  });
}

template <typename R>
NodeP<R> reshape(const NodeP<R>& x, Shape s) {
  if (numel(s) != x->value.size())
    throw std::runtime_error("reshape: cannot view " + shape_str(x->value.shape) + " as " +
                             shape_str(s));
  Tensor<R> out(s, x->value.data);
  return make_op<R>(std::move(out), {x}, [x](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    kern::accum(x->grad.ptr(), self.grad.ptr(), self.grad.size());
  });
}

template <typename R>
NodeP<R> split_heads(const NodeP<R>& x, int64_t h) {
  const int64_t b = x->value.dim(0), n = x->value.dim(1), d = x->value.dim(2);
  Tensor<R> out = Tensor<R>::uninit({b, h, n, d / h});
  kern::split_heads(x->value.ptr(), out.ptr(), b, n, d, h);
  return make_op<R>(std::move(out), {x}, [x, b, n, d, h](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    kern::merge_heads(self.grad.ptr(), x->grad.ptr(), b, n, d, h, /*accumulate=*/true);
  });
}

template <typename R>
NodeP<R> merge_heads(const NodeP<R>& x) {
  const int64_t b = x->value.dim(0), h = x->value.dim(1), n = x->value.dim(2),
                dh = x->value.dim(3);
  Tensor<R> out = Tensor<R>::uninit({b, n, h * dh});
  kern::merge_heads(x->value.ptr(), out.ptr(), b, n, h * dh, h, /*accumulate=*/false);
  return make_op<R>(std::move(out), {x}, [x, b, n, h, dh](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    Tensor<R> tmp = Tensor<R>::uninit({b, h, n, dh});
    kern::split_heads(self.grad.ptr(), tmp.ptr(), b, n, h * dh, h);
    kern::accum(x->grad.ptr(), tmp.ptr(), tmp.size());
  });
}

// Batched  a [.. x m x k] * b^T with b [.. x n x k]  ->  [.. x m x n].
template <typename R>
NodeP<R> bmm_nt(const NodeP<R>& a, const NodeP<R>& b) {
  const int nd = a->value.ndim();
  if (nd < 2 || b->value.ndim() != nd || a->value.dim(nd - 1) != b->value.dim(nd - 1))
    throw std::runtime_error("bmm_nt: shape mismatch " + shape_str(a->value.shape) + " vs " +
                             shape_str(b->value.shape));
  const int64_t m = a->value.dim(nd - 2), k = a->value.dim(nd - 1), n = b->value.dim(nd - 2);
  const int64_t batch = a->value.size() / (m * k);
  if (b->value.size() / (n * k) != batch)
    throw std::runtime_error("bmm_nt: batch mismatch " + shape_str(a->value.shape) + " vs " +
                             shape_str(b->value.shape));
  Shape os(a->value.shape.begin(), a->value.shape.end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor<R> out = Tensor<R>::uninit(os);
  kern::bmm_nt(a->value.ptr(), b->value.ptr(), out.ptr(), batch, m, n, k);
  return make_op<R>(std::move(out), {a, b}, [a, b, batch, m, k, n](Node<R>& self) {
    if (a->requires_grad) {
      a->ensure_grad();  // dA[m,k] += dC[m,n] * B[n,k]
      kern::bmm_nn(self.grad.ptr(), b->value.ptr(), a->grad.ptr(), batch, m, k, n, true);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB[n,k] += dC^T[n,m] * A[m,k]
      kern::bmm_tn(self.grad.ptr(), a->value.ptr(), b->grad.ptr(), batch, m, n, k, true);
    }
  });
}

// Batched  a [.. x m x k] * b [.. x k x n]  ->  [.. x m x n].
template <typename R>
NodeP<R> bmm_nn(const NodeP<R>& a, const NodeP<R>& b) {
  const int nd = a->value.ndim();
  if (nd < 2 || b->value.ndim() != nd || a->value.dim(nd - 1) != b->value.dim(nd - 2))
    throw std::runtime_error("bmm_nn: shape mismatch " + shape_str(a->value.shape) + " vs " +
                             shape_str(b->value.shape));
  const int64_t m = a->value.dim(nd - 2), k = a->value.dim(nd - 1), n = b->value.dim(nd - 1);
  const int64_t batch = a->value.size() / (m * k);
  if (b->value.size() / (k * n) != batch)
    throw std::runtime_error("bmm_nn: batch mismatch " + shape_str(a->value.shape) + " vs " +
                             shape_str(b->value.shape));
  Shape os(a->value.shape.begin(), a->value.shape.end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor<R> out = Tensor<R>::uninit(os);
  kern::bmm_nn(a->value.ptr(), b->value.ptr(), out.ptr(), batch, m, n, k);
  return make_op<R>(std::move(out), {a, b}, [a, b, batch, m, k, n](Node<R>& self) {
    if (a->requires_grad) {
      a->ensure_grad();  // dA[m,k] += dC[m,n] * B^T with B stored [k,n]
      kern::bmm_nt(self.grad.ptr(), b->value.ptr(), a->grad.ptr(), batch, m, k, n, true);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB[k,n] += A^T[k,m] * dC[m,n]
      kern::bmm_tn(a->value.ptr(), self.grad.ptr(), b->grad.ptr(), batch, m, k, n, true);
    }
  });
}

template <typename R>
NodeP<R> softmax_lastaxis(const NodeP<R>& x) {
  if (x->value.ndim() < 1 || x->value.dim(x->value.ndim() - 1) < 1)
    throw std::runtime_error("softmax_lastaxis: empty last axis in " +
                             shape_str(x->value.shape));
  const int64_t cols = x->value.dim(x->value.ndim() - 1);
  const int64_t rows = x->value.size() / cols;
  Tensor<R> out = Tensor<R>::uninit(x->value.shape);
  kern::softmax_rows(x->value.ptr(), out.ptr(), rows, cols);
  return make_op<R>(std::move(out), {x}, [x, rows, cols](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    kern::softmax_rows_bwd(self.value.ptr(), self.grad.ptr(), x->grad.ptr(), rows, cols);
  });
}

template <typename R>
NodeP<R> layer_norm(const NodeP<R>& x, const NodeP<R>& gamma, const NodeP<R>& beta, double eps) {
  if (eps <= 0) throw std::runtime_error("layer_norm: eps must be positive");
  const int64_t d = x->value.dim(x->value.ndim() - 1);
  if (gamma->value.size() != d || beta->value.size() != d)
    throw std::runtime_error("layer_norm: affine shape mismatch for feature dim " +
                             std::to_string(d));
  const int64_t rows = x->value.size() / d;
  Tensor<R> out = Tensor<R>::uninit(x->value.shape);
  auto mean = std::make_shared<Tensor<R>>(Shape{rows});
  auto rstd = std::make_shared<Tensor<R>>(Shape{rows});
  kern::layer_norm_rows(x->value.ptr(), gamma->value.ptr(), beta->value.ptr(),
                        static_cast<R>(eps), out.ptr(), mean->ptr(), rstd->ptr(), rows, d);
  return make_op<R>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, mean, rstd, rows, d](Node<R>& self) {
                      // The kernel produces all three gradients at once; inputs
                      // that do not require a gradient get a discarded scratch
                      // buffer so their nodes stay unrecorded.
                      Tensor<R> sx, sg, sb;
                      R* dx;
                      R* dgamma;
                      R* dbeta;
                      if (x->requires_grad) {
                        x->ensure_grad();
                        dx = x->grad.ptr();
                      } else {
                        sx = Tensor<R>::zeros(x->value.shape);
                        dx = sx.ptr();
                      }
                      if (gamma->requires_grad) {
                        gamma->ensure_grad();
                        dgamma = gamma->grad.ptr();
                      } else {
                        sg = Tensor<R>::zeros(gamma->value.shape);
                        dgamma = sg.ptr();
                      }
                      if (beta->requires_grad) {
                        beta->ensure_grad();
                        dbeta = beta->grad.ptr();
                      } else {
                        sb = Tensor<R>::zeros(beta->value.shape);
                        dbeta = sb.ptr();
                      }
                      kern::layer_norm_rows_bwd(x->value.ptr(), gamma->value.ptr(), mean->ptr(),
                                                rstd->ptr(), self.grad.ptr(), dx, dgamma, dbeta,
                                                rows, d);
                    });
}

template <typename R>
NodeP<R> gelu(const NodeP<R>& x) {
  Tensor<R> out = Tensor<R>::uninit(x->value.shape);
  kern::gelu(x->value.ptr(), out.ptr(), out.size());
  return make_op<R>(std::move(out), {x}, [x](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    kern::gelu_bwd(x->value.ptr(), self.grad.ptr(), x->grad.ptr(), self.grad.size());
  });
}

// img [count x h x w x C] or [h x w x C] -> same rank with spatial dims (oh, ow).
template <typename R>
NodeP<R> bilinear_resize(const NodeP<R>& img, int64_t oh, int64_t ow) {
  const int nd = img->value.ndim();
  if ((nd != 3 && nd != 4) || oh < 1 || ow < 1)
    throw std::runtime_error("bilinear_resize: bad arguments for shape " +
                             shape_str(img->value.shape));
  const bool batched = (nd == 4);
  const int64_t count = batched ? img->value.dim(0) : 1;
  const int64_t h = img->value.dim(batched ? 1 : 0);
  const int64_t w = img->value.dim(batched ? 2 : 1);
  const int64_t c = img->value.dim(batched ? 3 : 2);
  Shape os = batched ? Shape{count, oh, ow, c} : Shape{oh, ow, c};
  Tensor<R> out = Tensor<R>::uninit(os);
  kern::bilinear_resize(img->value.ptr(), out.ptr(), count, h, w, c, oh, ow);
  return make_op<R>(std::move(out), {img}, [img, count, h, w, c, oh, ow](Node<R>& self) {
    if (!img->requires_grad) return;
    img->ensure_grad();
    kern::bilinear_resize_bwd(self.grad.ptr(), img->grad.ptr(), count, h, w, c, oh, ow);
  });
}

// x [B x N x D], idx [B x nk] (original row per kept slot) -> [B x nk x D].
template <typename R>
NodeP<R> gather_tokens(const NodeP<R>& x, std::shared_ptr<std::vector<int64_t>> idx, int64_t nk) {
  const int64_t b = x->value.dim(0), n = x->value.dim(1), d = x->value.dim(2);
  if (static_cast<int64_t>(idx->size()) != b * nk)
    throw std::runtime_error("gather_tokens: index count " + std::to_string(idx->size()) +
                             " does not match batch " + std::to_string(b) + " x " +
                             std::to_string(nk));
  Tensor<R> out = Tensor<R>::uninit({b, nk, d});
  kern::gather_rows(x->value.ptr(), idx->data(), out.ptr(), b, n, nk, d);
  return make_op<R>(std::move(out), {x}, [x, idx, b, n, nk, d](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    kern::scatter_rows_add(self.grad.ptr(), idx->data(), x->grad.ptr(), b, n, nk, d);
  });
}

// x [B x N x D] -> row 0 of every sample, [B x D].
template <typename R>
NodeP<R> select_token0(const NodeP<R>& x) {
  const int64_t b = x->value.dim(0), n = x->value.dim(1), d = x->value.dim(2);
  Tensor<R> out = Tensor<R>::uninit({b, d});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < d; ++j) out[bi * d + j] = x->value[bi * n * d + j];
  return make_op<R>(std::move(out), {x}, [x, b, n, d](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t j = 0; j < d; ++j) x->grad[bi * n * d + j] += self.grad[bi * d + j];
  });
}

// Cuts the node out of the recorded graph: same value, no history.
template <typename R>
NodeP<R> detach(const NodeP<R>& x) {
  return leaf(x->value, false);
}

template <typename R>
NodeP<R> sum(const NodeP<R>& x) {
  R acc = R(0);
  for (int64_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
  Tensor<R> out({1});
  out[0] = acc;
  return make_op<R>(std::move(out), {x}, [x](Node<R>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const R g = self.grad[0];
    for (int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
  });
}

template <typename R>
NodeP<R> add_scalars(const std::vector<NodeP<R>>& terms) {
  if (terms.empty()) throw std::runtime_error("add_scalars: empty term list");
  R acc = R(0);
  for (const auto& t : terms) {
    if (t->value.size() != 1) throw std::runtime_error("add_scalars: non-scalar term");
    acc += t->value[0];
  }
  Tensor<R> out({1});
  out[0] = acc;
  std::vector<NodeP<R>> parents = terms;
  return make_op<R>(std::move(out), std::move(parents), [terms](Node<R>& self) {
    for (const auto& t : terms)
      if (t->requires_grad) {
        t->ensure_grad();
        t->grad[0] += self.grad[0];
      }
  });
}

inline constexpr double kProbFloor = 1e-12;

// Mean over the batch of -log p[i, y_i], with the probability floor inside
// the log.
template <typename R>
NodeP<R> cross_entropy(const NodeP<R>& p, const std::vector<int64_t>& labels) {
  if (p->value.ndim() != 2)
    throw std::runtime_error("cross_entropy: expected [B x K] probabilities, got " +
                             shape_str(p->value.shape));
  const int64_t b = p->value.dim(0), k = p->value.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    throw std::runtime_error("cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(b));
  for (int64_t i = 0; i < b; ++i)
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
      throw std::runtime_error("cross_entropy: label " +
                               std::to_string(labels[static_cast<size_t>(i)]) + " at row " +
                               std::to_string(i) + " outside [0," + std::to_string(k) + ")");
  const R floor = static_cast<R>(kProbFloor);
  R acc = R(0);
  for (int64_t i = 0; i < b; ++i) {
    R pi = p->value[i * k + labels[static_cast<size_t>(i)]];
    if (pi < floor) pi = floor;
    acc -= std::log(pi);
  }
  Tensor<R> out({1});
  out[0] = acc / static_cast<R>(b);
  auto lab = std::make_shared<std::vector<int64_t>>(labels);
  return make_op<R>(std::move(out), {p}, [p, lab, b, k, floor](Node<R>& self) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    const R g = self.grad[0] / static_cast<R>(b);
    for (int64_t i = 0; i < b; ++i) {
      const int64_t j = i * k + (*lab)[static_cast<size_t>(i)];
      if (p->value[j] >= floor) p->grad[j] -= g / p->value[j];
    }
  });
}

// Mean over the batch of sum_k p_k (log p_k - log q_k), floored inside logs.
// The student distribution is the first argument.
template <typename R>
NodeP<R> kl_divergence(const NodeP<R>& p, const NodeP<R>& q) {
  if (p->value.ndim() != 2 || p->value.shape != q->value.shape)
    throw std::runtime_error("kl_divergence: shape mismatch " + shape_str(p->value.shape) +
                             " vs " + shape_str(q->value.shape));
  const int64_t b = p->value.dim(0), k = p->value.dim(1);
  const R floor = static_cast<R>(kProbFloor);
  R acc = R(0);
  for (int64_t i = 0; i < b * k; ++i) {
    R pv = p->value[i] < floor ? floor : p->value[i];
    R qv = q->value[i] < floor ? floor : q->value[i];
    acc += p->value[i] * (std::log(pv) - std::log(qv));
  }
  Tensor<R> out({1});
  out[0] = acc / static_cast<R>(b);
  return make_op<R>(std::move(out), {p, q}, [p, q, b, k, floor](Node<R>& self) {
    const R g = self.grad[0] / static_cast<R>(b);
    if (p->requires_grad) {
      p->ensure_grad();
      for (int64_t i = 0; i < b * k; ++i) {
        const R pv = p->value[i] < floor ? floor : p->value[i];
        const R qv = q->value[i] < floor ? floor : q->value[i];
        R term = std::log(pv) - std::log(qv);
        if (p->value[i] >= floor) term += R(1);
        p->grad[i] += g * term;
      }
    }
    if (q->requires_grad) {
      q->ensure_grad();
      for (int64_t i = 0; i < b * k; ++i)
        if (q->value[i] >= floor) q->grad[i] -= g * p->value[i] / q->value[i];
    }
  });
}

}  // namespace elvit
