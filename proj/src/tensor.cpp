#include "vg3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "vg3d/rng.hpp"

namespace vg3d {

namespace {

std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape, bool requires_grad,
                                      DType dtype) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(shape_numel(impl->shape), 0.0);
  impl->requires_grad = requires_grad;
  impl->dtype = dtype;
  return impl;
}

DType merge_dtype(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::f32 || b.dtype() == DType::f32) ? DType::f32
                                                              : DType::f64;
}

// f32 tensors round every stored value through float; accumulation inside an
// op stays in double.
void round_store(TensorImpl& impl) {
  if (impl.dtype != DType::f32) return;
  for (double& v : impl.data) v = static_cast<double>(static_cast<float>(v));
}

void ensure_grad(TensorImpl& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0);
}

bool want_grad(const Tensor& t) { return t.requires_grad(); }

void attach(Tensor& out, std::vector<Tensor> parents,
            std::function<void(TensorImpl&)> backward_fn) {
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (!any) return;
  TensorImpl& impl = *out.raw();
  impl.requires_grad = true;
  impl.parents.reserve(parents.size());
  for (Tensor& p : parents) impl.parents.push_back(p.impl());
  impl.backward_fn = std::move(backward_fn);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Tensor unary_op(const Tensor& a, const char* name,
                const std::function<double(double)>& fwd,
                const std::function<double(double, double)>& dfdx_from_xy) {
  Tensor out = Tensor::zeros(a.shape(), false, a.dtype());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.raw()->data[i] = fwd(a.data()[i]);
  round_store(*out.raw());
  check_finite(out, name);
  attach(out, {a}, [dfdx_from_xy](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      pa.grad[i] += o.grad[i] * dfdx_from_xy(pa.data[i], o.data[i]);
    }
  });
  return out;
}

}  // namespace

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite output value");
    }
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad, DType dtype) {
  return Tensor(make_impl(std::move(shape), requires_grad, dtype));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad,
                    DType dtype) {
  Tensor t(make_impl(std::move(shape), requires_grad, dtype));
  std::fill(t.raw()->data.begin(), t.raw()->data.end(), value);
  round_store(*t.raw());
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values,
                         bool requires_grad, DType dtype) {
  Tensor t(make_impl(std::move(shape), requires_grad, dtype));
  if (values.size() != t.numel()) {
    throw std::invalid_argument("from_data: value count does not match shape");
  }
  t.raw()->data = std::move(values);
  round_store(*t.raw());
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  ensure_grad(*impl_);
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value: tensor is not scalar");
  return impl_->data[0];
}

double Tensor::at(int i, int j) const {
  const int cols = impl_->shape.back();
  return impl_->data[static_cast<std::size_t>(i) * cols + j];
}

double Tensor::at(int i, int j, int k) const {
  const int d1 = impl_->shape[1], d2 = impl_->shape[2];
  return impl_->data[(static_cast<std::size_t>(i) * d1 + j) * d2 + k];
}

Tensor Tensor::detach() const {
  Tensor t(make_impl(impl_->shape, false, impl_->dtype));
  t.raw()->data = impl_->data;
  return t;
}

void Tensor::backward() {
  if (numel() != 1) throw std::invalid_argument("backward: tensor is not scalar");
  // reverse DFS post-order over the recorded graph
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  ensure_grad(*impl_);
  impl_->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->backward_fn) continue;
    // a node may receive no upstream gradient at all (e.g. the losing side
    // of a min/max); its backward still runs with zeros
    ensure_grad(*node);
    node->backward_fn(*node);
  }
}

// ---- matmul family ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) throw std::invalid_argument("matmul: inner dimensions mismatch");
  Tensor out = Tensor::zeros({m, n}, false, merge_dtype(a, b));
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.raw()->data.data();
  for (int i = 0; i < m; ++i) {
    double* crow = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = A[static_cast<std::size_t>(i) * k + p];
      const double* brow = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  round_store(*out.raw());
  check_finite(out, "matmul");
  attach(out, {a, b}, [m, k, n](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    const double* G = o.grad.data();
    if (pa.requires_grad) {
      ensure_grad(pa);
      // dA[i,p] += sum_j G[i,j] * B[p,j]
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          const double* grow = G + static_cast<std::size_t>(i) * n;
          const double* brow = pb.data.data() + static_cast<std::size_t>(p) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa.grad[static_cast<std::size_t>(i) * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      // dB[p,j] += sum_i A[i,p] * G[i,j]
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double aip = pa.data[static_cast<std::size_t>(i) * k + p];
          double* dbrow = pb.grad.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (k != b.dim(1)) throw std::invalid_argument("matmul_nt: inner dimensions mismatch");
  Tensor out = Tensor::zeros({m, n}, false, merge_dtype(a, b));
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.raw()->data.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = B + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
  round_store(*out.raw());
  check_finite(out, "matmul_nt");
  attach(out, {a, b}, [m, k, n](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    const double* G = o.grad.data();
    if (pa.requires_grad) {
      ensure_grad(pa);
      // dA[i,p] += sum_j G[i,j] * B[j,p]
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * n;
        double* darow = pa.grad.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
          const double g = grow[j];
          const double* brow = pb.data.data() + static_cast<std::size_t>(j) * k;
          for (int p = 0; p < k; ++p) darow[p] += g * brow[p];
        }
      }
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      // dB[j,p] += sum_i G[i,j] * A[i,p]
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * n;
        const double* arow = pa.data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
          const double g = grow[j];
          double* dbrow = pb.grad.data() + static_cast<std::size_t>(j) * k;
          for (int p = 0; p < k; ++p) dbrow[p] += g * arow[p];
        }
      }
    }
  });
  return out;
}

Tensor transpose2d(const Tensor& a) {
  require_2d(a, "transpose2d");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r}, false, a.dtype());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.raw()->data[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
  attach(out, {a}, [r, c](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa.grad[static_cast<std::size_t>(i) * c + j] +=
            o.grad[static_cast<std::size_t>(j) * r + i];
  });
  return out;
}

// ---- elementwise binary ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), false, merge_dtype(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.raw()->data[i] = a.data()[i] + b.data()[i];
  round_store(*out.raw());
  check_finite(out, "add");
  attach(out, {a, b}, [](TensorImpl& o) {
    for (int s = 0; s < 2; ++s) {
      TensorImpl& p = *o.parents[static_cast<std::size_t>(s)];
      if (!p.requires_grad) continue;
      ensure_grad(p);
      for (std::size_t i = 0; i < o.data.size(); ++i) p.grad[i] += o.grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), false, merge_dtype(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.raw()->data[i] = a.data()[i] - b.data()[i];
  round_store(*out.raw());
  check_finite(out, "sub");
  attach(out, {a, b}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t i = 0; i < o.data.size(); ++i) pa.grad[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t i = 0; i < o.data.size(); ++i) pb.grad[i] -= o.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), false, merge_dtype(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.raw()->data[i] = a.data()[i] * b.data()[i];
  round_store(*out.raw());
  check_finite(out, "mul");
  attach(out, {a, b}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t i = 0; i < o.data.size(); ++i)
        pa.grad[i] += o.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t i = 0; i < o.data.size(); ++i)
        pb.grad[i] += o.grad[i] * pa.data[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = Tensor::zeros(a.shape(), false, merge_dtype(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.raw()->data[i] = a.data()[i] / b.data()[i];
  round_store(*out.raw());
  check_finite(out, "div");
  attach(out, {a, b}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    if (pa.requires_grad) {
      ensure_grad(pa);
      for (std::size_t i = 0; i < o.data.size(); ++i)
        pa.grad[i] += o.grad[i] / pb.data[i];
    }
    if (pb.requires_grad) {
      ensure_grad(pb);
      for (std::size_t i = 0; i < o.data.size(); ++i)
        pb.grad[i] -= o.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), false, a.dtype());
  for (std::size_t i = 0; i < a.numel(); ++i) out.raw()->data[i] = a.data()[i] * s;
  round_store(*out.raw());
  check_finite(out, "scale");
  attach(out, {a}, [s](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < o.data.size(); ++i) pa.grad[i] += o.grad[i] * s;
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), false, a.dtype());
  for (std::size_t i = 0; i < a.numel(); ++i) out.raw()->data[i] = a.data()[i] + s;
  round_store(*out.raw());
  check_finite(out, "add_scalar");
  attach(out, {a}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < o.data.size(); ++i) pa.grad[i] += o.grad[i];
  });
  return out;
}

namespace {

Tensor min_or_max(const Tensor& a, const Tensor& b, bool take_min, const char* name) {
  require_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape(), false, merge_dtype(a, b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    out.raw()->data[i] = take_min ? std::min(x, y) : std::max(x, y);
  }
  check_finite(out, name);
  attach(out, {a, b}, [take_min](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    TensorImpl& pb = *o.parents[1];
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      const double x = pa.data[i], y = pb.data[i];
      const bool a_wins = take_min ? (x <= y) : (x >= y);  // ties route to a
      TensorImpl& p = a_wins ? pa : pb;
      if (!p.requires_grad) continue;
      ensure_grad(p);
      p.grad[i] += o.grad[i];
    }
  });
  return out;
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) { return min_or_max(a, b, true, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return min_or_max(a, b, false, "maximum"); }

// ---- elementwise unary ----

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus",
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// ---- reductions and row ops ----

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({r, c}, false, a.dtype());
  for (int i = 0; i < r; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * c;
    double* orow = out.raw()->data.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= total;
  }
  round_store(*out.raw());
  check_finite(out, "softmax_rows");
  attach(out, {a}, [r, c](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (int i = 0; i < r; ++i) {
      const double* y = o.data.data() + static_cast<std::size_t>(i) * c;
      const double* g = o.grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += y[j] * g[j];
      double* d = pa.grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::zeros({1}, false, a.dtype());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.raw()->data[0] = acc;
  round_store(*out.raw());
  check_finite(out, "sum");
  attach(out, {a}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (double& g : pa.grad) g += o.grad[0];
  });
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum(a), inv);
}

Tensor max_rows(const Tensor& a) {
  require_2d(a, "max_rows");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({r}, false, a.dtype());
  std::vector<int> argmax(static_cast<std::size_t>(r), 0);
  for (int i = 0; i < r; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    argmax[static_cast<std::size_t>(i)] = best;
    out.raw()->data[static_cast<std::size_t>(i)] = row[best];
  }
  check_finite(out, "max_rows");
  attach(out, {a}, [c, argmax](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < o.data.size(); ++i)
      pa.grad[i * c + static_cast<std::size_t>(argmax[i])] += o.grad[i];
  });
  return out;
}

Tensor mean_axis0(const Tensor& a) {
  require_2d(a, "mean_axis0");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c}, false, a.dtype());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.raw()->data[static_cast<std::size_t>(j)] += a.at(i, j);
  const double inv = 1.0 / r;
  for (double& v : out.raw()->data) v *= inv;
  round_store(*out.raw());
  check_finite(out, "mean_axis0");
  attach(out, {a}, [r, c, inv](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa.grad[static_cast<std::size_t>(i) * c + j] +=
            o.grad[static_cast<std::size_t>(j)] * inv;
  });
  return out;
}

// ---- broadcasts ----

namespace {

Tensor bcast_row_op(const Tensor& m, const Tensor& v, bool multiply, const char* name) {
  require_2d(m, name);
  if (v.ndim() != 1 || v.dim(0) != m.dim(1))
    throw std::invalid_argument(std::string(name) + ": vector length must match columns");
  const int r = m.dim(0), c = m.dim(1);
  Tensor out = Tensor::zeros({r, c}, false, merge_dtype(m, v));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const double x = m.at(i, j), y = v.at(j);
      out.raw()->data[static_cast<std::size_t>(i) * c + j] = multiply ? x * y : x + y;
    }
  round_store(*out.raw());
  check_finite(out, name);
  attach(out, {m, v}, [r, c, multiply](TensorImpl& o) {
    TensorImpl& pm = *o.parents[0];
    TensorImpl& pv = *o.parents[1];
    if (pm.requires_grad) {
      ensure_grad(pm);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + j;
          pm.grad[idx] += multiply ? o.grad[idx] * pv.data[static_cast<std::size_t>(j)]
                                   : o.grad[idx];
        }
    }
    if (pv.requires_grad) {
      ensure_grad(pv);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * c + j;
          pv.grad[static_cast<std::size_t>(j)] +=
              multiply ? o.grad[idx] * pm.data[idx] : o.grad[idx];
        }
    }
  });
  return out;
}

}  // namespace

Tensor add_bcast_row(const Tensor& m, const Tensor& v) {
  return bcast_row_op(m, v, false, "add_bcast_row");
}

Tensor mul_bcast_row(const Tensor& m, const Tensor& v) {
  return bcast_row_op(m, v, true, "mul_bcast_row");
}

Tensor mul_bcast_col(const Tensor& m, const Tensor& u) {
  require_2d(m, "mul_bcast_col");
  if (u.ndim() != 1 || u.dim(0) != m.dim(0))
    throw std::invalid_argument("mul_bcast_col: vector length must match rows");
  const int r = m.dim(0), c = m.dim(1);
  Tensor out = Tensor::zeros({r, c}, false, merge_dtype(m, u));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.raw()->data[static_cast<std::size_t>(i) * c + j] = m.at(i, j) * u.at(i);
  round_store(*out.raw());
  check_finite(out, "mul_bcast_col");
  attach(out, {m, u}, [r, c](TensorImpl& o) {
    TensorImpl& pm = *o.parents[0];
    TensorImpl& pu = *o.parents[1];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
        if (pm.requires_grad) {
          ensure_grad(pm);
          pm.grad[idx] += o.grad[idx] * pu.data[static_cast<std::size_t>(i)];
        }
        if (pu.requires_grad) {
          ensure_grad(pu);
          pu.grad[static_cast<std::size_t>(i)] += o.grad[idx] * pm.data[idx];
        }
      }
  });
  return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out = Tensor::zeros(shape, false, a.dtype());
  out.raw()->data = a.data();
  attach(out, {a}, [](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < o.data.size(); ++i) pa.grad[i] += o.grad[i];
  });
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  require_2d(a, "gather_rows");
  const int c = a.dim(1);
  for (int r : rows)
    if (r < 0 || r >= a.dim(0)) throw std::out_of_range("gather_rows: row index out of range");
  Tensor out = Tensor::zeros({static_cast<int>(rows.size()), c}, false, a.dtype());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.data().data() + static_cast<std::size_t>(rows[i]) * c, c,
                out.raw()->data.data() + i * c);
  attach(out, {a}, [rows, c](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < c; ++j)
        pa.grad[static_cast<std::size_t>(rows[i]) * c + j] += o.grad[i * c + j];
  });
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  require_2d(a, "slice_cols");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || len <= 0 || start + len > c)
    throw std::out_of_range("slice_cols: invalid column range");
  Tensor out = Tensor::zeros({r, len}, false, a.dtype());
  for (int i = 0; i < r; ++i)
    std::copy_n(a.data().data() + static_cast<std::size_t>(i) * c + start, len,
                out.raw()->data.data() + static_cast<std::size_t>(i) * len);
  attach(out, {a}, [r, c, start, len](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j)
        pa.grad[static_cast<std::size_t>(i) * c + start + j] +=
            o.grad[static_cast<std::size_t>(i) * len + j];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int r = parts[0].dim(0);
  int total = 0;
  DType dt = DType::f64;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != r) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.dim(1);
    if (p.dtype() == DType::f32) dt = DType::f32;
  }
  Tensor out = Tensor::zeros({r, total}, false, dt);
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < r; ++i)
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * c, c,
                  out.raw()->data.data() + static_cast<std::size_t>(i) * total + off);
    off += c;
  }
  round_store(*out.raw());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  std::vector<int> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  attach(out, parents, [r, total, widths](TensorImpl& o) {
    int off2 = 0;
    for (std::size_t s = 0; s < o.parents.size(); ++s) {
      TensorImpl& p = *o.parents[s];
      const int c = widths[s];
      if (p.requires_grad) {
        ensure_grad(p);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            p.grad[static_cast<std::size_t>(i) * c + j] +=
                o.grad[static_cast<std::size_t>(i) * total + off2 + j];
      }
      off2 += c;
    }
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int c = parts[0].dim(1);
  int total = 0;
  DType dt = DType::f64;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != c) throw std::invalid_argument("concat_rows: column mismatch");
    total += p.dim(0);
    if (p.dtype() == DType::f32) dt = DType::f32;
  }
  Tensor out = Tensor::zeros({total, c}, false, dt);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.raw()->data.begin() + off);
    off += p.numel();
  }
  round_store(*out.raw());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  attach(out, parents, [](TensorImpl& o) {
    std::size_t off2 = 0;
    for (auto& pp : o.parents) {
      TensorImpl& p = *pp;
      if (p.requires_grad) {
        ensure_grad(p);
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += o.grad[off2 + i];
      }
      off2 += p.data.size();
    }
  });
  return out;
}

Tensor slice_axis0(const Tensor& a, int index) {
  if (a.ndim() < 2) throw std::invalid_argument("slice_axis0: needs >= 2 dims");
  if (index < 0 || index >= a.dim(0)) throw std::out_of_range("slice_axis0: index out of range");
  std::vector<int> out_shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t block = shape_numel(out_shape);
  Tensor out = Tensor::zeros(out_shape, false, a.dtype());
  std::copy_n(a.data().data() + static_cast<std::size_t>(index) * block, block,
              out.raw()->data.data());
  attach(out, {a}, [index, block](TensorImpl& o) {
    TensorImpl& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    ensure_grad(pa);
    for (std::size_t i = 0; i < block; ++i)
      pa.grad[static_cast<std::size_t>(index) * block + i] += o.grad[i];
  });
  return out;
}

Tensor stack_axis0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_axis0: no inputs");
  const std::vector<int>& s = parts[0].shape();
  DType dt = DType::f64;
  for (const Tensor& p : parts) {
    if (p.shape() != s) throw std::invalid_argument("stack_axis0: shape mismatch");
    if (p.dtype() == DType::f32) dt = DType::f32;
  }
  std::vector<int> out_shape;
  out_shape.push_back(static_cast<int>(parts.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out = Tensor::zeros(out_shape, false, dt);
  const std::size_t block = parts[0].numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i].data().begin(), parts[i].data().end(),
              out.raw()->data.begin() + i * block);
  round_store(*out.raw());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  attach(out, parents, [block](TensorImpl& o) {
    for (std::size_t s2 = 0; s2 < o.parents.size(); ++s2) {
      TensorImpl& p = *o.parents[s2];
      if (!p.requires_grad) continue;
      ensure_grad(p);
      for (std::size_t i = 0; i < block; ++i) p.grad[i] += o.grad[s2 * block + i];
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: empty tensor");
  const int c = x.shape().back();
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
    throw std::invalid_argument("layer_norm: gamma/beta must match last axis");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
  Tensor out = Tensor::zeros(x.shape(), false, x.dtype());
  std::vector<double> inv_sigma(rows), mu(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x.data().data() + i * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += row[j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - m) * (row[j] - m);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    inv_sigma[i] = is;
    double* orow = out.raw()->data.data() + i * c;
    for (int j = 0; j < c; ++j)
      orow[j] = (row[j] - m) * is * gamma.at(j) + beta.at(j);
  }
  round_store(*out.raw());
  check_finite(out, "layer_norm");
  attach(out, {x, gamma, beta}, [c, rows, mu, inv_sigma](TensorImpl& o) {
    TensorImpl& px = *o.parents[0];
    TensorImpl& pg = *o.parents[1];
    TensorImpl& pb = *o.parents[2];
    if (pg.requires_grad) ensure_grad(pg);
    if (pb.requires_grad) ensure_grad(pb);
    if (px.requires_grad) ensure_grad(px);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* xrow = px.data.data() + i * c;
      const double* grow = o.grad.data() + i * c;
      const double is = inv_sigma[i], m = mu[i];
      if (pg.requires_grad || pb.requires_grad) {
        for (int j = 0; j < c; ++j) {
          const double xhat = (xrow[j] - m) * is;
          if (pg.requires_grad) pg.grad[static_cast<std::size_t>(j)] += grow[j] * xhat;
          if (pb.requires_grad) pb.grad[static_cast<std::size_t>(j)] += grow[j];
        }
      }
      if (px.requires_grad) {
        // dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < c; ++j) {
          const double xhat = (xrow[j] - m) * is;
          const double dxhat = grow[j] * pg.data[static_cast<std::size_t>(j)];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= c;
        mean_dxhat_xhat /= c;
        for (int j = 0; j < c; ++j) {
          const double xhat = (xrow[j] - m) * is;
          const double dxhat = grow[j] * pg.data[static_cast<std::size_t>(j)];
          px.grad[i * c + j] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
  if (logits.ndim() != 1) throw std::invalid_argument("cross_entropy_logits: expected 1-D logits");
  const int c = logits.dim(0);
  if (target < 0 || target >= c) throw std::out_of_range("cross_entropy_logits: bad target");
  const double* l = logits.data().data();
  double mx = l[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, l[j]);
  double total = 0.0;
  for (int j = 0; j < c; ++j) total += std::exp(l[j] - mx);
  const double lse = mx + std::log(total);
  Tensor out = Tensor::zeros({1}, false, logits.dtype());
  out.raw()->data[0] = lse - l[target];
  round_store(*out.raw());
  check_finite(out, "cross_entropy_logits");
  attach(out, {logits}, [c, target, mx, total](TensorImpl& o) {
    TensorImpl& pl = *o.parents[0];
    if (!pl.requires_grad) return;
    ensure_grad(pl);
    const double g = o.grad[0];
    for (int j = 0; j < c; ++j) {
      const double p = std::exp(pl.data[static_cast<std::size_t>(j)] - mx) / total;
      pl.grad[static_cast<std::size_t>(j)] += g * (p - (j == target ? 1.0 : 0.0));
    }
  });
  return out;
}

// ---- MLP ----

MlpParams mlp_init(int in_dim, int hidden_dim, int out_dim, Rng& rng,
                   bool requires_grad, DType dtype) {
  auto init = [&](int fan_in, std::vector<int> shape) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> vals(shape_numel(shape));
    for (double& v : vals) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(vals), requires_grad, dtype);
  };
  MlpParams p;
  p.w1 = init(in_dim, {in_dim, hidden_dim});
  p.b1 = init(in_dim, {hidden_dim});
  p.w2 = init(hidden_dim, {hidden_dim, out_dim});
  p.b2 = init(hidden_dim, {out_dim});
  return p;
}

Tensor mlp_apply(const MlpParams& p, const Tensor& x) {
  const int in_dim = p.in_dim();
  if (x.shape().back() != in_dim)
    throw std::invalid_argument("mlp_apply: last axis does not match in_dim");
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in_dim));
  Tensor flat = reshape(x, {rows, in_dim});
  Tensor h = relu(add_bcast_row(matmul(flat, p.w1), p.b1));
  Tensor y = add_bcast_row(matmul(h, p.w2), p.b2);
  std::vector<int> out_shape = x.shape();
  out_shape.back() = p.out_dim();
  return reshape(y, out_shape);
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  Tensor probe = Tensor::from_data(x.shape(), x.data(), true);
  Tensor y = f(probe);
  if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  check_finite(y, "grad_check");
  y.backward();
  const std::vector<double> analytic = probe.grad();

  std::vector<double> base = x.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double orig = base[i];
    base[i] = orig + h;
    const double fp = f(Tensor::from_data(x.shape(), base)).value();
    base[i] = orig - h;
    const double fm = f(Tensor::from_data(x.shape(), base)).value();
    base[i] = orig;
    const double central = (fp - fm) / (2.0 * h);
    const double err = std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vg3d
