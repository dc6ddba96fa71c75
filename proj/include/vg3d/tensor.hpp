#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vg3d {

// Scalar precision of a tensor's forward values. f64 is the default and the
// only mode gradient checks run in; f32 rounds every stored value through
// float and exists for benchmark runs.
enum class DType { f64, f32 };

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily, same length as data
  bool requires_grad = false;
  DType dtype = DType::f64;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
};

// Dense row-major tensor with recorded-graph reverse-mode differentiation.
// Copies share the underlying buffer (value semantics over a shared node,
// like the usual minimal-autograd layout). Forward values are immutable once
// an op has consumed the tensor; only gradients accumulate.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false,
                      DType dtype = DType::f64);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false, DType dtype = DType::f64);
  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false, DType dtype = DType::f64);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->data.size(); }
  DType dtype() const { return impl_->dtype; }
  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  const std::vector<double>& grad() const;
  void zero_grad();

  double value() const;             // scalar tensors only
  double at(int i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const;
  double at(int i, int j, int k) const;

  // Runs reverse-mode accumulation from this scalar through the recorded
  // graph. Gradient buffers of all reachable requires_grad tensors are
  // accumulated into (not reset).
  void backward();

  // Value copy with no graph history.
  Tensor detach() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  TensorImpl* raw() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

std::size_t shape_numel(const std::vector<int>& shape);

// Throws if any entry of t is NaN or infinite; `op` names the producer.
void check_finite(const Tensor& t, const char* op);

// ---- elementwise and linear-algebra ops (all differentiable) ----

Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);    // [m,k]x[n,k]^T
Tensor transpose2d(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor minimum(const Tensor& a, const Tensor& b);      // ties take a's grad
Tensor maximum(const Tensor& a, const Tensor& b);      // ties take a's grad

Tensor relu(const Tensor& a);                          // grad at 0 is 0
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor abs(const Tensor& a);                           // grad at 0 is 0
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor softmax_rows(const Tensor& a);                  // rows of a 2-D tensor
Tensor sum(const Tensor& a);                           // full reduction -> [1]
Tensor mean(const Tensor& a);
Tensor max_rows(const Tensor& a);                      // [r,c] -> [r], first-max subgradient
Tensor mean_axis0(const Tensor& a);                    // [r,c] -> [c]

Tensor add_bcast_row(const Tensor& m, const Tensor& v);  // m[i,j] + v[j]
Tensor mul_bcast_row(const Tensor& m, const Tensor& v);  // m[i,j] * v[j]
Tensor mul_bcast_col(const Tensor& m, const Tensor& u);  // m[i,j] * u[i]

Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_axis0(const Tensor& a, int index);        // [d0,d1,...] -> [d1,...]
Tensor stack_axis0(const std::vector<Tensor>& parts);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Stable softmax cross-entropy of a logit vector against a class index.
Tensor cross_entropy_logits(const Tensor& logits, int target);

// ---- two-layer perceptron ----

struct MlpParams {
  Tensor w1, b1;  // [in,hidden], [hidden]
  Tensor w2, b2;  // [hidden,out], [out]

  int in_dim() const { return w1.dim(0); }
  int hidden_dim() const { return w1.dim(1); }
  int out_dim() const { return w2.dim(1); }
};

class Rng;
MlpParams mlp_init(int in_dim, int hidden_dim, int out_dim, Rng& rng,
                   bool requires_grad = true, DType dtype = DType::f64);

// affine -> ReLU -> affine over the last axis of x.
Tensor mlp_apply(const MlpParams& p, const Tensor& x);

// ---- finite-difference gradient checker ----

// Max over coordinates of |analytic - central difference| / max(1, |central|).
// f must be a pure scalar-valued function of x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h = 1e-5);

}  // namespace vg3d
