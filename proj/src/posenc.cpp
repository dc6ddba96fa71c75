#include "vg3d/posenc.hpp"

#include <cmath>
#include <stdexcept>

#include "vg3d/rng.hpp"

namespace vg3d {

PosEncConfig posenc_init(PeScheme scheme, int num_heads, int hidden_dim, Rng& rng,
                         FKind f_kind, double f_scale, DType dtype) {
  if (num_heads < 1) throw std::invalid_argument("posenc: num_heads must be >= 1");
  if (f_scale <= 0.0) throw std::invalid_argument("posenc: f_scale must be positive");
  PosEncConfig cfg;
  cfg.scheme = scheme;
  cfg.f_kind = f_kind;
  cfg.f_scale = f_scale;
  cfg.num_heads = num_heads;
  cfg.hidden_dim = hidden_dim;
  const int n_mlps = scheme == PeScheme::vertex ? 8 : 1;
  for (int i = 0; i < n_mlps; ++i)
    cfg.mlps.push_back(mlp_init(3, hidden_dim, num_heads, rng, true, dtype));
  return cfg;
}

Tensor f_nonlinear(const Tensor& delta, const PosEncConfig& cfg) {
  if (cfg.f_kind == FKind::identity) return reshape(delta, delta.shape());
  const double s = cfg.f_scale;
  Tensor out = Tensor::zeros(delta.shape(), false, delta.dtype());
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    const double d = delta.data()[i];
    const double m = std::log1p(std::fabs(d) / s);
    out.mutable_data()[i] = d < 0.0 ? -m : (d > 0.0 ? m : 0.0);
  }
  if (delta.dtype() == DType::f32)
    for (double& v : out.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  check_finite(out, "f_nonlinear");
  // derivative 1/(s+|d|) in every component, bounded by 1/s
  if (delta.requires_grad()) {
    struct Grad {
      double s;
      void operator()(TensorImpl& o) const {
        TensorImpl& pa = *o.parents[0];
        if (!pa.requires_grad) return;
        if (pa.grad.size() != pa.data.size()) pa.grad.assign(pa.data.size(), 0.0);
        for (std::size_t i = 0; i < o.data.size(); ++i)
          pa.grad[i] += o.grad[i] / (s + std::fabs(pa.data[i]));
      }
    };
    out.raw()->requires_grad = true;
    out.raw()->parents = {delta.impl()};
    out.raw()->backward_fn = Grad{s};
  }
  return out;
}

namespace {

void require_scheme_shape(const OffsetField& delta, const PosEncConfig& cfg) {
  if (delta.scheme != cfg.scheme)
    throw std::invalid_argument("pe_bias: offset field scheme does not match config");
  const auto& s = delta.offsets.shape();
  if (cfg.scheme == PeScheme::vertex) {
    if (s.size() != 4 || s[2] != 8 || s[3] != 3)
      throw std::invalid_argument("pe_bias: vertex offsets must be [K,N,8,3]");
    if (cfg.mlps.size() != 8)
      throw std::invalid_argument("pe_bias: vertex scheme needs exactly 8 MLPs");
  } else {
    if (s.size() != 3 || s[2] != 3)
      throw std::invalid_argument("pe_bias: offsets must be [K,N,3]");
    if (cfg.mlps.size() != 1)
      throw std::invalid_argument("pe_bias: scheme needs exactly 1 MLP");
  }
}

// [K*N,H] -> [H,K,N]
Tensor to_head_major(const Tensor& flat, int K, int N, int H) {
  return reshape(transpose2d(flat), {H, K, N});
}

}  // namespace

AttnBias pe_bias(const OffsetField& delta, const PosEncConfig& cfg) {
  require_scheme_shape(delta, cfg);
  const auto& s = delta.offsets.shape();
  const int K = s[0], N = s[1], H = cfg.num_heads;
  Tensor f = f_nonlinear(delta.offsets, cfg);

  if (cfg.scheme != PeScheme::vertex) {
    Tensor flat = reshape(f, {K * N, 3});
    Tensor bias = mlp_apply(cfg.mlps[0], flat);  // [K*N,H]
    AttnBias out;
    out.e = to_head_major(bias, K, N, H);
    check_finite(out.e, "pe_bias");
    return out;
  }

  // vertex: one MLP per corner, summed
  Tensor flat = reshape(f, {K * N, 8 * 3});
  Tensor total;
  for (int c = 0; c < 8; ++c) {
    Tensor corner = slice_cols(flat, c * 3, 3);
    Tensor bias = mlp_apply(cfg.mlps[static_cast<std::size_t>(c)], corner);
    total = c == 0 ? bias : add(total, bias);
  }
  AttnBias out;
  out.e = to_head_major(total, K, N, H);
  check_finite(out.e, "pe_bias");
  return out;
}

const char* pe_scheme_name(PeScheme s) {
  switch (s) {
    case PeScheme::box_surface: return "box_surface";
    case PeScheme::center: return "center";
    case PeScheme::vertex: return "vertex";
  }
  return "box_surface";
}

PeScheme pe_scheme_from_name(const std::string& name) {
  if (name == "box_surface") return PeScheme::box_surface;
  if (name == "center") return PeScheme::center;
  if (name == "vertex") return PeScheme::vertex;
  throw std::invalid_argument("unknown PE scheme: " + name);
}

const char* f_kind_name(FKind f) {
  return f == FKind::signed_log ? "signed_log" : "identity";
}

FKind f_kind_from_name(const std::string& name) {
  if (name == "signed_log") return FKind::signed_log;
  if (name == "identity") return FKind::identity;
  throw std::invalid_argument("unknown F kind: " + name);
}

PeCost pe_cost_model(PeScheme scheme, int K, int N, int D_hidden, int H) {
  if (K <= 0 || N <= 0 || D_hidden <= 0 || H <= 0)
    throw std::invalid_argument("pe_cost_model: shapes must be positive");
  const std::int64_t elems = static_cast<std::int64_t>(K) * N;
  PeCost cost;
  if (scheme == PeScheme::vertex) {
    cost.mlp_applications = 8 * elems;
    cost.bias_buffer_scalars = 8 * elems * 3 + elems * H;
  } else {
    cost.mlp_applications = elems;
    cost.bias_buffer_scalars = elems * 3 + elems * H;
  }
  return cost;
}

}  // namespace vg3d
