#pragma once

#include <cstdint>
#include <vector>

#include "vg3d/geometry.hpp"
#include "vg3d/tensor.hpp"

namespace vg3d {

enum class FKind { signed_log, identity };

// Attention bias, one [K,N] slab per head.
struct AttnBias {
  Tensor e;  // [H,K,N]
};

// Configuration and parameters for turning an offset field into an attention
// bias. The vertex scheme carries one MLP per corner, the others one MLP.
struct PosEncConfig {
  PeScheme scheme = PeScheme::box_surface;
  FKind f_kind = FKind::signed_log;
  double f_scale = 0.1;  // meters
  int num_heads = 1;
  int hidden_dim = 0;
  std::vector<MlpParams> mlps;
};

PosEncConfig posenc_init(PeScheme scheme, int num_heads, int hidden_dim, Rng& rng,
                         FKind f_kind = FKind::signed_log, double f_scale = 0.1,
                         DType dtype = DType::f64);

// Componentwise sign-preserving compression of raw meter offsets:
// signed_log maps d to sign(d)*log(1+|d|/f_scale), identity passes through.
Tensor f_nonlinear(const Tensor& delta, const PosEncConfig& cfg);

// E = MLP(F(delta)); for the vertex scheme the 8 per-corner MLP outputs are
// summed into one bias.
AttnBias pe_bias(const OffsetField& delta, const PosEncConfig& cfg);

struct PeCost {
  std::int64_t mlp_applications = 0;   // number of per-element MLP passes
  std::int64_t bias_buffer_scalars = 0;  // offsets + bias scalars held at once
};

PeCost pe_cost_model(PeScheme scheme, int K, int N, int D_hidden, int H);

const char* pe_scheme_name(PeScheme s);
PeScheme pe_scheme_from_name(const std::string& name);
const char* f_kind_name(FKind f);
FKind f_kind_from_name(const std::string& name);

}  // namespace vg3d
