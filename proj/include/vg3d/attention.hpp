#pragma once

#include <optional>

#include "vg3d/posenc.hpp"
#include "vg3d/tensor.hpp"

namespace vg3d {

// Per-seed-point gate in (0,1), plus the pre-sigmoid max-confidence logits
// kept around for the additive wiring.
struct GateVector {
  Tensor g;       // [N]
  Tensor logits;  // [N]
};

// How the text-guided confidence enters the attention logits:
//   none          softmax(QK^T + E)
//   additive_bias softmax(QK^T + E + conf)
//   gate_on_pe    softmax(QK^T + conf x E)
//   gate_on_all   softmax(conf x (QK^T + E))
enum class GateWiring { none, additive_bias, gate_on_pe, gate_on_all };

// Plain inner products between seed point features and surrounding token
// features; no scaling, no softmax.
Tensor token_confidence(const Tensor& V, const Tensor& T_s);

// g[i] = sigmoid(max_j conf[i,j]).
GateVector confidence_gate(const Tensor& conf);

struct AttnOutput {
  Tensor out;   // [K,D]
  Tensor attn;  // [H,K,N], detached copy for inspection
};

// Multi-head cross-attention over pre-projected Q/K/V with an optional
// positional bias E and text gate. The gate is shared across heads and
// broadcast along the query axis. Softmax is always the outermost step.
AttnOutput gated_cross_attention(const Tensor& Q, const Tensor& Kv,
                                 const Tensor& Vv,
                                 const std::optional<AttnBias>& E,
                                 const std::optional<GateVector>& gate,
                                 GateWiring wiring, int num_heads,
                                 const Tensor& w_out, const Tensor& b_out);

// q/k/v/out projection weights for one attention block.
struct MultiheadAttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  int num_heads = 1;
};

MultiheadAttnParams mha_init(int dim, int num_heads, Rng& rng,
                             bool requires_grad = true, DType dtype = DType::f64);

// Projects x_q / x_kv and runs gated_cross_attention.
AttnOutput mha_forward(const MultiheadAttnParams& p, const Tensor& x_q,
                       const Tensor& x_kv,
                       const std::optional<AttnBias>& E = std::nullopt,
                       const std::optional<GateVector>& gate = std::nullopt,
                       GateWiring wiring = GateWiring::none);

const char* gate_wiring_name(GateWiring w);
GateWiring gate_wiring_from_name(const std::string& name);

}  // namespace vg3d
