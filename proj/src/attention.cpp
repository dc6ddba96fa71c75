#include "vg3d/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "vg3d/rng.hpp"

namespace vg3d {

Tensor token_confidence(const Tensor& V, const Tensor& T_s) {
  if (V.ndim() != 2 || T_s.ndim() != 2)
    throw std::invalid_argument("token_confidence: expected 2-D inputs");
  if (T_s.dim(0) == 0)
    throw std::invalid_argument("token_confidence: empty surrounding token set");
  if (V.dim(1) != T_s.dim(1))
    throw std::invalid_argument("token_confidence: feature dims differ");
  return matmul_nt(V, T_s);
}

GateVector confidence_gate(const Tensor& conf) {
  if (conf.ndim() != 2 || conf.dim(1) < 1)
    throw std::invalid_argument("confidence_gate: need at least one token column");
  GateVector gate;
  gate.logits = max_rows(conf);
  gate.g = sigmoid(gate.logits);
  return gate;
}

AttnOutput gated_cross_attention(const Tensor& Q, const Tensor& Kv,
                                 const Tensor& Vv,
                                 const std::optional<AttnBias>& E,
                                 const std::optional<GateVector>& gate,
                                 GateWiring wiring, int num_heads,
                                 const Tensor& w_out, const Tensor& b_out) {
  if (Q.ndim() != 2 || Kv.ndim() != 2 || Vv.ndim() != 2)
    throw std::invalid_argument("gated_cross_attention: expected 2-D Q/K/V");
  const int K = Q.dim(0), D = Q.dim(1), N = Kv.dim(0);
  if (Kv.dim(1) != D || Vv.dim(1) != D || Vv.dim(0) != N)
    throw std::invalid_argument("gated_cross_attention: K/V shapes inconsistent");
  if (num_heads < 1 || D % num_heads != 0)
    throw std::invalid_argument("gated_cross_attention: D must divide by heads");
  if (E && (E->e.ndim() != 3 || E->e.dim(0) != num_heads || E->e.dim(1) != K ||
            E->e.dim(2) != N))
    throw std::invalid_argument("gated_cross_attention: E must be [H,K,N]");
  if (wiring != GateWiring::none) {
    if (!gate) throw std::invalid_argument("gated_cross_attention: wiring needs a gate");
    if (gate->g.ndim() != 1 || gate->g.dim(0) != N)
      throw std::invalid_argument("gated_cross_attention: gate length must be N");
  }

  const int Dh = D / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(Dh));
  std::vector<Tensor> head_outs, head_attns;
  head_outs.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    Tensor Qh = slice_cols(Q, h * Dh, Dh);
    Tensor Kh = slice_cols(Kv, h * Dh, Dh);
    Tensor Vh = slice_cols(Vv, h * Dh, Dh);
    Tensor scores = scale(matmul_nt(Qh, Kh), inv_sqrt);  // [K,N]

    Tensor logits;
    switch (wiring) {
      case GateWiring::none:
        logits = E ? add(scores, slice_axis0(E->e, h)) : scores;
        break;
      case GateWiring::additive_bias: {
        Tensor base = E ? add(scores, slice_axis0(E->e, h)) : scores;
        logits = add_bcast_row(base, gate->logits);
        break;
      }
      case GateWiring::gate_on_pe: {
        if (!E) throw std::invalid_argument("gated_cross_attention: gate_on_pe needs E");
        logits = add(scores, mul_bcast_row(slice_axis0(E->e, h), gate->g));
        break;
      }
      case GateWiring::gate_on_all: {
        Tensor base = E ? add(scores, slice_axis0(E->e, h)) : scores;
        logits = mul_bcast_row(base, gate->g);
        break;
      }
    }

    Tensor attn = softmax_rows(logits);
    head_attns.push_back(attn);
    head_outs.push_back(matmul(attn, Vh));
  }

  AttnOutput result;
  result.out = add_bcast_row(matmul(concat_cols(head_outs), w_out), b_out);
  result.attn = stack_axis0(head_attns).detach();
  return result;
}

MultiheadAttnParams mha_init(int dim, int num_heads, Rng& rng, bool requires_grad,
                             DType dtype) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  auto init = [&](std::vector<int> shape) {
    std::vector<double> vals(shape_numel(shape));
    for (double& v : vals) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(vals), requires_grad, dtype);
  };
  MultiheadAttnParams p;
  p.wq = init({dim, dim});
  p.bq = init({dim});
  p.wk = init({dim, dim});
  p.bk = init({dim});
  p.wv = init({dim, dim});
  p.bv = init({dim});
  p.wo = init({dim, dim});
  p.bo = init({dim});
  p.num_heads = num_heads;
  return p;
}

AttnOutput mha_forward(const MultiheadAttnParams& p, const Tensor& x_q,
                       const Tensor& x_kv, const std::optional<AttnBias>& E,
                       const std::optional<GateVector>& gate, GateWiring wiring) {
  Tensor Q = add_bcast_row(matmul(x_q, p.wq), p.bq);
  Tensor Kp = add_bcast_row(matmul(x_kv, p.wk), p.bk);
  Tensor Vp = add_bcast_row(matmul(x_kv, p.wv), p.bv);
  return gated_cross_attention(Q, Kp, Vp, E, gate, wiring, p.num_heads, p.wo, p.bo);
}

const char* gate_wiring_name(GateWiring w) {
  switch (w) {
    case GateWiring::none: return "none";
    case GateWiring::additive_bias: return "additive_bias";
    case GateWiring::gate_on_pe: return "gate_on_pe";
    case GateWiring::gate_on_all: return "gate_on_all";
  }
  return "none";
}

GateWiring gate_wiring_from_name(const std::string& name) {
  if (name == "none") return GateWiring::none;
  if (name == "additive_bias") return GateWiring::additive_bias;
  if (name == "gate_on_pe") return GateWiring::gate_on_pe;
  if (name == "gate_on_all") return GateWiring::gate_on_all;
  throw std::invalid_argument("unknown gate wiring: " + name);
}

}  // namespace vg3d
