#include "vg3d/decoder.hpp"

#include <stdexcept>

#include "vg3d/rng.hpp"

namespace vg3d {

namespace {

constexpr double kMinBoxSize = 1e-6;

std::vector<Point3> box_centers(const std::vector<Box3>& boxes) {
  std::vector<Point3> centers;
  centers.reserve(boxes.size());
  for (const Box3& b : boxes) centers.push_back(b.center);
  return centers;
}

BranchParams branch_init(int D, int H, int pe_hidden, const BranchSpec& spec,
                         Rng& rng, DType dtype) {
  BranchParams p;
  p.spec = spec;
  p.text_cross = mha_init(D, H, rng, true, dtype);
  p.visual_cross = mha_init(D, H, rng, true, dtype);
  if (spec.use_pe)
    p.posenc = posenc_init(spec.scheme, H, pe_hidden, rng, spec.f_kind,
                           spec.f_scale, dtype);
  p.pre_text = layer_norm_init(D, true, dtype);
  p.pre_visual = layer_norm_init(D, true, dtype);
  p.fuse_norm = layer_norm_init(D, true, dtype);
  return p;
}

// Text block + gated visual block of one branch, fused with the residual
// stream: b = LN(y + text_out + visual_out).
Tensor branch_forward(const BranchParams& p, const Tensor& y,
                      const Tensor& seeds_V, const std::vector<Point3>& seed_xyz,
                      const std::vector<Box3>& boxes, const Tensor& T_branch,
                      Tensor* text_out_trace, Tensor* visual_attn_trace,
                      Tensor* bias_trace) {
  std::optional<AttnBias> bias;
  if (p.spec.use_pe) {
    OffsetField field = offset_field(seed_xyz, boxes, p.spec.scheme,
                                     seeds_V.dtype());
    bias = pe_bias(field, p.posenc);
    if (bias_trace) *bias_trace = bias->e.detach();
  }

  std::optional<GateVector> gate;
  GateWiring wiring = p.spec.wiring;
  if (wiring != GateWiring::none && T_branch.defined()) {
    gate = confidence_gate(token_confidence(seeds_V, T_branch));
  } else {
    wiring = GateWiring::none;  // empty token stream falls back to ungated
  }

  Tensor contributions = y;
  if (T_branch.defined()) {
    AttnOutput text = mha_forward(p.text_cross, layer_norm(y, p.pre_text.gamma, p.pre_text.beta), T_branch);
    if (text_out_trace) *text_out_trace = text.out.detach();
    contributions = add(contributions, text.out);
  }
  AttnOutput visual = mha_forward(
      p.visual_cross, layer_norm(y, p.pre_visual.gamma, p.pre_visual.beta),
      seeds_V, bias, gate, wiring);
  if (visual_attn_trace) *visual_attn_trace = visual.attn;
  contributions = add(contributions, visual.out);
  return layer_norm(contributions, p.fuse_norm.gamma, p.fuse_norm.beta);
}

Tensor self_attn_block(const Tensor& x, const MultiheadAttnParams& p,
                       const LayerNormParams& pre) {
  Tensor normed = layer_norm(x, pre.gamma, pre.beta);
  return add(x, mha_forward(p, normed, normed).out);
}

Tensor tail_block(const Tensor& fused, const MlpParams& ffn,
                  const LayerNormParams& pre_ffn, const LayerNormParams& out_norm) {
  Tensor f = add(fused, mlp_apply(ffn, layer_norm(fused, pre_ffn.gamma, pre_ffn.beta)));
  return layer_norm(f, out_norm.gamma, out_norm.beta);
}

}  // namespace

LayerNormParams layer_norm_init(int dim, bool requires_grad, DType dtype) {
  LayerNormParams p;
  p.gamma = Tensor::full({dim}, 1.0, requires_grad, dtype);
  p.beta = Tensor::zeros({dim}, requires_grad, dtype);
  return p;
}

DecoderLayerParams decoder_layer_init(int D, int H, int ffn_hidden, int box_hidden,
                                      int pe_hidden, const BranchSpec& target,
                                      const BranchSpec& surrounding, Rng& rng,
                                      DType dtype) {
  DecoderLayerParams p;
  p.self_attn = mha_init(D, H, rng, true, dtype);
  p.pre_self = layer_norm_init(D, true, dtype);
  p.target = branch_init(D, H, pe_hidden, target, rng, dtype);
  p.surrounding = branch_init(D, H, pe_hidden, surrounding, rng, dtype);
  p.ffn = mlp_init(D, ffn_hidden, D, rng, true, dtype);
  p.pre_ffn = layer_norm_init(D, true, dtype);
  p.out_norm = layer_norm_init(D, true, dtype);
  p.box_head.mlp = mlp_init(D, box_hidden, 6, rng, true, dtype);
  return p;
}

SerialLayerParams serial_layer_init(int D, int H, int ffn_hidden, int box_hidden,
                                    int pe_hidden, const BranchSpec& branch,
                                    Rng& rng, DType dtype) {
  SerialLayerParams p;
  p.self_attn = mha_init(D, H, rng, true, dtype);
  p.pre_self = layer_norm_init(D, true, dtype);
  p.branch = branch_init(D, H, pe_hidden, branch, rng, dtype);
  p.ffn = mlp_init(D, ffn_hidden, D, rng, true, dtype);
  p.pre_ffn = layer_norm_init(D, true, dtype);
  p.out_norm = layer_norm_init(D, true, dtype);
  p.box_head.mlp = mlp_init(D, box_hidden, 6, rng, true, dtype);
  return p;
}

BoxPrediction predict_boxes(const Tensor& features, const BoxHeadParams& head,
                            const std::vector<Point3>& ref_centers) {
  const int K = features.dim(0);
  if (static_cast<int>(ref_centers.size()) != K)
    throw std::invalid_argument("predict_boxes: reference centers mismatch");
  Tensor raw = mlp_apply(head.mlp, features);  // [K,6]
  std::vector<double> refs;
  refs.reserve(static_cast<std::size_t>(K) * 3);
  for (const Point3& c : ref_centers) {
    refs.push_back(c.x);
    refs.push_back(c.y);
    refs.push_back(c.z);
  }
  Tensor ref = Tensor::from_data({K, 3}, std::move(refs), false, features.dtype());
  Tensor centers = add(slice_cols(raw, 0, 3), ref);
  Tensor sizes = add_scalar(softplus(slice_cols(raw, 3, 3)), kMinBoxSize);
  BoxPrediction pred;
  pred.boxes6 = concat_cols({centers, sizes});
  pred.boxes.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Box3 b;
    b.center = {pred.boxes6.at(k, 0), pred.boxes6.at(k, 1), pred.boxes6.at(k, 2)};
    b.l = pred.boxes6.at(k, 3);
    b.w = pred.boxes6.at(k, 4);
    b.h = pred.boxes6.at(k, 5);
    validate_box(b);
    pred.boxes.push_back(b);
  }
  return pred;
}

QuerySet decoder_layer(const QuerySet& q, const Tensor& seeds_V,
                       const std::vector<Point3>& seed_xyz, const Tensor& T_m,
                       const Tensor& T_s, const DecoderLayerParams& p,
                       LayerTrace* trace) {
  if (!T_m.defined() || T_m.dim(0) < 1)
    throw std::invalid_argument("decoder_layer: no main-object tokens");
  if (q.boxes.size() != static_cast<std::size_t>(q.feats.dim(0)))
    throw std::invalid_argument("decoder_layer: box count does not match queries");

  Tensor y = self_attn_block(q.feats, p.self_attn, p.pre_self);

  Tensor b_target = branch_forward(
      p.target, y, seeds_V, seed_xyz, q.boxes, T_m,
      trace ? &trace->target_text_out : nullptr,
      trace ? &trace->target_visual_attn : nullptr,
      trace ? &trace->target_bias : nullptr);
  Tensor b_surround = branch_forward(
      p.surrounding, y, seeds_V, seed_xyz, q.boxes, T_s,
      trace ? &trace->surrounding_text_out : nullptr,
      trace ? &trace->surrounding_visual_attn : nullptr,
      trace ? &trace->surrounding_bias : nullptr);

  Tensor out = tail_block(add(b_target, b_surround), p.ffn, p.pre_ffn, p.out_norm);

  QuerySet next;
  next.feats = out;
  next.layer_index = q.layer_index + 1;
  BoxPrediction pred = predict_boxes(out, p.box_head, box_centers(q.boxes));
  next.boxes = pred.boxes;
  next.boxes6 = pred.boxes6;
  if (trace) {
    trace->boxes = next.boxes;
    trace->feats = out.detach();
  }
  return next;
}

QuerySet serial_layer(const QuerySet& q, const Tensor& seeds_V,
                      const std::vector<Point3>& seed_xyz, const Tensor& T_all,
                      const SerialLayerParams& p, LayerTrace* trace) {
  if (!T_all.defined() || T_all.dim(0) < 1)
    throw std::invalid_argument("serial_layer: no text tokens");
  if (q.boxes.size() != static_cast<std::size_t>(q.feats.dim(0)))
    throw std::invalid_argument("serial_layer: box count does not match queries");

  Tensor y = self_attn_block(q.feats, p.self_attn, p.pre_self);
  Tensor b = branch_forward(p.branch, y, seeds_V, seed_xyz, q.boxes, T_all,
                            trace ? &trace->target_text_out : nullptr,
                            trace ? &trace->target_visual_attn : nullptr,
                            trace ? &trace->target_bias : nullptr);
  Tensor out = tail_block(b, p.ffn, p.pre_ffn, p.out_norm);

  QuerySet next;
  next.feats = out;
  next.layer_index = q.layer_index + 1;
  BoxPrediction pred = predict_boxes(out, p.box_head, box_centers(q.boxes));
  next.boxes = pred.boxes;
  next.boxes6 = pred.boxes6;
  if (trace) {
    trace->boxes = next.boxes;
    trace->feats = out.detach();
  }
  return next;
}

DecodeResult decode_stack(const QuerySet& q0, const Tensor& seeds_V,
                          const std::vector<Point3>& seed_xyz, const Tensor& T_m,
                          const Tensor& T_s,
                          const std::vector<DecoderLayerParams>& layers,
                          bool with_trace) {
  if (layers.empty()) throw std::invalid_argument("decode_stack: need >= 1 layer");
  DecodeResult result;
  if (with_trace) result.trace = DecoderTrace{};
  QuerySet q = q0;
  for (const DecoderLayerParams& p : layers) {
    LayerTrace trace;
    QuerySet next = decoder_layer(q, seeds_V, seed_xyz, T_m, T_s, p,
                                  with_trace ? &trace : nullptr);
    DecodeLayerOutput out;
    out.feats = next.feats;
    out.boxes6 = next.boxes6;
    out.boxes = next.boxes;
    result.per_layer.push_back(out);
    if (with_trace) result.trace->layers.push_back(std::move(trace));
    q = next;
  }
  result.final_queries = q;
  return result;
}

void collect_params(const MultiheadAttnParams& p, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".wq", p.wq);
  out.emplace_back(prefix + ".bq", p.bq);
  out.emplace_back(prefix + ".wk", p.wk);
  out.emplace_back(prefix + ".bk", p.bk);
  out.emplace_back(prefix + ".wv", p.wv);
  out.emplace_back(prefix + ".bv", p.bv);
  out.emplace_back(prefix + ".wo", p.wo);
  out.emplace_back(prefix + ".bo", p.bo);
}

void collect_params(const MlpParams& p, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".w1", p.w1);
  out.emplace_back(prefix + ".b1", p.b1);
  out.emplace_back(prefix + ".w2", p.w2);
  out.emplace_back(prefix + ".b2", p.b2);
}

void collect_params(const LayerNormParams& p, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".gamma", p.gamma);
  out.emplace_back(prefix + ".beta", p.beta);
}

void collect_params(const PosEncConfig& p, const std::string& prefix, NamedParams& out) {
  for (std::size_t i = 0; i < p.mlps.size(); ++i)
    collect_params(p.mlps[i], prefix + ".mlp" + std::to_string(i), out);
}

void collect_params(const BranchParams& p, const std::string& prefix, NamedParams& out) {
  collect_params(p.text_cross, prefix + ".text_cross", out);
  collect_params(p.visual_cross, prefix + ".visual_cross", out);
  if (p.spec.use_pe) collect_params(p.posenc, prefix + ".posenc", out);
  collect_params(p.pre_text, prefix + ".pre_text", out);
  collect_params(p.pre_visual, prefix + ".pre_visual", out);
  collect_params(p.fuse_norm, prefix + ".fuse_norm", out);
}

void collect_params(const DecoderLayerParams& p, const std::string& prefix, NamedParams& out) {
  collect_params(p.self_attn, prefix + ".self_attn", out);
  collect_params(p.pre_self, prefix + ".pre_self", out);
  collect_params(p.target, prefix + ".target", out);
  collect_params(p.surrounding, prefix + ".surrounding", out);
  collect_params(p.ffn, prefix + ".ffn", out);
  collect_params(p.pre_ffn, prefix + ".pre_ffn", out);
  collect_params(p.out_norm, prefix + ".out_norm", out);
  collect_params(p.box_head.mlp, prefix + ".box_head", out);
}

void collect_params(const SerialLayerParams& p, const std::string& prefix, NamedParams& out) {
  collect_params(p.self_attn, prefix + ".self_attn", out);
  collect_params(p.pre_self, prefix + ".pre_self", out);
  collect_params(p.branch, prefix + ".branch", out);
  collect_params(p.ffn, prefix + ".ffn", out);
  collect_params(p.pre_ffn, prefix + ".pre_ffn", out);
  collect_params(p.out_norm, prefix + ".out_norm", out);
  collect_params(p.box_head.mlp, prefix + ".box_head", out);
}

std::size_t param_count(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace vg3d
