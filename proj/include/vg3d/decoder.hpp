#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vg3d/attention.hpp"
#include "vg3d/geometry.hpp"
#include "vg3d/posenc.hpp"
#include "vg3d/tensor.hpp"

namespace vg3d {

// Query proposals flowing through the decoder: features plus the current
// coarse box predictions they are anchored to. boxes6 is the differentiable
// [K,6] tensor behind `boxes`; PE and reference centers use the detached
// values so position encoding does not backpropagate into earlier box heads.
struct QuerySet {
  Tensor feats;             // [K,D]
  std::vector<Box3> boxes;  // one per query, refined every layer
  Tensor boxes6;            // [K,6] (cx,cy,cz,l,w,h), graph-connected
  int layer_index = 0;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

LayerNormParams layer_norm_init(int dim, bool requires_grad = true,
                                DType dtype = DType::f64);

// Static description of one decoder branch's visual attention.
struct BranchSpec {
  bool use_pe = true;
  PeScheme scheme = PeScheme::box_surface;
  GateWiring wiring = GateWiring::none;
  FKind f_kind = FKind::signed_log;
  double f_scale = 0.1;
};

struct BranchParams {
  BranchSpec spec;
  MultiheadAttnParams text_cross;
  MultiheadAttnParams visual_cross;
  PosEncConfig posenc;  // unused when spec.use_pe is false
  LayerNormParams pre_text, pre_visual, fuse_norm;
};

struct BoxHeadParams {
  MlpParams mlp;  // D -> hidden -> 6 (center offset, raw sizes)
};

struct DecoderLayerParams {
  MultiheadAttnParams self_attn;
  LayerNormParams pre_self;
  BranchParams target;
  BranchParams surrounding;
  MlpParams ffn;
  LayerNormParams pre_ffn, out_norm;
  BoxHeadParams box_head;
};

// Single-branch baseline: one text cross-attention over the full token set
// and one visual cross-attention, same scaffolding otherwise.
struct SerialLayerParams {
  MultiheadAttnParams self_attn;
  LayerNormParams pre_self;
  BranchParams branch;
  MlpParams ffn;
  LayerNormParams pre_ffn, out_norm;
  BoxHeadParams box_head;
};

DecoderLayerParams decoder_layer_init(int D, int H, int ffn_hidden, int box_hidden,
                                      int pe_hidden, const BranchSpec& target,
                                      const BranchSpec& surrounding, Rng& rng,
                                      DType dtype = DType::f64);
SerialLayerParams serial_layer_init(int D, int H, int ffn_hidden, int box_hidden,
                                    int pe_hidden, const BranchSpec& branch,
                                    Rng& rng, DType dtype = DType::f64);

// Per-layer capture for attention dumps and disentanglement checks. Text
// block outputs are recorded so the two branches can be compared directly.
struct LayerTrace {
  Tensor target_visual_attn;       // [H,K,N]
  Tensor surrounding_visual_attn;  // [H,K,N]
  Tensor target_text_out;          // [K,D]
  Tensor surrounding_text_out;     // [K,D]
  Tensor target_bias;              // [H,K,N], undefined when PE is off
  Tensor surrounding_bias;
  std::vector<Box3> boxes;
  Tensor feats;  // [K,D]
};

struct DecoderTrace {
  std::vector<LayerTrace> layers;
};

struct BoxPrediction {
  Tensor boxes6;             // [K,6] differentiable (cx,cy,cz,l,w,h)
  std::vector<Box3> boxes;   // detached values of the same
};

// Box head: center = reference center + predicted offset, sizes through a
// softplus floor so every output is a valid box.
BoxPrediction predict_boxes(const Tensor& features, const BoxHeadParams& head,
                            const std::vector<Point3>& ref_centers);

// One parallel dual-branch layer. T_s may be undefined (no surrounding
// tokens); the surrounding branch then runs ungated with no text block.
QuerySet decoder_layer(const QuerySet& q, const Tensor& seeds_V,
                       const std::vector<Point3>& seed_xyz, const Tensor& T_m,
                       const Tensor& T_s, const DecoderLayerParams& p,
                       LayerTrace* trace = nullptr);

QuerySet serial_layer(const QuerySet& q, const Tensor& seeds_V,
                      const std::vector<Point3>& seed_xyz, const Tensor& T_all,
                      const SerialLayerParams& p, LayerTrace* trace = nullptr);

struct DecodeLayerOutput {
  Tensor feats;   // [K,D]
  Tensor boxes6;  // [K,6]
  std::vector<Box3> boxes;
};

struct DecodeResult {
  QuerySet final_queries;
  std::vector<DecodeLayerOutput> per_layer;
  std::optional<DecoderTrace> trace;
};

DecodeResult decode_stack(const QuerySet& q0, const Tensor& seeds_V,
                          const std::vector<Point3>& seed_xyz, const Tensor& T_m,
                          const Tensor& T_s,
                          const std::vector<DecoderLayerParams>& layers,
                          bool with_trace = false);

// Parameter registry helpers (checkpointing, optimizers, counting).
using NamedParams = std::vector<std::pair<std::string, Tensor>>;
void collect_params(const MultiheadAttnParams& p, const std::string& prefix, NamedParams& out);
void collect_params(const MlpParams& p, const std::string& prefix, NamedParams& out);
void collect_params(const LayerNormParams& p, const std::string& prefix, NamedParams& out);
void collect_params(const PosEncConfig& p, const std::string& prefix, NamedParams& out);
void collect_params(const BranchParams& p, const std::string& prefix, NamedParams& out);
void collect_params(const DecoderLayerParams& p, const std::string& prefix, NamedParams& out);
void collect_params(const SerialLayerParams& p, const std::string& prefix, NamedParams& out);
std::size_t param_count(const NamedParams& params);

}  // namespace vg3d
