#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vg3d/decoder.hpp"
#include "vg3d/scenegen.hpp"
#include "vg3d/textsplit.hpp"

namespace vg3d {

struct ModelConfig {
  int feature_dim = 32;   // D
  int num_heads = 4;      // H
  int num_queries = 8;    // K
  int num_seeds = 48;     // N
  int decoder_layers = 3;
  int ffn_hidden = 64;
  int box_hidden = 64;
  int pe_hidden = 32;
  int d_l = 64;
  int d_o = 64;
  double ball_radius = 0.45;

  bool parallel = true;  // serial baseline when false
  bool target_use_pe = true;
  bool surround_use_pe = true;
  GateWiring target_wiring = GateWiring::none;
  GateWiring surround_wiring = GateWiring::gate_on_all;
  PeScheme pe_scheme = PeScheme::box_surface;
  FKind f_kind = FKind::signed_log;
  double f_scale = 0.1;

  double learning_rate = 2e-3;
  int steps = 2000;
  int batch_size = 8;
  double tau = 0.07;
  double lambda_sem = 1.0;
  std::uint64_t seed = 0;

  void apply_override(const std::string& key, const std::string& value);
  static const std::vector<std::string>& valid_keys();
};

struct Model {
  ModelConfig cfg;
  std::vector<std::string> vocab;
  std::map<std::string, int> vocab_index;

  Tensor embeddings;  // [V,D]
  MultiheadAttnParams text_mixer;
  LayerNormParams text_norm;

  MlpParams seed_mlp;  // 7 -> hidden -> D

  MultiheadAttnParams cross_v, cross_t;
  LayerNormParams cross_norm_v, cross_norm_t;

  Tensor score_w, score_b;  // [D,1], [1]
  BoxHeadParams init_box_head;

  std::vector<DecoderLayerParams> layers;       // parallel stack
  std::vector<SerialLayerParams> serial_layers; // serial stack

  Tensor w_l, b_l;  // D -> D_l position features
  Tensor w_o, b_o;  // D -> D_o semantic features
  Tensor w_t, b_t;  // D -> D_o token semantic projection

  NamedParams params;
};

Model build_model(const ModelConfig& cfg);

struct HeadOutputs {
  Tensor v_l;     // [K,D_l]
  Tensor v_o;     // [K,D_o]
  Tensor boxes6;  // [K,6]
  std::vector<Box3> boxes;
};

struct ForwardResult {
  std::vector<Point3> seed_xyz;
  Tensor seeds_V;  // cross-encoded seed features [N,D]
  TokenSet tokens;
  SplitResult split;
  Tensor T_m, T_s;     // [L_m,D], [L_s,D] (T_s undefined when empty)
  Tensor T_m_sem;      // [L_m,D_o]
  std::vector<int> selected;
  QuerySet initial_queries;
  DecodeResult decode;
  std::vector<HeadOutputs> heads;  // one per decoder layer
};

// ---- encoder pieces ----

struct VisualEncoding {
  std::vector<Point3> seed_xyz;
  Tensor features;  // [N,D]
};

VisualEncoding encode_visual(const PointCloud& points, const SceneSpec& scene,
                             const Model& model);

// Farthest point sampling over xyz; seed 0 is point 0.
std::vector<int> farthest_point_sample(const std::vector<double>& xyz, int n_points,
                                       int n_seeds);

Tensor encode_text(const TokenSet& tokens, const Model& model);

struct CrossEncoded {
  Tensor v;  // [N,D]
  Tensor t;  // [L,D]
};
CrossEncoded cross_encode(const Tensor& V, const Tensor& T, const Model& model);

struct TopKSelection {
  QuerySet queries;
  std::vector<int> indices;
};

// Linear score head, top-K with index-ascending tie break. Selected features
// are modulated by the sigmoid of their own score, which is the only path
// through which the score head trains.
TopKSelection select_topk(const Tensor& seeds_V, const std::vector<Point3>& seed_xyz,
                          const Model& model);

HeadOutputs project_head(const Tensor& v_q, const DecodeLayerOutput& layer_out,
                         const Model& model);

ForwardResult forward(const Model& model, const GroundingSample& sample);

// ---- losses and evaluation ----

struct LossBreakdown {
  Tensor total;  // scalar
  double l_pos = 0.0;
  double l_sem = 0.0;
};

// Eq-style two-term objective: per-layer box regression on the assigned
// query plus a contrastive pull of that query's semantic features toward the
// main-object tokens. `fixed_assignment` freezes the per-layer assigned query
// (used by gradient checks; assignment is discrete).
LossBreakdown compute_loss(const std::vector<HeadOutputs>& heads,
                           const GroundingSample& sample, const Tensor& T_m_sem,
                           const ModelConfig& cfg,
                           const std::optional<std::vector<int>>& fixed_assignment = std::nullopt);

// Differentiable axis-aligned IoU of two [1,6] box tensors.
Tensor box_iou_tensor(const Tensor& a6, const Tensor& b6);

struct TrainOptions {
  std::string metrics_path;     // empty: metrics to stdout
  std::string checkpoint_path;  // empty: no checkpoint written
  int checkpoint_every = 0;     // 0: only at the end
  // invoked every callback_every steps; returning false stops training early
  std::function<bool(int step, Model& model)> progress;
  int callback_every = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;
};

TrainResult train(Model& model, const std::vector<GroundingSample>& dataset,
                  const TrainOptions& opts = {});

struct EvalReport {
  double acc_at_25 = 0.0;
  double acc_at_50 = 0.0;
  double top1_selection = 0.0;
  double unique_acc_at_50 = 0.0;
  double multiple_acc_at_50 = 0.0;
  int unique_count = 0;
  int multiple_count = 0;
  int total = 0;
};

EvalReport evaluate(const Model& model, const std::vector<GroundingSample>& dataset);

// Report assembly from per-sample predictions; the seam evaluate() uses, and
// what hand-built IoU fixtures test directly.
struct SamplePrediction {
  Box3 box;
  int sample_index = 0;
};
EvalReport report_from_predictions(const std::vector<SamplePrediction>& preds,
                                   const std::vector<GroundingSample>& dataset);

std::string eval_report_text(const EvalReport& r);
std::string eval_report_json(const EvalReport& r);

// ---- checkpoints ----

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace vg3d
