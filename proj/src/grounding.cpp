#include "vg3d/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vg3d/rng.hpp"

namespace vg3d {

namespace {

std::vector<std::string> build_vocab() {
  std::vector<std::string> vocab = {"there", "is",   "a",    "the",  "it",
                                    "that",  "this", ".",    "of",   "from",
                                    "left",  "right","front","behind","near",
                                    "far",   "in",   "placed"};
  for (const CategoryInfo& c : category_vocab()) vocab.push_back(c.name);
  for (const ColorInfo& c : color_vocab()) vocab.push_back(c.name);
  // lexicon words outside the scene vocabulary, so any grammar-adjacent
  // sentence can still be embedded
  vocab.push_back("kitchen");
  vocab.push_back("dark");
  vocab.push_back("brown");
  vocab.push_back("wooden");
  vocab.push_back("metal");
  return vocab;
}

Tensor linear_init(int in_dim, int out_dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  std::vector<double> vals(static_cast<std::size_t>(in_dim) * out_dim);
  for (double& v : vals) v = rng.uniform(-bound, bound);
  return Tensor::from_data({in_dim, out_dim}, std::move(vals), true);
}

BranchSpec make_branch_spec(const ModelConfig& cfg, bool surrounding) {
  BranchSpec spec;
  spec.use_pe = surrounding ? cfg.surround_use_pe : cfg.target_use_pe;
  spec.scheme = cfg.pe_scheme;
  spec.wiring = surrounding ? cfg.surround_wiring : cfg.target_wiring;
  spec.f_kind = cfg.f_kind;
  spec.f_scale = cfg.f_scale;
  return spec;
}

int nearest_center_query(const std::vector<Box3>& boxes, const Box3& gt) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const double dx = boxes[k].center.x - gt.center.x;
    const double dy = boxes[k].center.y - gt.center.y;
    const double dz = boxes[k].center.z - gt.center.z;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

int assign_query(const std::vector<Box3>& boxes, const Box3& gt) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const double iou = box_iou(boxes[k], gt);
    if (iou > best_iou) {
      best_iou = iou;
      best = static_cast<int>(k);
    }
  }
  return best >= 0 ? best : nearest_center_query(boxes, gt);
}

Box3 target_box(const GroundingSample& sample) {
  for (const ObjectSpec& o : sample.scene.objects)
    if (o.id == sample.target_id) return o.box;
  throw std::invalid_argument("sample: target id not present in scene");
}

Tensor box_to_tensor(const Box3& b) {
  return Tensor::from_data({1, 6}, {b.center.x, b.center.y, b.center.z, b.l, b.w, b.h});
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"feature_dim", cfg.feature_dim},
                        {"num_heads", cfg.num_heads},
                        {"num_queries", cfg.num_queries},
                        {"num_seeds", cfg.num_seeds},
                        {"decoder_layers", cfg.decoder_layers},
                        {"ffn_hidden", cfg.ffn_hidden},
                        {"box_hidden", cfg.box_hidden},
                        {"pe_hidden", cfg.pe_hidden},
                        {"d_l", cfg.d_l},
                        {"d_o", cfg.d_o},
                        {"ball_radius", cfg.ball_radius},
                        {"parallel", cfg.parallel},
                        {"target_use_pe", cfg.target_use_pe},
                        {"surround_use_pe", cfg.surround_use_pe},
                        {"target_wiring", gate_wiring_name(cfg.target_wiring)},
                        {"surround_wiring", gate_wiring_name(cfg.surround_wiring)},
                        {"pe_scheme", pe_scheme_name(cfg.pe_scheme)},
                        {"f_kind", f_kind_name(cfg.f_kind)},
                        {"f_scale", cfg.f_scale},
                        {"learning_rate", cfg.learning_rate},
                        {"steps", cfg.steps},
                        {"batch_size", cfg.batch_size},
                        {"tau", cfg.tau},
                        {"lambda_sem", cfg.lambda_sem},
                        {"seed", cfg.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.num_queries = j.at("num_queries").get<int>();
  cfg.num_seeds = j.at("num_seeds").get<int>();
  cfg.decoder_layers = j.at("decoder_layers").get<int>();
  cfg.ffn_hidden = j.at("ffn_hidden").get<int>();
  cfg.box_hidden = j.at("box_hidden").get<int>();
  cfg.pe_hidden = j.at("pe_hidden").get<int>();
  cfg.d_l = j.at("d_l").get<int>();
  cfg.d_o = j.at("d_o").get<int>();
  cfg.ball_radius = j.at("ball_radius").get<double>();
  cfg.parallel = j.at("parallel").get<bool>();
  cfg.target_use_pe = j.at("target_use_pe").get<bool>();
  cfg.surround_use_pe = j.at("surround_use_pe").get<bool>();
  cfg.target_wiring = gate_wiring_from_name(j.at("target_wiring").get<std::string>());
  cfg.surround_wiring = gate_wiring_from_name(j.at("surround_wiring").get<std::string>());
  cfg.pe_scheme = pe_scheme_from_name(j.at("pe_scheme").get<std::string>());
  cfg.f_kind = f_kind_from_name(j.at("f_kind").get<std::string>());
  cfg.f_scale = j.at("f_scale").get<double>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.steps = j.at("steps").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.tau = j.at("tau").get<double>();
  cfg.lambda_sem = j.at("lambda_sem").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

void ModelConfig::apply_override(const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: boolean expected for " + key);
  };
  if (key == "feature_dim") feature_dim = as_int();
  else if (key == "num_heads") num_heads = as_int();
  else if (key == "num_queries") num_queries = as_int();
  else if (key == "num_seeds") num_seeds = as_int();
  else if (key == "decoder_layers") decoder_layers = as_int();
  else if (key == "ffn_hidden") ffn_hidden = as_int();
  else if (key == "box_hidden") box_hidden = as_int();
  else if (key == "pe_hidden") pe_hidden = as_int();
  else if (key == "d_l") d_l = as_int();
  else if (key == "d_o") d_o = as_int();
  else if (key == "ball_radius") ball_radius = as_double();
  else if (key == "parallel") parallel = as_bool();
  else if (key == "target_use_pe") target_use_pe = as_bool();
  else if (key == "surround_use_pe") surround_use_pe = as_bool();
  else if (key == "target_wiring") target_wiring = gate_wiring_from_name(value);
  else if (key == "surround_wiring") surround_wiring = gate_wiring_from_name(value);
  else if (key == "pe_scheme") pe_scheme = pe_scheme_from_name(value);
  else if (key == "f_kind") f_kind = f_kind_from_name(value);
  else if (key == "f_scale") f_scale = as_double();
  else if (key == "learning_rate") learning_rate = as_double();
  else if (key == "steps") steps = as_int();
  else if (key == "batch_size") batch_size = as_int();
  else if (key == "tau") tau = as_double();
  else if (key == "lambda_sem") lambda_sem = as_double();
  else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
  else {
    std::string msg = "config: unknown key '" + key + "'; valid keys:";
    for (const std::string& k : valid_keys()) msg += " " + k;
    throw std::invalid_argument(msg);
  }
}

const std::vector<std::string>& ModelConfig::valid_keys() {
  static const std::vector<std::string> keys = {
      "feature_dim",   "num_heads",     "num_queries",    "num_seeds",
      "decoder_layers","ffn_hidden",    "box_hidden",     "pe_hidden",
      "d_l",           "d_o",           "ball_radius",    "parallel",
      "target_use_pe", "surround_use_pe","target_wiring", "surround_wiring",
      "pe_scheme",     "f_kind",        "f_scale",        "learning_rate",
      "steps",         "batch_size",    "tau",            "lambda_sem",
      "seed"};
  return keys;
}

Model build_model(const ModelConfig& cfg) {
  if (cfg.feature_dim % cfg.num_heads != 0)
    throw std::invalid_argument("model: feature_dim must divide by num_heads");
  if (cfg.num_queries > cfg.num_seeds)
    throw std::invalid_argument("model: num_queries must be <= num_seeds");

  Model m;
  m.cfg = cfg;
  m.vocab = build_vocab();
  for (std::size_t i = 0; i < m.vocab.size(); ++i)
    m.vocab_index[m.vocab[i]] = static_cast<int>(i);

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x1234567ULL);
  const int D = cfg.feature_dim;

  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(D));
    std::vector<double> vals(m.vocab.size() * static_cast<std::size_t>(D));
    for (double& v : vals) v = rng.uniform(-bound, bound);
    m.embeddings = Tensor::from_data({static_cast<int>(m.vocab.size()), D},
                                     std::move(vals), true);
  }
  m.text_mixer = mha_init(D, cfg.num_heads, rng);
  m.text_norm = layer_norm_init(D);
  m.seed_mlp = mlp_init(7, cfg.ffn_hidden, D, rng);
  m.cross_v = mha_init(D, cfg.num_heads, rng);
  m.cross_t = mha_init(D, cfg.num_heads, rng);
  m.cross_norm_v = layer_norm_init(D);
  m.cross_norm_t = layer_norm_init(D);
  m.score_w = linear_init(D, 1, rng);
  m.score_b = Tensor::zeros({1}, true);
  m.init_box_head.mlp = mlp_init(D, cfg.box_hidden, 6, rng);

  const BranchSpec target_spec = make_branch_spec(cfg, false);
  const BranchSpec surround_spec = make_branch_spec(cfg, true);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    if (cfg.parallel) {
      m.layers.push_back(decoder_layer_init(D, cfg.num_heads, cfg.ffn_hidden,
                                            cfg.box_hidden, cfg.pe_hidden,
                                            target_spec, surround_spec, rng));
    } else {
      m.serial_layers.push_back(serial_layer_init(D, cfg.num_heads, cfg.ffn_hidden,
                                                  cfg.box_hidden, cfg.pe_hidden,
                                                  target_spec, rng));
    }
  }

  m.w_l = linear_init(D, cfg.d_l, rng);
  m.b_l = Tensor::zeros({cfg.d_l}, true);
  m.w_o = linear_init(D, cfg.d_o, rng);
  m.b_o = Tensor::zeros({cfg.d_o}, true);
  m.w_t = linear_init(D, cfg.d_o, rng);
  m.b_t = Tensor::zeros({cfg.d_o}, true);

  m.params.emplace_back("embeddings", m.embeddings);
  collect_params(m.text_mixer, "text_mixer", m.params);
  collect_params(m.text_norm, "text_norm", m.params);
  collect_params(m.seed_mlp, "seed_mlp", m.params);
  collect_params(m.cross_v, "cross_v", m.params);
  collect_params(m.cross_t, "cross_t", m.params);
  collect_params(m.cross_norm_v, "cross_norm_v", m.params);
  collect_params(m.cross_norm_t, "cross_norm_t", m.params);
  m.params.emplace_back("score_w", m.score_w);
  m.params.emplace_back("score_b", m.score_b);
  collect_params(m.init_box_head.mlp, "init_box_head", m.params);
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    collect_params(m.layers[i], "layer" + std::to_string(i), m.params);
  for (std::size_t i = 0; i < m.serial_layers.size(); ++i)
    collect_params(m.serial_layers[i], "serial_layer" + std::to_string(i), m.params);
  m.params.emplace_back("w_l", m.w_l);
  m.params.emplace_back("b_l", m.b_l);
  m.params.emplace_back("w_o", m.w_o);
  m.params.emplace_back("b_o", m.b_o);
  m.params.emplace_back("w_t", m.w_t);
  m.params.emplace_back("b_t", m.b_t);
  return m;
}

std::vector<int> farthest_point_sample(const std::vector<double>& xyz, int n_points,
                                       int n_seeds) {
  if (n_points < n_seeds)
    throw std::invalid_argument("farthest_point_sample: fewer points than seeds");
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(n_seeds));
  std::vector<double> min_d2(static_cast<std::size_t>(n_points),
                             std::numeric_limits<double>::infinity());
  int current = 0;  // first seed is point 0 by rule
  chosen.push_back(current);
  for (int s = 1; s < n_seeds; ++s) {
    const double cx = xyz[static_cast<std::size_t>(current) * 3];
    const double cy = xyz[static_cast<std::size_t>(current) * 3 + 1];
    const double cz = xyz[static_cast<std::size_t>(current) * 3 + 2];
    int next = -1;
    double best = -1.0;
    for (int i = 0; i < n_points; ++i) {
      const double dx = xyz[static_cast<std::size_t>(i) * 3] - cx;
      const double dy = xyz[static_cast<std::size_t>(i) * 3 + 1] - cy;
      const double dz = xyz[static_cast<std::size_t>(i) * 3 + 2] - cz;
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < min_d2[static_cast<std::size_t>(i)]) min_d2[static_cast<std::size_t>(i)] = d2;
      if (min_d2[static_cast<std::size_t>(i)] > best) {
        best = min_d2[static_cast<std::size_t>(i)];
        next = i;
      }
    }
    current = next;
    chosen.push_back(current);
  }
  return chosen;
}

VisualEncoding encode_visual(const PointCloud& points, const SceneSpec& scene,
                             const Model& model) {
  const ModelConfig& cfg = model.cfg;
  if (points.n < cfg.num_seeds)
    throw std::invalid_argument("encode_visual: cloud smaller than seed count");
  const std::vector<int> seeds = farthest_point_sample(points.xyz, points.n, cfg.num_seeds);

  const double cx = scene.room_l / 2.0, cy = scene.room_w / 2.0, cz = scene.room_h / 2.0;
  const double r2 = cfg.ball_radius * cfg.ball_radius;

  VisualEncoding enc;
  std::vector<double> feats;
  feats.reserve(static_cast<std::size_t>(cfg.num_seeds) * 7);
  for (int idx : seeds) {
    const double sx = points.xyz[static_cast<std::size_t>(idx) * 3];
    const double sy = points.xyz[static_cast<std::size_t>(idx) * 3 + 1];
    const double sz = points.xyz[static_cast<std::size_t>(idx) * 3 + 2];
    enc.seed_xyz.push_back({sx, sy, sz});
    double mr = 0.0, mg = 0.0, mb = 0.0;
    int count = 0;
    for (int i = 0; i < points.n; ++i) {
      const double dx = points.xyz[static_cast<std::size_t>(i) * 3] - sx;
      const double dy = points.xyz[static_cast<std::size_t>(i) * 3 + 1] - sy;
      const double dz = points.xyz[static_cast<std::size_t>(i) * 3 + 2] - sz;
      if (dx * dx + dy * dy + dz * dz > r2) continue;
      mr += points.rgb[static_cast<std::size_t>(i) * 3];
      mg += points.rgb[static_cast<std::size_t>(i) * 3 + 1];
      mb += points.rgb[static_cast<std::size_t>(i) * 3 + 2];
      ++count;
    }
    const double inv = count > 0 ? 1.0 / count : 0.0;
    feats.push_back(mr * inv);
    feats.push_back(mg * inv);
    feats.push_back(mb * inv);
    feats.push_back(10.0 * count / points.n);  // local density, O(1) scaled
    feats.push_back((sx - cx) / (scene.room_l / 2.0));
    feats.push_back((sy - cy) / (scene.room_w / 2.0));
    feats.push_back((sz - cz) / (scene.room_h / 2.0));
  }
  Tensor input = Tensor::from_data({cfg.num_seeds, 7}, std::move(feats));
  enc.features = mlp_apply(model.seed_mlp, input);
  return enc;
}

Tensor encode_text(const TokenSet& tokens, const Model& model) {
  std::vector<int> idx;
  idx.reserve(tokens.tokens.size());
  for (const std::string& tok : tokens.tokens) {
    auto it = model.vocab_index.find(tok);
    if (it == model.vocab_index.end())
      throw std::invalid_argument("encode_text: token not in vocabulary: " + tok);
    idx.push_back(it->second);
  }
  Tensor embedded = gather_rows(model.embeddings, idx);
  Tensor mixed = mha_forward(model.text_mixer, embedded, embedded).out;
  return layer_norm(add(embedded, mixed), model.text_norm.gamma, model.text_norm.beta);
}

CrossEncoded cross_encode(const Tensor& V, const Tensor& T, const Model& model) {
  CrossEncoded out;
  out.v = layer_norm(add(V, mha_forward(model.cross_v, V, T).out),
                     model.cross_norm_v.gamma, model.cross_norm_v.beta);
  out.t = layer_norm(add(T, mha_forward(model.cross_t, T, V).out),
                     model.cross_norm_t.gamma, model.cross_norm_t.beta);
  return out;
}

TopKSelection select_topk(const Tensor& seeds_V, const std::vector<Point3>& seed_xyz,
                          const Model& model) {
  const ModelConfig& cfg = model.cfg;
  const int N = seeds_V.dim(0);
  if (cfg.num_queries > N)
    throw std::invalid_argument("select_topk: K exceeds seed count");
  Tensor scores = add_bcast_row(matmul(seeds_V, model.score_w), model.score_b);  // [N,1]

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores.at(a, 0) > scores.at(b, 0);  // ties keep ascending index
  });
  TopKSelection sel;
  sel.indices.assign(order.begin(), order.begin() + cfg.num_queries);

  Tensor feats = gather_rows(seeds_V, sel.indices);
  Tensor sel_scores = reshape(gather_rows(scores, sel.indices), {cfg.num_queries});
  // sigmoid-score modulation: the only gradient path into the score head
  Tensor modulated = mul_bcast_col(feats, sigmoid(sel_scores));

  std::vector<Point3> refs;
  for (int i : sel.indices) refs.push_back(seed_xyz[static_cast<std::size_t>(i)]);
  BoxPrediction pred = predict_boxes(modulated, model.init_box_head, refs);
  sel.queries.feats = modulated;
  sel.queries.boxes = pred.boxes;
  sel.queries.boxes6 = pred.boxes6;
  sel.queries.layer_index = 0;
  return sel;
}

HeadOutputs project_head(const Tensor& v_q, const DecodeLayerOutput& layer_out,
                         const Model& model) {
  HeadOutputs h;
  h.v_l = add_bcast_row(matmul(v_q, model.w_l), model.b_l);
  h.v_o = add_bcast_row(matmul(v_q, model.w_o), model.b_o);
  h.boxes6 = layer_out.boxes6;
  h.boxes = layer_out.boxes;
  return h;
}

ForwardResult forward(const Model& model, const GroundingSample& sample) {
  ForwardResult r;
  VisualEncoding ve = encode_visual(sample.points, sample.scene, model);
  r.seed_xyz = ve.seed_xyz;

  r.tokens.tokens = tokenize(sample.utterance);
  r.tokens.labels = label_components(r.tokens.tokens, default_lexicon());
  Tensor T0 = encode_text(r.tokens, model);
  r.tokens.features = T0;

  CrossEncoded ce = cross_encode(ve.features, T0, model);
  r.seeds_V = ce.v;
  r.split = partition_tokens(r.tokens.tokens, r.tokens.labels);
  r.T_m = gather_rows(ce.t, r.split.target_indices);
  if (!r.split.surrounding_indices.empty())
    r.T_s = gather_rows(ce.t, r.split.surrounding_indices);
  r.T_m_sem = add_bcast_row(matmul(r.T_m, model.w_t), model.b_t);

  TopKSelection sel = select_topk(ce.v, ve.seed_xyz, model);
  r.selected = sel.indices;
  r.initial_queries = sel.queries;

  if (model.cfg.parallel) {
    r.decode = decode_stack(sel.queries, ce.v, ve.seed_xyz, r.T_m, r.T_s,
                            model.layers, false);
  } else {
    std::vector<int> all_idx = r.split.target_indices;
    all_idx.insert(all_idx.end(), r.split.surrounding_indices.begin(),
                   r.split.surrounding_indices.end());
    std::sort(all_idx.begin(), all_idx.end());
    Tensor T_all = gather_rows(ce.t, all_idx);
    QuerySet q = sel.queries;
    for (const SerialLayerParams& p : model.serial_layers) {
      q = serial_layer(q, ce.v, ve.seed_xyz, T_all, p);
      DecodeLayerOutput out;
      out.feats = q.feats;
      out.boxes6 = q.boxes6;
      out.boxes = q.boxes;
      r.decode.per_layer.push_back(out);
    }
    r.decode.final_queries = q;
  }

  for (const DecodeLayerOutput& lo : r.decode.per_layer)
    r.heads.push_back(project_head(lo.feats, lo, model));
  return r;
}

Tensor box_iou_tensor(const Tensor& a6, const Tensor& b6) {
  if (a6.ndim() != 2 || a6.dim(0) != 1 || a6.dim(1) != 6 || b6.shape() != a6.shape())
    throw std::invalid_argument("box_iou_tensor: expected [1,6] boxes");
  Tensor ac = slice_cols(a6, 0, 3), as = slice_cols(a6, 3, 3);
  Tensor bc = slice_cols(b6, 0, 3), bs = slice_cols(b6, 3, 3);
  Tensor a_lo = sub(ac, scale(as, 0.5)), a_hi = add(ac, scale(as, 0.5));
  Tensor b_lo = sub(bc, scale(bs, 0.5)), b_hi = add(bc, scale(bs, 0.5));
  Tensor inter_d = relu(sub(minimum(a_hi, b_hi), maximum(a_lo, b_lo)));  // [1,3]
  auto col = [](const Tensor& t, int j) { return slice_cols(t, j, 1); };
  Tensor inter = mul(mul(col(inter_d, 0), col(inter_d, 1)), col(inter_d, 2));
  Tensor va = mul(mul(col(as, 0), col(as, 1)), col(as, 2));
  Tensor vb = mul(mul(col(bs, 0), col(bs, 1)), col(bs, 2));
  Tensor uni = sub(add(va, vb), inter);
  return div(inter, uni);  // [1,1]
}

LossBreakdown compute_loss(const std::vector<HeadOutputs>& heads,
                           const GroundingSample& sample, const Tensor& T_m_sem,
                           const ModelConfig& cfg,
                           const std::optional<std::vector<int>>& fixed_assignment) {
  if (heads.empty()) throw std::invalid_argument("compute_loss: no layer outputs");
  const Box3 gt = target_box(sample);
  Tensor gt6 = box_to_tensor(gt);
  Tensor gt_c = slice_cols(gt6, 0, 3), gt_s = slice_cols(gt6, 3, 3);
  Tensor t_mean = reshape(mean_axis0(T_m_sem), {T_m_sem.dim(1), 1});

  // one assignment per sample, judged on the final refinement; per-layer
  // assignment flips early in training and destabilizes the box head
  const int current_assigned = assign_query(heads.back().boxes, gt);

  Tensor pos_sum, sem_sum;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadOutputs& head = heads[h];
    const int a = fixed_assignment ? fixed_assignment->at(h) : current_assigned;
    Tensor row = gather_rows(head.boxes6, {a});  // [1,6]
    Tensor l1_center = mean(abs(sub(slice_cols(row, 0, 3), gt_c)));
    Tensor l1_size = mean(abs(sub(slice_cols(row, 3, 3), gt_s)));
    Tensor iou = reshape(box_iou_tensor(row, gt6), {1});
    Tensor pos_h = add(add(l1_center, l1_size), sub(Tensor::scalar(1.0), iou));

    Tensor logits = reshape(scale(matmul(head.v_o, t_mean), 1.0 / cfg.tau),
                            {head.v_o.dim(0)});
    Tensor sem_h = cross_entropy_logits(logits, a);

    pos_sum = h == 0 ? pos_h : add(pos_sum, pos_h);
    sem_sum = h == 0 ? sem_h : add(sem_sum, sem_h);
  }
  const double inv_layers = 1.0 / static_cast<double>(heads.size());
  Tensor l_pos = scale(pos_sum, inv_layers);
  Tensor l_sem = scale(sem_sum, inv_layers);

  LossBreakdown out;
  out.total = add(l_pos, scale(l_sem, cfg.lambda_sem));
  out.l_pos = l_pos.value();
  out.l_sem = l_sem.value();
  return out;
}

TrainResult train(Model& model, const std::vector<GroundingSample>& dataset,
                  const TrainOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const ModelConfig& cfg = model.cfg;

  std::ofstream metrics_file;
  std::ostream* metrics = &std::cout;
  if (!opts.metrics_path.empty()) {
    metrics_file.open(opts.metrics_path);
    if (!metrics_file) throw std::runtime_error("train: cannot open metrics path");
    metrics = &metrics_file;
  }

  // Adam with per-parameter moments
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::vector<double>> m1, m2;
  for (auto& [name, p] : model.params) {
    m1.emplace_back(p.numel(), 0.0);
    m2.emplace_back(p.numel(), 0.0);
  }

  Rng order_rng(cfg.seed ^ 0x72a1ULL);
  std::vector<int> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = perm.size();  // forces a shuffle on first use

  TrainResult result;
  for (int step = 1; step <= cfg.steps; ++step) {
    for (auto& [name, p] : model.params) p.zero_grad();

    double loss_acc = 0.0, pos_acc = 0.0, sem_acc = 0.0;
    const int B = std::min<int>(cfg.batch_size, static_cast<int>(dataset.size()));
    for (int b = 0; b < B; ++b) {
      if (cursor >= perm.size()) {
        for (std::size_t i = perm.size(); i > 1; --i)
          std::swap(perm[i - 1], perm[static_cast<std::size_t>(order_rng.uniform_int(static_cast<int>(i)))]);
        cursor = 0;
      }
      const GroundingSample& sample = dataset[static_cast<std::size_t>(perm[cursor++])];
      try {
        ForwardResult fwd = forward(model, sample);
        LossBreakdown loss = compute_loss(fwd.heads, sample, fwd.T_m_sem, cfg);
        scale(loss.total, 1.0 / B).backward();
        loss_acc += loss.total.value();
        pos_acc += loss.l_pos;
        sem_acc += loss.l_sem;
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: aborted at step " + std::to_string(step) +
                                 ": " + e.what());
      }
    }

    const double t = static_cast<double>(step);
    const double bc1 = 1.0 - std::pow(beta1, t), bc2 = 1.0 - std::pow(beta2, t);
    // 50-step warmup, then cosine decay to a tenth of the base rate
    const double warmup = std::min(1.0, t / 50.0);
    const double progress = t / static_cast<double>(cfg.steps);
    const double decay = 0.1 + 0.45 * (1.0 + std::cos(M_PI * progress));
    const double lr = cfg.learning_rate * warmup * decay;
    for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
      Tensor& p = model.params[pi].second;
      const std::vector<double>& g = p.grad();
      std::vector<double>& data = p.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        m1[pi][i] = beta1 * m1[pi][i] + (1.0 - beta1) * g[i];
        m2[pi][i] = beta2 * m2[pi][i] + (1.0 - beta2) * g[i] * g[i];
        data[i] -= lr * (m1[pi][i] / bc1) / (std::sqrt(m2[pi][i] / bc2) + eps);
      }
    }

    nlohmann::json rec = {{"step", step},
                          {"loss", loss_acc / B},
                          {"l_pos", pos_acc / B},
                          {"l_sem", sem_acc / B}};
    (*metrics) << rec.dump() << "\n";
    result.loss_curve.push_back(loss_acc / B);

    if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
        step % opts.checkpoint_every == 0)
      save_checkpoint(opts.checkpoint_path, model);
    if (opts.progress && opts.callback_every > 0 && step % opts.callback_every == 0 &&
        !opts.progress(step, model))
      break;
  }
  if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, model);
  return result;
}

namespace {

struct EvalOutcome {
  double iou = 0.0;
  bool top1 = false;
  bool multiple = false;
};

EvalOutcome score_prediction(const Box3& pred, const GroundingSample& sample) {
  EvalOutcome o;
  o.iou = box_iou(pred, target_box(sample));
  o.multiple = has_same_category_distractor(sample.scene, sample.target_id);
  int best_obj = -1;
  double best_iou = 0.0;
  for (const ObjectSpec& obj : sample.scene.objects) {
    const double iou = box_iou(pred, obj.box);
    if (iou > best_iou) {
      best_iou = iou;
      best_obj = obj.id;
    }
  }
  if (best_obj < 0) {
    double best_d = std::numeric_limits<double>::infinity();
    for (const ObjectSpec& obj : sample.scene.objects) {
      const double dx = pred.center.x - obj.box.center.x;
      const double dy = pred.center.y - obj.box.center.y;
      const double dz = pred.center.z - obj.box.center.z;
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best_d) {
        best_d = d;
        best_obj = obj.id;
      }
    }
  }
  o.top1 = best_obj == sample.target_id;
  return o;
}

}  // namespace

EvalReport report_from_predictions(const std::vector<SamplePrediction>& preds,
                                   const std::vector<GroundingSample>& dataset) {
  EvalReport r;
  int hit25 = 0, hit50 = 0, top1 = 0;
  int uniq_hit = 0, mult_hit = 0;
  for (const SamplePrediction& p : preds) {
    const GroundingSample& sample = dataset.at(static_cast<std::size_t>(p.sample_index));
    const EvalOutcome o = score_prediction(p.box, sample);
    if (o.iou > 0.25) ++hit25;
    if (o.iou > 0.5) ++hit50;
    if (o.top1) ++top1;
    if (o.multiple) {
      ++r.multiple_count;
      if (o.iou > 0.5) ++mult_hit;
    } else {
      ++r.unique_count;
      if (o.iou > 0.5) ++uniq_hit;
    }
  }
  r.total = static_cast<int>(preds.size());
  if (r.total > 0) {
    r.acc_at_25 = static_cast<double>(hit25) / r.total;
    r.acc_at_50 = static_cast<double>(hit50) / r.total;
    r.top1_selection = static_cast<double>(top1) / r.total;
  }
  if (r.unique_count > 0) r.unique_acc_at_50 = static_cast<double>(uniq_hit) / r.unique_count;
  if (r.multiple_count > 0) r.multiple_acc_at_50 = static_cast<double>(mult_hit) / r.multiple_count;
  return r;
}

EvalReport evaluate(const Model& model, const std::vector<GroundingSample>& dataset) {
  std::vector<SamplePrediction> preds;
  preds.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ForwardResult fwd = forward(model, dataset[i]);
    const HeadOutputs& last = fwd.heads.back();
    Tensor align = max_rows(matmul_nt(last.v_o, fwd.T_m_sem));  // [K]
    int best = 0;
    for (int k = 1; k < align.dim(0); ++k)
      if (align.at(k) > align.at(best)) best = k;
    preds.push_back({last.boxes[static_cast<std::size_t>(best)], static_cast<int>(i)});
  }
  return report_from_predictions(preds, dataset);
}

std::string eval_report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "samples          " << r.total << "\n";
  os << "acc@0.25         " << r.acc_at_25 << "\n";
  os << "acc@0.50         " << r.acc_at_50 << "\n";
  os << "top1 selection   " << r.top1_selection << "\n";
  os << "unique   acc@0.5 " << r.unique_acc_at_50 << " (" << r.unique_count << ")\n";
  os << "multiple acc@0.5 " << r.multiple_acc_at_50 << " (" << r.multiple_count << ")\n";
  return os.str();
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::json j = {{"total", r.total},
                      {"acc_at_25", r.acc_at_25},
                      {"acc_at_50", r.acc_at_50},
                      {"top1_selection", r.top1_selection},
                      {"unique_acc_at_50", r.unique_acc_at_50},
                      {"multiple_acc_at_50", r.multiple_acc_at_50},
                      {"unique_count", r.unique_count},
                      {"multiple_count", r.multiple_count}};
  return j.dump();
}

void save_checkpoint(const std::string& path, const Model& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : model.params) params[name] = p.data();
  nlohmann::json j = {{"config", config_to_json(model.cfg)}, {"params", params}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  Model model = build_model(config_from_json(j.at("config")));
  const nlohmann::json& params = j.at("params");
  for (auto& [name, p] : model.params) {
    const auto it = params.find(name);
    if (it == params.end())
      throw std::runtime_error("load_checkpoint: missing parameter " + name);
    std::vector<double> vals = it->get<std::vector<double>>();
    if (vals.size() != p.numel())
      throw std::runtime_error("load_checkpoint: size mismatch for " + name);
    p.mutable_data() = std::move(vals);
  }
  return model;
}

}  // namespace vg3d
