#include "vg3d/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vg3d/bench.hpp"
#include "vg3d/grounding.hpp"
#include "vg3d/scenegen.hpp"
#include "vg3d/textsplit.hpp"

namespace vg3d::cli {

namespace {

int run_gen(std::uint64_t seed, int num_scenes, int objects_per_scene,
            const std::string& out_path) {
  DatasetConfig cfg;
  cfg.scene.num_objects = objects_per_scene;
  std::vector<GroundingSample> samples = gen_dataset(seed, num_scenes, cfg);
  save_dataset(out_path, samples);

  std::map<std::string, int> category_hist;
  int multiple = 0;
  for (const GroundingSample& s : samples) {
    for (const ObjectSpec& o : s.scene.objects) ++category_hist[o.category];
    if (has_same_category_distractor(s.scene, s.target_id)) ++multiple;
  }
  std::cout << "wrote " << samples.size() << " samples to " << out_path << "\n";
  std::cout << "multiple-category targets: " << multiple << " / " << samples.size()
            << "\n";
  std::cout << "category histogram:\n";
  for (const auto& [cat, count] : category_hist)
    std::cout << "  " << cat << " " << count << "\n";
  return 0;
}

int run_train(const std::string& data_path,
              const std::vector<std::string>& overrides,
              const std::string& out_path, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.seed = seed;
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--config", "expected key=value, got '" + kv + "'");
    cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::vector<GroundingSample> dataset = load_dataset(data_path);
  Model model = build_model(cfg);
  TrainOptions opts;
  opts.checkpoint_path = out_path;
  train(model, dataset, opts);
  return 0;
}

int run_eval(const std::string& data_path, const std::string& checkpoint_path,
             const std::string& summary_path) {
  Model model = load_checkpoint(checkpoint_path);
  std::vector<GroundingSample> dataset = load_dataset(data_path);
  EvalReport report = evaluate(model, dataset);
  std::cout << eval_report_text(report);
  const std::string out =
      summary_path.empty() ? checkpoint_path + ".eval.json" : summary_path;
  std::ofstream f(out);
  if (!f) throw std::runtime_error("eval: cannot open summary path " + out);
  f << eval_report_json(report) << "\n";
  return 0;
}

void write_attn_csv(const std::string& path, const Tensor& attn) {
  // head-averaged map, rows = queries, cols = seed points
  const int H = attn.dim(0), K = attn.dim(1), N = attn.dim(2);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("attn-dump: cannot open " + path);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) {
      double v = 0.0;
      for (int h = 0; h < H; ++h) v += attn.at(h, k, n);
      f << v / H;
      f << (n + 1 < N ? "," : "");
    }
    f << "\n";
  }
}

void write_attn_pgm(const std::string& path, const Tensor& attn) {
  const int H = attn.dim(0), K = attn.dim(1), N = attn.dim(2);
  std::vector<double> mean(static_cast<std::size_t>(K) * N, 0.0);
  double mx = 0.0;
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n) {
      double v = 0.0;
      for (int h = 0; h < H; ++h) v += attn.at(h, k, n);
      v /= H;
      mean[static_cast<std::size_t>(k) * N + n] = v;
      mx = std::max(mx, v);
    }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("attn-dump: cannot open " + path);
  f << "P2\n" << N << " " << K << "\n255\n";
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) {
      const double v = mean[static_cast<std::size_t>(k) * N + n];
      const int gray = mx > 0.0 ? static_cast<int>(255.0 * v / mx) : 0;
      f << gray << (n + 1 < N ? " " : "");
    }
    f << "\n";
  }
}

int run_attn_dump(const std::string& data_path, const std::string& checkpoint_path,
                  int sample_id, const std::string& out_dir) {
  Model model = load_checkpoint(checkpoint_path);
  if (!model.cfg.parallel)
    throw std::runtime_error("attn-dump: checkpoint holds a serial model; trace covers the parallel decoder");
  std::vector<GroundingSample> dataset = load_dataset(data_path);
  if (sample_id < 0 || sample_id >= static_cast<int>(dataset.size()))
    throw std::runtime_error("attn-dump: sample id out of range");
  const GroundingSample& sample = dataset[static_cast<std::size_t>(sample_id)];

  // rebuild the forward pass with tracing on
  VisualEncoding ve = encode_visual(sample.points, sample.scene, model);
  TokenSet tokens;
  tokens.tokens = tokenize(sample.utterance);
  tokens.labels = label_components(tokens.tokens, default_lexicon());
  Tensor T0 = encode_text(tokens, model);
  CrossEncoded ce = cross_encode(ve.features, T0, model);
  SplitResult split = partition_tokens(tokens.tokens, tokens.labels);
  Tensor T_m = gather_rows(ce.t, split.target_indices);
  Tensor T_s;
  if (!split.surrounding_indices.empty())
    T_s = gather_rows(ce.t, split.surrounding_indices);
  TopKSelection sel = select_topk(ce.v, ve.seed_xyz, model);
  DecodeResult dec = decode_stack(sel.queries, ce.v, ve.seed_xyz, T_m, T_s,
                                  model.layers, true);

  std::filesystem::create_directories(out_dir);
  for (std::size_t l = 0; l < dec.trace->layers.size(); ++l) {
    const LayerTrace& t = dec.trace->layers[l];
    const std::string stem = out_dir + "/layer" + std::to_string(l);
    write_attn_csv(stem + "_target.csv", t.target_visual_attn);
    write_attn_csv(stem + "_surrounding.csv", t.surrounding_visual_attn);
    write_attn_pgm(stem + "_target.pgm", t.target_visual_attn);
    write_attn_pgm(stem + "_surrounding.pgm", t.surrounding_visual_attn);
  }
  std::cout << "wrote " << dec.trace->layers.size()
            << " layers of attention maps to " << out_dir << "\n";
  return 0;
}

int run_bench(const std::string& schemes_csv, int K, int N, int D, int H, int reps,
              const std::string& out_csv) {
  std::vector<BenchResult> results;
  std::stringstream ss(schemes_csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    results.push_back(bench_pe(pe_scheme_from_name(name), K, N, D, H, reps));
  }
  std::cout << compare_report_text(results);
  if (!out_csv.empty()) {
    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("bench: cannot open " + out_csv);
    f << compare_report_csv(results);
  }
  return 0;
}

int run_decouple() {
  const Lexicon lex = default_lexicon();
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) {
      std::cout << "\n";
      continue;
    }
    const std::vector<std::string> tokens = tokenize(line);
    const std::vector<TokenLabel> labels = label_components(tokens, lex);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      std::cout << tokens[i] << "/" << token_label_name(labels[i]);
      if (i + 1 < tokens.size()) std::cout << "\t";
    }
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"desk-scale 3D visual grounding toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic grounding dataset");
  std::uint64_t gen_seed = 0;
  int num_scenes = 100, objects_per_scene = 8;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--num-scenes", num_scenes, "number of scenes/samples");
  gen->add_option("--objects-per-scene", objects_per_scene, "objects per scene");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a grounding model");
  std::string train_data, train_out;
  std::uint64_t train_seed = 0;
  std::vector<std::string> overrides;
  tr->add_option("--data", train_data, "dataset path")->required();
  tr->add_option("--config", overrides, "key=value config overrides");
  tr->add_option("--out", train_out, "checkpoint output path")->required();
  tr->add_option("--seed", train_seed, "rng seed");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_data, eval_ckpt, eval_summary;
  ev->add_option("--data", eval_data, "dataset path")->required();
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  ev->add_option("--summary-out", eval_summary,
                 "machine-readable summary path (default <checkpoint>.eval.json)");

  // bench
  auto* be = app.add_subcommand("bench", "position-encoding microbenchmark");
  std::string schemes = "box_surface,center,vertex", bench_csv;
  int bK = 256, bN = 1024, bD = 256, bH = 8, bReps = 20;
  be->add_option("--schemes", schemes, "comma-separated schemes");
  be->add_option("--K", bK, "number of query boxes");
  be->add_option("--N", bN, "number of seed points");
  be->add_option("--D", bD, "feature/hidden dim");
  be->add_option("--heads", bH, "attention heads");
  be->add_option("--reps", bReps, "measured repetitions (>= 20)");
  be->add_option("--out-csv", bench_csv, "CSV output path");

  // attn-dump
  auto* ad = app.add_subcommand("attn-dump", "dump per-layer attention maps");
  std::string ad_data, ad_ckpt, ad_out = "attn_dump";
  int ad_sample = 0;
  ad->add_option("--data", ad_data, "dataset path")->required();
  ad->add_option("--checkpoint", ad_ckpt, "checkpoint path")->required();
  ad->add_option("--sample-id", ad_sample, "sample index");
  ad->add_option("--out-dir", ad_out, "output directory");

  // decouple
  app.add_subcommand("decouple",
                     "label utterances from stdin as token/LABEL pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen(gen_seed, num_scenes, objects_per_scene, gen_out);
    if (tr->parsed()) return run_train(train_data, overrides, train_out, train_seed);
    if (ev->parsed()) return run_eval(eval_data, eval_ckpt, eval_summary);
    if (be->parsed()) return run_bench(schemes, bK, bN, bD, bH, bReps, bench_csv);
    if (ad->parsed()) return run_attn_dump(ad_data, ad_ckpt, ad_sample, ad_out);
    return run_decouple();
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace vg3d::cli
