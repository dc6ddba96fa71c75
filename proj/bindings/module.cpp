#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vg3d/attention.hpp"
#include "vg3d/bench.hpp"
#include "vg3d/geometry.hpp"
#include "vg3d/grounding.hpp"
#include "vg3d/posenc.hpp"
#include "vg3d/scenegen.hpp"
#include "vg3d/textsplit.hpp"

namespace py = pybind11;
using namespace vg3d;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape.push_back(static_cast<int>(arr.shape(i)));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int d : t.shape()) shape.push_back(d);
  py::array_t<double> arr(shape);
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

Box3 box_from_seq(const std::vector<double>& v) {
  if (v.size() != 6) throw std::invalid_argument("box: expected 6 values");
  Box3 b;
  b.center = {v[0], v[1], v[2]};
  b.l = v[3];
  b.w = v[4];
  b.h = v[5];
  return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "3D visual grounding core: box-surface relative position "
            "encoding, text-gated cross-attention, dual-branch decoding";

  m.def("box_surface_offset",
        [](const std::vector<double>& point, const std::vector<double>& box) {
          if (point.size() != 3) throw std::invalid_argument("point: expected 3 values");
          const Vec3 v = box_surface_offset({point[0], point[1], point[2]},
                                            box_from_seq(box));
          return std::vector<double>{v.x, v.y, v.z};
        },
        py::arg("point"), py::arg("box"),
        "Signed offset from a point to the closest point on a box surface. "
        "Box is (cx, cy, cz, l, w, h).");

  m.def("center_offset",
        [](const std::vector<double>& point, const std::vector<double>& box) {
          const Vec3 v = center_offset({point[0], point[1], point[2]},
                                       box_from_seq(box));
          return std::vector<double>{v.x, v.y, v.z};
        },
        py::arg("point"), py::arg("box"));

  m.def("closest_point_on_box",
        [](const std::vector<double>& point, const std::vector<double>& box) {
          const ClosestPoint cp = closest_point_oracle(
              {point[0], point[1], point[2]}, box_from_seq(box));
          return py::make_tuple(std::vector<double>{cp.m.x, cp.m.y, cp.m.z},
                                cp.distance);
        },
        py::arg("point"), py::arg("box"));

  m.def("box_iou",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return box_iou(box_from_seq(a), box_from_seq(b));
        },
        py::arg("box_a"), py::arg("box_b"));

  m.def("offset_field",
        [](const py::array_t<double>& points, const py::array_t<double>& boxes,
           const std::string& scheme) {
          auto p = points.unchecked<2>();
          auto b = boxes.unchecked<2>();
          std::vector<Point3> pts;
          for (py::ssize_t i = 0; i < p.shape(0); ++i)
            pts.push_back({p(i, 0), p(i, 1), p(i, 2)});
          std::vector<Box3> bxs;
          for (py::ssize_t i = 0; i < b.shape(0); ++i)
            bxs.push_back(box_from_seq({b(i, 0), b(i, 1), b(i, 2), b(i, 3),
                                        b(i, 4), b(i, 5)}));
          return array_from_tensor(
              offset_field(pts, bxs, pe_scheme_from_name(scheme)).offsets);
        },
        py::arg("points"), py::arg("boxes"), py::arg("scheme") = "box_surface",
        "Relative offsets between N points and K boxes; [K,N,3] (or [K,N,8,3] "
        "for the vertex scheme).");

  m.def("pe_bias",
        [](const py::array_t<double>& points, const py::array_t<double>& boxes,
           const std::string& scheme, int num_heads, int hidden_dim,
           std::uint64_t seed) {
          auto p = points.unchecked<2>();
          auto b = boxes.unchecked<2>();
          std::vector<Point3> pts;
          for (py::ssize_t i = 0; i < p.shape(0); ++i)
            pts.push_back({p(i, 0), p(i, 1), p(i, 2)});
          std::vector<Box3> bxs;
          for (py::ssize_t i = 0; i < b.shape(0); ++i)
            bxs.push_back(box_from_seq({b(i, 0), b(i, 1), b(i, 2), b(i, 3),
                                        b(i, 4), b(i, 5)}));
          Rng rng(seed);
          const PeScheme s = pe_scheme_from_name(scheme);
          PosEncConfig cfg = posenc_init(s, num_heads, hidden_dim, rng);
          return array_from_tensor(pe_bias(offset_field(pts, bxs, s), cfg).e);
        },
        py::arg("points"), py::arg("boxes"), py::arg("scheme") = "box_surface",
        py::arg("num_heads") = 4, py::arg("hidden_dim") = 32, py::arg("seed") = 0,
        "Attention bias [H,K,N] from a seeded position-encoding MLP.");

  m.def("gated_cross_attention",
        [](const py::array_t<double>& q, const py::array_t<double>& k,
           const py::array_t<double>& v, const py::array_t<double>& bias,
           const py::array_t<double>& gate_logits, const std::string& wiring,
           int num_heads) {
          Tensor Q = tensor_from_array(q);
          Tensor Kv = tensor_from_array(k);
          Tensor Vv = tensor_from_array(v);
          const int D = Q.dim(1);
          std::optional<AttnBias> E;
          if (bias.size() > 0) E = AttnBias{tensor_from_array(bias)};
          std::optional<GateVector> g;
          if (gate_logits.size() > 0) {
            GateVector gv;
            gv.logits = tensor_from_array(gate_logits);
            gv.g = sigmoid(gv.logits);
            g = gv;
          }
          // identity output projection keeps the python surface compact
          std::vector<double> eye(static_cast<std::size_t>(D) * D, 0.0);
          for (int i = 0; i < D; ++i) eye[static_cast<std::size_t>(i) * D + i] = 1.0;
          Tensor w = Tensor::from_data({D, D}, std::move(eye));
          Tensor b = Tensor::zeros({D});
          AttnOutput out = gated_cross_attention(Q, Kv, Vv, E, g,
                                                 gate_wiring_from_name(wiring),
                                                 num_heads, w, b);
          return py::make_tuple(array_from_tensor(out.out),
                                array_from_tensor(out.attn));
        },
        py::arg("q"), py::arg("k"), py::arg("v"),
        py::arg("bias") = py::array_t<double>(),
        py::arg("gate_logits") = py::array_t<double>(),
        py::arg("wiring") = "none", py::arg("num_heads") = 1,
        "Bias-modulated multi-head cross-attention; returns (out, attn).");

  m.def("token_confidence_gate",
        [](const py::array_t<double>& seeds, const py::array_t<double>& tokens) {
          GateVector g = confidence_gate(
              token_confidence(tensor_from_array(seeds), tensor_from_array(tokens)));
          return py::make_tuple(array_from_tensor(g.g), array_from_tensor(g.logits));
        },
        py::arg("seed_features"), py::arg("token_features"),
        "Per-seed text-confidence gate (values, pre-sigmoid logits).");

  m.def("tokenize", &tokenize, py::arg("utterance"));

  m.def("decouple",
        [](const std::string& utterance) {
          const auto tokens = tokenize(utterance);
          const auto labels = label_components(tokens, default_lexicon());
          std::vector<std::pair<std::string, std::string>> out;
          for (std::size_t i = 0; i < tokens.size(); ++i)
            out.emplace_back(tokens[i], token_label_name(labels[i]));
          return out;
        },
        py::arg("utterance"),
        "Token/label pairs under the five-component scheme.");

  m.def("partition",
        [](const std::string& utterance) {
          const auto tokens = tokenize(utterance);
          const auto labels = label_components(tokens, default_lexicon());
          const SplitResult s = partition_tokens(tokens, labels);
          return py::make_tuple(s.target_indices, s.surrounding_indices,
                                s.other_indices);
        },
        py::arg("utterance"),
        "(target, surrounding, other) token index partition.");

  m.def("gen_dataset",
        [](std::uint64_t seed, int num_scenes, int objects_per_scene,
           const std::string& out_path) {
          DatasetConfig cfg;
          cfg.scene.num_objects = objects_per_scene;
          save_dataset(out_path, gen_dataset(seed, num_scenes, cfg));
        },
        py::arg("seed"), py::arg("num_scenes"), py::arg("objects_per_scene") = 8,
        py::arg("out_path") = "dataset.jsonl");

  m.def("pe_cost",
        [](const std::string& scheme, int K, int N, int D_hidden, int H) {
          const PeCost c = pe_cost_model(pe_scheme_from_name(scheme), K, N, D_hidden, H);
          return py::make_tuple(c.mlp_applications, c.bias_buffer_scalars);
        },
        py::arg("scheme"), py::arg("K"), py::arg("N"), py::arg("D_hidden"),
        py::arg("H"), "(mlp_applications, bias_buffer_scalars) analytic counts.");

  m.def("grad_check_sigmoid_sum",
        [](const py::array_t<double>& x) {
          return grad_check([](const Tensor& t) { return sum(sigmoid(t)); },
                            tensor_from_array(x));
        },
        py::arg("x"),
        "Max relative error of the recorded gradient against central "
        "differences for sum(sigmoid(x)).");
}
