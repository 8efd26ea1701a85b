#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cvos/harness.hpp"
#include "cvos/losses.hpp"
#include "cvos/metrics.hpp"
#include "cvos/ops.hpp"
#include "cvos/routing.hpp"
#include "cvos/synth.hpp"

namespace py = pybind11;
using namespace cvos;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return Tensor::from_data(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

RoutingConfig make_config(int64_t out_types, int iterations, const std::vector<double>& lambdas,
                          double sigma_floor) {
  RoutingConfig cfg = RoutingConfig::with_types(out_types);
  cfg.iterations = iterations;
  if (!lambdas.empty()) cfg.lambda_schedule = lambdas;
  cfg.sigma_floor = sigma_floor;
  return cfg;
}

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "capsule-routing video object segmentation core";
  m.attr("__version__") = "0.1.0";

  m.def(
      "em_routing",
      [](const Array& activations, const Array& votes, int iterations,
         const std::vector<double>& lambdas, double sigma_floor) {
        Tensor a = tensor_from_array(activations);
        Tensor v = tensor_from_array(votes);
        RoutingConfig cfg = make_config(v.extent(2), iterations, lambdas, sigma_floor);
        auto [poses, acts] = em_routing(a, v, cfg);
        return py::make_tuple(array_from_tensor(poses), array_from_tensor(acts));
      },
      py::arg("activations"), py::arg("votes"), py::arg("iterations") = 3,
      py::arg("lambdas") = std::vector<double>{0.5, 1.0, 2.0}, py::arg("sigma_floor") = 1e-6,
      "EM routing over votes [L,I,J,16] with activations [L,I]; returns (poses, activations)");

  m.def(
      "attention_routing",
      [](const Array& video_poses, const Array& video_acts, const Array& frame_poses,
         const Array& frame_acts, const Array& w_key, const Array& w_value, const Array& w_query,
         int iterations, const std::vector<double>& lambdas, double sigma_floor) {
        CapsuleGrid video{tensor_from_array(video_poses), tensor_from_array(video_acts)};
        CapsuleGrid frame{tensor_from_array(frame_poses), tensor_from_array(frame_acts)};
        TransformationWeights w;
        w.key = tensor_from_array(w_key);
        w.value = tensor_from_array(w_value);
        w.query = tensor_from_array(w_query);
        RoutingConfig cfg = make_config(w.key.extent(1), iterations, lambdas, sigma_floor);
        CapsuleGrid out = attention_routing(video, frame, w, cfg);
        return py::make_tuple(array_from_tensor(out.poses), array_from_tensor(out.activations));
      },
      py::arg("video_poses"), py::arg("video_acts"), py::arg("frame_poses"), py::arg("frame_acts"),
      py::arg("w_key"), py::arg("w_value"), py::arg("w_query"), py::arg("iterations") = 3,
      py::arg("lambdas") = std::vector<double>{0.5, 1.0, 2.0}, py::arg("sigma_floor") = 1e-6,
      "Attention-based conditioning of video capsules on frame capsules");

  m.def(
      "assignment_from_distance",
      [](const Array& query_poses, const Array& key_votes) {
        return array_from_tensor(
            assignment_from_distance(tensor_from_array(query_poses), tensor_from_array(key_votes)));
      },
      py::arg("query_poses"), py::arg("key_votes"));

  m.def(
      "convolve",
      [](const Array& x, const Array& kernel, const std::vector<int64_t>& stride,
         const std::vector<int64_t>& padding) {
        return array_from_tensor(convolve(tensor_from_array(x), tensor_from_array(kernel), stride, padding));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride"), py::arg("padding"));

  m.def(
      "bce_loss",
      [](const Array& pred, const Array& target) {
        return bce_loss(tensor_from_array(pred), tensor_from_array(target)).item();
      },
      py::arg("pred"), py::arg("target"));
  m.def(
      "dice_loss",
      [](const Array& pred, const Array& target, double epsilon) {
        LossConfig cfg;
        cfg.epsilon = epsilon;
        return dice_loss(tensor_from_array(pred), tensor_from_array(target), cfg).item();
      },
      py::arg("pred"), py::arg("target"), py::arg("epsilon") = 1e-7);
  m.def("bbox_loss",
        [](double gt_h, double gt_w, double pred_h, double pred_w) {
          return bbox_loss(gt_h, gt_w, pred_h, pred_w);
        },
        py::arg("gt_h"), py::arg("gt_w"), py::arg("pred_h"), py::arg("pred_w"));

  m.def(
      "region_similarity_j",
      [](const Array& pred, const Array& gt) {
        return region_similarity_J(tensor_from_array(pred), tensor_from_array(gt));
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "contour_accuracy_f",
      [](const Array& pred, const Array& gt, double tolerance_px) {
        return contour_accuracy_F(tensor_from_array(pred), tensor_from_array(gt), tolerance_px);
      },
      py::arg("pred"), py::arg("gt"), py::arg("tolerance_px") = 1.0);

  m.def("schedule_clips", &schedule_clips, py::arg("video_length"), py::arg("clip_length") = 8,
        py::arg("overlap") = 3);

  m.def(
      "ground_truth_bbox",
      [](const Array& masks) {
        Tensor m = tensor_from_array(masks);
        BoundingBox b = ground_truth_bbox(m, m.extent(1), m.extent(2));
        return py::make_tuple(b.h, b.w, b.center_r, b.center_c);
      },
      py::arg("masks"), "Minimal centered covering box of clip masks [T,H,W]: (h, w, cr, cc)");

  m.def(
      "generate_clip",
      [](const std::string& scenario, uint64_t seed, int t0, int64_t canvas_h, int64_t canvas_w) {
        SceneSpec spec = SceneSpec::sample(scenario_from_name(scenario), seed, canvas_h, canvas_w);
        ClipSample s = generate_clip(spec, t0);
        return py::make_tuple(array_from_tensor(s.frames), array_from_tensor(s.masks),
                              py::make_tuple(s.gt_box.h, s.gt_box.w, s.gt_box.center_r,
                                             s.gt_box.center_c));
      },
      py::arg("scenario"), py::arg("seed"), py::arg("t0") = 0, py::arg("canvas_h") = 128,
      py::arg("canvas_w") = 224,
      "Deterministic synthetic clip: (frames [8,H,W,3], masks [8,H,W], gt_box)");

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
}
