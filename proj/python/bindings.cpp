#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "osdsr/commands.hpp"
#include "osdsr/data.hpp"
#include "osdsr/dtsm.hpp"
#include "osdsr/error.hpp"
#include "osdsr/evalmetrics.hpp"
#include "osdsr/losses.hpp"
#include "osdsr/owms.hpp"
#include "osdsr/random.hpp"
#include "osdsr/trainer.hpp"

namespace py = pybind11;
using namespace osdsr;

namespace {

struct LoadedModel {
  std::unique_ptr<TrainModel> model;
  RunConfig config;
  AblationSpec ablation;
};

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Accepts (3, H, W) or (B, 3, H, W).
ImageBatch to_image(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  if (shape.size() != 4) throw Error(ErrorKind::ShapeMismatch, "expected a (3,H,W) or (B,3,H,W) array");
  return ImageBatch(Tensor(shape, std::vector<double>(a.data(), a.data() + a.size())));
}

Array to_array(const ImageBatch& image, bool squeeze) {
  const Tensor& t = image.tensor();
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  if (squeeze && shape[0] == 1) shape.erase(shape.begin());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& ini, const std::vector<std::string>& overrides) {
  RunConfig c = parse_run_config(ini);
  for (const auto& o : overrides) apply_override(c, o);
  c.validate();
  return c;
}

// Runs a command and returns (exit_code, log, errors).
template <class F>
py::tuple captured(F&& f) {
  std::ostringstream log, err;
  int rc;
  {
    py::gil_scoped_release release;
    rc = f(log, err);
  }
  return py::make_tuple(rc, log.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_osdsr, m) {
  m.doc() = "One-step diffusion super-resolution with learned time-step selection";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("derive_sample_seed", &derive_sample_seed, py::arg("global_seed"), py::arg("index"));

  m.def("psnr_y", [](const Array& a, const Array& b) { return psnr_y(to_image(a), to_image(b)); });
  m.def("ssim_y", [](const Array& a, const Array& b) { return ssim_y(to_image(a), to_image(b)); });
  m.def("rgb_to_y", [](const Array& a) {
    const Tensor y = rgb_to_y(to_image(a));
    Array out(std::vector<py::ssize_t>(y.shape().begin(), y.shape().end()));
    std::copy(y.data().begin(), y.data().end(), out.mutable_data());
    return out;
  });

  m.def("pair_normalize", &pair_normalize, py::arg("s_pos"), py::arg("s_neg"));
  m.def(
      "total_loss",
      [](std::array<double, 4> terms, std::array<double, 4> weights) {
        return total_loss(LossTerms{terms[0], terms[1], terms[2], terms[3]},
                          LossWeights{weights[0], weights[1], weights[2], weights[3]})
            .total;
      },
      py::arg("terms"), py::arg("weights") = std::array<double, 4>{2.0, 5.0, 1.0, 0.5});
  m.def(
      "default_attributes",
      [] {
        std::vector<std::tuple<std::string, std::string, std::string>> out;
        const AttributeRegistry registry = AttributeRegistry::defaults();
        for (const auto& a : registry.attributes())
          out.emplace_back(a.name, a.positive_prompt, a.negative_prompt);
        return out;
      },
      "(name, positive prompt, negative prompt) triples");

  m.def(
      "gumbel_softmax_select",
      [](const std::vector<double>& logits, double temperature, bool noise, std::uint64_t seed) {
        Rng rng(seed);
        const GumbelSelection s = gumbel_softmax_select(logits, temperature, noise, rng);
        return py::make_tuple(s.hard_index, s.soft_probs);
      },
      py::arg("logits"), py::arg("temperature") = 1.0, py::arg("noise") = true, py::arg("seed") = 0,
      "Returns (hard_index, soft_probs).");

  m.def(
      "degrade",
      [](const Array& gt, double blur_sigma, int downscale, double noise_sigma, std::optional<int> jpeg_quality,
         std::uint64_t seed) {
        const DegradationConfig cfg{blur_sigma, downscale, noise_sigma, jpeg_quality};
        return to_array(degrade(to_image(gt), cfg, seed), gt.ndim() == 3);
      },
      py::arg("gt"), py::arg("blur_sigma") = 1.0, py::arg("downscale") = 4, py::arg("noise_sigma") = 0.02,
      py::arg("jpeg_quality") = 75, py::arg("seed") = 0);
  m.def("jpeg_codec_available", &jpeg_codec_available);
  m.def("synthesize_gt", [](int h, int w, std::uint64_t seed) { return to_array(synthesize_gt(h, w, seed), true); },
        py::arg("height"), py::arg("width"), py::arg("seed") = 0);
  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p), true); });
  m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_image(a), p); });

  m.def(
      "default_config", [] { return to_ini(RunConfig{}); }, "Canonical INI text listing every key and its default.");
  m.def(
      "normalize_config",
      [](const std::string& ini, const std::vector<std::string>& overrides) {
        return to_ini(config_from(ini, overrides));
      },
      py::arg("ini"), py::arg("overrides") = std::vector<std::string>{},
      "Parses INI text, applies section.key=value overrides and returns the canonical form.");

  py::class_<LoadedModel>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& p) {
            LoadedModel out;
            out.model = std::make_unique<TrainModel>(load_trained_model(p, &out.config, &out.ablation));
            return out;
          },
          py::arg("checkpoint"))
      .def_property_readonly("config", [](const LoadedModel& lm) { return to_ini(lm.config); })
      .def_property_readonly("candidates", [](const LoadedModel& lm) { return lm.config.candidates.steps(); })
      .def(
          "super_resolve",
          [](const LoadedModel& lm, const Array& lr) {
            const SRResult r = infer(*lm.model, lm.config, lm.ablation, to_image(lr));
            return py::make_tuple(to_array(r.image, lr.ndim() == 3), r.t_star);
          },
          py::arg("lr"), "Deterministic one-step SR; returns (sr, t_star per image).");

  auto mc = m.def_submodule("commands", "Command entry points; each returns (exit_code, log, errors).");
  mc.def(
      "degrade",
      [](const std::filesystem::path& gt_dir, const std::string& ini, const std::filesystem::path& out) {
        const RunConfig c = config_from(ini, {});
        return captured([&](std::ostream& l, std::ostream& e) { return cmd_degrade(gt_dir, c, out, l, e); });
      },
      py::arg("gt_dir"), py::arg("config"), py::arg("out_dir"));
  mc.def(
      "train",
      [](const std::string& ini, const std::filesystem::path& out, std::optional<std::filesystem::path> resume) {
        const RunConfig c = config_from(ini, {});
        return captured([&](std::ostream& l, std::ostream& e) { return cmd_train(c, out, resume, l, e); });
      },
      py::arg("config"), py::arg("out_dir"), py::arg("resume_from") = std::nullopt);
  mc.def(
      "infer",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& lr_dir, const std::filesystem::path& out) {
        return captured([&](std::ostream& l, std::ostream& e) { return cmd_infer(ckpt, lr_dir, out, l, e); });
      },
      py::arg("checkpoint"), py::arg("lr_dir"), py::arg("out_dir"));
  mc.def(
      "eval",
      [](const std::filesystem::path& sr, const std::filesystem::path& gt, const std::filesystem::path& csv,
         const std::string& ini) {
        const RunConfig c = config_from(ini, {});
        return captured([&](std::ostream& l, std::ostream& e) { return cmd_eval(sr, gt, csv, c, {}, l, e); });
      },
      py::arg("sr_dir"), py::arg("gt_dir"), py::arg("out_csv"), py::arg("config") = "");
  mc.def(
      "ablate",
      [](const std::string& ini, const std::string& variants, const std::filesystem::path& out) {
        const RunConfig c = config_from(ini, {});
        return captured([&](std::ostream& l, std::ostream& e) { return cmd_ablate(c, variants, out, l, e); });
      },
      py::arg("config"), py::arg("variants"), py::arg("out_dir"));
}
