// Copyright 2026-present the handlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "handlab/config.hpp"
#include "handlab/dataset.hpp"
#include "handlab/metrics.hpp"
#include "handlab/patchdict.hpp"
#include "handlab/pipeline.hpp"
#include "handlab/restoration.hpp"

namespace py = pybind11;
using namespace handlab;

namespace {

using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<std::uint8_t> to_numpy(const LabelMap& m) {
  py::array_t<std::uint8_t> out({m.height(), m.width()});
  std::copy(m.labels.data().begin(), m.labels.data().end(), out.mutable_data());
  return out;
}

LabelMap from_numpy(const LabelArray& a) {
  if (a.ndim() != 2) throw py::value_error("label map must be 2-D");
  LabelMap m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), m.labels.data().begin());
  for (auto l : m.labels.data()) {
    if (l >= kNumLabels) throw py::value_error("label out of range: " + std::to_string(l));
  }
  return m;
}

py::array_t<double> joints_to_numpy(const JointSet& j) {
  py::array_t<double> out({kNumJoints, 3});
  auto r = out.mutable_unchecked<2>();
  for (int i = 0; i < kNumJoints; ++i) {
    r(i, 0) = j[i].u;
    r(i, 1) = j[i].v;
    r(i, 2) = j[i].z;
  }
  return out;
}

JointSet joints_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != kNumJoints || a.shape(1) != 3) throw py::value_error("joints must be 14x3");
  auto r = a.unchecked<2>();
  JointSet j;
  for (int i = 0; i < kNumJoints; ++i) j[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return j;
}

dataset::Split parse_split(const std::string& name) {
  for (auto s : dataset::kAllSplits) {
    if (dataset::split_name(s) == name) return s;
  }
  throw py::value_error("unknown split: " + name);
}

py::dict sample_dict(const dataset::Sample& s) {
  py::array_t<double> depth({s.depth.height(), s.depth.width()});
  std::copy(s.depth.values.data().begin(), s.depth.values.data().end(), depth.mutable_data());
  py::array_t<std::uint8_t> fg({s.depth.height(), s.depth.width()});
  std::copy(s.depth.foreground.data().begin(), s.depth.foreground.data().end(), fg.mutable_data());
  py::dict d;
  d["id"] = s.id;
  d["depth"] = depth;
  d["foreground"] = fg;
  d["labels"] = to_numpy(s.labels);
  d["joints"] = joints_to_numpy(s.joints);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "handlab native core";
  m.attr("__version__") = std::string(pipeline::tool_version());
  m.attr("NUM_LABELS") = kNumLabels;
  m.attr("NUM_JOINTS") = kNumJoints;

  auto error = py::register_exception<Error>(m, "HandlabError");
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<IoError>(m, "IoError", error);
  py::register_exception<ContractError>(m, "ContractError", error);
  py::register_exception<GenerationError>(m, "GenerationError", error);
  py::register_exception<DivergenceError>(m, "DivergenceError", error);
  py::register_exception<EmptyDictionaryError>(m, "EmptyDictionaryError", error);
  py::register_exception<DependencyError>(m, "DependencyError", error);

  m.def(
      "generate_sample",
      [](const std::string& split, int index, std::uint64_t seed) {
        dataset::DatasetConfig cfg;
        cfg.seed = seed;
        return sample_dict(dataset::generate_sample(parse_split(split), index, cfg));
      },
      py::arg("split"), py::arg("index"), py::arg("seed") = 0);

  m.def(
      "read_sample",
      [](const std::filesystem::path& root, const std::string& split, const std::string& id) {
        return sample_dict(dataset::read_sample(root, parse_split(split), id));
      },
      py::arg("root"), py::arg("split"), py::arg("id"));

  m.def(
      "hamming_distance",
      [](const LabelArray& a, const LabelArray& b) {
        const auto la = from_numpy(a), lb = from_numpy(b);
        if (la.width() != la.height() || !la.labels.same_shape(lb.labels)) {
          throw py::value_error("patches must be square and the same size");
        }
        return patchdict::hamming_distance(patchdict::LabelPatch(la.width(), la.labels.data()),
                                           patchdict::LabelPatch(lb.width(), lb.labels.data()));
      },
      py::arg("a"), py::arg("b"));

  py::class_<patchdict::Neighbor>(m, "Neighbor")
      .def_readonly("id", &patchdict::Neighbor::id)
      .def_readonly("distance", &patchdict::Neighbor::distance)
      .def("__repr__", [](const patchdict::Neighbor& n) {
        return "Neighbor(id=" + std::to_string(n.id) + ", distance=" + std::to_string(n.distance) + ")";
      });

  py::class_<patchdict::PatchDictionary>(m, "PatchDictionary")
      .def_static(
          "from_label_maps",
          [](const std::vector<LabelArray>& maps, int patch_size, int stride, bool foreground_only,
             std::size_t max_patches, std::uint64_t seed) {
            std::vector<LabelMap> ms;
            for (const auto& a : maps) ms.push_back(from_numpy(a));
            auto d = patchdict::extract_patches(ms, patch_size, stride, foreground_only);
            if (max_patches > 0) d = patchdict::subsample(d, max_patches, seed);
            return patchdict::build_index(std::move(d), seed);
          },
          py::arg("maps"), py::arg("patch_size"), py::arg("stride") = 1, py::arg("foreground_only") = true,
          py::arg("max_patches") = 0, py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return patchdict::build_index(patchdict::load_dictionary(p)); },
          py::arg("path"))
      .def("save", [](const patchdict::PatchDictionary& d, const std::filesystem::path& p) {
        patchdict::save_dictionary(d, p);
      })
      .def_property_readonly("patch_size", &patchdict::PatchDictionary::patch_size)
      .def("__len__", &patchdict::PatchDictionary::size)
      .def("patch",
           [](const patchdict::PatchDictionary& d, std::uint32_t id) {
             if (id >= d.size()) throw py::index_error("patch id out of range");
             const auto p = d.patch(id);
             py::array_t<std::uint8_t> out({p.size, p.size});
             std::copy(p.cells.begin(), p.cells.end(), out.mutable_data());
             return out;
           })
      .def(
          "search",
          [](const patchdict::PatchDictionary& d, const LabelArray& q, std::size_t k, bool exhaustive) {
            const auto l = from_numpy(q);
            if (l.width() != d.patch_size() || l.height() != d.patch_size()) {
              throw py::value_error("query must match the dictionary patch size");
            }
            const auto enc = patchdict::encode_patch(patchdict::LabelPatch(l.width(), l.labels.data()));
            return exhaustive ? patchdict::linear_scan(enc, d, k) : patchdict::nn_search(enc, d, k);
          },
          py::arg("query"), py::arg("k") = 1, py::arg("exhaustive") = false);

  m.def(
      "restore",
      [](const LabelArray& pred, const patchdict::PatchDictionary& d, const std::string& method, int window,
         double crf_alpha, int crf_ranks, int jobs) {
        restoration::RestorationConfig cfg;
        cfg.window = window;
        cfg.crf_alpha = crf_alpha;
        cfg.crf_ranks = crf_ranks;
        return to_numpy(restoration::restore(from_numpy(pred), d, restoration::parse_method(method), cfg, jobs));
      },
      py::arg("pred"), py::arg("dictionary"), py::arg("method") = "vote", py::arg("window") = 17,
      py::arg("crf_alpha") = 1.0, py::arg("crf_ranks") = 10, py::arg("jobs") = 1);

  m.def(
      "seg_accuracy",
      [](const LabelArray& pred, const LabelArray& truth) {
        const auto s = metrics::seg_accuracy(from_numpy(pred), from_numpy(truth));
        py::dict d;
        d["per_pixel"] = s.per_pixel;
        d["per_class"] = s.per_class;
        py::list recall;
        for (const auto& r : s.recall) recall.append(r ? py::cast(*r) : py::none());
        d["recall"] = recall;
        return d;
      },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "pose_error",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& truth) {
        const auto e = metrics::pose_error(joints_from_numpy(pred), joints_from_numpy(truth), datagen::UnitScale{});
        py::dict d;
        d["e2d"] = std::vector<double>(e.e2d.begin(), e.e2d.end());
        d["e3d"] = std::vector<double>(e.e3d.begin(), e.e3d.end());
        d["mean_3d"] = e.mean_3d();
        d["max_3d"] = e.max_3d();
        return d;
      },
      py::arg("pred"), py::arg("truth"));

  py::class_<pipeline::StageOutcome>(m, "StageOutcome")
      .def_readonly("stage", &pipeline::StageOutcome::stage)
      .def_readonly("ran", &pipeline::StageOutcome::ran)
      .def_readonly("reason", &pipeline::StageOutcome::reason)
      .def_readonly("duration_s", &pipeline::StageOutcome::duration_s);

  m.def("stage_names", &pipeline::stage_names);

  py::class_<pipeline::Pipeline>(m, "Pipeline")
      .def(py::init([](const std::filesystem::path& config, std::optional<std::string> out, std::optional<int> jobs) {
             auto c = config::PipelineConfig::load(config);
             if (out) c.run.out = *out;
             if (jobs) c.run.jobs = *jobs;
             return pipeline::Pipeline(std::move(c));
           }),
           py::arg("config"), py::arg("out") = py::none(), py::arg("jobs") = py::none())
      .def_property_readonly("root", &pipeline::Pipeline::root)
      .def("run_stage", &pipeline::Pipeline::run_stage, py::arg("name"), py::arg("force") = false,
           py::call_guard<py::gil_scoped_release>())
      .def("run_all", &pipeline::Pipeline::run_all, py::arg("include_ablation") = true,
           py::call_guard<py::gil_scoped_release>())
      .def("stale_reason", &pipeline::Pipeline::stale_reason, py::arg("name"));
}
