#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sti_atlas/analytics.hpp"
#include "sti_atlas/embed.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/harvest.hpp"
#include "sti_atlas/panels.hpp"
#include "sti_atlas/pipeline.hpp"
#include "sti_atlas/topics.hpp"
#include "sti_atlas/vocab.hpp"

namespace py = pybind11;
using namespace atlas;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

embed::EmbeddingMatrix to_matrix(const std::vector<std::string>& ids, const FloatArray& values) {
  if (values.ndim() != 2) throw Error(ErrorCode::DimMismatch, "expected a 2-D array");
  auto r = values.unchecked<2>();
  std::vector<float> flat(values.data(), values.data() + r.shape(0) * r.shape(1));
  return embed::EmbeddingMatrix(ids, std::move(flat), std::uint32_t(r.shape(1)));
}

py::tuple from_matrix(const embed::EmbeddingMatrix& m) {
  FloatArray values({py::ssize_t(m.rows()), py::ssize_t(m.dim())});
  std::copy(m.values().begin(), m.values().end(), values.mutable_data());
  return py::make_tuple(m.ids(), values);
}

py::dict tag_dict(const vocab::TagResult& result) {
  py::list matches;
  for (const auto& m : result.matches) {
    py::dict d;
    d["concept"] = m.concept_label;
    d["term"] = m.term;
    d["start"] = m.start;
    d["end"] = m.end;
    d["field"] = std::string(vocab::to_string(m.field));
    d["goal"] = m.goal;
    matches.append(d);
  }
  py::dict out;
  out["goals"] = result.goals;
  out["matches"] = matches;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "sti_atlas core bindings";
  m.attr("__version__") = pipeline::kVersion;

  // Error instances carry the library's error code name as `.code`.
  static PyObject* error_type = py::exception<Error>(m, "Error").inc_ref().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type, exc.ptr());
    }
  });

  m.def("reconstruct_abstract", py::overload_cast<const harvest::InvertedIndex&>(&harvest::reconstruct_abstract),
        py::arg("inverted_index"));
  m.def("tokenize", &vocab::tokenize, py::arg("text"));
  m.def(
      "match_term",
      [](const std::vector<std::string>& term, const std::vector<std::string>& tokens, bool allow_permutation,
         int max_gap) {
        vocab::Term t{term, allow_permutation, max_gap};
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& s : vocab::match_term(t, tokens)) out.emplace_back(s.start, s.end);
        return out;
      },
      py::arg("term"), py::arg("tokens"), py::arg("allow_permutation") = false,
      py::arg("max_gap") = vocab::kDefaultMaxGap);

  py::class_<vocab::CompiledVocabulary>(m, "Vocabulary")
      .def_static("from_file", [](const std::filesystem::path& p) { return vocab::compile_vocabulary(p); })
      .def_static("from_json",
                  [](const std::string& text) { return vocab::compile_vocabulary(nlohmann::json::parse(text)); })
      .def_property_readonly("term_count", &vocab::CompiledVocabulary::term_count)
      .def(
          "tag",
          [](const vocab::CompiledVocabulary& v, const std::string& title, const std::string& abstract_text,
             int min_hits) { return tag_dict(vocab::tag_text("", title, abstract_text, v, {min_hits})); },
          py::arg("title"), py::arg("abstract") = "", py::arg("min_hits") = 1);

  m.def(
      "read_vectors",
      [](const std::filesystem::path& path, std::optional<std::uint32_t> dim) {
        return from_matrix(embed::read_vectors(path, dim));
      },
      py::arg("path"), py::arg("dim") = py::none());
  m.def(
      "write_vectors",
      [](const std::filesystem::path& path, const std::vector<std::string>& ids, const FloatArray& values) {
        embed::write_vectors(to_matrix(ids, values), path);
      },
      py::arg("path"), py::arg("ids"), py::arg("values"));
  m.def(
      "fallback_embed",
      [](const std::vector<std::pair<std::string, std::string>>& texts, std::uint32_t dim, std::uint64_t seed) {
        return from_matrix(embed::fallback_embed(texts, dim, seed));
      },
      py::arg("texts"), py::arg("dim"), py::arg("seed"));

  m.def(
      "kmeans",
      [](const FloatArray& values, int k, std::uint64_t seed) {
        std::vector<std::string> ids;
        for (py::ssize_t i = 0; i < values.shape(0); ++i) ids.push_back(std::to_string(i));
        auto model = topics::kmeans_fit(to_matrix(ids, values), k, seed);
        py::dict out;
        out["assignments"] = model.assignments;
        out["centroids"] = model.centroids;
        out["wcss"] = model.wcss;
        out["wcss_history"] = model.wcss_history;
        out["dbcc_min"] = model.dbcc_min;
        return out;
      },
      py::arg("values"), py::arg("k"), py::arg("seed"));

  m.def("share_percent", [](std::int64_t tagged, std::int64_t total) {
    return analytics::format_tenths(analytics::share_tenths(tagged, total));
  });
  m.def(
      "evaluate",
      [](const std::map<std::string, std::set<std::string>>& predictions,
         const std::map<std::string, std::string>& gold) {
        return py::module_::import("json").attr("loads")(panels::to_json(panels::evaluate(predictions, gold)).dump());
      },
      py::arg("predictions"), py::arg("gold"));

  m.def(
      "run",
      [](const std::string& subcommand, const std::filesystem::path& config,
         std::optional<std::filesystem::path> out, std::optional<std::uint64_t> seed, bool dry_run) {
        std::ostringstream o, e;
        int code;
        {
          py::gil_scoped_release release;
          code = pipeline::run({subcommand, config, out, seed, dry_run}, o, e);
        }
        return py::make_tuple(code, o.str(), e.str());
      },
      py::arg("subcommand"), py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      py::arg("dry_run") = false);
}
