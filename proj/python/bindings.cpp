#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cirevl/digest.hpp"
#include "cirevl/metrics.hpp"
#include "cirevl/pipeline.hpp"
#include "cirevl/serialization.hpp"

namespace py = pybind11;
using namespace cirevl;

namespace {

EmbeddingVector to_vector(const std::vector<float>& values) { return EmbeddingVector(values); }

std::vector<std::pair<std::string, double>> scored(const std::vector<ScoredId>& ranking) {
  std::vector<std::pair<std::string, double>> out;
  out.reserve(ranking.size());
  for (const auto& s : ranking) out.emplace_back(s.image_id, s.score);
  return out;
}

CacheKind parse_cache_kind(const std::string& name) {
  for (auto kind : {CacheKind::kCaption, CacheKind::kTargetCaption, CacheKind::kTextEmbedding,
                    CacheKind::kImageEmbedding}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown cache kind '" + name + "'");
}

// Runs a dataset end to end and returns (results JSONL text, summary JSON text).
std::pair<std::string, std::string> run_dataset_files(const std::filesystem::path& dataset_path,
                                                      const std::filesystem::path& clients_path,
                                                      const std::string& mode, std::size_t k,
                                                      std::optional<std::filesystem::path> cache_dir,
                                                      bool deterministic) {
  const CanonicalDataset dataset = load_dataset(dataset_path);
  const ClientSet clients = make_clients(ClientsConfig::load(clients_path), dataset.root);
  std::optional<ModelCache> cache;
  if (cache_dir) cache.emplace(*cache_dir);
  CallCounters counters;
  auto items = embed_gallery(dataset, *clients.embedder, cache ? &*cache : nullptr, counters);
  const GalleryIndex index = GalleryIndex::build(std::move(items), clients.embedder->model_id());

  RunConfig config;
  config.mode = parse_query_mode(mode);
  config.k = k;
  const Pipeline pipeline(dataset, index, clients, cache ? &*cache : nullptr, TemplateSet{},
                          deterministic ? fixed_clock() : system_clock());
  DatasetRun run;
  {
    py::gil_scoped_release release;
    run = pipeline.run_dataset(dataset.queries, config);
  }
  RunSummary summary = run.summary;
  summary.embedder_calls += counters.embedder;
  std::string lines;
  for (const auto& t : run.traces) lines += Json(t).dump() + "\n";
  return {lines, summary.to_json().dump()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Zero-shot compositional image retrieval core";

  py::register_exception<Error>(m, "CirevlError");

  m.def("hash_embed", &hash_embed, py::arg("text"), py::arg("dim") = 64);
  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); });
  m.def("cache_key", [](const std::string& kind, const std::string& model_id, const std::string& input) {
    return cache_key(parse_cache_kind(kind), model_id, input);
  });

  m.def("normalize", [](const std::vector<float>& v) {
    const auto n = normalize(to_vector(v));
    return std::vector<float>(n.values().begin(), n.values().end());
  });
  m.def("cosine", [](const std::vector<float>& a, const std::vector<float>& b) {
    return cosine(to_vector(a), to_vector(b));
  });

  py::class_<GalleryIndex>(m, "GalleryIndex")
      .def(py::init([](const std::vector<std::pair<std::string, std::vector<float>>>& items,
                       const std::string& backend_model_id) {
             std::vector<GalleryIndex::Item> built;
             built.reserve(items.size());
             for (const auto& [id, values] : items) built.emplace_back(id, to_vector(values));
             return GalleryIndex::build(std::move(built), backend_model_id);
           }),
           py::arg("items"), py::arg("backend_model_id") = "")
      .def_property_readonly("dim", &GalleryIndex::dim)
      .def_property_readonly("ids", &GalleryIndex::ids)
      .def("__len__", &GalleryIndex::size)
      .def(
          "top_k",
          [](const GalleryIndex& index, const std::vector<float>& query, std::size_t k,
             const std::set<std::string>& exclude) { return scored(index.top_k(to_vector(query), k, exclude)); },
          py::arg("query"), py::arg("k"), py::arg("exclude") = std::set<std::string>{})
      .def(
          "rank_subset",
          [](const GalleryIndex& index, const std::vector<float>& query, const std::vector<std::string>& members) {
            return scored(index.rank_subset(to_vector(query), members));
          },
          py::arg("query"), py::arg("member_ids"));

  m.def("average_precision_at_k", &average_precision_at_k, py::arg("ranking"), py::arg("positives"), py::arg("k"));
  m.def(
      "recall_at_k",
      [](const std::vector<std::vector<std::string>>& rankings,
         const std::vector<std::set<std::string>>& positives, std::size_t k) {
        if (rankings.size() != positives.size()) {
          throw Error(ErrorCode::kInvalidArgument, "rankings and positives differ in length");
        }
        std::vector<EvalRecord> records;
        for (std::size_t i = 0; i < rankings.size(); ++i) {
          records.push_back({std::to_string(i), rankings[i], positives[i], std::nullopt});
        }
        return recall_at_k(records, k);
      },
      py::arg("rankings"), py::arg("positives"), py::arg("k"));

  m.def(
      "build_reasoner_request",
      [](const std::string& caption, const std::string& instruction, const std::string& task) {
        return build_reasoner_request(task_template(parse_task_kind(task)), caption, instruction);
      },
      py::arg("caption"), py::arg("instruction"), py::arg("task") = "cir");
  m.def(
      "parse_edited_description",
      [](const std::string& reply) {
        const auto parsed = parse_edited_description(reply, task_template(TaskKind::kCir));
        return std::make_pair(parsed.text, parsed.marker_missing);
      },
      py::arg("reply"));
  m.attr("DEFAULT_BASE_PROMPT") = std::string(kDefaultBasePrompt);

  m.def("run_dataset", &run_dataset_files, py::arg("dataset"), py::arg("clients"),
        py::arg("mode") = "cirevl", py::arg("k") = 50, py::arg("cache_dir") = py::none(),
        py::arg("deterministic") = true);
}
