#include "cirevl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"

#include "cirevl/metrics.hpp"
#include "cirevl/pipeline.hpp"
#include "cirevl/serialization.hpp"
#include "cirevl/service.hpp"

namespace cirevl::cli {

namespace {

namespace fs = std::filesystem;

// Exit status for a library error: input/config problems are usage errors,
// anything a client raised counts as a (partial) run failure.
int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kClientUnavailable:
    case ErrorCode::kEmptyModelOutput:
      return kExitPartial;
    default:
      return kExitUsage;
  }
}

CanonicalDataset open_dataset(const std::string& path, const std::string& adapter) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIoError, "dataset not found: " + path);
  std::optional<AdapterMapping> mapping;
  if (!adapter.empty()) mapping = AdapterMapping::load(adapter);
  return load_dataset(path, mapping);
}

std::optional<bool> parse_bool_flag(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw Error(ErrorCode::kInvalidArgument, "expected true or false, got '" + text + "'");
}

TemplateSet open_templates(const std::string& manifest) {
  if (manifest.empty()) return TemplateSet{};
  return TemplateSet::load_manifest(manifest);
}

GalleryIndex open_index(const std::string& embeddings, const ClientSet& clients) {
  auto items = read_embeddings(embeddings);
  const std::string backend = clients.embedder ? clients.embedder->model_id() : std::string{};
  return GalleryIndex::build(std::move(items), backend);
}

struct IndexArgs {
  std::string dataset;
  std::string adapter;
  std::string embedder;
  std::string out;
  std::string cache;
  bool by_uri = false;
};

int cmd_index(const IndexArgs& a, std::ostream& out) {
  const CanonicalDataset dataset = open_dataset(a.dataset, a.adapter);
  const ClientsConfig config = ClientsConfig::load(a.embedder);
  if (!config.embedder) {
    throw Error(ErrorCode::kInvalidArgument, a.embedder + " has no 'embedder' section");
  }
  ClientsConfig only_embedder;
  only_embedder.embedder = config.embedder;
  only_embedder.fixture_path = config.fixture_path;
  const ClientSet clients = make_clients(only_embedder, dataset.root);

  std::optional<ModelCache> cache;
  if (!a.cache.empty()) cache.emplace(a.cache);
  CallCounters counters;
  auto items = embed_gallery(dataset, *clients.embedder, cache ? &*cache : nullptr, counters, !a.by_uri);
  const std::size_t dim = items.empty() ? 0 : items.front().second.dim();
  const std::size_t count = items.size();
  write_embeddings(a.out, std::move(items));
  out << "indexed " << count << " images, dim " << dim << ", embedder calls " << counters.embedder.load()
      << "\n";
  return kExitOk;
}

struct RunArgs {
  std::string dataset;
  std::string adapter;
  std::string embeddings;
  std::string clients;
  std::string out;
  std::string mode = "cirevl";
  std::string task;
  std::size_t k = 50;
  std::string template_id;
  std::string templates;
  std::string exclude_reference;
  std::string cache;
  std::size_t parallel = 4;
  bool no_cache = false;
  bool deterministic = false;
};

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const CanonicalDataset dataset = open_dataset(a.dataset, a.adapter);
  const ClientSet clients = make_clients(ClientsConfig::load(a.clients), dataset.root);
  const GalleryIndex index = open_index(a.embeddings, clients);

  RunConfig config;
  config.mode = parse_query_mode(a.mode);
  if (!a.task.empty()) config.task = parse_task_kind(a.task);
  config.k = a.k;
  if (!a.template_id.empty()) config.template_id = a.template_id;
  config.exclude_reference = parse_bool_flag(a.exclude_reference);
  config.cache_enabled = !a.no_cache;
  config.parallelism = std::max<std::size_t>(1, a.parallel);

  std::optional<ModelCache> cache;
  if (!a.cache.empty() && config.cache_enabled) cache.emplace(a.cache);
  const Pipeline pipeline(dataset, index, clients, cache ? &*cache : nullptr, open_templates(a.templates),
                          a.deterministic ? fixed_clock() : system_clock());
  const DatasetRun run = pipeline.run_dataset(dataset.queries, config);
  write_results(a.out, run.traces);
  err << run.summary.to_json().dump() << "\n";
  out << "wrote " << run.traces.size() << " traces to " << a.out << "\n";
  return run.summary.failed > 0 ? kExitPartial : kExitOk;
}

struct EvalArgs {
  std::string results;
  std::string metrics;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto specs = parse_metric_specs(a.metrics);
  const auto traces = read_results(a.results);
  std::vector<EvalRecord> records;
  std::size_t skipped = 0;
  for (const auto& t : traces) {
    if (t.error) {
      ++skipped;
      continue;
    }
    records.push_back(eval_record_from_trace(t));
  }
  if (skipped > 0) err << "excluded " << skipped << " error traces\n";
  const MetricsReport report = build_report(records, specs);
  out << report.to_table();
  if (!a.out.empty()) {
    Json j = report.to_json();
    j["excluded_error_traces"] = skipped;
    write_file_atomic(a.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string dataset;
  std::string adapter;
  std::string embeddings;
  std::string clients;
  std::string templates;
  std::string static_dir;
  std::string cache;
  std::string sessions_out;
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const CanonicalDataset dataset = open_dataset(a.dataset, a.adapter);
  const ClientSet clients = make_clients(ClientsConfig::load(a.clients), dataset.root);
  const GalleryIndex index = open_index(a.embeddings, clients);
  std::optional<ModelCache> cache;
  if (!a.cache.empty()) cache.emplace(a.cache);
  Service service(dataset, index, clients, cache ? &*cache : nullptr, open_templates(a.templates));

  httplib::Server server;
  std::optional<fs::path> static_dir;
  if (!a.static_dir.empty()) static_dir = a.static_dir;
  service.mount(server, static_dir);

  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&server] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });

  if (!server.bind_to_port(a.host, a.port)) {
    g_stop = true;
    watcher.join();
    throw Error(ErrorCode::kIoError, "cannot bind " + a.host + ":" + std::to_string(a.port));
  }
  out << "listening on http://" << a.host << ":" << a.port << "/api/v1\n" << std::flush;
  server.listen_after_bind();
  g_stop = true;
  watcher.join();
  if (!a.sessions_out.empty()) service.dump_sessions(a.sessions_out);
  return kExitOk;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot compositional image retrieval: index, run, eval, serve", "cirevl"};
  app.require_subcommand(1);

  IndexArgs ia;
  auto* index = app.add_subcommand("index", "embed every gallery image into an embeddings file");
  index->add_option("--dataset", ia.dataset, "canonical dataset JSON")->required();
  index->add_option("--adapter", ia.adapter, "adapter mapping for a third-party annotation file");
  index->add_option("--embedder", ia.embedder, "clients config with an 'embedder' section")->required();
  index->add_option("--out", ia.out, "embeddings JSONL to write")->required();
  index->add_option("--cache", ia.cache, "model-output cache directory");
  index->add_flag("--cache-by-uri", ia.by_uri, "key image cache entries by uri, not file bytes");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "run the retrieval pipeline over every query");
  run->add_option("--dataset", ra.dataset, "canonical dataset JSON")->required();
  run->add_option("--adapter", ra.adapter, "adapter mapping for a third-party annotation file");
  run->add_option("--embeddings", ra.embeddings, "gallery embeddings JSONL")->required();
  run->add_option("--clients", ra.clients, "clients config JSON")->required();
  run->add_option("--out", ra.out, "results JSONL to write")->required();
  run->add_option("--mode", ra.mode, "cirevl, image-only, text-only, image-plus-text, caption-template")
      ->capture_default_str();
  run->add_option("--task", ra.task, "force this task on every query");
  run->add_option("--k", ra.k, "ranking depth")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--template", ra.template_id, "reasoner template id");
  run->add_option("--templates", ra.templates, "template manifest.json");
  run->add_option("--exclude-reference", ra.exclude_reference, "true or false");
  run->add_option("--cache", ra.cache, "model-output cache directory");
  run->add_flag("--no-cache", ra.no_cache, "bypass the cache");
  run->add_option("--parallel", ra.parallel, "queries in flight")->capture_default_str();
  run->add_flag("--deterministic", ra.deterministic, "fixed timestamps and zero timings");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "compute retrieval metrics over a results file");
  eval->add_option("--results", ea.results, "results JSONL")->required();
  eval->add_option("--metrics", ea.metrics, "e.g. \"recall@1,5,10,50 map@5,10,25,50\"")->required();
  eval->add_option("--out", ea.out, "report JSON to write");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "serve the HTTP API");
  serve->add_option("--host", sa.host)->capture_default_str();
  serve->add_option("--port", sa.port)->capture_default_str();
  serve->add_option("--dataset", sa.dataset, "canonical dataset JSON")->required();
  serve->add_option("--adapter", sa.adapter, "adapter mapping for a third-party annotation file");
  serve->add_option("--embeddings", sa.embeddings, "gallery embeddings JSONL")->required();
  serve->add_option("--clients", sa.clients, "clients config JSON")->required();
  serve->add_option("--templates", sa.templates, "template manifest.json");
  serve->add_option("--static", sa.static_dir, "directory served at /");
  serve->add_option("--cache", sa.cache, "model-output cache directory");
  serve->add_option("--sessions-out", sa.sessions_out, "write sessions JSONL on shutdown");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (index->parsed()) return cmd_index(ia, out);
    if (run->parsed()) return cmd_run(ra, out, err);
    if (eval->parsed()) return cmd_eval(ea, out, err);
    if (serve->parsed()) return cmd_serve(sa, out);
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << "\n";
    for (const auto& id : e.ids()) err << "  " << id << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cirevl::cli
