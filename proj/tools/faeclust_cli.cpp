// faeclust: batch front end for the functional-data clustering toolkit.
//
// Six processing subcommands (simulate, smooth, distances, fit, cluster,
// evaluate) plus `replay`, which re-executes a recorded run manifest. Every
// subcommand that writes files records a run manifest alongside its output:
// the resolved configuration, the seed, the artifact list and the wall time.
// Re-running the manifest with `replay` reproduces the artifacts bit for bit.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure. Results go to files (or stdout for evaluate);
// diagnostics go to stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "faeclust/cvxclust.hpp"
#include "faeclust/datagen.hpp"
#include "faeclust/errors.hpp"
#include "faeclust/io.hpp"
#include "faeclust/labels.hpp"
#include "faeclust/metrics.hpp"
#include "faeclust/pipeline.hpp"
#include "faeclust/threading.hpp"

#ifndef FAECLUST_VERSION
#define FAECLUST_VERSION "0.0.0"
#endif
#ifndef FAECLUST_BUILD_HASH
#define FAECLUST_BUILD_HASH "unknown"
#endif

namespace {

using faeclust::ConfigError;
using faeclust::DataError;
using nlohmann::json;

std::string version_line() {
  return std::string("faeclust ") + FAECLUST_VERSION + " (build " + FAECLUST_BUILD_HASH + ")";
}

void log_info(const std::string& msg) { std::fprintf(stderr, "[faeclust] %s\n", msg.c_str()); }

std::string absolute_path(const std::string& p) {
  std::error_code ec;
  std::filesystem::path abs = std::filesystem::absolute(p, ec);
  return ec ? p : abs.lexically_normal().string();
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

// Strict reader for manifest config objects: typed lookups, then finish()
// rejects keys no lookup consumed.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return fallback;
    try {
      return it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + " key '" + key + "' has the wrong type");
    }
  }

  const json* object(const std::string& key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(where_ + " has unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string kind = "pendulum";
  int n = -1, dims = -1, steps = -1, clusters = -1;
  double noise = 0.0;
  std::uint64_t seed = 1;
  bool warp = false;
  int warp_knots = 4;
  double warp_ratio = 2.0;
  std::string out, truth;
  int threads = 0;
};

json to_json(const SimulateOpts& o) {
  json w;
  if (o.warp) w = {{"knots", o.warp_knots}, {"ratio", o.warp_ratio}};
  return {{"kind", o.kind},     {"n", o.n},         {"dims", o.dims}, {"steps", o.steps},
          {"clusters", o.clusters}, {"noise", o.noise}, {"seed", o.seed}, {"warp", w},
          {"with_truth", !o.truth.empty()}};
}

SimulateOpts simulate_from_json(const json& j) {
  ConfigReader r(j, "simulate config");
  SimulateOpts o;
  o.kind = r.get<std::string>("kind", o.kind);
  o.n = r.get<int>("n", o.n);
  o.dims = r.get<int>("dims", o.dims);
  o.steps = r.get<int>("steps", o.steps);
  o.clusters = r.get<int>("clusters", o.clusters);
  o.noise = r.get<double>("noise", o.noise);
  o.seed = r.get<std::uint64_t>("seed", o.seed);
  if (const json* w = r.object("warp")) {
    ConfigReader rw(*w, "simulate warp config");
    o.warp = true;
    o.warp_knots = rw.get<int>("knots", o.warp_knots);
    o.warp_ratio = rw.get<double>("ratio", o.warp_ratio);
    rw.finish();
  }
  if (r.get<bool>("with_truth", false)) o.truth = "?";  // filled in by the caller
  r.finish();
  return o;
}

std::vector<std::string> run_simulate(SimulateOpts& o) {
  faeclust::SimSpec spec;
  spec.kind = faeclust::sim_kind_from_string(o.kind);
  spec.n_samples = o.n;
  spec.n_dims = o.dims;
  spec.n_steps = o.steps;
  spec.n_clusters = o.clusters;
  spec.noise_sigma = o.noise;
  spec.seed = o.seed;
  spec = faeclust::resolve(spec);
  // Record the per-kind defaults the run actually used.
  o.n = spec.n_samples;
  o.dims = spec.n_dims;
  o.steps = spec.n_steps;
  o.clusters = spec.n_clusters;

  faeclust::SimResult res;
  if (o.warp) {
    faeclust::WarpSpec ws;
    ws.n_knots = o.warp_knots;
    ws.max_speed_ratio = o.warp_ratio;
    ws.seed = o.seed;
    res = faeclust::generate(spec, ws);
  } else {
    res = faeclust::generate(spec);
  }
  faeclust::write_long_csv(o.out, res.paths);
  std::vector<std::string> artifacts = {o.out};
  if (!o.truth.empty()) {
    std::vector<std::int64_t> ids(res.paths.size());
    for (std::size_t i = 0; i < res.paths.size(); ++i) ids[i] = res.paths[i].subject_id;
    faeclust::write_label_csv(o.truth, ids, res.labels);
    artifacts.push_back(o.truth);
  }
  log_info("simulated " + std::to_string(spec.n_samples) + " " + o.kind + " subjects (" +
           std::to_string(spec.n_clusters) + " clusters)");
  return artifacts;
}

// ---------------------------------------------------------------------------
// smooth

struct SmoothOpts {
  std::string data;
  std::string manifest;  // empty keeps the defaults
  faeclust::DatasetManifest resolved;
  std::string out;
  std::string values_out;
  int grid = 200;
  std::uint64_t seed = 1;
  int threads = 0;
};

json to_json(const SmoothOpts& o) {
  return {{"data", absolute_path(o.data)},
          {"dataset_manifest", faeclust::to_json(o.resolved)},
          {"grid", o.grid},
          {"seed", o.seed}};
}

SmoothOpts smooth_from_json(const json& j) {
  ConfigReader r(j, "smooth config");
  SmoothOpts o;
  o.data = r.get<std::string>("data", "");
  if (const json* m = r.object("dataset_manifest")) o.resolved = faeclust::manifest_from_json(*m);
  o.grid = r.get<int>("grid", o.grid);
  o.seed = r.get<std::uint64_t>("seed", o.seed);
  r.finish();
  return o;
}

std::vector<std::string> run_smooth(SmoothOpts& o) {
  if (!o.manifest.empty()) o.resolved = faeclust::read_manifest(o.manifest);
  if (o.grid < 2) throw ConfigError("--grid must be at least 2");
  std::vector<faeclust::SamplePath> paths = faeclust::read_long_csv(o.data);
  faeclust::FunctionalDataset data = faeclust::dataset_from_manifest(paths, o.resolved);
  faeclust::write_coeff_csv(o.out, data);
  std::vector<std::string> artifacts = {o.out};
  if (!o.values_out.empty()) {
    Eigen::VectorXd ts = Eigen::VectorXd::LinSpaced(o.grid, o.resolved.a, o.resolved.b);
    std::vector<faeclust::SamplePath> fitted(data.size());
    for (int i = 0; i < data.size(); ++i) {
      fitted[i].subject_id = data.subject_ids[i];
      fitted[i].times = ts;
      fitted[i].values = data.evaluate(i, ts).transpose();
    }
    faeclust::write_long_csv(o.values_out, fitted);
    artifacts.push_back(o.values_out);
  }
  log_info("smoothed " + std::to_string(data.size()) + " subjects onto " +
           std::to_string(o.resolved.m) + " basis functions");
  return artifacts;
}

// ---------------------------------------------------------------------------
// distances

struct DistancesOpts {
  std::string data;
  std::string manifest;
  faeclust::DatasetManifest resolved;
  std::string metric = "dtw-fast";
  int grid = 64;
  int radius = 4;
  std::string out;
  std::string similarity;
  std::string neighborhood = "log2";
  int m = 0;
  bool raw_exp = false;
  std::uint64_t seed = 1;
  int threads = 0;
};

json to_json(const DistancesOpts& o) {
  return {{"data", absolute_path(o.data)},
          {"dataset_manifest", faeclust::to_json(o.resolved)},
          {"metric", o.metric},
          {"grid", o.grid},
          {"radius", o.radius},
          {"neighborhood", o.neighborhood},
          {"m", o.m},
          {"raw_exp", o.raw_exp},
          {"seed", o.seed}};
}

DistancesOpts distances_from_json(const json& j) {
  ConfigReader r(j, "distances config");
  DistancesOpts o;
  o.data = r.get<std::string>("data", "");
  if (const json* m = r.object("dataset_manifest")) o.resolved = faeclust::manifest_from_json(*m);
  o.metric = r.get<std::string>("metric", o.metric);
  o.grid = r.get<int>("grid", o.grid);
  o.radius = r.get<int>("radius", o.radius);
  o.neighborhood = r.get<std::string>("neighborhood", o.neighborhood);
  o.m = r.get<int>("m", o.m);
  o.raw_exp = r.get<bool>("raw_exp", o.raw_exp);
  o.seed = r.get<std::uint64_t>("seed", o.seed);
  r.finish();
  return o;
}

std::vector<std::string> run_distances(DistancesOpts& o) {
  if (!o.manifest.empty()) o.resolved = faeclust::read_manifest(o.manifest);
  faeclust::Metric metric = faeclust::metric_from_string(o.metric);
  faeclust::NeighborhoodRule rule = faeclust::neighborhood_rule_from_string(o.neighborhood);
  if (o.grid < 2) throw ConfigError("--grid must be at least 2");

  std::vector<faeclust::SamplePath> paths = faeclust::read_long_csv(o.data);
  faeclust::FunctionalDataset data = faeclust::dataset_from_manifest(paths, o.resolved);
  Eigen::MatrixXd dist = faeclust::distance_matrix(data, metric, o.grid, o.radius,
                                                   faeclust::resolve_threads(o.threads));
  faeclust::write_distance_csv(o.out, dist);
  std::vector<std::string> artifacts = {o.out};
  if (!o.similarity.empty()) {
    int m = o.m > 0 ? o.m : faeclust::neighborhood_size(dist, rule);
    m = std::min(m, data.size() - 1);
    faeclust::SimilarityGraph graph = faeclust::build_similarity_graph(dist, m, !o.raw_exp);
    faeclust::write_similarity_csv(o.similarity, graph);
    artifacts.push_back(o.similarity);
    log_info("similarity graph: m=" + std::to_string(m) + " edges=" +
             std::to_string(graph.edges.size()));
  }
  return artifacts;
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
  std::string data;
  std::string manifest, net, fitcfg;
  std::string initial_labels;
  std::string out;
  faeclust::DatasetManifest resolved_manifest;
  faeclust::FitConfig resolved_cfg;
  std::uint64_t seed = 0;  // 0 keeps the config-file seeds
  int threads = 0;
};

json to_json(const FitOpts& o) {
  return {{"data", absolute_path(o.data)},
          {"dataset_manifest", faeclust::to_json(o.resolved_manifest)},
          {"net", faeclust::to_json(o.resolved_cfg.net)},
          {"fit", faeclust::to_json(o.resolved_cfg)},
          {"initial_labels",
           o.initial_labels.empty() ? json() : json(absolute_path(o.initial_labels))}};
}

FitOpts fit_from_json(const json& j) {
  ConfigReader r(j, "fit config");
  FitOpts o;
  o.data = r.get<std::string>("data", "");
  if (const json* m = r.object("dataset_manifest"))
    o.resolved_manifest = faeclust::manifest_from_json(*m);
  faeclust::NetConfig net;
  if (const json* n = r.object("net")) net = faeclust::net_config_from_json(*n);
  if (const json* f = r.object("fit"))
    o.resolved_cfg = faeclust::fit_config_from_json(*f, net);
  else
    o.resolved_cfg.net = net;
  o.initial_labels = r.get<std::string>("initial_labels", "");
  r.finish();
  return o;
}

// Initial labels arrive keyed by subject id; fit wants them in dataset order.
std::vector<int> align_labels(const faeclust::LabelTable& table,
                              const std::vector<std::int64_t>& subject_ids) {
  std::unordered_map<std::int64_t, int> by_id;
  for (std::size_t i = 0; i < table.subject_ids.size(); ++i)
    by_id[table.subject_ids[i]] = table.labels[i];
  std::vector<int> labels(subject_ids.size());
  for (std::size_t i = 0; i < subject_ids.size(); ++i) {
    auto it = by_id.find(subject_ids[i]);
    if (it == by_id.end())
      throw DataError("initial labels are missing subject " + std::to_string(subject_ids[i]));
    labels[i] = it->second;
  }
  return labels;
}

std::vector<std::string> run_fit(FitOpts& o, json* phase_seconds) {
  // Resolve configs from files unless replay already injected them.
  if (!o.manifest.empty()) o.resolved_manifest = faeclust::read_manifest(o.manifest);
  if (!o.net.empty()) o.resolved_cfg.net = faeclust::read_net_config(o.net);
  if (!o.fitcfg.empty()) {
    faeclust::NetConfig net = o.resolved_cfg.net;
    o.resolved_cfg = faeclust::read_fit_config(o.fitcfg, net);
  }
  if (o.seed != 0) {
    o.resolved_cfg.seed = o.seed;
    o.resolved_cfg.net.seed = o.seed;
  }
  if (o.threads != 0) o.resolved_cfg.threads = o.threads;

  std::vector<faeclust::SamplePath> paths = faeclust::read_long_csv(o.data);
  faeclust::FunctionalDataset data = faeclust::dataset_from_manifest(paths, o.resolved_manifest);

  std::vector<int> initial;
  if (!o.initial_labels.empty())
    initial = align_labels(faeclust::read_label_csv(o.initial_labels), data.subject_ids);

  ensure_directory(o.out);
  faeclust::FitResult res = faeclust::fit(data, o.resolved_cfg, initial);
  const faeclust::FitReport& rep = res.report;
  log_info("fit: k=" + std::to_string(rep.k) + " loops=" + std::to_string(rep.loops.size()) +
           (rep.converged ? " (converged)" : " (loop budget reached)"));

  std::filesystem::path dir(o.out);
  std::string labels_path = (dir / "labels.csv").string();
  std::string embedding_path = (dir / "embedding.csv").string();
  std::string report_path = (dir / "report.json").string();
  std::string checkpoint_path = (dir / "checkpoint.json").string();
  faeclust::write_label_csv(labels_path, data.subject_ids, rep.labels);
  faeclust::write_embedding_csv(embedding_path, data.subject_ids, rep.embedding);
  faeclust::write_json_atomic(report_path, faeclust::report_json(rep));
  faeclust::save_checkpoint(res.net, checkpoint_path);

  *phase_seconds = {{"graph", rep.graph_seconds},
                    {"pretrain", rep.pretrain_seconds},
                    {"embed", rep.embed_seconds},
                    {"cluster", rep.cluster_seconds},
                    {"finetune", rep.finetune_seconds}};
  return {labels_path, embedding_path, report_path, checkpoint_path};
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterOpts {
  std::string embedding;
  std::string graph;
  int kmin = 2, kmax = 10, k_fixed = 0;
  std::string rule = "silhouette";
  bool verify_fista = false;
  std::string out;
  std::uint64_t seed = 1;
  int threads = 0;
};

json to_json(const ClusterOpts& o) {
  return {{"embedding", absolute_path(o.embedding)},
          {"graph", absolute_path(o.graph)},
          {"kmin", o.kmin},
          {"kmax", o.kmax},
          {"k_fixed", o.k_fixed},
          {"rule", o.rule},
          {"verify_fista", o.verify_fista},
          {"seed", o.seed}};
}

ClusterOpts cluster_from_json(const json& j) {
  ConfigReader r(j, "cluster config");
  ClusterOpts o;
  o.embedding = r.get<std::string>("embedding", "");
  o.graph = r.get<std::string>("graph", "");
  o.kmin = r.get<int>("kmin", o.kmin);
  o.kmax = r.get<int>("kmax", o.kmax);
  o.k_fixed = r.get<int>("k_fixed", o.k_fixed);
  o.rule = r.get<std::string>("rule", o.rule);
  o.verify_fista = r.get<bool>("verify_fista", o.verify_fista);
  o.seed = r.get<std::uint64_t>("seed", o.seed);
  r.finish();
  return o;
}

std::vector<std::string> run_cluster(ClusterOpts& o) {
  if (o.rule != "silhouette" && o.rule != "persistence")
    throw ConfigError("--rule must be silhouette or persistence");
  if (o.kmin < 1 || o.kmin > o.kmax) throw ConfigError("need 1 <= kmin <= kmax");
  faeclust::EmbeddingTable table = faeclust::read_embedding_csv(o.embedding);
  faeclust::SimilarityGraph graph = faeclust::read_similarity_csv(o.graph);
  const int n = static_cast<int>(table.values.cols());
  if (graph.n != n)
    throw DataError("embedding has " + std::to_string(n) + " subjects but the graph has " +
                    std::to_string(graph.n));
  const int s = static_cast<int>(table.values.rows());
  int threads = faeclust::resolve_threads(o.threads);

  std::vector<faeclust::CentroidPath> cpaths(s);
  faeclust::parallel_for(static_cast<std::size_t>(s), threads, [&](std::size_t d) {
    cpaths[d] = faeclust::homotopy_path(table.values.row(static_cast<int>(d)).transpose(), graph);
  });
  faeclust::MergeHierarchy h = faeclust::joint_hierarchy(cpaths);

  json fista;
  if (o.verify_fista) {
    double max_dev = 0.0;
    int splits = 0;
    for (int d = 0; d < s; ++d) {
      faeclust::PathVerification v = faeclust::verify_against_fista(
          table.values.row(d).transpose(), graph, cpaths[d]);
      max_dev = std::max(max_dev, v.max_deviation);
      splits += v.suspected_splits;
    }
    fista = {{"max_deviation", max_dev}, {"suspected_splits", splits}};
    log_info("fista check: max deviation " + std::to_string(max_dev) + ", " +
             std::to_string(splits) + " suspected splits");
  }

  faeclust::ClusterResult res =
      o.rule == "persistence"
          ? faeclust::select_persistent_partition(h, table.values, o.kmin, o.kmax, o.k_fixed)
          : faeclust::select_partition(h, table.values, o.kmin, std::min(o.kmax, n - 1),
                                       o.k_fixed);
  log_info("selected k=" + std::to_string(res.k) + " by " + o.rule);

  ensure_directory(o.out);
  std::filesystem::path dir(o.out);
  std::string labels_path = (dir / "labels.csv").string();
  std::string hierarchy_path = (dir / "hierarchy.json").string();
  std::string scores_path = (dir / "scores.json").string();

  faeclust::write_label_csv(labels_path, table.subject_ids, res.labels);

  json merges = json::array();
  for (const auto& step : h.steps)
    merges.push_back({{"lambda", step.lambda}, {"a", step.a}, {"b", step.b}});
  faeclust::write_json_atomic(hierarchy_path, {{"n", h.n}, {"merges", merges}});

  json per_k = json::object();
  for (const auto& [k, sc] : res.scores)
    per_k[std::to_string(k)] = {{"silhouette", sc.silhouette},
                                {"davies_bouldin", sc.davies_bouldin},
                                {"calinski_harabasz", sc.calinski_harabasz}};
  json scores = {{"selected_k", res.k}, {"rule", o.rule}, {"scores", per_k}};
  if (!fista.is_null()) scores["fista_verification"] = fista;
  faeclust::write_json_atomic(scores_path, scores);

  return {labels_path, hierarchy_path, scores_path};
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string pred, truth;
};

void run_evaluate(const EvaluateOpts& o) {
  faeclust::LabelTable pred = faeclust::read_label_csv(o.pred);
  faeclust::LabelTable truth = faeclust::read_label_csv(o.truth);
  if (pred.subject_ids.size() != truth.subject_ids.size())
    throw DataError("prediction and truth differ in subject count");
  std::unordered_map<std::int64_t, int> truth_by_id;
  for (std::size_t i = 0; i < truth.subject_ids.size(); ++i)
    truth_by_id[truth.subject_ids[i]] = truth.labels[i];
  std::vector<int> aligned(pred.subject_ids.size());
  for (std::size_t i = 0; i < pred.subject_ids.size(); ++i) {
    auto it = truth_by_id.find(pred.subject_ids[i]);
    if (it == truth_by_id.end())
      throw DataError("truth labels are missing subject " +
                      std::to_string(pred.subject_ids[i]));
    aligned[i] = it->second;
  }
  json out = {{"ami", faeclust::adjusted_mutual_info(pred.labels, aligned)},
              {"ari", faeclust::adjusted_rand_index(pred.labels, aligned)}};
  std::printf("%s\n", out.dump().c_str());
}

// ---------------------------------------------------------------------------
// run manifest plumbing

// The manifest travels with the artifacts: <out>/run_manifest.json for
// directory outputs, <out>.manifest.json next to single-file outputs.
std::string manifest_path_for(const std::string& out, bool directory) {
  return directory ? (std::filesystem::path(out) / "run_manifest.json").string()
                   : out + ".manifest.json";
}

void write_run_manifest(const std::string& path, const std::string& subcommand,
                        std::uint64_t seed, int threads, const json& config,
                        const std::vector<std::string>& artifacts, double wall_seconds,
                        const json& phase_seconds) {
  json artifact_list = json::array();
  for (const std::string& a : artifacts) artifact_list.push_back(absolute_path(a));
  json manifest = {{"subcommand", subcommand},
                   {"version", FAECLUST_VERSION},
                   {"build", FAECLUST_BUILD_HASH},
                   {"seed", seed},
                   {"threads", threads},
                   {"config", config},
                   {"artifacts", artifact_list},
                   {"wall_time_seconds", wall_seconds}};
  if (!phase_seconds.is_null()) manifest["phase_seconds"] = phase_seconds;
  faeclust::write_json_atomic(path, manifest);
}

struct ReplayOpts {
  std::string manifest;
  std::string out;
  int threads = 0;
};

// Forward declaration: replay re-enters the dispatcher below.
int run_recorded(const std::string& subcommand, const json& config, const std::string& out,
                 int threads);

int run_replay(const ReplayOpts& o) {
  json manifest = faeclust::read_json(o.manifest);
  if (!manifest.is_object() || !manifest.contains("subcommand") || !manifest.contains("config"))
    throw ConfigError("run manifest needs 'subcommand' and 'config'");
  std::string sub = manifest["subcommand"].get<std::string>();
  log_info("replaying " + sub + " from " + o.manifest);
  return run_recorded(sub, manifest["config"], o.out, o.threads);
}

// The seed the manifest should record, read after the run so overrides and
// resolved config files are reflected.
std::uint64_t opts_seed(const SimulateOpts& o) { return o.seed; }
std::uint64_t opts_seed(const SmoothOpts& o) { return o.seed; }
std::uint64_t opts_seed(const DistancesOpts& o) { return o.seed; }
std::uint64_t opts_seed(const FitOpts& o) { return o.resolved_cfg.seed; }
std::uint64_t opts_seed(const ClusterOpts& o) { return o.seed; }

// Executes one subcommand from a resolved config snapshot, timing it and
// writing its own run manifest; shared by the live CLI path and replay.
template <typename Opts, typename Runner>
int timed_run(const std::string& name, Opts& opts, bool dir_out, const std::string& out,
              int threads, Runner runner) {
  auto t0 = std::chrono::steady_clock::now();
  json phase;
  std::vector<std::string> artifacts = runner(opts, &phase);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(manifest_path_for(out, dir_out), name, opts_seed(opts), threads,
                     to_json(opts), artifacts, wall, phase);
  return 0;
}

int run_recorded(const std::string& subcommand, const json& config, const std::string& out,
                 int threads) {
  if (subcommand == "simulate") {
    SimulateOpts o = simulate_from_json(config);
    o.out = out;
    if (!o.truth.empty()) o.truth = out + ".truth.csv";
    o.threads = threads;
    return timed_run("simulate", o, false, o.out, threads,
                     [](SimulateOpts& o, json*) { return run_simulate(o); });
  }
  if (subcommand == "smooth") {
    SmoothOpts o = smooth_from_json(config);
    o.out = out;
    o.threads = threads;
    return timed_run("smooth", o, false, o.out, threads,
                     [](SmoothOpts& o, json*) { return run_smooth(o); });
  }
  if (subcommand == "distances") {
    DistancesOpts o = distances_from_json(config);
    o.out = out;
    o.threads = threads;
    return timed_run("distances", o, false, o.out, threads,
                     [](DistancesOpts& o, json*) { return run_distances(o); });
  }
  if (subcommand == "fit") {
    FitOpts o = fit_from_json(config);
    o.out = out;
    o.threads = threads;
    return timed_run("fit", o, true, o.out, threads,
                     [](FitOpts& o, json* phase) { return run_fit(o, phase); });
  }
  if (subcommand == "cluster") {
    ClusterOpts o = cluster_from_json(config);
    o.out = out;
    o.threads = threads;
    return timed_run("cluster", o, true, o.out, threads,
                     [](ClusterOpts& o, json*) { return run_cluster(o); });
  }
  throw ConfigError("manifest subcommand '" + subcommand + "' is not replayable");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"functional-data clustering toolkit"};
  app.set_version_flag("--version", version_line());
  app.require_subcommand(1);

  SimulateOpts sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "generate a simulated functional dataset");
  c_sim->add_option("--kind", sim.kind,
                    "generator: hypersphere, hyperbolic, swissroll, lorenz, pendulum");
  c_sim->add_option("--n", sim.n, "sample count (-1 = generator default)");
  c_sim->add_option("--dims", sim.dims, "output dimensions (-1 = generator default)");
  c_sim->add_option("--steps", sim.steps, "observation times (-1 = generator default)");
  c_sim->add_option("--clusters", sim.clusters, "cluster count (-1 = generator default)");
  c_sim->add_option("--noise", sim.noise, "observation noise standard deviation");
  c_sim->add_option("--seed", sim.seed, "random seed");
  c_sim->add_flag("--warp", sim.warp, "apply a random monotone time warp per subject");
  c_sim->add_option("--warp-knots", sim.warp_knots, "warp interpolation knots");
  c_sim->add_option("--warp-ratio", sim.warp_ratio, "warp derivative bound");
  c_sim->add_option("--out", sim.out, "output observation CSV")->required();
  c_sim->add_option("--truth", sim.truth, "output true-label CSV");
  c_sim->add_option("--threads", sim.threads, "worker threads (0 = FAECLUST_THREADS or 1)");

  SmoothOpts smo;
  CLI::App* c_smo = app.add_subcommand("smooth", "fit basis expansions to raw observations");
  c_smo->add_option("--data", smo.data, "input observation CSV")->required();
  c_smo->add_option("--manifest", smo.manifest, "dataset manifest JSON");
  c_smo->add_option("--out", smo.out, "output coefficient CSV")->required();
  c_smo->add_option("--values-out", smo.values_out, "optional smoothed-curve CSV");
  c_smo->add_option("--grid", smo.grid, "grid size for --values-out");
  c_smo->add_option("--seed", smo.seed, "random seed (recorded; smoothing is deterministic)");
  c_smo->add_option("--threads", smo.threads, "worker threads (0 = FAECLUST_THREADS or 1)");

  DistancesOpts dis;
  CLI::App* c_dis = app.add_subcommand("distances", "pairwise functional distances");
  c_dis->add_option("--data", dis.data, "input observation CSV")->required();
  c_dis->add_option("--manifest", dis.manifest, "dataset manifest JSON");
  c_dis->add_option("--metric", dis.metric, "l2, srv, dtw-fast or dtw-ultra");
  c_dis->add_option("--grid", dis.grid, "evaluation grid size");
  c_dis->add_option("--radius", dis.radius, "dtw refinement radius");
  c_dis->add_option("--out", dis.out, "output distance CSV (i,j,d upper triangle)")->required();
  c_dis->add_option("--similarity", dis.similarity, "optional similarity-graph CSV (i,j,s)");
  c_dis->add_option("--neighborhood", dis.neighborhood,
                    "graph neighborhood rule: log2, knee or connectivity");
  c_dis->add_option("--m", dis.m, "neighbors per subject (0 = use the rule)");
  c_dis->add_flag("--raw-exp", dis.raw_exp, "exp(-d) weights instead of exp(-d/median)");
  c_dis->add_option("--seed", dis.seed, "random seed (recorded; distances are deterministic)");
  c_dis->add_option("--threads", dis.threads, "worker threads (0 = FAECLUST_THREADS or 1)");

  FitOpts fit;
  CLI::App* c_fit = app.add_subcommand("fit", "train the autoencoder and cluster the embedding");
  c_fit->add_option("--data", fit.data, "input observation CSV")->required();
  c_fit->add_option("--manifest", fit.manifest, "dataset manifest JSON");
  c_fit->add_option("--net", fit.net, "network config JSON");
  c_fit->add_option("--fitcfg", fit.fitcfg, "pipeline config JSON");
  c_fit->add_option("--initial-labels", fit.initial_labels, "warm-start label CSV");
  c_fit->add_option("--out", fit.out, "output directory")->required();
  c_fit->add_option("--seed", fit.seed, "overrides the training and init seeds (0 = keep)");
  c_fit->add_option("--threads", fit.threads, "worker threads (0 = config file value)");

  ClusterOpts clu;
  CLI::App* c_clu = app.add_subcommand("cluster", "convex clustering of a stored embedding");
  c_clu->add_option("--embedding", clu.embedding, "embedding CSV (subject_id,z0,...)")
      ->required();
  c_clu->add_option("--graph", clu.graph, "similarity CSV (i,j,s)")->required();
  c_clu->add_option("--kmin", clu.kmin, "smallest cluster count considered");
  c_clu->add_option("--kmax", clu.kmax, "largest cluster count considered");
  c_clu->add_option("--k-fixed", clu.k_fixed, "bypass selection with this cluster count");
  c_clu->add_option("--rule", clu.rule, "selection rule: silhouette or persistence");
  c_clu->add_flag("--verify-fista", clu.verify_fista,
                  "cross-check the homotopy path against the FISTA solver");
  c_clu->add_option("--out", clu.out, "output directory")->required();
  c_clu->add_option("--seed", clu.seed, "random seed (recorded; clustering is deterministic)");
  c_clu->add_option("--threads", clu.threads, "worker threads (0 = FAECLUST_THREADS or 1)");

  EvaluateOpts eva;
  CLI::App* c_eva = app.add_subcommand("evaluate", "compare predicted labels against the truth");
  c_eva->add_option("--pred", eva.pred, "predicted label CSV")->required();
  c_eva->add_option("--truth", eva.truth, "true label CSV")->required();

  ReplayOpts rep;
  CLI::App* c_rep = app.add_subcommand("replay", "re-execute a recorded run manifest");
  c_rep->add_option("--manifest", rep.manifest, "run manifest JSON")->required();
  c_rep->add_option("--out", rep.out, "new output path")->required();
  c_rep->add_option("--threads", rep.threads, "worker threads (0 = FAECLUST_THREADS or 1)");

  try {
    app.parse(argc, argv);
    if (*c_sim)
      return timed_run("simulate", sim, false, sim.out, sim.threads,
                       [](SimulateOpts& o, nlohmann::json*) { return run_simulate(o); });
    if (*c_smo)
      return timed_run("smooth", smo, false, smo.out, smo.threads,
                       [](SmoothOpts& o, nlohmann::json*) { return run_smooth(o); });
    if (*c_dis)
      return timed_run("distances", dis, false, dis.out, dis.threads,
                       [](DistancesOpts& o, nlohmann::json*) { return run_distances(o); });
    if (*c_fit)
      return timed_run("fit", fit, true, fit.out, fit.threads,
                       [](FitOpts& o, nlohmann::json* phase) { return run_fit(o, phase); });
    if (*c_clu)
      return timed_run("cluster", clu, true, clu.out, clu.threads,
                       [](ClusterOpts& o, nlohmann::json*) { return run_cluster(o); });
    if (*c_eva) {
      run_evaluate(eva);
      return 0;
    }
    if (*c_rep) return run_replay(rep);
    return 1;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(faeclust::ExitCode::usage);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(faeclust::ExitCode::usage);
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(faeclust::ExitCode::data);
  } catch (const faeclust::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(faeclust::ExitCode::numeric);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(faeclust::ExitCode::numeric);
  }
}
