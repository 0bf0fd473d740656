#include "faeclust/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>
#include <system_error>

#include "faeclust/errors.hpp"

namespace faeclust {

namespace {

// Shortest round-trip decimal form, the same convention nlohmann uses, so
// CSV and JSON artifacts agree and reload bit for bit.
std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view s, const std::string& path, std::size_t lineno) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(path + ":" + std::to_string(lineno) + ": '" + std::string(s) +
                    "' is not a number");
  return v;
}

std::int64_t parse_int(std::string_view s, const std::string& path, std::size_t lineno) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(path + ":" + std::to_string(lineno) + ": '" + std::string(s) +
                    "' is not an integer");
  return v;
}

// Reads non-empty lines, hands (fields, line number) to `row`, and insists on
// the exact header.
template <typename RowFn>
void for_each_csv_row(const std::string& path, const char* header, RowFn row) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  std::vector<std::string_view> expected = split_fields(header);
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    std::vector<std::string_view> fields = split_fields(sv);
    if (!saw_header) {
      if (fields != expected)
        throw DataError(path + ": expected header '" + header + "', got '" +
                        std::string(sv) + "'");
      saw_header = true;
      continue;
    }
    row(fields, lineno);
  }
  if (!saw_header) throw DataError(path + ": empty file, expected header '" + header + "'");
}

}  // namespace

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad()) throw DataError("read failure on " + path);
  return out.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << text;
    out.flush();
    if (!out) throw DataError("short write on " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot move " + tmp + " into place");
}

nlohmann::json read_json(const std::string& path) {
  std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + " is not valid JSON: " + e.what());
  }
}

void write_json_atomic(const std::string& path, const nlohmann::json& j) {
  write_text_atomic(path, j.dump(1) + "\n");
}

std::vector<SamplePath> read_long_csv(const std::string& path) {
  struct Stream {
    std::vector<double> times, values;
  };
  // Per subject: per dimension, the (t, value) stream in file order.
  std::vector<std::int64_t> order;
  std::map<std::int64_t, std::map<int, Stream>> subjects;

  for_each_csv_row(path, "subject_id,dim,t,value", [&](const auto& f, std::size_t lineno) {
    if (f.size() != 4)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    std::int64_t sid = parse_int(f[0], path, lineno);
    std::int64_t dim = parse_int(f[1], path, lineno);
    double t = parse_double(f[2], path, lineno);
    double v = parse_double(f[3], path, lineno);
    if (dim < 0) throw DataError(path + ":" + std::to_string(lineno) + ": negative dim");
    auto [it, fresh] = subjects.try_emplace(sid);
    if (fresh) order.push_back(sid);
    Stream& st = it->second[static_cast<int>(dim)];
    if (!st.times.empty() && t <= st.times.back())
      throw DataError(path + ": subject " + std::to_string(sid) +
                      " has non-monotone times (line " + std::to_string(lineno) + ")");
    st.times.push_back(t);
    st.values.push_back(v);
  });
  if (order.empty()) throw DataError(path + ": no observation rows");

  std::vector<SamplePath> out;
  out.reserve(order.size());
  for (std::int64_t sid : order) {
    const auto& dims = subjects[sid];
    int p = static_cast<int>(dims.size());
    for (int d = 0; d < p; ++d)
      if (!dims.count(d))
        throw DataError(path + ": subject " + std::to_string(sid) + " is missing dim " +
                        std::to_string(d));
    const Stream& first = dims.at(0);
    int r = static_cast<int>(first.times.size());
    SamplePath sp;
    sp.subject_id = sid;
    sp.times = Eigen::Map<const Eigen::VectorXd>(first.times.data(), r);
    sp.values.resize(r, p);
    for (int d = 0; d < p; ++d) {
      const Stream& st = dims.at(d);
      if (static_cast<int>(st.times.size()) != r ||
          !std::equal(st.times.begin(), st.times.end(), first.times.begin()))
        throw DataError(path + ": subject " + std::to_string(sid) +
                        " has mismatched times across dims");
      sp.values.col(d) = Eigen::Map<const Eigen::VectorXd>(st.values.data(), r);
    }
    out.push_back(std::move(sp));
  }
  return out;
}

void write_long_csv(const std::string& path, const std::vector<SamplePath>& paths) {
  std::string text = "subject_id,dim,t,value\n";
  for (const SamplePath& sp : paths)
    for (int d = 0; d < sp.values.cols(); ++d)
      for (int r = 0; r < sp.times.size(); ++r)
        text += std::to_string(sp.subject_id) + "," + std::to_string(d) + "," +
                format_double(sp.times[r]) + "," + format_double(sp.values(r, d)) + "\n";
  write_text_atomic(path, text);
}

LabelTable read_label_csv(const std::string& path) {
  LabelTable t;
  for_each_csv_row(path, "subject_id,label", [&](const auto& f, std::size_t lineno) {
    if (f.size() != 2)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 2 fields");
    t.subject_ids.push_back(parse_int(f[0], path, lineno));
    t.labels.push_back(static_cast<int>(parse_int(f[1], path, lineno)));
  });
  return t;
}

void write_label_csv(const std::string& path, const std::vector<std::int64_t>& subject_ids,
                     const std::vector<int>& labels) {
  if (subject_ids.size() != labels.size())
    throw DataError("label table mismatch: " + std::to_string(subject_ids.size()) +
                    " ids vs " + std::to_string(labels.size()) + " labels");
  std::string text = "subject_id,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    text += std::to_string(subject_ids[i]) + "," + std::to_string(labels[i]) + "\n";
  write_text_atomic(path, text);
}

EmbeddingTable read_embedding_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  std::vector<std::string_view> head = split_fields(trim(line));
  if (head.size() < 2 || head[0] != "subject_id")
    throw DataError(path + ": expected header subject_id,z0,...");
  int s = static_cast<int>(head.size()) - 1;
  for (int k = 0; k < s; ++k)
    if (head[k + 1] != "z" + std::to_string(k))
      throw DataError(path + ": expected column z" + std::to_string(k));

  EmbeddingTable t;
  std::vector<double> flat;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    std::vector<std::string_view> f = split_fields(sv);
    if (static_cast<int>(f.size()) != s + 1)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(s + 1) + " fields");
    t.subject_ids.push_back(parse_int(f[0], path, lineno));
    for (int k = 0; k < s; ++k) flat.push_back(parse_double(f[k + 1], path, lineno));
  }
  int n = static_cast<int>(t.subject_ids.size());
  if (n == 0) throw DataError(path + ": no embedding rows");
  t.values = Eigen::Map<const Eigen::MatrixXd>(flat.data(), s, n);
  return t;
}

void write_embedding_csv(const std::string& path, const std::vector<std::int64_t>& subject_ids,
                         const Eigen::MatrixXd& values) {
  if (static_cast<int>(subject_ids.size()) != values.cols())
    throw DataError("embedding has " + std::to_string(values.cols()) + " columns for " +
                    std::to_string(subject_ids.size()) + " subjects");
  std::string text = "subject_id";
  for (int k = 0; k < values.rows(); ++k) text += ",z" + std::to_string(k);
  text += "\n";
  for (int i = 0; i < values.cols(); ++i) {
    text += std::to_string(subject_ids[i]);
    for (int k = 0; k < values.rows(); ++k) text += "," + format_double(values(k, i));
    text += "\n";
  }
  write_text_atomic(path, text);
}

void write_coeff_csv(const std::string& path, const FunctionalDataset& data) {
  std::string text = "subject_id,dim";
  for (int c = 0; c < data.basis.size; ++c) text += ",c" + std::to_string(c);
  text += "\n";
  for (int i = 0; i < data.size(); ++i)
    for (int d = 0; d < data.dims(); ++d) {
      text += std::to_string(data.subject_ids[i]) + "," + std::to_string(d);
      for (int c = 0; c < data.basis.size; ++c)
        text += "," + format_double(data.coeffs[i](d, c));
      text += "\n";
    }
  write_text_atomic(path, text);
}

void write_distance_csv(const std::string& path, const Eigen::MatrixXd& dist) {
  std::string text = "i,j,d\n";
  for (int i = 0; i < dist.rows(); ++i)
    for (int j = i + 1; j < dist.cols(); ++j)
      text += std::to_string(i) + "," + std::to_string(j) + "," + format_double(dist(i, j)) +
              "\n";
  write_text_atomic(path, text);
}

Eigen::MatrixXd read_distance_csv(const std::string& path) {
  std::vector<std::array<double, 3>> rows;
  int n = 0;
  for_each_csv_row(path, "i,j,d", [&](const auto& f, std::size_t lineno) {
    if (f.size() != 3)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    int i = static_cast<int>(parse_int(f[0], path, lineno));
    int j = static_cast<int>(parse_int(f[1], path, lineno));
    double d = parse_double(f[2], path, lineno);
    if (i < 0 || j <= i)
      throw DataError(path + ":" + std::to_string(lineno) + ": need 0 <= i < j");
    rows.push_back({static_cast<double>(i), static_cast<double>(j), d});
    n = std::max(n, j + 1);
  });
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n, n);
  for (const auto& r : rows) {
    int i = static_cast<int>(r[0]), j = static_cast<int>(r[1]);
    dist(i, j) = dist(j, i) = r[2];
  }
  return dist;
}

void write_similarity_csv(const std::string& path, const SimilarityGraph& graph) {
  std::string text = "i,j,s\n";
  for (std::size_t e = 0; e < graph.edges.size(); ++e)
    text += std::to_string(graph.edges[e][0]) + "," + std::to_string(graph.edges[e][1]) +
            "," + format_double(graph.weights[e]) + "\n";
  write_text_atomic(path, text);
}

SimilarityGraph read_similarity_csv(const std::string& path) {
  SimilarityGraph g;
  for_each_csv_row(path, "i,j,s", [&](const auto& f, std::size_t lineno) {
    if (f.size() != 3)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    int i = static_cast<int>(parse_int(f[0], path, lineno));
    int j = static_cast<int>(parse_int(f[1], path, lineno));
    double s = parse_double(f[2], path, lineno);
    if (i < 0 || j <= i)
      throw DataError(path + ":" + std::to_string(lineno) + ": need 0 <= i < j");
    if (!(s > 0.0 && s <= 1.0))
      throw DataError(path + ":" + std::to_string(lineno) + ": similarity outside (0, 1]");
    g.edges.push_back({i, j});
    g.weights.push_back(s);
    g.n = std::max(g.n, j + 1);
  });
  return g;
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError(std::string(what) + " has unknown key '" + it.key() + "'");
  }
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(what) + " key '" + key + "' has the wrong type");
  }
}

}  // namespace

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"basis", "lambda_s", "standardize"}, "manifest");
  DatasetManifest m;
  if (j.contains("basis")) {
    const auto& jb = j.at("basis");
    reject_unknown_keys(jb, {"kind", "m", "degree", "domain"}, "manifest basis");
    std::string kind = to_string(m.kind);
    maybe_get(jb, "kind", kind, "manifest basis");
    m.kind = basis_kind_from_string(kind);
    maybe_get(jb, "m", m.m, "manifest basis");
    maybe_get(jb, "degree", m.degree, "manifest basis");
    if (jb.contains("domain")) {
      std::vector<double> dom;
      maybe_get(jb, "domain", dom, "manifest basis");
      if (dom.size() != 2 || !(dom[0] < dom[1]))
        throw ConfigError("manifest basis domain must be [a, b] with a < b");
      m.a = dom[0];
      m.b = dom[1];
    }
  }
  maybe_get(j, "lambda_s", m.lambda_s, "manifest");
  maybe_get(j, "standardize", m.standardize, "manifest");
  if (m.lambda_s < 0.0) throw ConfigError("manifest lambda_s must be nonnegative");
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"basis",
           {{"kind", to_string(m.kind)},
            {"m", m.m},
            {"degree", m.degree},
            {"domain", {m.a, m.b}}}},
          {"lambda_s", m.lambda_s},
          {"standardize", m.standardize}};
}

DatasetManifest read_manifest(const std::string& path) {
  return manifest_from_json(read_json(path));
}

FunctionalDataset dataset_from_manifest(const std::vector<SamplePath>& paths,
                                        const DatasetManifest& m) {
  BasisSystem basis = build_basis(m.kind, m.m, m.degree, m.a, m.b);
  FunctionalDataset data = smooth(paths, basis, m.lambda_s);
  if (m.standardize) data = standardize(data).data;
  return data;
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"layer_widths", "latent_dim", "activation", "net_basis_size", "tau",
                       "lambda_w", "lambda_c", "alpha", "beta", "batch_size", "epochs",
                       "seed"},
                      "network config");
  NetConfig c;
  maybe_get(j, "layer_widths", c.layer_widths, "network config");
  maybe_get(j, "latent_dim", c.latent_dim, "network config");
  maybe_get(j, "activation", c.activation, "network config");
  maybe_get(j, "net_basis_size", c.net_basis_size, "network config");
  maybe_get(j, "tau", c.tau, "network config");
  maybe_get(j, "lambda_w", c.lambda_w, "network config");
  maybe_get(j, "lambda_c", c.lambda_c, "network config");
  maybe_get(j, "alpha", c.alpha, "network config");
  maybe_get(j, "beta", c.beta, "network config");
  maybe_get(j, "batch_size", c.batch_size, "network config");
  maybe_get(j, "epochs", c.epochs, "network config");
  maybe_get(j, "seed", c.seed, "network config");
  // Only shape checks here; build_network validates the cross-field rules.
  if (c.layer_widths.size() != 7)
    throw ConfigError("network config layer_widths must list 7 widths");
  activation_from_string(c.activation);
  return c;
}

nlohmann::json to_json(const NetConfig& c) {
  return {{"layer_widths", c.layer_widths},
          {"latent_dim", c.latent_dim},
          {"activation", c.activation},
          {"net_basis_size", c.net_basis_size},
          {"tau", c.tau},
          {"lambda_w", c.lambda_w},
          {"lambda_c", c.lambda_c},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed}};
}

NetConfig read_net_config(const std::string& path) {
  return net_config_from_json(read_json(path));
}

FitConfig fit_config_from_json(const nlohmann::json& j, const NetConfig& net) {
  reject_unknown_keys(j,
                      {"pretrain_epochs", "finetune_epochs", "cluster_refresh_period",
                       "metric", "grid_n", "dtw_radius", "neighborhood", "m_nn", "raw_exp",
                       "k_min", "k_max", "k_fixed", "seed", "label_change_tol", "max_loops",
                       "threads"},
                      "fit config");
  FitConfig c;
  c.net = net;
  maybe_get(j, "pretrain_epochs", c.pretrain_epochs, "fit config");
  maybe_get(j, "finetune_epochs", c.finetune_epochs, "fit config");
  maybe_get(j, "cluster_refresh_period", c.cluster_refresh_period, "fit config");
  std::string metric = to_string(c.metric);
  maybe_get(j, "metric", metric, "fit config");
  c.metric = metric_from_string(metric);
  maybe_get(j, "grid_n", c.grid_n, "fit config");
  maybe_get(j, "dtw_radius", c.dtw_radius, "fit config");
  std::string hood = to_string(c.neighborhood);
  maybe_get(j, "neighborhood", hood, "fit config");
  c.neighborhood = neighborhood_rule_from_string(hood);
  maybe_get(j, "m_nn", c.m_nn, "fit config");
  maybe_get(j, "raw_exp", c.raw_exp, "fit config");
  maybe_get(j, "k_min", c.k_min, "fit config");
  maybe_get(j, "k_max", c.k_max, "fit config");
  maybe_get(j, "k_fixed", c.k_fixed, "fit config");
  maybe_get(j, "seed", c.seed, "fit config");
  maybe_get(j, "label_change_tol", c.label_change_tol, "fit config");
  maybe_get(j, "max_loops", c.max_loops, "fit config");
  maybe_get(j, "threads", c.threads, "fit config");
  if (c.pretrain_epochs < 0 || c.finetune_epochs < 0)
    throw ConfigError("fit config epochs must be nonnegative");
  if (c.cluster_refresh_period < 0)
    throw ConfigError("fit config cluster_refresh_period must be >= 1, or 0 for never");
  if (c.max_loops < 1) throw ConfigError("fit config max_loops must be >= 1");
  if (c.k_min < 1 || c.k_max < c.k_min)
    throw ConfigError("fit config needs 1 <= k_min <= k_max");
  return c;
}

nlohmann::json to_json(const FitConfig& c) {
  return {{"pretrain_epochs", c.pretrain_epochs},
          {"finetune_epochs", c.finetune_epochs},
          {"cluster_refresh_period", c.cluster_refresh_period},
          {"metric", to_string(c.metric)},
          {"grid_n", c.grid_n},
          {"dtw_radius", c.dtw_radius},
          {"neighborhood", to_string(c.neighborhood)},
          {"m_nn", c.m_nn},
          {"raw_exp", c.raw_exp},
          {"k_min", c.k_min},
          {"k_max", c.k_max},
          {"k_fixed", c.k_fixed},
          {"seed", c.seed},
          {"label_change_tol", c.label_change_tol},
          {"max_loops", c.max_loops},
          {"threads", c.threads}};
}

FitConfig read_fit_config(const std::string& path, const NetConfig& net) {
  return fit_config_from_json(read_json(path), net);
}

nlohmann::json report_json(const FitReport& report) {
  nlohmann::json loops = nlohmann::json::array();
  for (const LoopRecord& r : report.loops)
    loops.push_back({{"recon", r.recon},
                     {"weight_penalty", r.weight_penalty},
                     {"clustering", r.clustering},
                     {"fusion", r.fusion},
                     {"k", r.k},
                     {"label_change", r.label_change}});
  nlohmann::json embedding = nlohmann::json::array();
  for (int i = 0; i < report.embedding.cols(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < report.embedding.rows(); ++k) row.push_back(report.embedding(k, i));
    embedding.push_back(std::move(row));
  }
  return {{"loops", std::move(loops)},
          {"labels", report.labels},
          {"embedding", std::move(embedding)},
          {"k", report.k},
          {"m_nn", report.m_nn},
          {"converged", report.converged}};
}

}  // namespace faeclust
