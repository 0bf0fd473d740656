#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "faeclust/fdata.hpp"
#include "faeclust/metrics.hpp"
#include "faeclust/network.hpp"
#include "faeclust/pipeline.hpp"

namespace faeclust {

// Whole file as a string; DataError when unreadable.
std::string read_text(const std::string& path);

// Writes via a .tmp sibling and renames into place, so readers never observe
// a partially written file.
void write_text_atomic(const std::string& path, const std::string& text);

nlohmann::json read_json(const std::string& path);
void write_json_atomic(const std::string& path, const nlohmann::json& j);

/**
 * Long-format observation CSV with header "subject_id,dim,t,value". Rows may
 * arrive in any subject/dimension interleaving, but within one (subject,
 * dimension) stream the times must be strictly increasing (DataError naming
 * the subject otherwise) and every dimension of a subject must report the
 * same time sequence. Subjects keep their order of first appearance.
 */
std::vector<SamplePath> read_long_csv(const std::string& path);
void write_long_csv(const std::string& path, const std::vector<SamplePath>& paths);

struct LabelTable {
  std::vector<std::int64_t> subject_ids;
  std::vector<int> labels;
};

// Label CSV with header "subject_id,label".
LabelTable read_label_csv(const std::string& path);
void write_label_csv(const std::string& path, const std::vector<std::int64_t>& subject_ids,
                     const std::vector<int>& labels);

struct EmbeddingTable {
  std::vector<std::int64_t> subject_ids;
  Eigen::MatrixXd values;  // s x n, one column per subject
};

// Embedding CSV with header "subject_id,z0,...,z{s-1}".
EmbeddingTable read_embedding_csv(const std::string& path);
void write_embedding_csv(const std::string& path, const std::vector<std::int64_t>& subject_ids,
                         const Eigen::MatrixXd& values);

// Basis coefficient CSV with header "subject_id,dim,c0,...,c{m-1}".
void write_coeff_csv(const std::string& path, const FunctionalDataset& data);

// Upper-triangle distance CSV "i,j,d" (i < j).
void write_distance_csv(const std::string& path, const Eigen::MatrixXd& dist);
Eigen::MatrixXd read_distance_csv(const std::string& path);

// Similarity graph CSV "i,j,s" (i < j). The reader recovers n from the
// largest index; m_nn is not stored and reads back as 0.
void write_similarity_csv(const std::string& path, const SimilarityGraph& graph);
SimilarityGraph read_similarity_csv(const std::string& path);

// How a raw observation CSV becomes a FunctionalDataset.
struct DatasetManifest {
  BasisKind kind = BasisKind::bspline;
  int m = 20;
  int degree = 3;
  double a = 0.0, b = 1.0;
  double lambda_s = 1e-4;
  bool standardize = false;
};

// Schema {"basis": {"kind","m","degree","domain":[a,b]}, "lambda_s",
// "standardize"}; missing keys take defaults, unknown keys are ConfigErrors.
DatasetManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

// Smooths (and optionally standardizes) raw paths per the manifest.
FunctionalDataset dataset_from_manifest(const std::vector<SamplePath>& paths,
                                        const DatasetManifest& m);

// Network config JSON; same key set as the NetConfig struct, defaults for
// missing keys, unknown keys rejected.
NetConfig net_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetConfig& c);
NetConfig read_net_config(const std::string& path);

// Fit config JSON: pipeline keys only (the network config travels in its own
// file); defaults for missing keys, unknown keys rejected.
FitConfig fit_config_from_json(const nlohmann::json& j, const NetConfig& net);
nlohmann::json to_json(const FitConfig& c);
FitConfig read_fit_config(const std::string& path, const NetConfig& net);

// Deterministic report body: per-loop records, final labels and embedding.
// Wall times are excluded on purpose; they belong to the run manifest.
nlohmann::json report_json(const FitReport& report);

}  // namespace faeclust
