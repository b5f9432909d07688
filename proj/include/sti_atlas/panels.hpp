#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sti_atlas/embed.hpp"

namespace atlas::panels {

struct PanelInfo {
  std::string code;  // "PE1" ... "SH6"
  std::string name;
};

// The 25 ERC panels in PE, LS, SH order.
const std::vector<PanelInfo>& panel_set();
bool is_panel_code(std::string_view code);
std::size_t panel_index(std::string_view code);  // throws UnknownId

// Linear-interpolation percentile (numpy's default), p in [0, 100].
double percentile(std::vector<double> values, double p);

struct PanelCentroid {
  std::string panel;
  std::vector<float> vector;
  double threshold = 0.0;
  std::size_t project_count = 0;
  bool degenerate = false;  // single project: threshold 0
};

struct CentroidOptions {
  double percentile = 90.0;
  bool require_all_panels = true;  // MissingPanel when a panel has no project
};

// labels: project id -> panel code.
std::vector<PanelCentroid> panel_centroids(const embed::EmbeddingMatrix& projects,
                                           const std::map<std::string, std::string>& labels,
                                           const CentroidOptions& options = {});

struct GrantLink {
  std::string panel;           // panel of the funding grant
  std::string publication_id;
};

struct Propagation {
  std::map<std::string, std::string> labels;      // kept: id -> panel
  std::map<std::string, std::string> candidates;  // every unambiguous link: id -> grant panel
  std::set<std::string> excluded;                 // outside the threshold, or linked to several panels
};

// Keeps a publication's grant panel iff its distance to that panel's centroid
// is within the centroid threshold.
Propagation propagate_labels(const embed::EmbeddingMatrix& publications, const std::vector<PanelCentroid>& centroids,
                             const std::vector<GrantLink>& links);

struct TrainingCaps {
  std::size_t positives = 1500;
  std::size_t negatives = 20000;
};

struct TrainingSet {
  std::string panel;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  std::uint64_t seed = 0;
};

// Positives: sample of the panel's weak labels. Negatives: sample of
// candidates whose grant panel differs; publications of the panel that failed
// the distance filter are neither.
std::vector<TrainingSet> build_training_sets(const std::map<std::string, std::string>& weak_labels,
                                             const std::map<std::string, std::string>& candidates,
                                             const TrainingCaps& caps, std::uint64_t seed);

struct TrainHyper {
  int epochs = 60;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct PanelClassifier {
  std::string panel;
  std::vector<double> weights;
  double bias = 0.0;
  double decision_threshold = 0.5;
  std::vector<double> loss_history;  // full training loss after each epoch
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  double probability(std::span<const float> x) const;
};

// Rows of X with labels and per-row weights (positives weighted |neg| / |pos|).
struct TrainingData {
  std::uint32_t dim = 0;
  std::vector<float> features;
  std::vector<int> labels;
  std::vector<double> sample_weights;
  std::size_t rows() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
};

TrainingData make_training_data(const TrainingSet& set, const embed::EmbeddingMatrix& x);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

// Weighted mean cross-entropy over `rows` plus l2 / 2 * |w|^2.
LossGradient loss_and_gradient(const std::vector<double>& weights, double bias, const TrainingData& data,
                               const std::vector<std::size_t>& rows, double l2);

// Mini-batch gradient descent from zero. An epoch that would raise the full
// training loss is rolled back and the step size halved.
PanelClassifier train_panel_classifier(const TrainingSet& set, const embed::EmbeddingMatrix& x,
                                       const TrainHyper& hyper);
std::vector<PanelClassifier> train_all(const std::vector<TrainingSet>& sets, const embed::EmbeddingMatrix& x,
                                       const TrainHyper& hyper, std::size_t workers = 0);

std::set<std::string> predict_panels(std::span<const float> x, const std::vector<PanelClassifier>& classifiers);
std::map<std::string, std::set<std::string>> predict_all(const embed::EmbeddingMatrix& x,
                                                         const std::vector<PanelClassifier>& classifiers);

struct PanelMetrics {
  std::string panel;
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
};

struct EvalReport {
  std::vector<PanelMetrics> per_panel;  // panels seen in gold or predictions
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0, macro_accuracy = 0.0;
};

// One-vs-rest over the gold ids; an id without prediction counts as NONE.
EvalReport evaluate(const std::map<std::string, std::set<std::string>>& predictions,
                    const std::map<std::string, std::string>& gold);

nlohmann::ordered_json to_json(const PanelClassifier& classifier);
PanelClassifier classifier_from_json(const nlohmann::json& j);
void save_classifiers(const std::vector<PanelClassifier>& classifiers, const std::filesystem::path& path);
std::vector<PanelClassifier> load_classifiers(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const EvalReport& report);

// JSONL {"id":..., "panels":[...]}; [] is the NONE outcome.
std::string predictions_jsonl(const std::map<std::string, std::set<std::string>>& predictions);
std::map<std::string, std::set<std::string>> parse_predictions(std::string_view jsonl);
void write_predictions(const std::filesystem::path& path, const std::map<std::string, std::set<std::string>>& predictions);
std::map<std::string, std::set<std::string>> read_predictions(const std::filesystem::path& path);

}  // namespace atlas::panels
