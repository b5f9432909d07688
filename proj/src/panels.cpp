#include "sti_atlas/panels.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "sti_atlas/error.hpp"
#include "sti_atlas/util.hpp"

namespace atlas::panels {

const std::vector<PanelInfo>& panel_set() {
  static const std::vector<PanelInfo> kPanels = {
      {"PE1", "Mathematics"},
      {"PE2", "Fundamental Constituents of Matter"},
      {"PE3", "Condensed Matter Physics"},
      {"PE4", "Physical & Analytical Chemical Sciences"},
      {"PE5", "Synthetic Chemistry & Materials"},
      {"PE6", "Computer Science & Informatics"},
      {"PE7", "Systems & Communication Engineering"},
      {"PE8", "Products & Processes Engineering"},
      {"PE9", "Universe Sciences"},
      {"PE10", "Earth System Science"},
      {"LS1", "Molecules of Life: Biological Mechanisms, Structures & Functions"},
      {"LS2", "Integrative Biology: from Genes & Genomes to Systems"},
      {"LS3", "Cellular, Developmental & Regenerative Biology"},
      {"LS4", "Physiology in Health, Disease & Ageing"},
      {"LS5", "Neuroscience & Disorders of the Nervous System"},
      {"LS6", "Immunity, Infection & Immunotherapy"},
      {"LS7", "Prevention, Diagnosis & Treatment of Human Diseases"},
      {"LS8", "Environmental Biology, Ecology & Evolution"},
      {"LS9", "Biotechnology & Biosystems Engineering"},
      {"SH1", "Individuals, Markets & Organisations"},
      {"SH2", "Institutions, Governance & Legal Systems"},
      {"SH3", "The Social World & Its Diversity"},
      {"SH4", "The Human Mind & Its Complexity"},
      {"SH5", "Cultures & Cultural Production"},
      {"SH6", "The Study of the Human Past"},
  };
  return kPanels;
}

bool is_panel_code(std::string_view code) {
  const auto& panels = panel_set();
  return std::any_of(panels.begin(), panels.end(), [&](const PanelInfo& p) { return p.code == code; });
}

std::size_t panel_index(std::string_view code) {
  const auto& panels = panel_set();
  for (std::size_t i = 0; i < panels.size(); ++i) {
    if (panels[i].code == code) return i;
  }
  throw Error(ErrorCode::UnknownId, "unknown ERC panel " + std::string(code));
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptySet, "percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorCode::InvalidRange, fmt::format("percentile {} outside [0, 100]", p));
  std::sort(values.begin(), values.end());
  double rank = p / 100.0 * double(values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(rank));
  auto hi = std::min(lo + 1, values.size() - 1);
  double frac = rank - double(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

namespace {

double euclidean(std::span<const float> a, std::span<const float> b) { return std::sqrt(embed::squared_distance(a, b)); }

std::uint64_t panel_seed(std::uint64_t seed, std::string_view panel) {
  return util::splitmix64(seed ^ util::fnv1a64(panel));
}

bool panel_less(const std::string& a, const std::string& b) {
  bool ka = is_panel_code(a);
  bool kb = is_panel_code(b);
  if (ka != kb) return ka;
  if (ka) return panel_index(a) < panel_index(b);
  return a < b;
}

}  // namespace

std::vector<PanelCentroid> panel_centroids(const embed::EmbeddingMatrix& projects,
                                           const std::map<std::string, std::string>& labels,
                                           const CentroidOptions& options) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (const auto& [id, panel] : labels) {
    auto row = projects.find(id);
    if (!row) throw Error(ErrorCode::UnknownId, "labelled project " + id + " has no embedding");
    if (!is_panel_code(panel)) throw Error(ErrorCode::UnknownId, "project " + id + " has unknown panel " + panel);
    members[panel].push_back(*row);
  }

  std::vector<PanelCentroid> out;
  std::vector<std::string> missing;
  for (const auto& info : panel_set()) {
    auto it = members.find(info.code);
    if (it == members.end()) {
      missing.push_back(info.code);
      continue;
    }
    std::vector<std::span<const float>> rows;
    for (auto r : it->second) rows.push_back(projects.row(r));

    PanelCentroid c;
    c.panel = info.code;
    c.vector = embed::centroid(rows);
    c.project_count = rows.size();
    std::vector<double> distances;
    for (const auto& r : rows) distances.push_back(euclidean(r, c.vector));
    c.threshold = percentile(distances, options.percentile);
    c.degenerate = rows.size() == 1;
    if (c.degenerate) spdlog::warn("panel {} has a single project; threshold is 0", info.code);
    out.push_back(std::move(c));
  }
  if (options.require_all_panels && !missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingPanel, "no labelled projects for " + list);
  }
  return out;
}

Propagation propagate_labels(const embed::EmbeddingMatrix& publications, const std::vector<PanelCentroid>& centroids,
                             const std::vector<GrantLink>& links) {
  std::map<std::string, const PanelCentroid*> by_panel;
  for (const auto& c : centroids) by_panel[c.panel] = &c;

  std::map<std::string, std::set<std::string>> linked;
  for (const auto& link : links) linked[link.publication_id].insert(link.panel);

  Propagation out;
  for (const auto& [id, panels] : linked) {
    if (panels.size() != 1) {
      out.excluded.insert(id);
      continue;
    }
    const std::string& panel = *panels.begin();
    auto row = publications.find(id);
    auto centroid = by_panel.find(panel);
    if (!row || centroid == by_panel.end()) {
      out.excluded.insert(id);
      continue;
    }
    out.candidates[id] = panel;
    if (euclidean(publications.row(*row), centroid->second->vector) <= centroid->second->threshold) {
      out.labels[id] = panel;
    } else {
      out.excluded.insert(id);
    }
  }
  return out;
}

std::vector<TrainingSet> build_training_sets(const std::map<std::string, std::string>& weak_labels,
                                             const std::map<std::string, std::string>& candidates,
                                             const TrainingCaps& caps, std::uint64_t seed) {
  std::vector<TrainingSet> out;
  for (const auto& info : panel_set()) {
    std::vector<std::string> positives;
    for (const auto& [id, panel] : weak_labels) {
      if (panel == info.code) positives.push_back(id);
    }
    if (positives.empty()) throw Error(ErrorCode::NoPositives, "panel " + info.code + " has no weak labels");
    std::vector<std::string> negatives;
    for (const auto& [id, panel] : candidates) {
      if (panel != info.code) negatives.push_back(id);
    }

    TrainingSet set;
    set.panel = info.code;
    set.seed = panel_seed(seed, info.code);
    util::Rng rng(set.seed);
    set.positives = util::sample(std::move(positives), caps.positives, rng);
    set.negatives = util::sample(std::move(negatives), caps.negatives, rng);
    out.push_back(std::move(set));
  }
  return out;
}

// ---- logistic model -------------------------------------------------------

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// -log(sigmoid(z)) and -log(1 - sigmoid(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double dot(const std::vector<double>& w, std::span<const float> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

}  // namespace

double PanelClassifier::probability(std::span<const float> x) const {
  if (x.size() != weights.size()) {
    throw Error(ErrorCode::DimMismatch,
                fmt::format("classifier {} expects dim {}, got {}", panel, weights.size(), x.size()));
  }
  return sigmoid(dot(weights, x) + bias);
}

TrainingData make_training_data(const TrainingSet& set, const embed::EmbeddingMatrix& x) {
  if (set.positives.empty() || set.negatives.empty()) {
    throw Error(ErrorCode::NoPositives, "training set for " + set.panel + " needs positives and negatives");
  }
  TrainingData data;
  data.dim = x.dim();
  const double pos_weight = double(set.negatives.size()) / double(set.positives.size());
  auto add = [&](const std::vector<std::string>& ids, int label, double weight) {
    for (const auto& id : ids) {
      auto row = x.find(id);
      if (!row) throw Error(ErrorCode::UnknownId, "training id " + id + " has no embedding");
      auto r = x.row(*row);
      data.features.insert(data.features.end(), r.begin(), r.end());
      data.labels.push_back(label);
      data.sample_weights.push_back(weight);
    }
  };
  add(set.positives, 1, pos_weight);
  add(set.negatives, 0, 1.0);
  return data;
}

LossGradient loss_and_gradient(const std::vector<double>& weights, double bias, const TrainingData& data,
                               const std::vector<std::size_t>& rows, double l2) {
  LossGradient out;
  out.grad_weights.assign(weights.size(), 0.0);
  double total_weight = 0.0;
  for (auto i : rows) total_weight += data.sample_weights[i];
  if (total_weight <= 0.0) throw Error(ErrorCode::EmptySet, "loss over an empty batch");

  for (auto i : rows) {
    auto x = data.row(i);
    double z = dot(weights, x) + bias;
    double s = data.sample_weights[i] / total_weight;
    out.loss += s * (data.labels[i] == 1 ? softplus(-z) : softplus(z));
    double residual = s * (sigmoid(z) - double(data.labels[i]));
    for (std::size_t d = 0; d < weights.size(); ++d) out.grad_weights[d] += residual * x[d];
    out.grad_bias += residual;
  }
  double norm = 0.0;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    norm += weights[d] * weights[d];
    out.grad_weights[d] += l2 * weights[d];
  }
  out.loss += 0.5 * l2 * norm;
  return out;
}

PanelClassifier train_panel_classifier(const TrainingSet& set, const embed::EmbeddingMatrix& x,
                                       const TrainHyper& hyper) {
  if (hyper.epochs < 0 || hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) || hyper.l2 < 0.0) {
    throw Error(ErrorCode::InvalidRange, "invalid training hyperparameters");
  }
  auto data = make_training_data(set, x);

  PanelClassifier model;
  model.panel = set.panel;
  model.weights.assign(data.dim, 0.0);

  std::vector<std::size_t> all(data.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::size_t> order = all;
  util::Rng rng(panel_seed(hyper.seed, set.panel));

  double lr = hyper.learning_rate;
  double previous = loss_and_gradient(model.weights, model.bias, data, all, hyper.l2).loss;
  int rollbacks = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    util::shuffle(order, rng);
    auto saved_w = model.weights;
    double saved_b = model.bias;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + std::min(order.size(), start + hyper.batch_size));
      auto g = loss_and_gradient(model.weights, model.bias, data, batch, hyper.l2);
      for (std::size_t d = 0; d < model.weights.size(); ++d) model.weights[d] -= lr * g.grad_weights[d];
      model.bias -= lr * g.grad_bias;
    }
    double loss = loss_and_gradient(model.weights, model.bias, data, all, hyper.l2).loss;
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Diverged, fmt::format("panel {} loss became non-finite at epoch {}", set.panel, epoch));
    }
    if (loss > previous) {
      model.weights = std::move(saved_w);
      model.bias = saved_b;
      lr /= 2.0;
      ++rollbacks;
      loss = previous;
    }
    model.loss_history.push_back(loss);
    previous = loss;
  }

  model.metadata["positives"] = set.positives.size();
  model.metadata["negatives"] = set.negatives.size();
  model.metadata["positive_weight"] = double(set.negatives.size()) / double(set.positives.size());
  model.metadata["sampling_seed"] = set.seed;
  model.metadata["training_seed"] = hyper.seed;
  model.metadata["epochs"] = hyper.epochs;
  model.metadata["learning_rate"] = hyper.learning_rate;
  model.metadata["l2"] = hyper.l2;
  model.metadata["batch_size"] = hyper.batch_size;
  model.metadata["rollbacks"] = rollbacks;
  model.metadata["negatives_exclude_own_filtered"] = true;
  return model;
}

std::vector<PanelClassifier> train_all(const std::vector<TrainingSet>& sets, const embed::EmbeddingMatrix& x,
                                       const TrainHyper& hyper, std::size_t workers) {
  std::vector<PanelClassifier> out(sets.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  util::parallel_for(sets.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = train_panel_classifier(sets[i], x, hyper);
  });
  return out;
}

std::set<std::string> predict_panels(std::span<const float> x, const std::vector<PanelClassifier>& classifiers) {
  std::set<std::string> out;
  for (const auto& c : classifiers) {
    if (c.probability(x) >= c.decision_threshold) out.insert(c.panel);
  }
  return out;
}

std::map<std::string, std::set<std::string>> predict_all(const embed::EmbeddingMatrix& x,
                                                         const std::vector<PanelClassifier>& classifiers) {
  std::map<std::string, std::set<std::string>> out;
  for (std::size_t i = 0; i < x.rows(); ++i) out[x.ids()[i]] = predict_panels(x.row(i), classifiers);
  return out;
}

EvalReport evaluate(const std::map<std::string, std::set<std::string>>& predictions,
                    const std::map<std::string, std::string>& gold) {
  static const std::set<std::string> kNone;
  std::set<std::string> seen;
  for (const auto& [id, panel] : gold) {
    seen.insert(panel);
    if (auto it = predictions.find(id); it != predictions.end()) seen.insert(it->second.begin(), it->second.end());
  }
  std::vector<std::string> panels(seen.begin(), seen.end());
  std::sort(panels.begin(), panels.end(), panel_less);

  EvalReport report;
  for (const auto& panel : panels) {
    PanelMetrics m;
    m.panel = panel;
    for (const auto& [id, truth] : gold) {
      auto it = predictions.find(id);
      const auto& predicted = it == predictions.end() ? kNone : it->second;
      bool actual = truth == panel;
      bool said = predicted.count(panel) > 0;
      if (actual && said) ++m.tp;
      else if (!actual && said) ++m.fp;
      else if (actual) ++m.fn;
      else ++m.tn;
    }
    m.precision = m.tp + m.fp > 0 ? double(m.tp) / double(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? double(m.tp) / double(m.tp + m.fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    auto total = m.tp + m.fp + m.fn + m.tn;
    m.accuracy = total > 0 ? double(m.tp + m.tn) / double(total) : 0.0;
    report.per_panel.push_back(m);
  }
  if (!report.per_panel.empty()) {
    for (const auto& m : report.per_panel) {
      report.macro_precision += m.precision;
      report.macro_recall += m.recall;
      report.macro_f1 += m.f1;
      report.macro_accuracy += m.accuracy;
    }
    double n = double(report.per_panel.size());
    report.macro_precision /= n;
    report.macro_recall /= n;
    report.macro_f1 /= n;
    report.macro_accuracy /= n;
  }
  return report;
}

// ---- serialization --------------------------------------------------------

nlohmann::ordered_json to_json(const PanelClassifier& classifier) {
  nlohmann::ordered_json j;
  j["panel"] = classifier.panel;
  j["weights"] = classifier.weights;
  j["bias"] = classifier.bias;
  j["decision_threshold"] = classifier.decision_threshold;
  j["loss_history"] = classifier.loss_history;
  j["metadata"] = classifier.metadata;
  return j;
}

PanelClassifier classifier_from_json(const nlohmann::json& j) {
  try {
    PanelClassifier c;
    c.panel = j.at("panel").get<std::string>();
    c.weights = j.at("weights").get<std::vector<double>>();
    c.bias = j.at("bias").get<double>();
    c.decision_threshold = j.value("decision_threshold", 0.5);
    c.loss_history = j.value("loss_history", std::vector<double>{});
    if (j.contains("metadata")) c.metadata = nlohmann::ordered_json::parse(j["metadata"].dump());
    bool finite = std::isfinite(c.bias) && std::isfinite(c.decision_threshold) &&
                  std::all_of(c.weights.begin(), c.weights.end(), [](double w) { return std::isfinite(w); });
    if (!finite) throw Error(ErrorCode::SchemaError, "classifier " + c.panel + " has non-finite parameters");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bad classifier: ") + e.what());
  }
}

void save_classifiers(const std::vector<PanelClassifier>& classifiers, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["classifiers"] = nlohmann::ordered_json::array();
  for (const auto& c : classifiers) j["classifiers"].push_back(to_json(c));
  util::write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<PanelClassifier> load_classifiers(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  if (!j.contains("classifiers") || !j["classifiers"].is_array()) {
    throw Error(ErrorCode::SchemaError, path.string() + ": missing classifiers array");
  }
  std::vector<PanelClassifier> out;
  for (const auto& c : j["classifiers"]) out.push_back(classifier_from_json(c));
  return out;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["per_panel"] = nlohmann::ordered_json::array();
  for (const auto& m : report.per_panel) {
    nlohmann::ordered_json p;
    p["panel"] = m.panel;
    p["tp"] = m.tp;
    p["fp"] = m.fp;
    p["fn"] = m.fn;
    p["tn"] = m.tn;
    p["precision"] = m.precision;
    p["recall"] = m.recall;
    p["f1"] = m.f1;
    p["accuracy"] = m.accuracy;
    j["per_panel"].push_back(std::move(p));
  }
  j["macro"] = {{"precision", report.macro_precision},
                {"recall", report.macro_recall},
                {"f1", report.macro_f1},
                {"accuracy", report.macro_accuracy}};
  return j;
}

std::string predictions_jsonl(const std::map<std::string, std::set<std::string>>& predictions) {
  std::string out;
  for (const auto& [id, panels] : predictions) {
    std::vector<std::string> ordered(panels.begin(), panels.end());
    std::sort(ordered.begin(), ordered.end(), panel_less);
    nlohmann::ordered_json j;
    j["id"] = id;
    j["panels"] = ordered;
    out += j.dump() + "\n";
  }
  return out;
}

std::map<std::string, std::set<std::string>> parse_predictions(std::string_view jsonl) {
  std::map<std::string, std::set<std::string>> out;
  std::size_t line_no = 0;
  for (const auto& line : util::split(jsonl, '\n')) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("panels").get<std::set<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError, fmt::format("predictions line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path,
                       const std::map<std::string, std::set<std::string>>& predictions) {
  util::write_file_atomic(path, predictions_jsonl(predictions));
}

std::map<std::string, std::set<std::string>> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(util::read_file(path));
}

}  // namespace atlas::panels
