#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sti_atlas/embed.hpp"

namespace atlas::topics {

struct LabelCandidate {
  std::string term;
  std::int64_t frequency = 0;
  double score = 0.0;
  bool operator==(const LabelCandidate&) const = default;
};

struct TopicModel {
  int k = 0;
  std::uint32_t dim = 0;
  std::vector<std::vector<double>> centroids;  // k x dim
  std::vector<std::string> ids;                // aligned with assignments
  std::vector<int> assignments;
  double wcss = 0.0;
  std::vector<double> wcss_history;  // after each assignment step
  int iterations = 0;
  double dbcc_min = 0.0;  // smallest pairwise centroid distance (0 when k == 1)
  std::vector<std::vector<double>> dbcc_matrix;
  std::vector<std::vector<LabelCandidate>> label_candidates;

  std::map<std::string, int> assignment_map() const;
  std::vector<std::size_t> topic_sizes() const;
};

struct KMeansOptions {
  int max_iterations = 300;
  std::size_t workers = 0;  // 0: hardware concurrency
};

// k-means++ seeding, then Lloyd iterations to an assignment fixpoint.
// Nearest-centroid ties go to the lowest index; empty clusters take the point
// farthest from its centroid. Results do not depend on `workers`.
TopicModel kmeans_fit(const embed::EmbeddingMatrix& x, int k, std::uint64_t seed, const KMeansOptions& options = {});

struct SweepRow {
  int k = 0;
  double wcss = 0.0;
  double dbcc_min = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::optional<int> elbow;  // suggestion only; the operator picks k
};

// k at the largest second difference of WCSS over rows ordered by k.
std::optional<int> elbow_suggestion(std::vector<SweepRow> rows);
SweepResult sweep_k(const embed::EmbeddingMatrix& x, const std::vector<int>& ks, std::uint64_t seed,
                    const KMeansOptions& options = {});

const std::set<std::string>& default_stopwords();

// Per topic, unigrams and bigrams over the topic's texts ranked by
// frequency x log(K / topics containing the term). Empty topics yield empty lists.
std::vector<std::vector<LabelCandidate>> label_candidates(const std::vector<std::vector<std::string>>& topic_texts,
                                                          std::size_t top_n,
                                                          const std::set<std::string>& stopwords = default_stopwords());

// ---- t-SNE ----------------------------------------------------------------

struct Affinities {
  std::size_t n = 0;
  std::vector<double> conditional;  // row-major n x n, p(j|i), zero diagonal
  std::vector<double> beta;         // per-row precision 1 / (2 sigma^2)
};

// Per-row Gaussian bandwidths found by bisection so that each conditional
// distribution has the target perplexity.
Affinities conditional_affinities(const embed::EmbeddingMatrix& x, double perplexity);

struct TsneOptions {
  double learning_rate = 0.0;  // 0: max(n / exaggeration / 4, 50)
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;  // capped at half the iterations
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
};

struct Projection2D {
  std::vector<std::string> ids;
  std::vector<std::array<double, 2>> coordinates;
  double perplexity = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  double kl_initial = 0.0;
  double kl_final = 0.0;
};

// Exact O(n^2) t-SNE. Requires 3 <= perplexity < n / 3.
Projection2D tsne_project(const embed::EmbeddingMatrix& x, double perplexity, std::uint64_t seed, int iterations,
                          const TsneOptions& options = {});

// KL(P || Q) for symmetric affinities P and 2-D coordinates.
double tsne_kl(const std::vector<double>& joint_p, const std::vector<std::array<double, 2>>& y);

// ---- persistence ----------------------------------------------------------

nlohmann::ordered_json to_json(const TopicModel& model);
TopicModel topic_model_from_json(const nlohmann::ordered_json& j);
void save_topic_model(const TopicModel& model, const std::filesystem::path& path);
TopicModel load_topic_model(const std::filesystem::path& path);

// CSV "id,x,y,topic"; topic is empty when the id has no assignment.
std::string projection_csv(const Projection2D& projection, const std::map<std::string, int>& assignments);

}  // namespace atlas::topics
