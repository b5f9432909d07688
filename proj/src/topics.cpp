#include "sti_atlas/topics.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>

#include "sti_atlas/error.hpp"
#include "sti_atlas/util.hpp"
#include "sti_atlas/vocab.hpp"

namespace atlas::topics {

std::map<std::string, int> TopicModel::assignment_map() const {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = assignments[i];
  return out;
}

std::vector<std::size_t> TopicModel::topic_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

// ---- k-means --------------------------------------------------------------

namespace {

double sq_dist(std::span<const float> x, const std::vector<double>& c) {
  double d = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double diff = double(x[i]) - c[i];
    d += diff * diff;
  }
  return d;
}

std::size_t worker_count(std::size_t requested) {
  return requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
}

// Nearest centroid per point (lowest index on ties) and its squared distance.
void assign(const embed::EmbeddingMatrix& x, const std::vector<std::vector<double>>& centroids,
            std::vector<int>& labels, std::vector<double>& dist, std::size_t workers) {
  util::parallel_for(x.rows(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        double d = sq_dist(x.row(i), centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      labels[i] = best;
      dist[i] = best_d;
    }
  });
}

double ordered_sum(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

std::vector<std::vector<double>> kmeans_plus_plus(const embed::EmbeddingMatrix& x, int k, util::Rng& rng) {
  const std::size_t n = x.rows();
  auto as_vector = [&](std::size_t i) {
    auto r = x.row(i);
    return std::vector<double>(r.begin(), r.end());
  };
  std::vector<std::vector<double>> centroids;
  std::vector<char> chosen(n, 0);
  std::size_t first = util::uniform_below(rng, n);
  chosen[first] = 1;
  centroids.push_back(as_vector(first));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(x.row(i), centroids.back());

  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = ordered_sum(d2);
    std::size_t pick = n;
    if (total > 0.0) {
      double r = util::uniform01(rng) * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        cum += d2[i];
        pick = i;
        if (cum > r) break;
      }
    } else {
      // Every point coincides with a centroid; take any unchosen index.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      pick = free[util::uniform_below(rng, free.size())];
    }
    chosen[pick] = 1;
    centroids.push_back(as_vector(pick));
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x.row(i), centroids.back()));
  }
  return centroids;
}

void recompute_means(const embed::EmbeddingMatrix& x, const std::vector<int>& labels,
                     std::vector<std::vector<double>>& centroids) {
  const std::size_t dim = x.dim();
  std::vector<std::vector<double>> sums(centroids.size(), std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(centroids.size(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    auto& s = sums[static_cast<std::size_t>(labels[i])];
    for (std::size_t d = 0; d < dim; ++d) s[d] += r[d];
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
}

}  // namespace

TopicModel kmeans_fit(const embed::EmbeddingMatrix& x, int k, std::uint64_t seed, const KMeansOptions& options) {
  const std::size_t n = x.rows();
  if (k < 1) throw Error(ErrorCode::InvalidRange, "k must be at least 1");
  if (static_cast<std::size_t>(k) > n) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  }
  const std::size_t workers = worker_count(options.workers);
  util::Rng rng(seed);

  TopicModel model;
  model.k = k;
  model.dim = x.dim();
  model.ids = x.ids();
  model.centroids = kmeans_plus_plus(x, k, rng);

  std::vector<int> labels(n, -1);
  std::vector<int> previous;
  std::vector<double> dist(n);
  bool converged = false;
  for (int it = 0; it < options.max_iterations; ++it) {
    assign(x, model.centroids, labels, dist, workers);
    double wcss = ordered_sum(dist);
    if (!model.wcss_history.empty() && wcss > model.wcss_history.back() * (1.0 + 1e-12) + 1e-300) {
      throw Error(ErrorCode::Diverged, fmt::format("WCSS rose from {} to {} at iteration {}",
                                                   model.wcss_history.back(), wcss, it));
    }
    model.wcss_history.push_back(wcss);
    model.iterations = it + 1;
    // Compared before re-seeding: with duplicate points a re-seeded cluster can
    // lose its point again on the next tie, which would otherwise cycle.
    if (labels == previous) {
      converged = true;
      break;
    }
    previous = labels;

    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(labels[i])] <= 1) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) break;
      --counts[static_cast<std::size_t>(labels[far])];
      labels[far] = static_cast<int>(c);
      ++counts[c];
      dist[far] = 0.0;
      auto r = x.row(far);
      model.centroids[c].assign(r.begin(), r.end());
    }
    recompute_means(x, labels, model.centroids);
  }
  if (!converged) {
    // Iteration cap: make the stored assignment consistent with the centroids.
    assign(x, model.centroids, labels, dist, workers);
    spdlog::warn("k-means (k={}) stopped at the {}-iteration cap", k, options.max_iterations);
  }
  model.assignments = labels;
  model.wcss = ordered_sum(dist);

  model.dbcc_matrix.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k), 0.0));
  model.dbcc_min = 0.0;
  bool first = true;
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < model.dim; ++j) {
        double diff = model.centroids[a][j] - model.centroids[b][j];
        d += diff * diff;
      }
      d = std::sqrt(d);
      model.dbcc_matrix[a][b] = model.dbcc_matrix[b][a] = d;
      if (first || d < model.dbcc_min) model.dbcc_min = d;
      first = false;
    }
  }
  return model;
}

std::optional<int> elbow_suggestion(std::vector<SweepRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.k < b.k; });
  if (rows.size() < 3) return std::nullopt;
  std::optional<int> best;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    double second = rows[i - 1].wcss - 2.0 * rows[i].wcss + rows[i + 1].wcss;
    if (second > best_value) {
      best_value = second;
      best = rows[i].k;
    }
  }
  return best;
}

SweepResult sweep_k(const embed::EmbeddingMatrix& x, const std::vector<int>& ks, std::uint64_t seed,
                    const KMeansOptions& options) {
  if (ks.empty()) throw Error(ErrorCode::InvalidRange, "k sweep needs at least one k");
  SweepResult result;
  for (int k : ks) {
    auto model = kmeans_fit(x, k, seed, options);
    result.rows.push_back(SweepRow{k, model.wcss, model.dbcc_min});
  }
  result.elbow = elbow_suggestion(result.rows);
  return result;
}

// ---- label candidates -----------------------------------------------------

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> kStopwords = {
      "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as",
      "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could",
      "did", "do", "does", "doing", "down", "during", "each", "et", "etc", "few", "for", "from", "further", "had",
      "has", "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "however",
      "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me", "might", "more", "most", "must",
      "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "one", "only", "or", "other", "our",
      "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
      "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
      "through", "thus", "to", "too", "two", "under", "until", "up", "upon", "us", "using", "very", "was", "we",
      "were", "what", "when", "where", "whether", "which", "while", "who", "whom", "why", "will", "with",
      "within", "without", "would", "yet", "you", "your", "yours", "yourself", "yourselves"};
  return kStopwords;
}

std::vector<std::vector<LabelCandidate>> label_candidates(const std::vector<std::vector<std::string>>& topic_texts,
                                                          std::size_t top_n, const std::set<std::string>& stopwords) {
  const std::size_t topics = topic_texts.size();
  std::vector<std::unordered_map<std::string, std::int64_t>> counts(topics);
  std::unordered_map<std::string, std::int64_t> topic_df;
  std::size_t non_empty = 0;

  auto usable = [&](const std::string& t) {
    if (t.size() < 2 || stopwords.count(t)) return false;
    return !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); });
  };

  for (std::size_t t = 0; t < topics; ++t) {
    if (topic_texts[t].empty()) continue;
    ++non_empty;
    for (const auto& text : topic_texts[t]) {
      auto tokens = vocab::tokenize(text);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!usable(tokens[i])) continue;
        ++counts[t][tokens[i]];
        if (i + 1 < tokens.size() && usable(tokens[i + 1])) ++counts[t][tokens[i] + " " + tokens[i + 1]];
      }
    }
    for (const auto& [term, c] : counts[t]) ++topic_df[term];
  }

  std::vector<std::vector<LabelCandidate>> out(topics);
  for (std::size_t t = 0; t < topics; ++t) {
    std::vector<LabelCandidate> ranked;
    ranked.reserve(counts[t].size());
    for (const auto& [term, freq] : counts[t]) {
      double idf = non_empty > 1 ? std::log(double(non_empty) / double(topic_df[term])) : 1.0;
      ranked.push_back(LabelCandidate{term, freq, double(freq) * idf});
    }
    auto words = [](const std::string& s) { return std::count(s.begin(), s.end(), ' ') + 1; };
    std::sort(ranked.begin(), ranked.end(), [&](const LabelCandidate& a, const LabelCandidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (words(a.term) != words(b.term)) return words(a.term) > words(b.term);
      if (a.frequency != b.frequency) return a.frequency > b.frequency;
      return a.term < b.term;
    });
    if (ranked.size() > top_n) ranked.resize(top_n);
    out[t] = std::move(ranked);
  }
  return out;
}

// ---- t-SNE ----------------------------------------------------------------

namespace {

std::vector<double> pairwise_sq_distances(const embed::EmbeddingMatrix& x) {
  const std::size_t n = x.rows();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = embed::squared_distance(x.row(i), x.row(j));
      d[i * n + j] = d[j * n + i] = v;
    }
  }
  return d;
}

// Fills p(.|i) for precision beta; returns the entropy in nats.
double row_distribution(const double* dist, std::size_t n, std::size_t i, double beta, double* p) {
  double min_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) min_d = std::min(min_d, dist[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = j == i ? 0.0 : std::exp(-beta * (dist[j] - min_d));
    sum += p[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] /= sum;
    if (j != i) weighted += p[j] * (dist[j] - min_d);
  }
  return std::log(sum) + beta * weighted;
}

}  // namespace

Affinities conditional_affinities(const embed::EmbeddingMatrix& x, double perplexity) {
  const std::size_t n = x.rows();
  if (!(perplexity >= 3.0) || !(perplexity < double(n) / 3.0)) {
    throw Error(ErrorCode::PerplexityOutOfRange,
                fmt::format("perplexity {} outside [3, n/3) for n = {}", perplexity, n));
  }
  auto dist = pairwise_sq_distances(x);
  Affinities a;
  a.n = n;
  a.conditional.assign(n * n, 0.0);
  a.beta.assign(n, 1.0);
  const double target = std::log(perplexity);

  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double* p = a.conditional.data() + i * n;
    for (int step = 0; step < 200; ++step) {
      double h = row_distribution(dist.data() + i * n, n, i, beta, p);
      if (std::abs(std::exp(h) - perplexity) < 1e-6) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    row_distribution(dist.data() + i * n, n, i, beta, p);
    a.beta[i] = beta;
  }
  return a;
}

double tsne_kl(const std::vector<double>& joint_p, const std::vector<std::array<double, 2>>& y) {
  const std::size_t n = y.size();
  double z = 0.0;
  std::vector<double> num(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dx = y[i][0] - y[j][0];
      double dy = y[i][1] - y[j][1];
      double q = 1.0 / (1.0 + dx * dx + dy * dy);
      num[i * n + j] = num[j * n + i] = q;
      z += 2.0 * q;
    }
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double p = joint_p[i * n + j];
      double q = std::max(num[i * n + j] / z, 1e-12);
      kl += p * std::log(p / q);
    }
  }
  return kl;
}

Projection2D tsne_project(const embed::EmbeddingMatrix& x, double perplexity, std::uint64_t seed, int iterations,
                          const TsneOptions& options) {
  auto affinities = conditional_affinities(x, perplexity);
  const std::size_t n = x.rows();

  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double v = (affinities.conditional[i * n + j] + affinities.conditional[j * n + i]) / (2.0 * double(n));
      p[i * n + j] = std::max(v, 1e-12);
    }
  }

  util::Rng rng(seed);
  std::vector<std::array<double, 2>> y(n);
  for (auto& point : y) point = {1e-4 * util::standard_normal(rng), 1e-4 * util::standard_normal(rng)};
  std::vector<std::array<double, 2>> update(n, {0.0, 0.0});
  std::vector<std::array<double, 2>> gains(n, {1.0, 1.0});
  std::vector<std::array<double, 2>> grad(n);
  std::vector<double> num(n * n, 0.0);

  const double eta = options.learning_rate > 0.0
                         ? options.learning_rate
                         : std::max(double(n) / options.early_exaggeration / 4.0, 50.0);

  Projection2D out;
  out.ids = x.ids();
  out.perplexity = perplexity;
  out.seed = seed;
  out.iterations = iterations;
  out.kl_initial = tsne_kl(p, y);

  // Short runs keep half their iterations unexaggerated so KL is optimised against P itself.
  const int exaggerated = std::min(options.exaggeration_iterations, iterations / 2);
  for (int it = 0; it < iterations; ++it) {
    const bool early = it < exaggerated;
    const double exaggeration = early ? options.early_exaggeration : 1.0;
    const double momentum = early ? options.initial_momentum : options.final_momentum;

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double dx = y[i][0] - y[j][0];
        double dy = y[i][1] - y[j][1];
        double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0;
      double gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double q = std::max(num[i * n + j] / z, 1e-12);
        double w = (exaggeration * p[i * n + j] - q) * num[i * n + j];
        gx += w * (y[i][0] - y[j][0]);
        gy += w * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * gx, 4.0 * gy};
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        bool same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
        gains[i][d] = same_sign ? gains[i][d] * 0.8 : gains[i][d] + 0.2;
        gains[i][d] = std::max(gains[i][d], 0.01);
        update[i][d] = momentum * update[i][d] - eta * gains[i][d] * grad[i][d];
        y[i][d] += update[i][d];
      }
    }
    std::array<double, 2> mean{0.0, 0.0};
    for (const auto& point : y) {
      mean[0] += point[0];
      mean[1] += point[1];
    }
    for (auto& point : y) {
      point[0] -= mean[0] / double(n);
      point[1] -= mean[1] / double(n);
    }
  }

  for (const auto& point : y) {
    if (!std::isfinite(point[0]) || !std::isfinite(point[1])) {
      throw Error(ErrorCode::Diverged, "t-SNE produced non-finite coordinates");
    }
  }
  out.kl_final = tsne_kl(p, y);
  if (out.kl_final > out.kl_initial) {
    throw Error(ErrorCode::Diverged, fmt::format("t-SNE KL rose from {} to {}", out.kl_initial, out.kl_final));
  }
  out.coordinates = std::move(y);
  return out;
}

// ---- persistence ----------------------------------------------------------

nlohmann::ordered_json to_json(const TopicModel& model) {
  nlohmann::ordered_json j;
  j["k"] = model.k;
  j["dim"] = model.dim;
  j["iterations"] = model.iterations;
  j["wcss"] = model.wcss;
  j["wcss_history"] = model.wcss_history;
  j["dbcc_min"] = model.dbcc_min;
  j["dbcc_matrix"] = model.dbcc_matrix;
  j["centroids"] = model.centroids;
  nlohmann::ordered_json assignments = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < model.ids.size(); ++i) assignments[model.ids[i]] = model.assignments[i];
  j["assignments"] = std::move(assignments);
  auto candidates = nlohmann::ordered_json::array();
  for (const auto& topic : model.label_candidates) {
    auto list = nlohmann::ordered_json::array();
    for (const auto& c : topic) {
      nlohmann::ordered_json cj;
      cj["term"] = c.term;
      cj["frequency"] = c.frequency;
      cj["score"] = c.score;
      list.push_back(std::move(cj));
    }
    candidates.push_back(std::move(list));
  }
  j["label_candidates"] = std::move(candidates);
  return j;
}

TopicModel topic_model_from_json(const nlohmann::ordered_json& j) {
  try {
    TopicModel m;
    m.k = j.at("k").get<int>();
    m.dim = j.at("dim").get<std::uint32_t>();
    m.iterations = j.value("iterations", 0);
    m.wcss = j.at("wcss").get<double>();
    m.wcss_history = j.value("wcss_history", std::vector<double>{});
    m.dbcc_min = j.at("dbcc_min").get<double>();
    m.dbcc_matrix = j.value("dbcc_matrix", std::vector<std::vector<double>>{});
    m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    const auto& assignments = j.at("assignments");
    for (const auto& [id, topic] : assignments.items()) {
      m.ids.push_back(id);
      m.assignments.push_back(topic.get<int>());
    }
    if (j.contains("label_candidates")) {
      for (const auto& topic : j["label_candidates"]) {
        std::vector<LabelCandidate> list;
        for (const auto& c : topic) {
          list.push_back(LabelCandidate{c.at("term").get<std::string>(), c.at("frequency").get<std::int64_t>(),
                                        c.at("score").get<double>()});
        }
        m.label_candidates.push_back(std::move(list));
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bad topic model: ") + e.what());
  }
}

void save_topic_model(const TopicModel& model, const std::filesystem::path& path) {
  util::write_file_atomic(path, to_json(model).dump(2) + "\n");
}

TopicModel load_topic_model(const std::filesystem::path& path) {
  try {
    return topic_model_from_json(nlohmann::ordered_json::parse(util::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

std::string projection_csv(const Projection2D& projection, const std::map<std::string, int>& assignments) {
  std::string out = "id,x,y,topic\n";
  for (std::size_t i = 0; i < projection.ids.size(); ++i) {
    auto it = assignments.find(projection.ids[i]);
    out += util::format_csv_row({projection.ids[i], fmt::format("{}", projection.coordinates[i][0]),
                                 fmt::format("{}", projection.coordinates[i][1]),
                                 it == assignments.end() ? std::string() : std::to_string(it->second)});
  }
  return out;
}

}  // namespace atlas::topics
