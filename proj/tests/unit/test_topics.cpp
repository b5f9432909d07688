#include <doctest.h>

#include <cmath>
#include <numeric>

#include "generators.hpp"
#include "oracles.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/topics.hpp"

using namespace atlas;
using embed::EmbeddingMatrix;

namespace {

EmbeddingMatrix points(const std::vector<std::vector<double>>& rows) {
  std::vector<std::string> ids;
  std::vector<float> values;
  for (const auto& r : rows) {
    ids.push_back("p" + std::to_string(ids.size()));
    for (double x : r) values.push_back(float(x));
  }
  return EmbeddingMatrix(ids, values, std::uint32_t(rows.front().size()));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

EmbeddingMatrix three_blobs(std::uint64_t seed, std::vector<int>* truth = nullptr) {
  gen::Rng rng(seed);
  return gen::blobs(rng, {{0, 0, 0}, {10, 0, 0}, {0, 10, 5}}, 40, 0.1, truth);
}

void check_nearest(const EmbeddingMatrix& x, const topics::TopicModel& m) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double own = 0;
    std::vector<double> d(m.k, 0.0);
    for (int c = 0; c < m.k; ++c) {
      for (std::uint32_t j = 0; j < x.dim(); ++j) {
        double diff = x.row(i)[j] - m.centroids[c][j];
        d[c] += diff * diff;
      }
    }
    own = d[m.assignments[i]];
    for (int c = 0; c < m.k; ++c) CHECK(own <= d[c] + 1e-9);
  }
}

}  // namespace

TEST_SUITE("topics") {

TEST_CASE("kmeans: single point, k=1") {
  auto m = topics::kmeans_fit(points({{0, 0}}), 1, 1);
  CHECK(m.centroids == std::vector<std::vector<double>>{{0, 0}});
  CHECK(m.wcss == 0.0);
  CHECK(m.dbcc_min == 0.0);
}

TEST_CASE("kmeans: four-point toy reaches the enumerated optimum") {
  std::vector<std::vector<double>> pts{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  double best = oracle::best_two_partition_wcss(pts);
  CHECK(best == doctest::Approx(1.0).epsilon(1e-12));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = topics::kmeans_fit(points(pts), 2, seed);
    CHECK(std::abs(m.wcss - best) <= 1e-9);
    auto c = m.centroids;
    std::sort(c.begin(), c.end());
    CHECK(c == std::vector<std::vector<double>>{{0, 0.5}, {10, 0.5}});
    CHECK(m.dbcc_min == doctest::Approx(10.0));
  }
}

TEST_CASE("kmeans: three blobs recovered, WCSS non-increasing, nearest assignment") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<int> truth;
    auto x = three_blobs(100 + seed, &truth);
    auto m = topics::kmeans_fit(x, 3, seed);
    CHECK(oracle::label_agreement(truth, m.assignments, 3) == 1.0);
    for (std::size_t i = 1; i < m.wcss_history.size(); ++i) CHECK(m.wcss_history[i] <= m.wcss_history[i - 1]);
    check_nearest(x, m);
    double wcss = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::uint32_t j = 0; j < x.dim(); ++j) {
        double d = x.row(i)[j] - m.centroids[m.assignments[i]][j];
        wcss += d * d;
      }
    }
    CHECK(m.wcss == doctest::Approx(wcss).epsilon(1e-9));
  }
}

TEST_CASE("kmeans: deterministic and worker independent") {
  gen::Rng rng(3);
  auto x = gen::random_matrix(rng, 300, 6);
  auto a = topics::kmeans_fit(x, 7, 42, {300, 1});
  auto b = topics::kmeans_fit(x, 7, 42, {300, 4});
  CHECK(a.assignments == b.assignments);
  CHECK(a.centroids == b.centroids);
  CHECK(a.wcss == b.wcss);
  check_nearest(x, a);
}

TEST_CASE("kmeans: duplicate points and errors") {
  auto x = points({{1, 1}, {1, 1}, {1, 1}, {2, 2}});
  auto m = topics::kmeans_fit(x, 3, 9);
  auto sizes = m.topic_sizes();
  CHECK(sizes.size() == 3);
  CHECK(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) == 4);
  CHECK(m.wcss == 0.0);
  CHECK(m.iterations < 300);
  CHECK(code_of([&] { topics::kmeans_fit(x, 5, 1); }) == ErrorCode::KTooLarge);
  CHECK(code_of([&] { topics::kmeans_fit(x, 0, 1); }) == ErrorCode::InvalidRange);
}

TEST_CASE("sweep: elbow at the blob count, one point per cluster") {
  auto x = three_blobs(7);
  auto sweep = topics::sweep_k(x, {2, 3, 4, 5, 6}, 1);
  REQUIRE(sweep.rows.size() == 5);
  CHECK(sweep.elbow == 3);
  auto small = points({{0, 0}, {1, 0}, {5, 5}});
  CHECK(topics::sweep_k(small, {3}, 1).rows[0].wcss == 0.0);
  CHECK_FALSE(topics::sweep_k(small, {3}, 1).elbow);
  CHECK(code_of([&] { topics::sweep_k(small, {}, 1); }) == ErrorCode::InvalidRange);
}

TEST_CASE("elbow suggestion is the largest second difference") {
  using topics::SweepRow;
  CHECK(topics::elbow_suggestion({{2, 100, 0}, {3, 40, 0}, {4, 35, 0}, {5, 32, 0}}) == 3);
  CHECK(topics::elbow_suggestion({{5, 32, 0}, {2, 100, 0}, {4, 35, 0}, {3, 40, 0}}) == 3);
  CHECK_FALSE(topics::elbow_suggestion({{2, 1, 0}, {3, 0, 0}}));
}

TEST_CASE("label candidates: shared phrase first, stopwords out") {
  std::vector<std::vector<std::string>> topic_texts{
      {"The sea level rise threatens harbours", "Sea level rise and the coast", "Modelling sea level rise"},
      {"Medieval church archives", "Church manuscripts of the kingdom"}};
  auto c = topics::label_candidates(topic_texts, 5);
  REQUIRE(c.size() == 2);
  REQUIRE(!c[0].empty());
  CHECK((c[0][0].term == "sea level" || c[0][0].term == "level rise"));
  CHECK(c[0][0].frequency == 3);
  for (const auto& list : c) {
    for (const auto& cand : list) {
      CHECK(cand.term.find("the") != 0);
      CHECK(cand.term != "of");
    }
  }
  CHECK(c[1][0].term == "church");
}

TEST_CASE("label candidates: term shared by all topics is demoted") {
  std::vector<std::vector<std::string>> topic_texts{{"climate glacier", "climate glacier melt", "climate glacier"},
                                                    {"climate drought", "climate drought crops", "climate drought"}};
  auto c = topics::label_candidates(topic_texts, 10);
  for (int t = 0; t < 2; ++t) {
    auto pos = [&](const std::string& term) {
      for (std::size_t i = 0; i < c[t].size(); ++i) {
        if (c[t][i].term == term) return int(i);
      }
      return 1000;
    };
    CHECK(pos(t == 0 ? "glacier" : "drought") < pos("climate"));
  }
  CHECK(topics::label_candidates({{}, {"a b"}}, 3)[0].empty());
}

TEST_CASE("t-SNE: calibration by direct entropy recomputation") {
  gen::Rng rng(21);
  auto x = gen::random_matrix(rng, 60, 5);
  auto a = topics::conditional_affinities(x, 10.0);
  for (std::size_t i = 0; i < 60; ++i) {
    std::vector<double> p(60, 0.0);
    double z = 0;
    for (std::size_t j = 0; j < 60; ++j) {
      if (i == j) continue;
      double d = 0;
      for (int k = 0; k < 5; ++k) d += (double(x.row(i)[k]) - x.row(j)[k]) * (double(x.row(i)[k]) - x.row(j)[k]);
      p[j] = std::exp(-a.beta[i] * d);
      z += p[j];
    }
    double h_bits = 0;
    for (std::size_t j = 0; j < 60; ++j) {
      if (p[j] > 0) {
        double q = p[j] / z;
        h_bits -= q * std::log2(q);
        CHECK(std::abs(q - a.conditional[i * 60 + j]) < 1e-9);
      }
    }
    CHECK(std::abs(std::pow(2.0, h_bits) - 10.0) < 1e-3);
  }
}

TEST_CASE("t-SNE: shape, finiteness, KL decrease, determinism") {
  gen::Rng rng(22);
  auto x = gen::blobs(rng, {{0, 0, 0, 0}, {6, 0, 0, 0}, {0, 6, 0, 0}}, 20, 1.0);
  auto p1 = topics::tsne_project(x, 8.0, 5, 300);
  REQUIRE(p1.coordinates.size() == x.rows());
  for (const auto& c : p1.coordinates) CHECK((std::isfinite(c[0]) && std::isfinite(c[1])));
  CHECK(p1.kl_final <= p1.kl_initial);
  auto p2 = topics::tsne_project(x, 8.0, 5, 300);
  CHECK(p1.coordinates == p2.coordinates);
  auto short_run = topics::tsne_project(x, 8.0, 5, 100);  // shorter than the exaggeration phase
  CHECK(short_run.kl_final <= short_run.kl_initial);
  CHECK(code_of([&] { topics::tsne_project(x, 2.0, 5, 10); }) == ErrorCode::PerplexityOutOfRange);
  CHECK(code_of([&] { topics::tsne_project(x, 20.0, 5, 10); }) == ErrorCode::PerplexityOutOfRange);
}

TEST_CASE("t-SNE KL on a two-point case is zero") {
  CHECK(topics::tsne_kl({0.0, 0.5, 0.5, 0.0}, {{{0.0, 0.0}}, {{3.0, 4.0}}}) == doctest::Approx(0.0));
}

TEST_CASE("topic model and projection persistence") {
  oracle::TempDir dir("topics");
  auto x = three_blobs(5);
  auto m = topics::kmeans_fit(x, 3, 2);
  m.label_candidates = topics::label_candidates({{"a b"}, {"c d"}, {"e f"}}, 3);
  topics::save_topic_model(m, dir / "m.json");
  auto back = topics::load_topic_model(dir / "m.json");
  CHECK(back.k == 3);
  CHECK(back.assignments == m.assignments);
  CHECK(back.ids == m.ids);
  CHECK(back.centroids == m.centroids);
  CHECK(back.wcss == m.wcss);
  CHECK(back.dbcc_matrix == m.dbcc_matrix);
  CHECK(back.label_candidates == m.label_candidates);

  topics::Projection2D p;
  p.ids = {"a", "b"};
  p.coordinates = {{{0.5, -1.25}}, {{3.0, 0.1}}};
  CHECK(topics::projection_csv(p, {{"a", 2}}) == "id,x,y,topic\na,0.5,-1.25,2\nb,3,0.1,\n");
}

}
