#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "sti_atlas/corpus.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/harvest.hpp"

using namespace atlas;
using corpus::Record;
using corpus::Source;

namespace {

Record make(std::string id, std::string title, std::optional<int> year, std::vector<std::string> countries = {"DK"}) {
  Record r;
  r.id = std::move(id);
  r.title = std::move(title);
  r.year = year;
  for (auto& c : countries) r.affiliations.push_back({"Org " + c, c, std::nullopt});
  return r;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("OpenAlex inverted abstract is reconstructed") {
  nlohmann::json raw = {{"id", "https://openalex.org/W1"},
                        {"title", "T"},
                        {"abstract_inverted_index", {{"Hello", {0}}, {"world", {1}}}}};
  auto r = corpus::normalize_record(raw, Source::OpenAlex);
  REQUIRE(r);
  CHECK(r->id == "W1");
  CHECK(r->abstract_text == "Hello world");
  CHECK(r->kind == corpus::Kind::Publication);
  CHECK_FALSE(r->year);
  CHECK_FALSE(r->language);
}

TEST_CASE("OpenAlex authorships become affiliation mentions") {
  nlohmann::json raw = {
      {"id", "W2"},
      {"title", "T"},
      {"publication_year", 2016},
      {"doi", "https://doi.org/10.1234/ABC"},
      {"authorships",
       {{{"institutions", {{{"display_name", "University of Copenhagen"}, {"country_code", "DK"}, {"id", "I1"}}}}},
        {{"institutions", {{{"display_name", "University of Copenhagen"}, {"country_code", "DK"}, {"id", "I1"}}}}}}}};
  auto r = corpus::normalize_record(raw, Source::OpenAlex);
  REQUIRE(r);
  CHECK(r->year == 2016);
  CHECK(r->doi == "10.1234/abc");
  REQUIRE(r->affiliations.size() == 1);
  CHECK(r->affiliations[0].country_code == "DK");
}

TEST_CASE("payload without id or title is skipped and counted") {
  corpus::SourceProvenance prov;
  CHECK_FALSE(corpus::normalize_record(nlohmann::json{{"title", "x"}}, Source::OpenAire, &prov));
  CHECK_FALSE(corpus::normalize_record(nlohmann::json{{"id", "x"}}, Source::OpenAire, &prov));
  CHECK(prov.skipped == 2);
}

TEST_CASE("CORDIS row with panel PE6 becomes an ERC project record") {
  auto table = util::parse_csv(
      "projectID,title,objective,panel,participants,countries\n"
      "1,Quantum things,Objective text,ERC-2016-STG/PE6,A;B;C,DK;DE;DK\n");
  auto records = harvest::ingest_cordis(table);
  REQUIRE(records.size() == 1);
  CHECK(records[0].kind == corpus::Kind::Project);
  CHECK(records[0].panel_label == "PE6");
  CHECK(records[0].affiliations.size() == 3);
}

TEST_CASE("conflicting OpenAIRE acceptance dates keep the dedupe year and both candidates") {
  std::string xml = R"(<response><header><total>1</total></header><results>
<result><header><dri:objIdentifier>oa::1</dri:objIdentifier></header><metadata><oaf:entity><oaf:result>
<title classid="main title">Two dates</title>
<dateofacceptance>2018-03-01</dateofacceptance><dateofacceptance>2016-11-20</dateofacceptance>
</oaf:result></oaf:entity></metadata></result></results></response>)";
  auto doc = harvest::parse_openaire_xml(xml);
  REQUIRE(doc.payloads.size() == 1);
  corpus::SourceProvenance prov;
  auto r = corpus::normalize_record(doc.payloads[0], Source::OpenAire, &prov);
  REQUIRE(r);
  // Same rule dedupe applies across a group: the minimum year.
  Record a = *r, b = *r;
  a.year = 2018;
  b.year = 2016;
  CHECK(corpus::dedupe({a, b}).front().year == r->year);
  CHECK(r->year == 2016);
  CHECK(prov.year_candidates.at("oa::1") == std::vector<int>{2016, 2018});
}

TEST_CASE("normalizers") {
  CHECK(corpus::normalize_doi("https://doi.org/10.1000/XYZ") == "10.1000/xyz");
  CHECK(corpus::normalize_doi("doi:10.5/a") == "10.5/a");
  CHECK_FALSE(corpus::normalize_doi("11.5/a"));
  CHECK(corpus::normalize_title("  Climate,  Change!  ") == "climate change");
  CHECK(corpus::normalize_language("eng") == "en");
  CHECK(corpus::normalize_language("da") == "da");
  CHECK_FALSE(corpus::normalize_language("xx-unknown"));
  CHECK(corpus::parse_year("2017-04-01") == 2017);
  CHECK_FALSE(corpus::parse_year("1800"));
}

TEST_CASE("dedupe: same DOI keeps the earliest year") {
  auto a = make("a", "Title A", 2018);
  auto b = make("b", "Other title", 2016);
  a.doi = b.doi = "10.1/x";
  auto out = corpus::dedupe({a, b});
  REQUIRE(out.size() == 1);
  CHECK(out[0].year == 2016);
}

TEST_CASE("dedupe: single record is unchanged") {
  auto a = make("a", "Title", 2015);
  CHECK(corpus::dedupe({a}) == std::vector<Record>{a});
}

TEST_CASE("dedupe: titles differing in case merge and affiliations unite") {
  auto a = make("a", "Sea Level Rise", 2015, {"DK"});
  auto b = make("b", "sea level rise", std::nullopt, {"SE"});
  auto out = corpus::dedupe({a, b});
  REQUIRE(out.size() == 1);
  CHECK(out[0].affiliations.size() == 2);
}

TEST_CASE("dedupe agrees with a pairwise key oracle and is idempotent") {
  std::mt19937 rng(11);
  const char* titles[] = {"Alpha beta", "ALPHA  beta", "alpha, beta!", "Gamma", "gamma", "Delta"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Record> records;
    int n = 1 + int(rng() % 10);
    for (int i = 0; i < n; ++i) {
      auto r = make("r" + std::to_string(i), titles[rng() % 6], 2000 + int(rng() % 20));
      if (rng() % 3 == 0) r.doi = "10.9/" + std::to_string(rng() % 3);
      if (rng() % 4 == 0) r.kind = corpus::Kind::Project;
      records.push_back(r);
    }
    // Pairwise equivalence then count classes.
    auto same = [](const Record& x, const Record& y) {
      if (x.doi || y.doi) return x.doi && y.doi && *x.doi == *y.doi;
      return x.kind == y.kind && corpus::normalize_title(x.title) == corpus::normalize_title(y.title);
    };
    std::vector<int> cls(n, -1);
    int classes = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < i && cls[i] < 0; ++j) {
        if (same(records[i], records[j])) cls[i] = cls[j];
      }
      if (cls[i] < 0) cls[i] = classes++;
    }
    auto out = corpus::dedupe(records);
    CHECK(int(out.size()) == classes);
    // Each survivor carries its class minimum year.
    for (const auto& s : out) {
      int min_year = 9999;
      for (const auto& r : records) {
        if (same(r, s)) min_year = std::min(min_year, *r.year);
      }
      CHECK(s.year == min_year);
    }
    CHECK(corpus::dedupe(out) == out);
  }
}

TEST_CASE("filter: country membership and year bounds") {
  corpus::FilterOptions opt;
  CHECK(corpus::filter({make("a", "t", 2015, {"DK", "DE"})}, opt).size() == 1);
  CHECK(corpus::filter({make("a", "t", 2013)}, opt).empty());
  CHECK(corpus::filter({make("a", "t", 2019)}, opt).size() == 1);
  CHECK(corpus::filter({make("a", "t", 2015, {"SE"})}, opt).empty());
  CHECK(corpus::filter({make("a", "t", std::nullopt)}, opt).size() == 1);
  opt.keep_undated = false;
  CHECK(corpus::filter({make("a", "t", std::nullopt)}, opt).empty());
  opt.require_abstract = true;
  auto r = make("a", "t", 2016);
  CHECK(corpus::filter({r}, opt).empty());
  r.abstract_text = "text";
  CHECK(corpus::filter({r}, opt).size() == 1);
  opt.year_lo = 2020;
  CHECK_THROWS_AS(corpus::filter({r}, opt), Error);
}

TEST_CASE("filter is a subset and idempotent") {
  std::mt19937 rng(3);
  std::vector<Record> records;
  const char* cc[] = {"DK", "SE", "DE"};
  for (int i = 0; i < 200; ++i) {
    std::optional<int> y;
    if (rng() % 5) y = 2010 + int(rng() % 12);
    records.push_back(make("r" + std::to_string(i), "t", y, {cc[rng() % 3]}));
  }
  corpus::FilterOptions opt;
  auto once = corpus::filter(records, opt);
  CHECK(corpus::filter(once, opt) == once);
  for (const auto& r : once) CHECK(std::find(records.begin(), records.end(), r) != records.end());
}

TEST_CASE("JSONL round trip omits absent fields") {
  auto a = make("a", "Title \"quoted\"", std::nullopt);
  a.source = Source::Kohesio;
  a.kind = corpus::Kind::Project;
  auto b = make("b", "Other", 2017);
  b.abstract_text = "abs";
  b.doi = "10.1/z";
  b.language = "en";
  b.panel_label = "SH2";
  auto text = corpus::to_jsonl({a, b});
  CHECK(text.find("\"year\"") == text.rfind("\"year\""));  // only b has one
  CHECK(text.find("abstract_text") != std::string::npos);
  auto back = corpus::parse_jsonl(text);
  CHECK(back == std::vector<Record>{a, b});
  CHECK(corpus::qualified_id(a) == "kohesio:a");
}

}
