#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/harvest.hpp"

using namespace atlas;
using namespace std::chrono;
using harvest::DateWindow;

namespace {

// Local HTTP server on an ephemeral port, stopped on scope exit.
class StubServer {
 public:
  httplib::Server server;

  void start() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(milliseconds(1));
  }
  ~StubServer() {
    server.stop();
    if (thread_.joinable()) thread_.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

 private:
  int port_ = 0;
  std::thread thread_;
};

harvest::FetchOptions quick() {
  harvest::FetchOptions o;
  o.initial_backoff = milliseconds(1);
  o.timeout = seconds(5);
  return o;
}

std::string openaire_page(int total, int first, int count) {
  std::string xml = "<response><header><total>" + std::to_string(total) + "</total></header><results>";
  for (int i = first; i < first + count; ++i) {
    xml += "<result><header><dri:objIdentifier>oa::" + std::to_string(i) +
           "</dri:objIdentifier></header><metadata><oaf:entity><oaf:result><title classid=\"main title\">T" +
           std::to_string(i) + "</title></oaf:result></oaf:entity></metadata></result>";
  }
  return xml + "</results></response>";
}

std::int64_t day_index(sys_days d) { return (d - harvest::parse_date("2014-01-01")).count(); }

}  // namespace

TEST_SUITE("harvest") {

TEST_CASE("reconstruct_abstract examples") {
  CHECK(harvest::reconstruct_abstract(harvest::InvertedIndex{{"Hello", {0}}, {"world", {1}}}) == "Hello world");
  CHECK(harvest::reconstruct_abstract(harvest::InvertedIndex{{"a", {0, 2}}, {"b", {1}}}) == "a b a");
  CHECK(harvest::reconstruct_abstract(harvest::InvertedIndex{}) == "");
  // Gaps close rather than pad.
  CHECK(harvest::reconstruct_abstract(harvest::InvertedIndex{{"x", {3}}, {"y", {10}}}) == "x y");
}

TEST_CASE("reconstruct_abstract rejects shared positions") {
  try {
    harvest::reconstruct_abstract(harvest::InvertedIndex{{"a", {0}}, {"b", {0}}});
    FAIL("expected PositionConflict");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PositionConflict);
  }
}

TEST_CASE("reconstruct_abstract accepts the raw JSON form") {
  auto j = nlohmann::json::parse(R"({"sea":[1],"level":[2],"The":[0]})");
  CHECK(harvest::reconstruct_abstract(j) == "The sea level");
}

TEST_CASE("invert then reconstruct on random 50-token texts") {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> words;
    for (int i = 0; i < 50; ++i) words.push_back("w" + std::to_string(rng() % 15));
    auto text = oracle::join(words);
    CHECK(harvest::reconstruct_abstract(oracle::invert(text)) == text);
  }
}

TEST_CASE("window planning: skewed two-year example") {
  // 2014 holds 9,000 spread evenly; 2015 holds 12,000, 6,000 per half.
  auto cum = [](std::int64_t i) -> std::int64_t {
    if (i <= 365) return i * 9000 / 365;
    if (i <= 547) return 9000 + (i - 365) * 6000 / 182;
    return 15000 + (i - 547) * 6000 / 183;
  };
  auto count = [&](const DateWindow& w) { return cum(day_index(w.end) + 1) - cum(day_index(w.start)); };
  auto range = harvest::make_window("2014-01-01", "2015-12-31");
  REQUIRE(count(range) == 21000);
  auto windows = harvest::plan_openaire_windows(range, count);
  REQUIRE(windows.size() == 3);
  CHECK(windows[0] == harvest::make_window("2014-01-01", "2014-12-31"));
  CHECK(windows[1].start == harvest::parse_date("2015-01-01"));
  CHECK(windows[2].end == harvest::parse_date("2015-12-31"));
  CHECK(windows[1].end + days{1} == windows[2].start);
  for (const auto& w : windows) CHECK(count(w) < 10000);
}

TEST_CASE("window planning: empty range count keeps the range") {
  auto range = harvest::make_window("2014-01-01", "2019-12-31");
  auto windows = harvest::plan_openaire_windows(range, [](const DateWindow&) { return 0; });
  CHECK(windows == std::vector<DateWindow>{range});
}

TEST_CASE("window planning: 235,906 uniform records tile six years") {
  auto range = harvest::make_window("2014-01-01", "2019-12-31");
  const std::int64_t total = 235906, span = range.days();
  // Day i holds floor((i+1)T/span) - floor(iT/span).
  auto cum = [&](std::int64_t i) { return i * total / span; };
  auto count = [&](const DateWindow& w) { return cum(day_index(w.end) + 1) - cum(day_index(w.start)); };
  REQUIRE(count(range) == total);
  auto windows = harvest::plan_openaire_windows(range, count);
  CHECK(windows.front().start == range.start);
  CHECK(windows.back().end == range.end);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(count(windows[i]) < 10000);
    if (i > 0) CHECK(windows[i - 1].end + days{1} == windows[i].start);
  }
}

TEST_CASE("window planning: overfull single day is kept") {
  auto range = harvest::make_window("2016-05-01", "2016-05-04");
  auto hot = harvest::parse_date("2016-05-02");
  auto windows = harvest::plan_openaire_windows(range, [&](const DateWindow& w) {
    return (w.start <= hot && hot <= w.end) ? 20000 : 5;
  });
  bool found = false;
  for (const auto& w : windows) found = found || (w.start == hot && w.end == hot);
  CHECK(found);
  CHECK_THROWS_AS(harvest::make_window("2016-05-04", "2016-05-01"), Error);
}

TEST_CASE("request URLs carry the country and year filters") {
  auto r = harvest::openalex_request("https://api.openalex.org/works", "DK", 2014, 2019);
  auto url = harvest::request_url(r, corpus::Source::OpenAlex);
  CHECK(url.find("institutions.country_code:dk") != std::string::npos);
  CHECK(url.find("publication_year:2014-2019") != std::string::npos);
  CHECK(url.find("cursor=*") != std::string::npos);
  auto w = harvest::openaire_request("https://api.openaire.eu/search/publications", "dk",
                                     harvest::make_window("2014-01-01", "2014-06-30"));
  auto u2 = harvest::request_url(w, corpus::Source::OpenAire);
  CHECK(u2.find("country=DK") != std::string::npos);
  CHECK(u2.find("fromDateAccepted=2014-01-01") != std::string::npos);
  CHECK(u2.find("toDateAccepted=2014-06-30") != std::string::npos);
  r.page_size = 100000;
  CHECK_THROWS_AS(harvest::request_url(r, corpus::Source::OpenAlex), Error);
}

TEST_CASE("fetch_paged: three cursor pages of two items") {
  StubServer stub;
  std::atomic<int> hits{0};
  std::vector<std::string> filters;
  stub.server.Get("/works", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    filters.push_back(req.get_param_value("filter"));
    std::string cursor = req.get_param_value("cursor");
    int page = cursor == "*" ? 0 : std::stoi(cursor.substr(1));
    nlohmann::json body;
    body["results"] = {{{"id", "W" + std::to_string(2 * page)}, {"title", "a"}},
                       {{"id", "W" + std::to_string(2 * page + 1)}, {"title", "b"}}};
    body["meta"] = {{"next_cursor", page < 2 ? nlohmann::json("c" + std::to_string(page + 1)) : nlohmann::json()}};
    res.set_content(body.dump(), "application/json");
  });
  stub.start();
  auto req = harvest::openalex_request(stub.url("/works"), "DK", 2014, 2019, 2);
  auto result = harvest::fetch_paged(req, corpus::Source::OpenAlex, quick());
  CHECK(result.payloads.size() == 6);
  CHECK(result.stats.requests == 3);
  CHECK(hits == 3);
  std::set<std::string> ids;
  for (const auto& p : result.payloads) ids.insert(p["id"].get<std::string>());
  CHECK(ids.size() == 6);
  REQUIRE(!filters.empty());
  CHECK(filters[0].find("institutions.country_code:dk") != std::string::npos);
  CHECK(filters[0].find("publication_year:2014-2019") != std::string::npos);
}

TEST_CASE("fetch_paged: one 503 then success records a retry") {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.server.Get("/works", [&](const httplib::Request&, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"results":[{"id":"W1","title":"t"}],"meta":{"next_cursor":null}})", "application/json");
  });
  stub.start();
  auto req = harvest::openalex_request(stub.url("/works"), "DK", 2014, 2019, 10);
  auto result = harvest::fetch_paged(req, corpus::Source::OpenAlex, quick());
  CHECK(result.payloads.size() == 1);
  CHECK(result.stats.retries == 1);
  CHECK(result.stats.requests == 2);
}

TEST_CASE("fetch_paged: errors") {
  StubServer stub;
  stub.server.Get("/missing", [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  stub.server.Get("/busy", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  stub.server.Get("/drift", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"items":[]})", "application/json");
  });
  stub.start();
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  auto opts = quick();
  opts.max_attempts = 3;
  CHECK(code_of([&] {
          harvest::fetch_paged(harvest::openalex_request(stub.url("/missing"), "DK", 2014, 2019),
                               corpus::Source::OpenAlex, opts);
        }) == ErrorCode::HttpError);
  CHECK(code_of([&] {
          harvest::fetch_paged(harvest::openalex_request(stub.url("/busy"), "DK", 2014, 2019),
                               corpus::Source::OpenAlex, opts);
        }) == ErrorCode::RetriesExhausted);
  CHECK(code_of([&] {
          harvest::fetch_paged(harvest::openalex_request(stub.url("/drift"), "DK", 2014, 2019),
                               corpus::Source::OpenAlex, opts);
        }) == ErrorCode::SchemaDrift);
}

TEST_CASE("fetch_windows pages OpenAIRE XML and the cache replays offline") {
  StubServer stub;
  std::atomic<int> hits{0};
  stub.server.Get("/pubs", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    int page = std::stoi(req.get_param_value("page"));
    int size = std::stoi(req.get_param_value("size"));
    int total = req.get_param_value("fromDateAccepted") == "2014-01-01" ? 5 : 1;
    int first = (page - 1) * size;
    int offset = total == 5 ? 0 : 100;
    res.set_content(openaire_page(total, offset + first, std::min(size, total - first)), "text/xml");
  });
  stub.start();
  oracle::TempDir cache("cache");
  auto opts = quick();
  opts.cache = harvest::PayloadCache(cache.path());
  auto base = harvest::openaire_request(stub.url("/pubs"), "DK", harvest::make_window("2014-01-01", "2014-12-31"), 2);
  std::vector<DateWindow> windows{harvest::make_window("2014-01-01", "2014-12-31"),
                                  harvest::make_window("2015-01-01", "2015-12-31")};
  auto result = harvest::fetch_windows(base, windows, opts, 2);
  CHECK(result.payloads.size() == 6);
  CHECK(result.stats.requests == 4);
  CHECK(result.payloads.front()["id"] == "oa::0");
  CHECK(result.payloads.back()["id"] == "oa::100");

  int before = hits;
  auto replay = harvest::fetch_windows(base, windows, opts, 2);
  CHECK(hits == before);
  CHECK(replay.stats.cache_hits == 4);
  CHECK(replay.payloads == result.payloads);
  CHECK(std::filesystem::exists(opts.cache->path_for(corpus::Source::OpenAire,
                                                     harvest::request_url(base, corpus::Source::OpenAire))));
}

TEST_CASE("parse_openaire_xml: counts, missing abstract, conflicting languages") {
  std::string xml = R"(<response><header><total>3</total></header><results>
<result><header><dri:objIdentifier>a</dri:objIdentifier></header><metadata><oaf:entity><oaf:result>
<title classid="main title">First</title><description>Has abstract</description>
<language classid="eng"/><language classid="dan"/>
<rels><rel><to class="hasAuthorInstitution">org1</to><legalname>Aarhus University</legalname><country classid="DK"/></rel>
<rel><to class="isProducedBy">g</to><code>694003</code></rel></rels>
</oaf:result></oaf:entity></metadata></result>
<result><header><dri:objIdentifier>b</dri:objIdentifier></header><metadata><oaf:entity><oaf:result>
<title classid="main title">Second</title></oaf:result></oaf:entity></metadata></result>
<result><header></header><metadata><oaf:entity><oaf:result><title>No id</title></oaf:result></oaf:entity></metadata></result>
</results></response>)";
  auto doc = harvest::parse_openaire_xml(xml);
  REQUIRE(doc.payloads.size() == 2);
  CHECK(doc.skipped == 1);
  CHECK(doc.total == 3);
  CHECK(doc.payloads[0]["abstract"] == "Has abstract");
  CHECK(doc.payloads[0]["languages"] == nlohmann::json{"eng", "dan"});
  CHECK(doc.payloads[0]["affiliations"][0]["name"] == "Aarhus University");
  CHECK(doc.payloads[0]["grants"] == nlohmann::json{"694003"});
  CHECK_FALSE(doc.payloads[1].contains("abstract"));
  auto r = corpus::normalize_record(doc.payloads[1], corpus::Source::OpenAire);
  REQUIRE(r);
  CHECK_FALSE(r->abstract_text);
  CHECK_THROWS_AS(harvest::parse_openaire_xml("<response><unclosed>"), Error);
}

TEST_CASE("panel codes") {
  CHECK(harvest::parse_panel_code("PE6") == "PE6");
  CHECK(harvest::parse_panel_code("ERC-2016-STG/ls9") == "LS9");
  CHECK(harvest::parse_panel_code("SH6") == "SH6");
  CHECK_FALSE(harvest::parse_panel_code("PE11"));
  CHECK_FALSE(harvest::parse_panel_code("SH7"));
  CHECK_FALSE(harvest::parse_panel_code(""));
}

TEST_CASE("ingest_cordis: 2,196 rows, participants, missing objective") {
  std::string csv = "projectID,title,objective,panel,participants,countries\n";
  for (int i = 0; i < 2196; ++i) {
    csv += std::to_string(i) + ",Title " + std::to_string(i) + "," + (i == 0 ? "" : "Objective") +
           ",,\"A;B;C\",DK;SE;DK\n";
  }
  corpus::SourceProvenance prov;
  auto records = harvest::ingest_cordis(util::parse_csv(csv), &prov);
  CHECK(records.size() == 2196);
  CHECK(prov.raw_count == 2196);
  CHECK_FALSE(records[0].abstract_text);
  CHECK(records[1].abstract_text == "Objective");
  CHECK(records[1].affiliations.size() == 3);
  CHECK_FALSE(records[1].panel_label);
  CHECK(corpus::filter({records[1]}, {.keep_undated = true}).size() == 1);
  CHECK_THROWS_AS(harvest::ingest_cordis(util::parse_csv("projectID,title\n1,x\n")), Error);
}

TEST_CASE("ingest_kohesio: low-quality descriptions and the pre-filter") {
  std::string csv = "project_id,label,description,beneficiary,country,category\n";
  csv += "k0,Green port,Green port,Port of Aarhus,DK,research and innovation\n";
  csv += "k1,Wind lab,Three word text,DTU,DK,research\n";
  csv += "k2,Heat pumps,A proper description of five or more words,DTU,DK,research\n";
  csv += "k3,Road works,Paving the road through the village again,Kommune,DK,transport\n";
  auto table = util::parse_csv(csv);
  auto records = harvest::ingest_kohesio(table);
  REQUIRE(records.size() == 4);
  CHECK_FALSE(records[0].abstract_text);
  CHECK_FALSE(records[1].abstract_text);
  CHECK(records[2].abstract_text);
  CHECK(records[0].kind == corpus::Kind::Project);

  harvest::KohesioOptions opts;
  opts.prefilter = harvest::category_prefilter({"Research"});
  CHECK(harvest::ingest_kohesio(table, opts).size() == 3);
  CHECK_THROWS_AS(harvest::ingest_kohesio(util::parse_csv("project_id,label\n")), Error);
}

TEST_CASE("ingest_kohesio: 294 rows") {
  std::string csv = "project_id,label,description,beneficiary,country\n";
  for (int i = 0; i < 294; ++i) csv += "k" + std::to_string(i) + ",Label,Some long enough description here,B,DK\n";
  CHECK(harvest::ingest_kohesio(util::parse_csv(csv)).size() == 294);
}

TEST_CASE("link_grant_publications joins on grant id") {
  auto grants = harvest::ingest_cordis(util::parse_csv(
      "projectID,title,objective,panel,participants,countries\n1,G1,o,PE1,A,DK\n2,G2,o,PE2,A,DK\n"));
  std::string pubs = "id,title,projectID\np1,a,1\np2,b,1\np3,c,1\np4,d,99\n";
  auto result = harvest::link_grant_publications(grants, harvest::ingest_cordis_publications(util::parse_csv(pubs)));
  CHECK(result.pairs.size() == 3);
  CHECK(result.dropped == 1);
  for (const auto& [grant, pub] : result.pairs) {
    CHECK(grant == "1");
    CHECK(pub.kind == corpus::Kind::Publication);
  }
}

TEST_CASE("link_grant_publications: PE1-sized fixture") {
  std::string projects = "projectID,title,objective,panel,participants,countries\n";
  for (int g = 0; g < 40; ++g) projects += std::to_string(g) + ",G,o,PE1,A,DK\n";
  std::string pubs = "id,title,projectID\n";
  for (int i = 0; i < 456; ++i) pubs += "p" + std::to_string(i) + ",t," + std::to_string(i % 40) + "\n";
  auto result = harvest::link_grant_publications(harvest::ingest_cordis(util::parse_csv(projects)),
                                                 harvest::ingest_cordis_publications(util::parse_csv(pubs)));
  CHECK(result.pairs.size() == 456);
  CHECK(result.dropped == 0);
}

}
