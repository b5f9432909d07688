#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "sti_atlas/analytics.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/pipeline.hpp"
#include "sti_atlas/util.hpp"

using namespace atlas;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = STI_ATLAS_FIXTURE_DIR;

std::string config_error(const std::string& text) {
  try {
    pipeline::parse_config(text, ".");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    return e.what();
  }
  return {};
}

// Copy of the fixture with config.toml rewritten by `edit`.
void copy_fixture(const fs::path& to, const std::function<std::string(std::string)>& edit = {}) {
  fs::copy(kFixture, to, fs::copy_options::recursive);
  if (edit) util::write_file_atomic(to / "config.toml", edit(util::read_file(to / "config.toml")));
}

int run(const std::string& sub, const fs::path& config, const fs::path& out, std::string* err = nullptr,
        bool dry = false) {
  std::ostringstream o, e;
  pipeline::RunOptions opt{sub, config, out, std::nullopt, dry};
  int code = pipeline::run(opt, o, e);
  if (err) *err = e.str() + o.str();
  return code;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), dir).string()] = util::read_file(entry.path());
  }
  return files;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config parsing: values and defaults") {
  auto c = pipeline::parse_config(R"(
# comment
[run]
seed = 11
country = "DK"   # inline comment
year_from = 2015
[harvest]
openaire = false
kohesio_categories = ["research", "innovation"]
[embed]
provider = "FALLBACK_HASH"
dim = 32
[topics]
k = 5
perplexity = 12.5
)", "/base");
  CHECK(c.seed == 11);
  CHECK(c.year_from == 2015);
  CHECK(c.year_to == 2019);
  CHECK_FALSE(c.harvest.openaire);
  CHECK(c.harvest.kohesio_categories == std::vector<std::string>{"research", "innovation"});
  CHECK(c.embed.provider.kind == embed::ProviderKind::FallbackHash);
  CHECK(c.embed.provider.params.at("dim") == "32");
  CHECK(c.topics.k == 5);
  CHECK(c.topics.perplexity == 12.5);
  CHECK(c.base_dir == fs::path("/base"));
}

TEST_CASE("config errors name the fields") {
  auto msg = config_error("[run]\ncountry = \"DK\"\n");
  CHECK(msg.find("run.seed") != std::string::npos);
  msg = config_error("[run]\nseed = 1\nbogus = 2\n[topics]\nk = \"many\"\n[panels]\npercentile = 140\n");
  CHECK(msg.find("run.bogus") != std::string::npos);
  CHECK(msg.find("topics.k") != std::string::npos);
  CHECK(msg.find("panels.percentile") != std::string::npos);
  msg = config_error("[run]\nseed = 1\ncountry = DK\n");
  CHECK(msg.find("run.country") != std::string::npos);
  msg = config_error("[run]\nseed = 1\nyear_from = 2020\nyear_to = 2014\n");
  CHECK(msg.find("year") != std::string::npos);
}

TEST_CASE("stages") {
  auto all = pipeline::stages_for("all");
  CHECK(all.size() == 6);
  CHECK(all.front() == pipeline::Stage::Harvest);
  CHECK(all.back() == pipeline::Stage::Report);
  CHECK(pipeline::stages_for("topics") == std::vector<pipeline::Stage>{pipeline::Stage::Topics});
  CHECK_THROWS_AS(pipeline::stages_for("deploy"), Error);
}

TEST_CASE("tag with a missing vocabulary exits 1 naming the field") {
  oracle::TempDir dir("pipe");
  copy_fixture(dir / "fx", [](std::string s) {
    auto at = s.find("vocabulary.json");
    return s.replace(at, 15, "nowhere.json");
  });
  fs::create_directories(dir / "out");
  util::write_file_atomic(dir / "out/corpus.jsonl", "");
  std::string err;
  CHECK(run("tag", dir / "fx/config.toml", dir / "out", &err) == 1);
  CHECK(err.find("tag.vocabulary") != std::string::npos);
}

TEST_CASE("missing predecessor output exits 1") {
  oracle::TempDir dir("pipe");
  std::string err;
  CHECK(run("topics", kFixture / "config.toml", dir / "out", &err) == 1);
  CHECK(err.find("sdg.emb1") != std::string::npos);
}

TEST_CASE("dry run validates, prints the plan and writes nothing") {
  oracle::TempDir dir("pipe");
  std::string out;
  CHECK(run("all", kFixture / "config.toml", dir / "out", &out, true) == 0);
  CHECK(out.find("harvest") != std::string::npos);
  CHECK(out.find("report") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("all on the fixture, then stages re-run from files") {
  oracle::TempDir dir("pipe");
  std::string err;
  REQUIRE(run("all", kFixture / "config.toml", dir / "a", &err) == 0);
  for (auto stage : pipeline::stages_for("all")) {
    for (const auto& f : pipeline::stage_outputs(stage)) CHECK(fs::exists(dir / "a" / f));
  }
  auto first = snapshot(dir / "a");

  // Each stage re-runs from its predecessors' files and reproduces them.
  for (const char* sub : {"tag", "topics", "report"}) {
    REQUIRE(run(sub, kFixture / "config.toml", dir / "a", &err) == 0);
  }
  CHECK(snapshot(dir / "a") == first);

  auto shares = analytics::parse_share_csv(util::read_file(dir / "a/report/sdg_share.csv"));
  CHECK(shares.size() == 4);
  for (const auto& row : shares) {
    CHECK(row.tagged <= row.total);
    CHECK(row.share_tenths == analytics::share_tenths(row.tagged, row.total));
  }
}

TEST_CASE("seed override changes seeded artifacts only through the seed") {
  oracle::TempDir dir("pipe");
  std::ostringstream o, e;
  pipeline::RunOptions opt{"all", kFixture / "config.toml", dir / "s", std::uint64_t{8}, false};
  REQUIRE(pipeline::run(opt, o, e) == 0);
  auto manifest = nlohmann::json::parse(util::read_file(dir / "s/report/manifest.json"));
  CHECK(manifest["params"]["seed"] == 8);
}

TEST_CASE("corrupt stage input is a runtime failure") {
  oracle::TempDir dir("pipe");
  REQUIRE(run("harvest", kFixture / "config.toml", dir / "c") == 0);
  util::write_file_atomic(dir / "c/corpus.jsonl", "{not json\n");
  std::string err;
  CHECK(run("tag", kFixture / "config.toml", dir / "c", &err) == 2);
  CHECK_FALSE(err.empty());
}

}
