#include <doctest.h>

#include <atomic>
#include <set>

#include "oracles.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/util.hpp"

using namespace atlas;

TEST_SUITE("util") {

TEST_CASE("utf8 lower-casing covers Latin-1 and Greek") {
  CHECK(util::to_lower("KØBENHAVN Ærø") == "københavn ærø");
  CHECK(util::to_lower("ΚΛΙΜΑ") == "κλιμα");
  CHECK(util::utf8_decode("é").size() == 1);
}

TEST_CASE("csv parse handles quotes, embedded commas and newlines") {
  auto t = util::parse_csv("a,b,c\r\n1,\"x, y\",\"he said \"\"hi\"\"\"\n2,\"multi\nline\",\n");
  REQUIRE(t.header == util::CsvRow{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x, y");
  CHECK(t.rows[0][2] == "he said \"hi\"");
  CHECK(t.rows[1][1] == "multi\nline");
  CHECK(t.rows[1][2] == "");
  CHECK(t.column("c") == 2);
  CHECK(t.column("zz") == -1);
}

TEST_CASE("csv rows round trip through format and parse") {
  util::CsvRow row{"plain", "with,comma", "with \"quote\"", "", "line\nbreak"};
  auto text = util::format_csv_row({"h1", "h2", "h3", "h4", "h5"}) + util::format_csv_row(row);
  auto t = util::parse_csv(text);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0] == row);
}

TEST_CASE("sha256 matches the standard test vectors") {
  CHECK(util::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(util::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("atomic write then read returns the same bytes") {
  oracle::TempDir dir("util");
  std::string bytes("a\0b\xff", 4);
  util::write_file_atomic(dir / "sub/f.bin", bytes);
  CHECK(util::read_file(dir / "sub/f.bin") == bytes);
  CHECK_THROWS_AS(util::read_file(dir / "missing"), Error);
}

TEST_CASE("sample draws distinct items and respects the cap") {
  std::vector<int> pool(100);
  for (int i = 0; i < 100; ++i) pool[i] = i;
  util::Rng a(5), b(5);
  auto s1 = util::sample(pool, 30, a);
  auto s2 = util::sample(pool, 30, b);
  CHECK(s1 == s2);
  CHECK(std::set<int>(s1.begin(), s1.end()).size() == 30);
  util::Rng c(5);
  CHECK(util::sample(pool, 500, c).size() == 100);
}

TEST_CASE("uniform_below stays in range") {
  util::Rng rng(1);
  for (int i = 0; i < 10000; ++i) CHECK(util::uniform_below(rng, 7) < 7);
  for (int i = 0; i < 1000; ++i) {
    double u = util::uniform01(rng);
    CHECK((u >= 0.0 && u < 1.0));
  }
}

TEST_CASE("parallel_for visits every index once") {
  for (std::size_t workers : {1u, 2u, 7u}) {
    std::vector<std::atomic<int>> hits(1001);
    util::parallel_for(hits.size(), workers, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

}
