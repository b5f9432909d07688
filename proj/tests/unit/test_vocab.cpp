#include <doctest.h>

#include "generators.hpp"
#include "oracles.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/vocab.hpp"

using namespace atlas;
using vocab::Span;
using vocab::Term;

namespace {

std::vector<std::string> toks(const std::string& s) { return oracle::split_ws(s); }

vocab::CompiledVocabulary climate_vocab() {
  return vocab::compile_vocabulary(nlohmann::json::parse(R"({"goals":[{"goal":13,"concepts":[
    {"label":"ghg","terms":["greenhouse gas emissions",{"tokens":["climate","adaptation"],"max_gap":2}]}]}]})"));
}

}  // namespace

TEST_SUITE("vocab") {

TEST_CASE("tokenize") {
  CHECK(vocab::tokenize("Climate-change, adaptation!") == std::vector<std::string>{"climate", "change", "adaptation"});
  CHECK(vocab::tokenize("").empty());
  CHECK(vocab::tokenize("CO2 emissions") == std::vector<std::string>{"co2", "emissions"});
  CHECK(vocab::tokenize("Ærø's  ÉNERGIE") == std::vector<std::string>{"ærø", "s", "énergie"});
}

TEST_CASE("compile: index entries and dedup") {
  auto v = vocab::compile_vocabulary(nlohmann::json::parse(R"({"goals":[{"goal":13,"concepts":[
    {"label":"sea","terms":["sea level rise","Sea level rise"]},
    {"label":"wind","terms":[{"tokens":["wind","energy"],"allow_permutation":true}]}]}]})"));
  CHECK(v.term_count() == 2);
  CHECK(v.candidates("sea").size() == 1);
  CHECK(v.candidates("level").empty());
  CHECK(v.candidates("wind").size() == 1);
  CHECK(v.candidates("energy").size() == 1);
  CHECK(v.concepts()[0].terms[0].max_gap == vocab::kDefaultMaxGap);
  CHECK_FALSE(v.concepts()[0].terms[0].allow_permutation);
}

TEST_CASE("compile: schema errors") {
  auto code = [](const char* text) {
    try {
      vocab::compile_vocabulary(nlohmann::json::parse(text));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code(R"({"goals":[]})") == ErrorCode::EmptyVocabulary);
  CHECK(code(R"({"nope":1})") == ErrorCode::SchemaError);
  CHECK(code(R"({"goals":[{"goal":18,"concepts":[]}]})") == ErrorCode::SchemaError);
  CHECK(code(R"({"goals":[{"goal":13,"concepts":[{"label":"x","terms":[]}]}]})") == ErrorCode::SchemaError);
  CHECK(code(R"({"goals":[{"goal":13,"concepts":[{"label":"x","terms":[{"tokens":["a"],"max_gap":11}]}]}]})") ==
        ErrorCode::SchemaError);
  CHECK(code(R"({"goals":[{"goal":13,"concepts":[{"label":"x","terms":["!!"]}]}]})") == ErrorCode::SchemaError);
}

TEST_CASE("every term is reachable from the index under any allowed order") {
  gen::Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    vocab::CompiledVocabulary v(gen::random_concepts(rng, 6));
    for (std::uint32_t c = 0; c < v.concepts().size(); ++c) {
      for (std::uint32_t t = 0; t < v.concepts()[c].terms.size(); ++t) {
        const auto& term = v.concepts()[c].terms[t];
        std::vector<std::string> entries = term.allow_permutation ? term.tokens : std::vector{term.tokens[0]};
        for (const auto& e : entries) {
          const auto& refs = v.candidates(e);
          CHECK(std::find(refs.begin(), refs.end(), vocab::CompiledVocabulary::TermRef{c, t}) != refs.end());
        }
      }
    }
  }
}

TEST_CASE("match_term examples") {
  CHECK(vocab::match_term({{"sea", "level", "rise"}, false, 0}, toks("the global sea level rise is")) ==
        std::vector<Span>{{2, 5}});
  CHECK(vocab::match_term({{"climate", "adaptation"}, false, 2}, toks("climate change driven adaptation")) ==
        std::vector<Span>{{0, 4}});
  CHECK(vocab::match_term({{"climate", "adaptation"}, false, 1}, toks("climate change driven adaptation")).empty());
  CHECK(vocab::match_term({{"energy", "wind"}, true, 0}, toks("wind energy farms")) == std::vector<Span>{{0, 2}});
  CHECK(vocab::match_term({{"energy", "wind"}, false, 0}, toks("wind energy farms")).empty());
  // Overlaps collapse leftmost-shortest.
  CHECK(vocab::match_term({{"a", "b"}, false, 2}, toks("a a b b")) == std::vector<Span>{{0, 3}});
  CHECK(vocab::match_term({{"a"}, false, 0}, toks("a x a")) == std::vector<Span>{{0, 1}, {2, 3}});
}

TEST_CASE("match_term equals the enumerating oracle") {
  gen::Rng rng(5);
  for (int trial = 0; trial < 3000; ++trial) {
    Term term;
    int len = 1 + gen::below(rng, 3);
    for (int i = 0; i < len; ++i) term.tokens.push_back(gen::word(rng, 4));
    term.allow_permutation = gen::below(rng, 2);
    term.max_gap = gen::below(rng, 4);
    auto text = toks(gen::random_text(rng, 40, 5));
    INFO(term.text(), " perm=", term.allow_permutation, " gap=", term.max_gap, " | ", oracle::join(text));
    REQUIRE(vocab::match_term(term, text) == oracle::brute_match(term, text));
  }
}

TEST_CASE("ordered candidates are a subset of permutation candidates") {
  gen::Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    Term ordered;
    int len = 1 + gen::below(rng, 3);
    for (int i = 0; i < len; ++i) ordered.tokens.push_back(gen::word(rng, 3));
    ordered.max_gap = gen::below(rng, 3);
    Term permuted = ordered;
    permuted.allow_permutation = true;
    auto text = toks(gen::random_text(rng, 30, 4));
    auto oc = oracle::brute_candidates(ordered, text);
    auto pc = oracle::brute_candidates(permuted, text);
    for (const auto& s : oc) CHECK(pc.count(s) == 1);
    // Collapsed spans: every ordered span overlaps some permutation span.
    auto os = vocab::match_term(ordered, text);
    auto ps = vocab::match_term(permuted, text);
    if (!os.empty()) CHECK_FALSE(ps.empty());
    for (const auto& s : os) {
      bool overlaps = std::any_of(ps.begin(), ps.end(), [&](const Span& p) { return p.start < s.end && s.start < p.end; });
      CHECK(overlaps);
    }
  }
}

TEST_CASE("matching ignores case") {
  auto v = climate_vocab();
  auto lower = vocab::tag_text("x", "", "reducing greenhouse gas emissions through climate policy adaptation", v);
  auto upper = vocab::tag_text("x", "", "REDUCING Greenhouse GAS Emissions through CLIMATE Policy ADAPTATION", v);
  CHECK(lower == upper);
  CHECK(lower.matches.size() == 2);
}

TEST_CASE("raising max_gap never loses matched records") {
  gen::Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto concepts = gen::random_concepts(rng, 8);
    std::vector<std::string> texts;
    for (int i = 0; i < 50; ++i) texts.push_back(gen::random_text(rng, 30, 10));
    std::size_t previous = 0;
    for (int gap = 0; gap <= 4; ++gap) {
      auto cs = concepts;
      for (auto& c : cs) {
        for (auto& t : c.terms) t.max_gap = gap;
      }
      vocab::CompiledVocabulary v(cs);
      std::size_t matched = 0;
      for (const auto& t : texts) matched += !vocab::tag_text("r", t, "", v).goals.empty();
      CHECK(matched >= previous);
      previous = matched;
    }
  }
}

TEST_CASE("tag_record: direct hit and title fallback") {
  auto v = climate_vocab();
  corpus::Record r;
  r.id = "1";
  r.title = "A study";
  r.abstract_text = "Cutting greenhouse gas emissions in Denmark.";
  auto tagged = vocab::tag_record(r, v);
  CHECK(tagged.goals == std::set<int>{13});
  REQUIRE(tagged.matches.size() == 1);
  CHECK(tagged.matches[0].field == vocab::Field::Abstract);
  CHECK(tagged.matches[0].start == 1);
  CHECK(tagged.matches[0].end == 4);

  corpus::Record t;
  t.id = "2";
  t.title = "Greenhouse gas emissions of shipping";
  auto title_only = vocab::tag_record(t, v);
  CHECK(title_only.goals == std::set<int>{13});
  CHECK(title_only.matches[0].field == vocab::Field::Title);

  corpus::Record empty;
  empty.id = "3";
  CHECK(vocab::tag_record(empty, v).goals.empty());
}

TEST_CASE("min_hits raises the bar") {
  auto v = climate_vocab();
  CHECK(vocab::tag_text("x", "greenhouse gas emissions", "", v, {2}).goals.empty());
  CHECK(vocab::tag_text("x", "greenhouse gas emissions", "greenhouse gas emissions", v, {2}).goals ==
        std::set<int>{13});
}

TEST_CASE("200-record corpus matches the brute-force tagger") {
  gen::Rng rng(9);
  auto concepts = gen::random_concepts(rng, 8);
  vocab::CompiledVocabulary v(concepts);
  for (int i = 0; i < 200; ++i) {
    auto title = gen::random_text(rng, 12, 8);
    auto abstract_text = gen::random_text(rng, 80, 8);
    auto got = vocab::tag_text(std::to_string(i), title, abstract_text, v);
    auto want = oracle::brute_tag(concepts, title, abstract_text, 1);
    CHECK(got.goals == want.goals);
    CHECK(oracle::match_keys(got) == want.matches);
  }
}

TEST_CASE("tag_corpus: sizes and worker independence") {
  auto v = climate_vocab();
  CHECK(vocab::tag_corpus({}, v).empty());
  std::vector<corpus::Record> records(2);
  records[0].id = "a";
  records[0].title = "greenhouse gas emissions";
  records[1].id = "b";
  records[1].title = "medieval manuscripts";
  auto tags = vocab::tag_corpus(records, v);
  REQUIRE(tags.size() == 2);
  CHECK(tags.at("openalex:a").goals == std::set<int>{13});
  CHECK(tags.at("openalex:b").goals.empty());

  gen::Rng rng(10);
  std::vector<corpus::Record> many(300);
  for (std::size_t i = 0; i < many.size(); ++i) {
    many[i].id = std::to_string(i);
    many[i].title = gen::random_text(rng, 10, 6);
    many[i].abstract_text = gen::random_text(rng, 50, 6);
  }
  vocab::CompiledVocabulary rv(gen::random_concepts(rng, 6));
  CHECK(vocab::tag_corpus(many, rv, {}, 1) == vocab::tag_corpus(many, rv, {}, 4));
}

TEST_CASE("tags JSONL round trip") {
  oracle::TempDir dir("tags");
  auto v = climate_vocab();
  std::map<std::string, vocab::TagResult> tags;
  tags["cordis:1"] = vocab::tag_text("cordis:1", "greenhouse gas emissions", "climate or adaptation", v);
  tags["cordis:2"] = vocab::tag_text("cordis:2", "nothing", "", v);
  vocab::write_tags(dir / "tags.jsonl", tags);
  CHECK(vocab::read_tags(dir / "tags.jsonl") == tags);
}

}
