#include "sti_atlas/vocab.hpp"

#include <algorithm>
#include <thread>

#include "sti_atlas/error.hpp"
#include "sti_atlas/util.hpp"

namespace atlas::vocab {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char32_t cp : util::utf8_decode(text)) {
    if (util::is_word_char(cp)) {
      util::utf8_append(current, util::to_lower(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string Term::text() const {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::string_view to_string(Field field) { return field == Field::Title ? "title" : "abstract"; }

namespace {

// Smallest inclusive end position of a match starting exactly at `start`.
std::optional<std::size_t> shortest_end(const std::vector<int>& term, bool permute, int gap,
                                        const std::vector<int>& text, std::size_t start) {
  const std::size_t m = term.size();
  const std::size_t n = text.size();
  const std::size_t step = static_cast<std::size_t>(gap) + 1;
  const std::size_t width = std::min(n - start, (m - 1) * step + 1);

  if (!permute) {
    if (text[start] != term[0]) return std::nullopt;
    if (m == 1) return start;
    std::vector<char> current(width, 0);
    std::vector<char> next(width, 0);
    current[0] = 1;
    for (std::size_t i = 1; i < m; ++i) {
      std::fill(next.begin(), next.end(), 0);
      bool any = false;
      for (std::size_t off = 0; off < width; ++off) {
        if (!current[off]) continue;
        for (std::size_t q = off + 1; q < width && q <= off + step; ++q) {
          if (text[start + q] == term[i]) {
            next[q] = 1;
            any = true;
          }
        }
      }
      if (!any) return std::nullopt;
      std::swap(current, next);
    }
    for (std::size_t off = 0; off < width; ++off) {
      if (current[off]) return start + off;
    }
    return std::nullopt;
  }

  // Permutation: DP over (offset, used-term-indices). Duplicate term tokens
  // are interchangeable, so each text token claims the lowest free index.
  auto claim = [&](int token, std::uint64_t mask) -> int {
    for (std::size_t i = 0; i < m; ++i) {
      if (term[i] == token && !(mask & (std::uint64_t{1} << i))) return static_cast<int>(i);
    }
    return -1;
  };
  int first = claim(text[start], 0);
  if (first < 0) return std::nullopt;
  if (m == 1) return start;
  const std::uint64_t full = m == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << m) - 1;
  std::vector<std::vector<std::uint64_t>> states(width);
  states[0].push_back(std::uint64_t{1} << first);
  std::optional<std::size_t> best;
  for (std::size_t off = 0; off < width; ++off) {
    if (best && off >= *best) break;
    auto& masks = states[off];
    std::sort(masks.begin(), masks.end());
    masks.erase(std::unique(masks.begin(), masks.end()), masks.end());
    for (std::uint64_t mask : masks) {
      for (std::size_t q = off + 1; q < width && q <= off + step; ++q) {
        if (best && q >= *best) break;
        int idx = claim(text[start + q], mask);
        if (idx < 0) continue;
        std::uint64_t next = mask | (std::uint64_t{1} << idx);
        if (next == full) {
          best = q;
          break;
        }
        states[q].push_back(next);
      }
    }
  }
  if (!best) return std::nullopt;
  return start + *best;
}

std::vector<Span> collapse_scan(const std::vector<int>& term, bool permute, int gap, const std::vector<int>& text) {
  std::vector<Span> spans;
  std::size_t s = 0;
  while (s < text.size()) {
    if (auto end = shortest_end(term, permute, gap, text, s)) {
      spans.push_back(Span{s, *end + 1});
      s = *end + 1;
    } else {
      ++s;
    }
  }
  return spans;
}

void validate_term(const Term& term) {
  if (term.tokens.empty()) throw Error(ErrorCode::SchemaError, "term has no tokens");
  if (term.tokens.size() > kMaxTermTokens) {
    throw Error(ErrorCode::SchemaError, "term '" + term.text() + "' exceeds " + std::to_string(kMaxTermTokens) + " tokens");
  }
  if (term.max_gap < 0 || term.max_gap > kMaxGapCap) {
    throw Error(ErrorCode::SchemaError, "term '" + term.text() + "' has max_gap " + std::to_string(term.max_gap) +
                                            " outside [0, " + std::to_string(kMaxGapCap) + "]");
  }
}

}  // namespace

std::vector<Span> match_term(const Term& term, const std::vector<std::string>& tokens) {
  validate_term(term);
  std::vector<int> term_ids;
  std::vector<std::string> dictionary;
  for (const auto& t : term.tokens) {
    auto it = std::find(dictionary.begin(), dictionary.end(), t);
    if (it == dictionary.end()) {
      dictionary.push_back(t);
      term_ids.push_back(static_cast<int>(dictionary.size() - 1));
    } else {
      term_ids.push_back(static_cast<int>(it - dictionary.begin()));
    }
  }
  std::vector<int> text_ids;
  text_ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = std::find(dictionary.begin(), dictionary.end(), t);
    text_ids.push_back(it == dictionary.end() ? -1 : static_cast<int>(it - dictionary.begin()));
  }
  return collapse_scan(term_ids, term.allow_permutation, term.max_gap, text_ids);
}

// ---- compiled vocabulary --------------------------------------------------

CompiledVocabulary::CompiledVocabulary(std::vector<Concept> concepts) : concepts_(std::move(concepts)) {
  if (concepts_.empty()) throw Error(ErrorCode::EmptyVocabulary, "vocabulary defines no concepts");
  term_ids_.resize(concepts_.size());
  for (std::uint32_t c = 0; c < concepts_.size(); ++c) {
    auto& concept_ = concepts_[c];
    if (concept_.terms.empty()) throw Error(ErrorCode::SchemaError, "concept '" + concept_.label + "' has no terms");
    // Remove duplicates, keeping first occurrence.
    std::vector<Term> unique;
    for (auto& t : concept_.terms) {
      validate_term(t);
      if (std::find(unique.begin(), unique.end(), t) == unique.end()) unique.push_back(std::move(t));
    }
    concept_.terms = std::move(unique);

    for (std::uint32_t t = 0; t < concept_.terms.size(); ++t) {
      const Term& term = concept_.terms[t];
      std::vector<int> ids;
      for (const auto& token : term.tokens) {
        auto [it, inserted] = token_ids_.try_emplace(token, static_cast<int>(token_ids_.size()));
        ids.push_back(it->second);
      }
      term_ids_[c].push_back(std::move(ids));
      TermRef ref{c, t};
      if (term.allow_permutation) {
        std::set<std::string> entry_points(term.tokens.begin(), term.tokens.end());
        for (const auto& token : entry_points) token_index_[token].push_back(ref);
      } else {
        token_index_[term.tokens.front()].push_back(ref);
      }
    }
  }
}

const std::vector<CompiledVocabulary::TermRef>& CompiledVocabulary::candidates(std::string_view token) const {
  static const std::vector<TermRef> kNone;
  auto it = token_index_.find(token);
  return it == token_index_.end() ? kNone : it->second;
}

std::size_t CompiledVocabulary::term_count() const {
  std::size_t n = 0;
  for (const auto& c : concepts_) n += c.terms.size();
  return n;
}

std::vector<int> CompiledVocabulary::to_ids(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = token_ids_.find(t);
    ids.push_back(it == token_ids_.end() ? -1 : it->second);
  }
  return ids;
}

std::vector<Span> CompiledVocabulary::match_ids(const TermRef& ref, const std::vector<int>& token_ids) const {
  const Term& term = concepts_[ref.concept_index].terms[ref.term_index];
  return collapse_scan(term_ids_[ref.concept_index][ref.term_index], term.allow_permutation, term.max_gap, token_ids);
}

namespace {

Term parse_term(const nlohmann::json& j, const std::string& concept_label) {
  Term term;
  if (j.is_string()) {
    term.tokens = tokenize(j.get<std::string>());
  } else if (j.is_object()) {
    if (!j.contains("tokens") || !j["tokens"].is_array()) {
      throw Error(ErrorCode::SchemaError, "term in concept '" + concept_label + "' lacks a tokens list");
    }
    for (const auto& tok : j["tokens"]) {
      if (!tok.is_string()) throw Error(ErrorCode::SchemaError, "non-string token in concept '" + concept_label + "'");
      for (auto& piece : tokenize(tok.get<std::string>())) term.tokens.push_back(std::move(piece));
    }
    if (j.contains("allow_permutation")) {
      if (!j["allow_permutation"].is_boolean()) {
        throw Error(ErrorCode::SchemaError, "allow_permutation must be boolean in concept '" + concept_label + "'");
      }
      term.allow_permutation = j["allow_permutation"].get<bool>();
    }
    if (j.contains("max_gap")) {
      if (!j["max_gap"].is_number_integer()) {
        throw Error(ErrorCode::SchemaError, "max_gap must be an integer in concept '" + concept_label + "'");
      }
      term.max_gap = j["max_gap"].get<int>();
    }
  } else {
    throw Error(ErrorCode::SchemaError, "term in concept '" + concept_label + "' is neither string nor object");
  }
  if (term.tokens.empty()) throw Error(ErrorCode::SchemaError, "empty term in concept '" + concept_label + "'");
  return term;
}

}  // namespace

CompiledVocabulary compile_vocabulary(const nlohmann::json& document) {
  if (!document.is_object() || !document.contains("goals") || !document["goals"].is_array()) {
    throw Error(ErrorCode::SchemaError, "vocabulary must be an object with a 'goals' list");
  }
  std::vector<Concept> concepts;
  for (const auto& g : document["goals"]) {
    if (!g.is_object() || !g.contains("goal") || !g["goal"].is_number_integer()) {
      throw Error(ErrorCode::SchemaError, "goal entry lacks an integer 'goal'");
    }
    int goal = g["goal"].get<int>();
    if (goal < 1 || goal > 17) throw Error(ErrorCode::SchemaError, "goal " + std::to_string(goal) + " outside 1..17");
    if (!g.contains("concepts") || !g["concepts"].is_array()) {
      throw Error(ErrorCode::SchemaError, "goal " + std::to_string(goal) + " lacks a concepts list");
    }
    for (const auto& c : g["concepts"]) {
      Concept concept_;
      concept_.goal = goal;
      if (!c.is_object() || !c.contains("label") || !c["label"].is_string()) {
        throw Error(ErrorCode::SchemaError, "concept under goal " + std::to_string(goal) + " lacks a label");
      }
      concept_.label = c["label"].get<std::string>();
      if (c.contains("target") && c["target"].is_string()) concept_.target = c["target"].get<std::string>();
      if (!c.contains("terms") || !c["terms"].is_array() || c["terms"].empty()) {
        throw Error(ErrorCode::SchemaError, "concept '" + concept_.label + "' has no terms");
      }
      for (const auto& t : c["terms"]) concept_.terms.push_back(parse_term(t, concept_.label));
      concepts.push_back(std::move(concept_));
    }
  }
  return CompiledVocabulary(std::move(concepts));
}

CompiledVocabulary compile_vocabulary(const std::filesystem::path& path) {
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return compile_vocabulary(document);
}

// ---- tagging --------------------------------------------------------------

namespace {

void tag_field(const std::vector<std::string>& tokens, Field field, const CompiledVocabulary& vocab,
               std::vector<Match>& out) {
  if (tokens.empty()) return;
  std::vector<CompiledVocabulary::TermRef> refs;
  std::set<std::string_view> seen;
  for (const auto& t : tokens) {
    if (!seen.insert(t).second) continue;
    for (const auto& ref : vocab.candidates(t)) refs.push_back(ref);
  }
  std::sort(refs.begin(), refs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.concept_index, a.term_index) < std::tie(b.concept_index, b.term_index);
  });
  refs.erase(std::unique(refs.begin(), refs.end()), refs.end());

  auto ids = vocab.to_ids(tokens);
  for (const auto& ref : refs) {
    const Concept& concept_ = vocab.concepts()[ref.concept_index];
    const Term& term = concept_.terms[ref.term_index];
    for (const auto& span : vocab.match_ids(ref, ids)) {
      out.push_back(Match{concept_.label, term.text(), span.start, span.end, field, concept_.goal});
    }
  }
}

}  // namespace

TagResult tag_text(std::string record_id, std::string_view title, std::string_view abstract_text,
                   const CompiledVocabulary& vocab, const TagOptions& options) {
  TagResult result;
  result.record_id = std::move(record_id);
  tag_field(tokenize(title), Field::Title, vocab, result.matches);
  tag_field(tokenize(abstract_text), Field::Abstract, vocab, result.matches);

  std::map<int, int> hits;
  for (const auto& m : result.matches) ++hits[m.goal];
  for (const auto& [goal, count] : hits) {
    if (count >= std::max(1, options.min_hits)) result.goals.insert(goal);
  }
  return result;
}

TagResult tag_record(const corpus::Record& record, const CompiledVocabulary& vocab, const TagOptions& options) {
  return tag_text(corpus::qualified_id(record), record.title, record.abstract_text.value_or(""), vocab, options);
}

std::map<std::string, TagResult> tag_corpus(const std::vector<corpus::Record>& records,
                                            const CompiledVocabulary& vocab, const TagOptions& options,
                                            std::size_t workers) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<TagResult> results(records.size());
  util::parallel_for(records.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) results[i] = tag_record(records[i], vocab, options);
  });
  std::map<std::string, TagResult> out;
  for (auto& r : results) {
    std::string key = r.record_id;
    out.insert_or_assign(std::move(key), std::move(r));
  }
  return out;
}

// ---- serialization --------------------------------------------------------

nlohmann::ordered_json to_json(const TagResult& result) {
  nlohmann::ordered_json j;
  j["record_id"] = result.record_id;
  j["goals"] = result.goals;
  auto matches = nlohmann::ordered_json::array();
  for (const auto& m : result.matches) {
    nlohmann::ordered_json mj;
    mj["concept"] = m.concept_label;
    mj["term"] = m.term;
    mj["goal"] = m.goal;
    mj["field"] = to_string(m.field);
    mj["start"] = m.start;
    mj["end"] = m.end;
    matches.push_back(std::move(mj));
  }
  j["matches"] = std::move(matches);
  return j;
}

TagResult tag_result_from_json(const nlohmann::json& j) {
  try {
    TagResult r;
    r.record_id = j.at("record_id").get<std::string>();
    r.goals = j.at("goals").get<std::set<int>>();
    for (const auto& mj : j.at("matches")) {
      Match m;
      m.concept_label = mj.at("concept").get<std::string>();
      m.term = mj.at("term").get<std::string>();
      m.goal = mj.at("goal").get<int>();
      m.field = mj.at("field").get<std::string>() == "title" ? Field::Title : Field::Abstract;
      m.start = mj.at("start").get<std::size_t>();
      m.end = mj.at("end").get<std::size_t>();
      r.matches.push_back(std::move(m));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bad tag result: ") + e.what());
  }
}

void write_tags(const std::filesystem::path& path, const std::map<std::string, TagResult>& tags) {
  std::string out;
  for (const auto& [id, r] : tags) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  util::write_file_atomic(path, out);
}

std::map<std::string, TagResult> read_tags(const std::filesystem::path& path) {
  std::map<std::string, TagResult> tags;
  for (const auto& line : util::split(util::read_file(path), '\n')) {
    if (util::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
    }
    auto r = tag_result_from_json(j);
    std::string key = r.record_id;
    tags.emplace(std::move(key), std::move(r));
  }
  return tags;
}

}  // namespace atlas::vocab
