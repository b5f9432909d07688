#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sti_atlas/corpus.hpp"

namespace atlas::vocab {

inline constexpr int kMaxGapCap = 10;
inline constexpr int kDefaultMaxGap = 2;
inline constexpr std::size_t kMaxTermTokens = 32;

// Lower-cased runs of letters and digits. Every other character, hyphens
// included, separates tokens. No stemming.
std::vector<std::string> tokenize(std::string_view text);

struct Term {
  std::vector<std::string> tokens;
  bool allow_permutation = false;
  int max_gap = kDefaultMaxGap;  // tokens allowed between consecutive matched tokens

  std::string text() const;  // tokens joined by spaces
  bool operator==(const Term&) const = default;
};

struct Concept {
  std::string label;
  int goal = 0;  // SDG 1..17
  std::optional<std::string> target;
  std::vector<Term> terms;
};

// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
  auto operator<=>(const Span&) const = default;
};

// Matches of one term in a token sequence. A candidate is a set of positions
// holding the term tokens (in order, or in any order when permutations are
// allowed) with at most max_gap tokens between consecutive positions.
// Overlapping candidates collapse to leftmost-shortest, left to right.
std::vector<Span> match_term(const Term& term, const std::vector<std::string>& tokens);

enum class Field { Title, Abstract };
std::string_view to_string(Field field);

struct Match {
  std::string concept_label;
  std::string term;
  std::size_t start = 0;
  std::size_t end = 0;
  Field field = Field::Title;
  int goal = 0;

  bool operator==(const Match&) const = default;
};

struct TagResult {
  std::string record_id;
  std::set<int> goals;
  std::vector<Match> matches;

  bool operator==(const TagResult&) const = default;
};

class CompiledVocabulary {
 public:
  struct TermRef {
    std::uint32_t concept_index;
    std::uint32_t term_index;
    bool operator==(const TermRef&) const = default;
  };

  explicit CompiledVocabulary(std::vector<Concept> concepts);

  const std::vector<Concept>& concepts() const { return concepts_; }
  // Terms that can start a match at `token`.
  const std::vector<TermRef>& candidates(std::string_view token) const;
  const std::map<std::string, std::vector<TermRef>, std::less<>>& token_index() const { return token_index_; }
  std::size_t term_count() const;

  // Spans of one compiled term; tokens given as vocabulary token ids (-1 for
  // tokens outside the vocabulary).
  std::vector<Span> match_ids(const TermRef& ref, const std::vector<int>& token_ids) const;
  std::vector<int> to_ids(const std::vector<std::string>& tokens) const;

 private:
  std::vector<Concept> concepts_;
  std::map<std::string, std::vector<TermRef>, std::less<>> token_index_;
  std::unordered_map<std::string, int> token_ids_;
  std::vector<std::vector<std::vector<int>>> term_ids_;  // [concept][term] -> token ids
};

CompiledVocabulary compile_vocabulary(const nlohmann::json& document);
CompiledVocabulary compile_vocabulary(const std::filesystem::path& path);

struct TagOptions {
  int min_hits = 1;  // matches required before a goal is assigned
};

TagResult tag_text(std::string record_id, std::string_view title, std::string_view abstract_text,
                   const CompiledVocabulary& vocab, const TagOptions& options = {});
TagResult tag_record(const corpus::Record& record, const CompiledVocabulary& vocab, const TagOptions& options = {});

// Keyed by corpus::qualified_id. Output is identical for any worker count.
std::map<std::string, TagResult> tag_corpus(const std::vector<corpus::Record>& records,
                                            const CompiledVocabulary& vocab, const TagOptions& options = {},
                                            std::size_t workers = 0);

nlohmann::ordered_json to_json(const TagResult& result);
TagResult tag_result_from_json(const nlohmann::json& j);
void write_tags(const std::filesystem::path& path, const std::map<std::string, TagResult>& tags);
std::map<std::string, TagResult> read_tags(const std::filesystem::path& path);

}  // namespace atlas::vocab
