#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace atlas::corpus {

enum class Source { OpenAlex, OpenAire, Cordis, Kohesio };
enum class Kind { Publication, Project };

inline constexpr Source kAllSources[] = {Source::OpenAlex, Source::OpenAire, Source::Cordis,
                                         Source::Kohesio};

std::string_view to_string(Source source);    // "OPENALEX", ...
std::string_view display_name(Source source);  // "OpenAlex", ...
Source parse_source(std::string_view text);
std::string_view to_string(Kind kind);
Kind parse_kind(std::string_view text);

// Raw, source-specific payload as produced by the harvest parsers.
using Payload = nlohmann::json;

struct AffiliationMention {
  std::string raw_name;
  std::optional<std::string> country_code;  // ISO-3166 alpha-2, upper case
  std::optional<std::string> source_org_id;

  bool operator==(const AffiliationMention&) const = default;
};

struct Record {
  std::string id;
  Source source = Source::OpenAlex;
  Kind kind = Kind::Publication;
  std::string title;
  std::optional<std::string> abstract_text;
  std::optional<int> year;
  std::optional<std::string> language;  // ISO-639-1
  std::optional<std::string> doi;
  std::vector<AffiliationMention> affiliations;
  std::optional<std::string> panel_label;

  bool operator==(const Record&) const = default;
};

// Stable cross-stage key: "<source>:<id>" with the source in lower case.
// Ids are only unique within a source, so every stage keys on this.
std::string qualified_id(const Record& record);

struct SourceProvenance {
  std::string query;
  std::string fetch_date;
  std::int64_t raw_count = 0;
  std::int64_t skipped = 0;
  // Record id -> every acceptance year seen when they disagree.
  std::map<std::string, std::vector<int>> year_candidates;
  // Record id -> every language code seen when they disagree.
  std::map<std::string, std::vector<std::string>> language_candidates;
};

struct Corpus {
  std::vector<Record> records;
  std::map<Source, SourceProvenance> provenance;
};

// ---- normalization --------------------------------------------------------

// Lower case, resolver prefix stripped; nullopt unless it starts with "10.".
std::optional<std::string> normalize_doi(std::string_view raw);
// ISO-639-1 from 2- or 3-letter codes; nullopt when unrecognised.
std::optional<std::string> normalize_language(std::string_view raw);
// Lower case, punctuation stripped, whitespace collapsed.
std::string normalize_title(std::string_view title);
std::optional<int> parse_year(std::string_view text);

// Maps a payload onto a Record. Payloads without id or title are skipped
// (nullopt) and logged. Conflicting years/languages are recorded in
// `provenance` when given.
std::optional<Record> normalize_record(const Payload& raw, Source source,
                                       SourceProvenance* provenance = nullptr);

// ---- dedupe / filter ------------------------------------------------------

std::string dedupe_key(const Record& record);
std::vector<Record> dedupe(const std::vector<Record>& records);

struct FilterOptions {
  std::string country = "DK";
  int year_lo = 2014;
  int year_hi = 2019;
  bool require_abstract = false;
  bool keep_undated = true;
};

std::vector<Record> filter(const std::vector<Record>& records, const FilterOptions& options);

// ---- JSONL interchange ----------------------------------------------------

nlohmann::ordered_json to_json(const Record& record);
Record record_from_json(const nlohmann::json& j);

std::string to_jsonl(const std::vector<Record>& records);
std::vector<Record> parse_jsonl(std::string_view text);
void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records);
std::vector<Record> read_jsonl(const std::filesystem::path& path);

nlohmann::ordered_json provenance_to_json(const std::map<Source, SourceProvenance>& provenance);
std::map<Source, SourceProvenance> provenance_from_json(const nlohmann::json& j);

}  // namespace atlas::corpus
