#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sti_atlas/corpus.hpp"
#include "sti_atlas/topics.hpp"
#include "sti_atlas/vocab.hpp"

namespace atlas::analytics {

using corpus::Source;
using Tags = std::map<std::string, vocab::TagResult>;           // keyed by qualified id
using Predictions = std::map<std::string, std::set<std::string>>;  // keyed by qualified id

inline constexpr std::string_view kNoneColumn = "NONE";

// 100 * tagged / total in tenths of a percent, rounded half up. 0 when total is 0.
std::int64_t share_tenths(std::int64_t tagged, std::int64_t total);
std::string format_tenths(std::int64_t tenths);  // 146 -> "14.6"

struct ShareRow {
  Source source = Source::OpenAlex;
  std::int64_t total = 0;
  std::int64_t tagged = 0;
  std::int64_t share_tenths = 0;

  bool operator==(const ShareRow&) const = default;
};

// One row per source present in `records`, in source order.
std::vector<ShareRow> sdg_share(const std::vector<corpus::Record>& records, const Tags& tags, int goal);

struct AffiliationRow {
  Source source = Source::OpenAlex;
  int rank = 0;
  std::string name;
  std::int64_t tagged = 0;  // tagged records mentioning the name
  std::int64_t total = 0;   // all records mentioning the name

  double share_percent() const { return total > 0 ? 100.0 * double(tagged) / double(total) : 0.0; }
  bool operator==(const AffiliationRow&) const = default;
};

struct AffiliationOptions {
  std::size_t n = 10;
  int goal = 13;
  // When set, mentions carrying a different country code are ignored.
  std::optional<std::string> country;
  // Name reconciliation hook; empty means raw names are kept as they are.
  std::function<std::string(const std::string&)> reconcile;
};

// Per source, names ranked by tagged count (descending, then name).
std::map<Source, std::vector<AffiliationRow>> top_affiliations(const std::vector<corpus::Record>& records,
                                                                const Tags& tags, const AffiliationOptions& options);

// The 25 panel codes followed by NONE.
std::vector<std::string> panel_columns();

struct PanelCounts {
  std::vector<std::string> columns;
  std::map<Source, std::vector<std::int64_t>> counts;

  bool operator==(const PanelCounts&) const = default;
};

// A record with m >= 1 panels adds 1 to each; with none (or no prediction) to NONE.
PanelCounts panel_source_counts(const Predictions& predictions, const std::vector<corpus::Record>& records);

struct CooccurrenceMatrix {
  std::vector<std::string> columns;
  std::vector<std::vector<std::int64_t>> counts;  // topics x columns

  std::int64_t total() const;
  bool operator==(const CooccurrenceMatrix&) const = default;
};

CooccurrenceMatrix topic_panel_cooccurrence(const std::map<std::string, int>& assignments, int k,
                                            const Predictions& predictions);

// ---- CSV ------------------------------------------------------------------

std::string share_csv(const std::vector<ShareRow>& rows);
std::vector<ShareRow> parse_share_csv(std::string_view text);
std::string affiliations_csv(const std::map<Source, std::vector<AffiliationRow>>& tables);
std::map<Source, std::vector<AffiliationRow>> parse_affiliations_csv(std::string_view text);
std::string panel_counts_csv(const PanelCounts& counts);
PanelCounts parse_panel_counts_csv(std::string_view text);
std::string cooccurrence_csv(const CooccurrenceMatrix& matrix);
CooccurrenceMatrix parse_cooccurrence_csv(std::string_view text);
std::string sweep_csv(const topics::SweepResult& sweep);

// ---- report ---------------------------------------------------------------

struct ReportArtifacts {
  std::vector<ShareRow> shares;
  std::map<Source, std::vector<AffiliationRow>> affiliations;
  PanelCounts panel_counts;
  CooccurrenceMatrix cooccurrence;
  std::string projection_csv;  // "id,x,y,topic"
  topics::SweepResult sweep;
  std::map<std::string, std::filesystem::path> inputs;  // manifest key -> file to hash
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  nlohmann::ordered_json versions = nlohmann::ordered_json::object();
};

inline constexpr const char* kReportFiles[] = {"sdg_share.csv",          "top_affiliations.csv",
                                               "panel_source_counts.csv", "topic_panel_cooccurrence.csv",
                                               "tsne_projection.csv",     "topic_sweep.csv"};

// Writes the six CSVs and manifest.json; returns the written paths.
std::vector<std::filesystem::path> emit_report(const ReportArtifacts& artifacts, const std::filesystem::path& out_dir);

}  // namespace atlas::analytics
