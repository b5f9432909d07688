#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sti_atlas/corpus.hpp"
#include "sti_atlas/util.hpp"

namespace atlas::harvest {

using corpus::Payload;
using corpus::Record;
using corpus::Source;

// ---- inverted abstracts ---------------------------------------------------

using InvertedIndex = std::map<std::string, std::vector<std::int64_t>>;

// Places every token at its positions and joins with single spaces. Gaps in
// the position sequence are closed, not padded. Throws PositionConflict when
// two tokens claim the same position.
std::string reconstruct_abstract(const InvertedIndex& index);
std::string reconstruct_abstract(const nlohmann::json& index);

// ---- OpenAIRE window planning ---------------------------------------------

struct DateWindow {
  std::chrono::sys_days start;
  std::chrono::sys_days end;  // inclusive

  std::int64_t days() const { return (end - start).count() + 1; }
  bool operator==(const DateWindow&) const = default;
};

std::chrono::sys_days parse_date(std::string_view iso);
std::string format_date(std::chrono::sys_days day);
DateWindow make_window(std::string_view start, std::string_view end);

using CountOracle = std::function<std::int64_t(const DateWindow&)>;

// Recursively bisects `range` until every window counts below `limit`.
// Single-day windows are returned as-is (with a warning) even when over.
std::vector<DateWindow> plan_openaire_windows(const DateWindow& range, const CountOracle& count_oracle,
                                              std::int64_t limit = 10000);

// ---- paged fetching -------------------------------------------------------

struct PageRequest {
  std::string endpoint;  // e.g. "https://api.openalex.org/works"
  std::map<std::string, std::string> filters;
  std::string cursor_or_page;  // OpenAlex cursor ("*" to start) or 1-based page number
  int page_size = 200;
};

int max_page_size(Source source);

// Full URL for one page. OpenAlex folds filters into `filter=k:v,...`;
// OpenAIRE passes them as individual query parameters.
std::string request_url(const PageRequest& request, Source source);

PageRequest openalex_request(std::string endpoint, std::string_view country, int year_lo, int year_hi,
                             int page_size = 200);
PageRequest openaire_request(std::string endpoint, std::string_view country, const DateWindow& window,
                             int page_size = 100);

// Shared requests-per-second cap. Zero disables throttling.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second = 0.0);
  void acquire();

 private:
  std::mutex mutex_;
  std::chrono::steady_clock::duration interval_{};
  std::chrono::steady_clock::time_point next_{};
};

// Append-only raw response cache: <dir>/<source>/<sha256(url)>.bin
class PayloadCache {
 public:
  explicit PayloadCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path_for(Source source, std::string_view url) const;
  std::optional<std::string> load(Source source, std::string_view url) const;
  void store(Source source, std::string_view url, std::string_view body) const;

 private:
  std::filesystem::path root_;
};

struct FetchOptions {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{30};
  std::shared_ptr<RateLimiter> limiter;
  std::optional<PayloadCache> cache;
};

struct FetchStats {
  std::int64_t requests = 0;  // HTTP requests actually sent
  std::int64_t retries = 0;
  std::int64_t cache_hits = 0;
  std::int64_t pages = 0;
  std::int64_t items = 0;
};

// Pulls one page per next() call until the source reports exhaustion.
class PageStream {
 public:
  PageStream(PageRequest request, Source source, FetchOptions options = {});

  std::optional<std::vector<Payload>> next();
  const FetchStats& stats() const { return stats_; }
  // Result total reported by the last OpenAIRE envelope.
  std::optional<std::int64_t> total() const { return total_; }

 private:
  std::string fetch_body(const std::string& url);

  PageRequest request_;
  Source source_;
  FetchOptions options_;
  FetchStats stats_;
  bool done_ = false;
  std::optional<std::int64_t> total_;
};

struct FetchResult {
  std::vector<Payload> payloads;
  FetchStats stats;
};

FetchResult fetch_paged(const PageRequest& request, Source source, const FetchOptions& options = {});

// Fetches every window with up to `workers` threads; results keep window order.
FetchResult fetch_windows(const PageRequest& base, const std::vector<DateWindow>& windows,
                          const FetchOptions& options, std::size_t workers = 4);

// Asks OpenAIRE for the result total of one window (page size 1).
std::int64_t openaire_count(const PageRequest& base, const DateWindow& window, const FetchOptions& options);

// ---- OpenAIRE XML ---------------------------------------------------------

struct OpenAireDocument {
  std::vector<Payload> payloads;
  std::int64_t skipped = 0;               // results without an identifier
  std::optional<std::int64_t> total;      // <header><total> when present
};

OpenAireDocument parse_openaire_xml(std::string_view document);

// ---- CORDIS / Kohesio -----------------------------------------------------

// Returns e.g. "PE6" from "PE6", "pe6" or "ERC-2016-STG/PE6"; nullopt when no
// valid ERC panel code is present.
std::optional<std::string> parse_panel_code(std::string_view text);

// Required columns: projectID, title, objective, panel, participants, countries.
// participants and countries are ';'-separated and aligned.
std::vector<Record> ingest_cordis(const util::CsvTable& table, corpus::SourceProvenance* provenance = nullptr);
std::vector<Record> ingest_cordis(const std::filesystem::path& csv, corpus::SourceProvenance* provenance = nullptr);

// Grant-linked publications. Required columns: id, title, projectID
// (';'-separated when several grants). Optional: abstract, doi, year.
std::vector<Payload> ingest_cordis_publications(const util::CsvTable& table);

struct KohesioOptions {
  int min_description_words = 5;
  // Row-level R&D pre-filter; empty keeps every row.
  std::function<bool(const util::CsvTable&, const util::CsvRow&)> prefilter;
};

// Keeps rows whose `category` column contains any keyword (case-insensitive).
// An empty keyword list accepts every row.
std::function<bool(const util::CsvTable&, const util::CsvRow&)> category_prefilter(std::vector<std::string> keywords);

bool is_low_quality_description(std::string_view title, std::string_view description, int min_words);

// Required columns: project_id, label, description, beneficiary, country.
std::vector<Record> ingest_kohesio(const util::CsvTable& table, const KohesioOptions& options = {},
                                   corpus::SourceProvenance* provenance = nullptr);
std::vector<Record> ingest_kohesio(const std::filesystem::path& dump, const KohesioOptions& options = {},
                                   corpus::SourceProvenance* provenance = nullptr);

// ---- grant linking --------------------------------------------------------

struct LinkResult {
  std::vector<std::pair<std::string, Record>> pairs;  // (grant id, publication)
  std::int64_t dropped = 0;
};

// Inner join of publications (payloads carrying a "grants" id list) against
// grant records.
LinkResult link_grant_publications(const std::vector<Record>& grants, const std::vector<Payload>& publications);

}  // namespace atlas::harvest
