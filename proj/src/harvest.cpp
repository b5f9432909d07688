#include "sti_atlas/harvest.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "sti_atlas/error.hpp"

namespace atlas::harvest {

namespace chr = std::chrono;
namespace pt = boost::property_tree;

// ---- inverted abstracts ---------------------------------------------------

std::string reconstruct_abstract(const InvertedIndex& index) {
  std::vector<std::pair<std::int64_t, const std::string*>> placed;
  for (const auto& [token, positions] : index) {
    for (auto pos : positions) {
      if (pos < 0) throw Error(ErrorCode::MalformedPayload, "negative position for token '" + token + "'");
      placed.emplace_back(pos, &token);
    }
  }
  std::sort(placed.begin(), placed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string text;
  for (std::size_t i = 0; i < placed.size(); ++i) {
    if (i > 0 && placed[i].first == placed[i - 1].first) {
      throw Error(ErrorCode::PositionConflict, "tokens '" + *placed[i - 1].second + "' and '" +
                                                   *placed[i].second + "' share position " +
                                                   std::to_string(placed[i].first));
    }
    if (i > 0) text.push_back(' ');
    text += *placed[i].second;
  }
  return text;
}

std::string reconstruct_abstract(const nlohmann::json& index) {
  if (index.is_null()) return {};
  if (!index.is_object()) throw Error(ErrorCode::MalformedPayload, "inverted index is not an object");
  InvertedIndex parsed;
  for (const auto& [token, positions] : index.items()) {
    if (!positions.is_array()) throw Error(ErrorCode::MalformedPayload, "positions for '" + token + "' not a list");
    auto& slot = parsed[token];
    for (const auto& p : positions) {
      if (!p.is_number_integer()) throw Error(ErrorCode::MalformedPayload, "non-integer position for '" + token + "'");
      slot.push_back(p.get<std::int64_t>());
    }
  }
  return reconstruct_abstract(parsed);
}

// ---- dates and windows ----------------------------------------------------

chr::sys_days parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  std::istringstream in{std::string(iso)};
  in >> y >> dash1 >> m >> dash2 >> d;
  chr::year_month_day ymd{chr::year{y}, chr::month{m}, chr::day{d}};
  if (!in || dash1 != '-' || dash2 != '-' || !ymd.ok()) {
    throw Error(ErrorCode::InvalidRange, "not an ISO date: '" + std::string(iso) + "'");
  }
  return chr::sys_days{ymd};
}

std::string format_date(chr::sys_days day) {
  chr::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

DateWindow make_window(std::string_view start, std::string_view end) {
  DateWindow w{parse_date(start), parse_date(end)};
  if (w.end < w.start) {
    throw Error(ErrorCode::InvalidRange, "window ends before it starts: " + std::string(start) + ".." +
                                             std::string(end));
  }
  return w;
}

namespace {

void plan_into(const DateWindow& window, const CountOracle& count, std::int64_t limit,
               std::vector<DateWindow>& out) {
  std::int64_t n = count(window);
  if (n < limit) {
    out.push_back(window);
    return;
  }
  if (window.days() == 1) {
    spdlog::warn("OpenAIRE window {} holds {} results (limit {}); cannot split a single day",
                 format_date(window.start), n, limit);
    out.push_back(window);
    return;
  }
  auto left_end = window.start + chr::days{window.days() / 2 - 1};
  plan_into(DateWindow{window.start, left_end}, count, limit, out);
  plan_into(DateWindow{left_end + chr::days{1}, window.end}, count, limit, out);
}

}  // namespace

std::vector<DateWindow> plan_openaire_windows(const DateWindow& range, const CountOracle& count_oracle,
                                              std::int64_t limit) {
  if (range.end < range.start) throw Error(ErrorCode::InvalidRange, "empty date range");
  if (limit <= 0) throw Error(ErrorCode::InvalidRange, "limit must be positive");
  std::vector<DateWindow> windows;
  plan_into(range, count_oracle, limit, windows);
  return windows;
}

// ---- requests -------------------------------------------------------------

int max_page_size(Source source) {
  switch (source) {
    case Source::OpenAlex: return 200;
    case Source::OpenAire: return 10000;
    default: return 0;
  }
}

namespace {

std::string percent_encode(std::string_view value) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : value) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ':' || c == ',' || c == '*' ||
        c == '|') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

}  // namespace

std::string request_url(const PageRequest& request, Source source) {
  if (request.page_size <= 0 || request.page_size > max_page_size(source)) {
    throw Error(ErrorCode::InvalidRange, "page size " + std::to_string(request.page_size) + " outside (0, " +
                                             std::to_string(max_page_size(source)) + "]");
  }
  std::string url = request.endpoint;
  url.push_back(url.find('?') == std::string::npos ? '?' : '&');
  if (source == Source::OpenAlex) {
    std::string filter;
    for (const auto& [key, value] : request.filters) {
      if (!filter.empty()) filter.push_back(',');
      filter += key + ":" + value;
    }
    if (!filter.empty()) url += "filter=" + percent_encode(filter) + "&";
    url += "per-page=" + std::to_string(request.page_size);
    url += "&cursor=" + percent_encode(request.cursor_or_page.empty() ? "*" : request.cursor_or_page);
  } else {
    for (const auto& [key, value] : request.filters) url += percent_encode(key) + "=" + percent_encode(value) + "&";
    url += "format=xml&page=" + (request.cursor_or_page.empty() ? std::string("1") : request.cursor_or_page);
    url += "&size=" + std::to_string(request.page_size);
  }
  return url;
}

PageRequest openalex_request(std::string endpoint, std::string_view country, int year_lo, int year_hi,
                             int page_size) {
  PageRequest r;
  r.endpoint = std::move(endpoint);
  r.filters["institutions.country_code"] = util::to_lower(country);
  r.filters["publication_year"] = std::to_string(year_lo) + "-" + std::to_string(year_hi);
  r.cursor_or_page = "*";
  r.page_size = page_size;
  return r;
}

PageRequest openaire_request(std::string endpoint, std::string_view country, const DateWindow& window,
                             int page_size) {
  PageRequest r;
  r.endpoint = std::move(endpoint);
  std::string upper(country);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  r.filters["country"] = upper;
  r.filters["fromDateAccepted"] = format_date(window.start);
  r.filters["toDateAccepted"] = format_date(window.end);
  r.cursor_or_page = "1";
  r.page_size = page_size;
  return r;
}

RateLimiter::RateLimiter(double requests_per_second) {
  if (requests_per_second > 0) {
    interval_ = chr::duration_cast<chr::steady_clock::duration>(chr::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  if (interval_ == chr::steady_clock::duration::zero()) return;
  chr::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    auto now = chr::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

std::filesystem::path PayloadCache::path_for(Source source, std::string_view url) const {
  return root_ / util::to_lower(corpus::to_string(source)) / (util::sha256_hex(url) + ".bin");
}

std::optional<std::string> PayloadCache::load(Source source, std::string_view url) const {
  auto path = path_for(source, url);
  if (!std::filesystem::exists(path)) return std::nullopt;
  return util::read_file(path);
}

void PayloadCache::store(Source source, std::string_view url, std::string_view body) const {
  auto path = path_for(source, url);
  if (std::filesystem::exists(path)) return;
  util::write_file_atomic(path, body);
}

// ---- paging ---------------------------------------------------------------

PageStream::PageStream(PageRequest request, Source source, FetchOptions options)
    : request_(std::move(request)), source_(source), options_(std::move(options)) {
  if (source_ != Source::OpenAlex && source_ != Source::OpenAire) {
    throw Error(ErrorCode::InvalidRange, "paged fetching only exists for OpenAlex and OpenAIRE");
  }
  if (request_.cursor_or_page.empty()) request_.cursor_or_page = source_ == Source::OpenAlex ? "*" : "1";
}

namespace {

bool retryable(int status) { return status == 429 || status == 500 || status == 502 || status == 503 || status == 504; }

}  // namespace

std::string PageStream::fetch_body(const std::string& url) {
  if (options_.cache) {
    if (auto cached = options_.cache->load(source_, url)) {
      ++stats_.cache_hits;
      return *cached;
    }
  }
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::HttpError, "not an absolute URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = url.substr(0, path_start);
  std::string target = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_follow_location(true);

  auto backoff = options_.initial_backoff;
  std::string last_failure;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    if (attempt > 1) {
      ++stats_.retries;
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    if (options_.limiter) options_.limiter->acquire();
    ++stats_.requests;
    auto res = client.Get(target);
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      spdlog::warn("{} attempt {}: {}", url, attempt, last_failure);
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      if (options_.cache) options_.cache->store(source_, url, res->body);
      return res->body;
    }
    if (!retryable(res->status)) {
      throw Error(ErrorCode::HttpError, "HTTP " + std::to_string(res->status) + " for " + url);
    }
    last_failure = "HTTP " + std::to_string(res->status);
    spdlog::warn("{} attempt {}: {}", url, attempt, last_failure);
  }
  throw Error(ErrorCode::RetriesExhausted,
              url + " failed after " + std::to_string(options_.max_attempts) + " attempts (" + last_failure + ")");
}

std::optional<std::vector<Payload>> PageStream::next() {
  if (done_) return std::nullopt;
  std::string body = fetch_body(request_url(request_, source_));

  std::vector<Payload> items;
  if (source_ == Source::OpenAlex) {
    nlohmann::json page;
    try {
      page = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaDrift, std::string("OpenAlex page is not JSON: ") + e.what());
    }
    if (!page.is_object() || !page.contains("results") || !page["results"].is_array() || !page.contains("meta") ||
        !page["meta"].is_object()) {
      throw Error(ErrorCode::SchemaDrift, "OpenAlex page lacks results/meta envelope");
    }
    items = page["results"].get<std::vector<Payload>>();
    const auto& cursor = page["meta"].value("next_cursor", nlohmann::json());
    if (cursor.is_string() && !cursor.get<std::string>().empty() && !items.empty()) {
      request_.cursor_or_page = cursor.get<std::string>();
    } else {
      done_ = true;
    }
  } else {
    auto doc = parse_openaire_xml(body);
    if (!doc.total) throw Error(ErrorCode::SchemaDrift, "OpenAIRE response lacks <header><total>");
    total_ = doc.total;
    items = std::move(doc.payloads);
    long long page_no = std::stoll(request_.cursor_or_page);
    if (items.empty() && doc.skipped == 0) {
      done_ = true;
    } else if (page_no * request_.page_size >= *doc.total) {
      done_ = true;
    } else {
      request_.cursor_or_page = std::to_string(page_no + 1);
    }
  }
  if (items.empty()) {
    done_ = true;
    return std::nullopt;
  }
  ++stats_.pages;
  stats_.items += static_cast<std::int64_t>(items.size());
  return items;
}

namespace {

void accumulate(FetchStats& into, const FetchStats& from) {
  into.requests += from.requests;
  into.retries += from.retries;
  into.cache_hits += from.cache_hits;
  into.pages += from.pages;
  into.items += from.items;
}

PageRequest window_request(const PageRequest& base, const DateWindow& window) {
  PageRequest r = base;
  r.filters["fromDateAccepted"] = format_date(window.start);
  r.filters["toDateAccepted"] = format_date(window.end);
  r.cursor_or_page = "1";
  return r;
}

}  // namespace

FetchResult fetch_paged(const PageRequest& request, Source source, const FetchOptions& options) {
  PageStream stream(request, source, options);
  FetchResult result;
  while (auto page = stream.next()) {
    for (auto& item : *page) result.payloads.push_back(std::move(item));
  }
  result.stats = stream.stats();
  return result;
}

FetchResult fetch_windows(const PageRequest& base, const std::vector<DateWindow>& windows,
                          const FetchOptions& options, std::size_t workers) {
  std::vector<FetchResult> per_window(windows.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  auto work = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= windows.size()) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      try {
        per_window[i] = fetch_paged(window_request(base, windows[i]), Source::OpenAire, options);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, std::min(workers, windows.size())); ++t) {
    threads.emplace_back(work);
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);

  FetchResult merged;
  for (auto& r : per_window) {
    accumulate(merged.stats, r.stats);
    for (auto& p : r.payloads) merged.payloads.push_back(std::move(p));
  }
  return merged;
}

std::int64_t openaire_count(const PageRequest& base, const DateWindow& window, const FetchOptions& options) {
  PageRequest r = window_request(base, window);
  r.page_size = 1;
  PageStream stream(r, Source::OpenAire, options);
  stream.next();
  return stream.total().value_or(0);
}

// ---- OpenAIRE XML ---------------------------------------------------------

namespace {

std::string attr(const pt::ptree& node, const std::string& name) {
  if (auto a = node.get_child_optional("<xmlattr>." + name)) return a->data();
  return {};
}

void collect_named(const pt::ptree& node, std::string_view name, std::vector<const pt::ptree*>& out) {
  for (const auto& [key, child] : node) {
    if (key == "<xmlattr>" || key == "<xmlcomment>") continue;
    if (key == name) out.push_back(&child);
    collect_named(child, name, out);
  }
}

void collect_results(const pt::ptree& node, std::string_view parent, std::vector<const pt::ptree*>& out) {
  for (const auto& [key, child] : node) {
    if (key == "result" && parent == "results") {
      out.push_back(&child);
    } else if (key != "<xmlattr>") {
      collect_results(child, key, out);
    }
  }
}

Payload parse_result(const pt::ptree& result, bool& has_id) {
  Payload p = Payload::object();
  std::string id = util::trim(result.get("header.dri:objIdentifier", std::string()));
  if (id.empty()) {
    std::vector<const pt::ptree*> ids;
    collect_named(result, "dri:objIdentifier", ids);
    if (!ids.empty()) id = util::trim(ids.front()->data());
  }
  has_id = !id.empty();
  p["id"] = id;

  const pt::ptree* body = &result;
  if (auto entity = result.get_child_optional("metadata.oaf:entity.oaf:result")) body = &*entity;

  std::string title;
  for (const auto& [key, child] : *body) {
    if (key != "title") continue;
    std::string text = util::trim(child.data());
    if (text.empty()) continue;
    if (title.empty() || attr(child, "classid") == "main title") title = text;
    if (attr(child, "classid") == "main title") break;
  }
  if (!title.empty()) p["title"] = title;

  for (const auto& [key, child] : *body) {
    if (key != "description") continue;
    std::string text = util::trim(child.data());
    if (!text.empty()) {
      p["abstract"] = text;
      break;
    }
  }

  std::vector<const pt::ptree*> nodes;
  collect_named(*body, "dateofacceptance", nodes);
  auto dates = nlohmann::json::array();
  for (const auto* n : nodes) {
    std::string text = util::trim(n->data());
    if (!text.empty()) dates.push_back(text);
  }
  p["dates"] = dates;

  nodes.clear();
  collect_named(*body, "language", nodes);
  auto languages = nlohmann::json::array();
  for (const auto* n : nodes) {
    std::string code = attr(*n, "classid");
    if (code.empty()) code = util::trim(n->data());
    if (!code.empty()) languages.push_back(code);
  }
  p["languages"] = languages;

  for (const auto& [key, child] : *body) {
    if (key == "pid" && util::to_lower(attr(child, "classid")) == "doi") {
      p["doi"] = util::trim(child.data());
      break;
    }
  }

  auto affiliations = nlohmann::json::array();
  auto grants = nlohmann::json::array();
  if (auto rels = body->get_child_optional("rels")) {
    for (const auto& [key, rel] : *rels) {
      if (key != "rel") continue;
      auto to = rel.get_child_optional("to");
      if (!to) continue;
      std::string cls = attr(*to, "class");
      if (cls == "hasAuthorInstitution" || cls == "isAuthorInstitutionOf") {
        std::string name = util::trim(rel.get("legalname", std::string()));
        if (name.empty()) name = util::trim(rel.get("legalshortname", std::string()));
        if (name.empty()) continue;
        nlohmann::json a{{"name", name}};
        if (auto country = rel.get_child_optional("country")) {
          std::string code = attr(*country, "classid");
          if (!code.empty()) a["country"] = code;
        }
        std::string org = util::trim(to->data());
        if (!org.empty()) a["id"] = org;
        affiliations.push_back(std::move(a));
      } else if (cls == "isProducedBy") {
        std::string code = util::trim(rel.get("code", std::string()));
        if (!code.empty()) grants.push_back(code);
      }
    }
  }
  p["affiliations"] = affiliations;
  if (!grants.empty()) p["grants"] = grants;
  return p;
}

}  // namespace

OpenAireDocument parse_openaire_xml(std::string_view document) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(document)};
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw Error(ErrorCode::XmlSyntax, e.what());
  }

  OpenAireDocument doc;
  if (auto total = tree.get_optional<std::string>("response.header.total")) {
    try {
      doc.total = std::stoll(util::trim(*total));
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaDrift, "non-numeric <total>: " + *total);
    }
  }
  std::vector<const pt::ptree*> results;
  collect_results(tree, "", results);
  for (const auto* r : results) {
    bool has_id = false;
    Payload p = parse_result(*r, has_id);
    if (!has_id) {
      ++doc.skipped;
      continue;
    }
    doc.payloads.push_back(std::move(p));
  }
  if (doc.skipped > 0) spdlog::warn("OpenAIRE: skipped {} result(s) without identifier", doc.skipped);
  return doc;
}

// ---- CORDIS / Kohesio -----------------------------------------------------

std::optional<std::string> parse_panel_code(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (std::size_t i = 0; i + 2 < upper.size(); ++i) {
    std::string_view prefix = std::string_view(upper).substr(i, 2);
    int max_number = prefix == "PE" ? 10 : prefix == "LS" ? 9 : prefix == "SH" ? 6 : 0;
    if (max_number == 0) continue;
    if (i > 0 && std::isalpha(static_cast<unsigned char>(upper[i - 1]))) continue;
    std::size_t j = i + 2;
    int number = 0;
    while (j < upper.size() && j < i + 4 && std::isdigit(static_cast<unsigned char>(upper[j]))) {
      number = number * 10 + (upper[j] - '0');
      ++j;
    }
    if (j == i + 2) continue;
    if (j < upper.size() && std::isdigit(static_cast<unsigned char>(upper[j]))) continue;
    if (number >= 1 && number <= max_number) return std::string(prefix) + std::to_string(number);
  }
  return std::nullopt;
}

namespace {

std::vector<int> require_columns(const util::CsvTable& table, std::initializer_list<std::string_view> names,
                                 std::string_view what) {
  std::vector<int> idx;
  for (auto name : names) {
    int c = table.column(name);
    if (c < 0) throw Error(ErrorCode::MissingColumn, std::string(what) + " is missing column '" + std::string(name) + "'");
    idx.push_back(c);
  }
  return idx;
}

std::string cell(const util::CsvRow& row, int column) {
  if (column < 0 || static_cast<std::size_t>(column) >= row.size()) return {};
  return util::trim(row[column]);
}

nlohmann::json organisations(const std::string& names, const std::string& countries) {
  auto out = nlohmann::json::array();
  auto name_list = util::split(names, ';');
  auto country_list = util::split(countries, ';');
  for (std::size_t i = 0; i < name_list.size(); ++i) {
    std::string name = util::trim(name_list[i]);
    if (name.empty()) continue;
    nlohmann::json org{{"name", name}};
    std::string country = i < country_list.size() ? util::trim(country_list[i]) : std::string();
    if (country.empty() && country_list.size() == 1) country = util::trim(country_list[0]);
    if (!country.empty()) org["country"] = country;
    out.push_back(std::move(org));
  }
  return out;
}

void set_year(nlohmann::json& payload, const util::CsvTable& table, const util::CsvRow& row) {
  for (std::string_view column : {"year", "startDate", "start_date"}) {
    std::string value = cell(row, table.column(column));
    if (!value.empty()) {
      payload["year"] = value;
      return;
    }
  }
}

}  // namespace

std::vector<Record> ingest_cordis(const util::CsvTable& table, corpus::SourceProvenance* provenance) {
  auto c = require_columns(table, {"projectID", "title", "objective", "panel", "participants", "countries"},
                           "CORDIS export");
  std::vector<Record> records;
  for (const auto& row : table.rows) {
    Payload p{{"id", cell(row, c[0])}, {"title", cell(row, c[1])}};
    std::string objective = cell(row, c[2]);
    if (!objective.empty()) p["objective"] = objective;
    if (auto panel = parse_panel_code(cell(row, c[3]))) p["panel"] = *panel;
    p["participants"] = organisations(cell(row, c[4]), cell(row, c[5]));
    set_year(p, table, row);
    if (auto r = corpus::normalize_record(p, Source::Cordis, provenance)) records.push_back(std::move(*r));
  }
  if (provenance) provenance->raw_count += static_cast<std::int64_t>(table.rows.size());
  return records;
}

std::vector<Record> ingest_cordis(const std::filesystem::path& csv, corpus::SourceProvenance* provenance) {
  return ingest_cordis(util::read_csv(csv), provenance);
}

std::vector<Payload> ingest_cordis_publications(const util::CsvTable& table) {
  auto c = require_columns(table, {"id", "title", "projectID"}, "CORDIS publications");
  int abstract_col = table.column("abstract");
  int doi_col = table.column("doi");
  std::vector<Payload> out;
  for (const auto& row : table.rows) {
    Payload p{{"id", cell(row, c[0])}, {"title", cell(row, c[1])}, {"kind", "PUBLICATION"}};
    std::string abstract = cell(row, abstract_col);
    if (!abstract.empty()) p["objective"] = abstract;
    std::string doi = cell(row, doi_col);
    if (!doi.empty()) p["doi"] = doi;
    set_year(p, table, row);
    auto grants = nlohmann::json::array();
    for (const auto& g : util::split(cell(row, c[2]), ';')) {
      if (!util::trim(g).empty()) grants.push_back(util::trim(g));
    }
    p["grants"] = grants;
    out.push_back(std::move(p));
  }
  return out;
}

std::function<bool(const util::CsvTable&, const util::CsvRow&)> category_prefilter(std::vector<std::string> keywords) {
  for (auto& k : keywords) k = util::to_lower(k);
  return [keywords = std::move(keywords)](const util::CsvTable& table, const util::CsvRow& row) {
    if (keywords.empty()) return true;
    std::string category = util::to_lower(cell(row, table.column("category")));
    return std::any_of(keywords.begin(), keywords.end(),
                       [&](const std::string& k) { return category.find(k) != std::string::npos; });
  };
}

bool is_low_quality_description(std::string_view title, std::string_view description, int min_words) {
  std::string normalized = corpus::normalize_title(description);
  if (normalized.empty()) return true;
  if (normalized == corpus::normalize_title(title)) return true;
  std::istringstream words{std::string(description)};
  int count = 0;
  std::string word;
  while (words >> word) ++count;
  return count < min_words;
}

std::vector<Record> ingest_kohesio(const util::CsvTable& table, const KohesioOptions& options,
                                   corpus::SourceProvenance* provenance) {
  auto c = require_columns(table, {"project_id", "label", "description", "beneficiary", "country"}, "Kohesio dump");
  std::vector<Record> records;
  std::int64_t nulled = 0;
  for (const auto& row : table.rows) {
    if (options.prefilter && !options.prefilter(table, row)) continue;
    std::string title = cell(row, c[1]);
    Payload p{{"id", cell(row, c[0])}, {"title", title}};
    std::string description = cell(row, c[2]);
    if (!description.empty() && !is_low_quality_description(title, description, options.min_description_words)) {
      p["description"] = description;
    } else if (!description.empty()) {
      ++nulled;
    }
    p["beneficiaries"] = organisations(cell(row, c[3]), cell(row, c[4]));
    set_year(p, table, row);
    if (auto r = corpus::normalize_record(p, Source::Kohesio, provenance)) records.push_back(std::move(*r));
  }
  if (nulled > 0) spdlog::info("Kohesio: {} low-quality description(s) dropped", nulled);
  if (provenance) provenance->raw_count += static_cast<std::int64_t>(table.rows.size());
  return records;
}

std::vector<Record> ingest_kohesio(const std::filesystem::path& dump, const KohesioOptions& options,
                                   corpus::SourceProvenance* provenance) {
  return ingest_kohesio(util::read_csv(dump), options, provenance);
}

// ---- grant linking --------------------------------------------------------

LinkResult link_grant_publications(const std::vector<Record>& grants, const std::vector<Payload>& publications) {
  std::set<std::string> known;
  for (const auto& g : grants) known.insert(g.id);

  LinkResult result;
  for (const auto& payload : publications) {
    std::vector<std::string> matched;
    if (auto it = payload.find("grants"); it != payload.end() && it->is_array()) {
      for (const auto& g : *it) {
        std::string id = g.is_string() ? g.get<std::string>() : g.dump();
        if (known.count(id) && std::find(matched.begin(), matched.end(), id) == matched.end()) matched.push_back(id);
      }
    }
    if (matched.empty()) {
      ++result.dropped;
      continue;
    }
    Source source = Source::Cordis;
    if (auto s = payload.find("source"); s != payload.end() && s->is_string()) {
      source = corpus::parse_source(s->get<std::string>());
    }
    auto record = corpus::normalize_record(payload, source);
    if (!record) {
      ++result.dropped;
      continue;
    }
    for (const auto& id : matched) result.pairs.emplace_back(id, *record);
  }
  return result;
}

}  // namespace atlas::harvest
