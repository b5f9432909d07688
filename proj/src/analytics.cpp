#include "sti_atlas/analytics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>

#include "sti_atlas/error.hpp"
#include "sti_atlas/panels.hpp"
#include "sti_atlas/util.hpp"

namespace atlas::analytics {

std::int64_t share_tenths(std::int64_t tagged, std::int64_t total) {
  if (total <= 0) return 0;
  // floor(1000 * tagged / total + 1/2) in integers.
  return (2000 * tagged + total) / (2 * total);
}

std::string format_tenths(std::int64_t tenths) { return fmt::format("{}.{}", tenths / 10, tenths % 10); }

namespace {

bool is_tagged(const Tags& tags, const corpus::Record& record, int goal) {
  auto it = tags.find(corpus::qualified_id(record));
  return it != tags.end() && it->second.goals.count(goal) > 0;
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::SchemaError, fmt::format("bad {} '{}'", what, text));
  }
  return value;
}

std::int64_t parse_tenths(std::string_view text) {
  auto dot = text.find('.');
  if (dot == std::string_view::npos || dot + 2 != text.size()) {
    throw Error(ErrorCode::SchemaError, fmt::format("bad share '{}'", text));
  }
  return parse_int(text.substr(0, dot), "share") * 10 + parse_int(text.substr(dot + 1), "share");
}

util::CsvTable parse_with_header(std::string_view text, const std::vector<std::string>& expected) {
  auto table = util::parse_csv(text);
  for (const auto& name : expected) {
    if (table.column(name) < 0) throw Error(ErrorCode::MissingColumn, "CSV lacks column " + name);
  }
  return table;
}

}  // namespace

std::vector<ShareRow> sdg_share(const std::vector<corpus::Record>& records, const Tags& tags, int goal) {
  std::map<Source, ShareRow> rows;
  for (const auto& r : records) {
    auto& row = rows[r.source];
    row.source = r.source;
    ++row.total;
    if (is_tagged(tags, r, goal)) ++row.tagged;
  }
  std::vector<ShareRow> out;
  for (Source s : corpus::kAllSources) {
    auto it = rows.find(s);
    if (it == rows.end()) continue;
    it->second.share_tenths = share_tenths(it->second.tagged, it->second.total);
    out.push_back(it->second);
  }
  return out;
}

std::map<Source, std::vector<AffiliationRow>> top_affiliations(const std::vector<corpus::Record>& records,
                                                                const Tags& tags, const AffiliationOptions& options) {
  std::map<Source, std::map<std::string, std::pair<std::int64_t, std::int64_t>>> counts;  // name -> (tagged, total)
  for (const auto& r : records) {
    bool tagged = is_tagged(tags, r, options.goal);
    std::set<std::string> names;
    for (const auto& a : r.affiliations) {
      if (options.country && a.country_code && *a.country_code != *options.country) continue;
      names.insert(options.reconcile ? options.reconcile(a.raw_name) : a.raw_name);
    }
    for (const auto& name : names) {
      auto& c = counts[r.source][name];
      c.first += tagged ? 1 : 0;
      c.second += 1;
    }
  }

  std::map<Source, std::vector<AffiliationRow>> out;
  for (const auto& [source, names] : counts) {
    std::vector<AffiliationRow> rows;
    for (const auto& [name, c] : names) {
      if (c.first > 0) rows.push_back(AffiliationRow{source, 0, name, c.first, c.second});
    }
    std::sort(rows.begin(), rows.end(), [](const AffiliationRow& a, const AffiliationRow& b) {
      if (a.tagged != b.tagged) return a.tagged > b.tagged;
      return a.name < b.name;
    });
    if (rows.size() > options.n) rows.resize(options.n);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i + 1);
    if (!rows.empty()) out[source] = std::move(rows);
  }
  return out;
}

std::vector<std::string> panel_columns() {
  std::vector<std::string> cols;
  for (const auto& p : panels::panel_set()) cols.push_back(p.code);
  cols.emplace_back(kNoneColumn);
  return cols;
}

namespace {

// Column indices a document contributes to.
std::vector<std::size_t> contributions(const Predictions& predictions, const std::string& id) {
  static const std::size_t none = panels::panel_set().size();
  auto it = predictions.find(id);
  if (it == predictions.end() || it->second.empty()) return {none};
  std::vector<std::size_t> cols;
  for (const auto& p : it->second) cols.push_back(panels::panel_index(p));
  return cols;
}

}  // namespace

PanelCounts panel_source_counts(const Predictions& predictions, const std::vector<corpus::Record>& records) {
  PanelCounts out;
  out.columns = panel_columns();
  for (const auto& r : records) {
    auto& row = out.counts[r.source];
    if (row.empty()) row.assign(out.columns.size(), 0);
    for (auto c : contributions(predictions, corpus::qualified_id(r))) ++row[c];
  }
  return out;
}

std::int64_t CooccurrenceMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

CooccurrenceMatrix topic_panel_cooccurrence(const std::map<std::string, int>& assignments, int k,
                                            const Predictions& predictions) {
  CooccurrenceMatrix m;
  m.columns = panel_columns();
  m.counts.assign(static_cast<std::size_t>(std::max(k, 0)), std::vector<std::int64_t>(m.columns.size(), 0));
  for (const auto& [id, topic] : assignments) {
    if (topic < 0 || topic >= k) {
      throw Error(ErrorCode::InvalidRange, fmt::format("document {} has topic {} outside [0, {})", id, topic, k));
    }
    for (auto c : contributions(predictions, id)) ++m.counts[static_cast<std::size_t>(topic)][c];
  }
  return m;
}

// ---- CSV ------------------------------------------------------------------

std::string share_csv(const std::vector<ShareRow>& rows) {
  std::string out = util::format_csv_row({"source", "total_records", "tagged_records", "share_percent"});
  for (const auto& r : rows) {
    out += util::format_csv_row({std::string(corpus::display_name(r.source)), std::to_string(r.total),
                                 std::to_string(r.tagged), format_tenths(r.share_tenths)});
  }
  return out;
}

std::vector<ShareRow> parse_share_csv(std::string_view text) {
  auto t = parse_with_header(text, {"source", "total_records", "tagged_records", "share_percent"});
  std::vector<ShareRow> out;
  for (const auto& row : t.rows) {
    ShareRow r;
    r.source = corpus::parse_source(row.at(t.column("source")));
    r.total = parse_int(row.at(t.column("total_records")), "total");
    r.tagged = parse_int(row.at(t.column("tagged_records")), "tagged");
    r.share_tenths = parse_tenths(row.at(t.column("share_percent")));
    out.push_back(r);
  }
  return out;
}

std::string affiliations_csv(const std::map<Source, std::vector<AffiliationRow>>& tables) {
  std::string out = util::format_csv_row({"source", "rank", "affiliation", "tagged_records", "total_records",
                                          "share_percent"});
  for (Source s : corpus::kAllSources) {
    auto it = tables.find(s);
    if (it == tables.end()) continue;
    for (const auto& r : it->second) {
      out += util::format_csv_row({std::string(corpus::display_name(s)), std::to_string(r.rank), r.name,
                                   std::to_string(r.tagged), std::to_string(r.total),
                                   fmt::format("{:.2f}", r.share_percent())});
    }
  }
  return out;
}

std::map<Source, std::vector<AffiliationRow>> parse_affiliations_csv(std::string_view text) {
  auto t = parse_with_header(text, {"source", "rank", "affiliation", "tagged_records", "total_records"});
  std::map<Source, std::vector<AffiliationRow>> out;
  for (const auto& row : t.rows) {
    AffiliationRow r;
    r.source = corpus::parse_source(row.at(t.column("source")));
    r.rank = static_cast<int>(parse_int(row.at(t.column("rank")), "rank"));
    r.name = row.at(t.column("affiliation"));
    r.tagged = parse_int(row.at(t.column("tagged_records")), "tagged");
    r.total = parse_int(row.at(t.column("total_records")), "total");
    out[r.source].push_back(r);
  }
  return out;
}

std::string panel_counts_csv(const PanelCounts& counts) {
  util::CsvRow header{"source"};
  header.insert(header.end(), counts.columns.begin(), counts.columns.end());
  std::string out = util::format_csv_row(header);
  for (Source s : corpus::kAllSources) {
    auto it = counts.counts.find(s);
    if (it == counts.counts.end()) continue;
    util::CsvRow row{std::string(corpus::display_name(s))};
    for (auto c : it->second) row.push_back(std::to_string(c));
    out += util::format_csv_row(row);
  }
  return out;
}

PanelCounts parse_panel_counts_csv(std::string_view text) {
  auto t = parse_with_header(text, {"source"});
  PanelCounts out;
  out.columns.assign(t.header.begin() + 1, t.header.end());
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw Error(ErrorCode::SchemaError, "ragged panel count row");
    auto& counts = out.counts[corpus::parse_source(row[0])];
    for (std::size_t i = 1; i < row.size(); ++i) counts.push_back(parse_int(row[i], "count"));
  }
  return out;
}

std::string cooccurrence_csv(const CooccurrenceMatrix& matrix) {
  util::CsvRow header{"topic"};
  header.insert(header.end(), matrix.columns.begin(), matrix.columns.end());
  std::string out = util::format_csv_row(header);
  for (std::size_t t = 0; t < matrix.counts.size(); ++t) {
    util::CsvRow row{std::to_string(t)};
    for (auto c : matrix.counts[t]) row.push_back(std::to_string(c));
    out += util::format_csv_row(row);
  }
  return out;
}

CooccurrenceMatrix parse_cooccurrence_csv(std::string_view text) {
  auto t = parse_with_header(text, {"topic"});
  CooccurrenceMatrix m;
  m.columns.assign(t.header.begin() + 1, t.header.end());
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw Error(ErrorCode::SchemaError, "ragged co-occurrence row");
    if (parse_int(row[0], "topic") != static_cast<std::int64_t>(m.counts.size())) {
      throw Error(ErrorCode::SchemaError, "co-occurrence topics out of order");
    }
    std::vector<std::int64_t> counts;
    for (std::size_t i = 1; i < row.size(); ++i) counts.push_back(parse_int(row[i], "count"));
    m.counts.push_back(std::move(counts));
  }
  return m;
}

std::string sweep_csv(const topics::SweepResult& sweep) {
  std::string out = util::format_csv_row({"k", "wcss", "dbcc_min", "elbow"});
  for (const auto& r : sweep.rows) {
    out += util::format_csv_row({std::to_string(r.k), fmt::format("{}", r.wcss), fmt::format("{}", r.dbcc_min),
                                 sweep.elbow && *sweep.elbow == r.k ? "1" : "0"});
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const ReportArtifacts& artifacts, const std::filesystem::path& out_dir) {
  const std::string contents[] = {share_csv(artifacts.shares),
                                  affiliations_csv(artifacts.affiliations),
                                  panel_counts_csv(artifacts.panel_counts),
                                  cooccurrence_csv(artifacts.cooccurrence),
                                  artifacts.projection_csv.empty() ? std::string("id,x,y,topic\n")
                                                                   : artifacts.projection_csv,
                                  sweep_csv(artifacts.sweep)};
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < std::size(kReportFiles); ++i) {
    auto path = out_dir / kReportFiles[i];
    util::write_file_atomic(path, contents[i]);
    written.push_back(path);
  }

  nlohmann::ordered_json manifest;
  manifest["inputs"] = nlohmann::ordered_json::object();
  for (const auto& [key, path] : artifacts.inputs) manifest["inputs"][key] = util::sha256_file(path);
  manifest["params"] = artifacts.params;
  manifest["versions"] = artifacts.versions;
  manifest["outputs"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < std::size(kReportFiles); ++i) {
    manifest["outputs"][kReportFiles[i]] = util::sha256_hex(contents[i]);
  }
  auto path = out_dir / "manifest.json";
  util::write_file_atomic(path, manifest.dump(2) + "\n");
  written.push_back(path);
  return written;
}

}  // namespace atlas::analytics
