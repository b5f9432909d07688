#include "sti_atlas/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "sti_atlas/error.hpp"
#include "sti_atlas/harvest.hpp"
#include "sti_atlas/util.hpp"

namespace atlas::corpus {

std::string_view to_string(Source source) {
  switch (source) {
    case Source::OpenAlex: return "OPENALEX";
    case Source::OpenAire: return "OPENAIRE";
    case Source::Cordis: return "CORDIS";
    case Source::Kohesio: return "KOHESIO";
  }
  return "?";
}

std::string_view display_name(Source source) {
  switch (source) {
    case Source::OpenAlex: return "OpenAlex";
    case Source::OpenAire: return "OpenAIRE";
    case Source::Cordis: return "CORDIS";
    case Source::Kohesio: return "Kohesio";
  }
  return "?";
}

Source parse_source(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Source s : kAllSources) {
    if (to_string(s) == upper) return s;
  }
  throw Error(ErrorCode::SchemaError, "unknown source '" + std::string(text) + "'");
}

std::string_view to_string(Kind kind) { return kind == Kind::Publication ? "PUBLICATION" : "PROJECT"; }

Kind parse_kind(std::string_view text) {
  if (text == "PUBLICATION") return Kind::Publication;
  if (text == "PROJECT") return Kind::Project;
  throw Error(ErrorCode::SchemaError, "unknown record kind '" + std::string(text) + "'");
}

std::string qualified_id(const Record& record) {
  return util::to_lower(to_string(record.source)) + ":" + record.id;
}

// ---- normalization --------------------------------------------------------

std::optional<std::string> normalize_doi(std::string_view raw) {
  std::string doi = util::to_lower(util::trim(raw));
  for (std::string_view prefix : {"https://doi.org/", "http://doi.org/", "https://dx.doi.org/",
                                  "http://dx.doi.org/", "doi.org/", "doi:"}) {
    if (doi.starts_with(prefix)) {
      doi.erase(0, prefix.size());
      break;
    }
  }
  doi = util::trim(doi);
  if (doi.size() < 4 || !doi.starts_with("10.")) return std::nullopt;
  return doi;
}

std::optional<std::string> normalize_language(std::string_view raw) {
  static const std::map<std::string, std::string, std::less<>> kThreeLetter = {
      {"eng", "en"}, {"dan", "da"}, {"deu", "de"}, {"ger", "de"}, {"fra", "fr"}, {"fre", "fr"},
      {"spa", "es"}, {"ita", "it"}, {"nld", "nl"}, {"dut", "nl"}, {"swe", "sv"}, {"nor", "no"},
      {"nob", "nb"}, {"fin", "fi"}, {"por", "pt"}, {"pol", "pl"}, {"rus", "ru"}, {"chi", "zh"},
      {"zho", "zh"}, {"jpn", "ja"}, {"isl", "is"}, {"ice", "is"}};
  std::string code = util::to_lower(util::trim(raw));
  if (code.size() == 2 && std::isalpha(static_cast<unsigned char>(code[0])) &&
      std::isalpha(static_cast<unsigned char>(code[1]))) {
    return code;
  }
  if (auto it = kThreeLetter.find(code); it != kThreeLetter.end()) return it->second;
  return std::nullopt;
}

std::string normalize_title(std::string_view title) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : util::utf8_decode(title)) {
    if (util::is_word_char(cp)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      util::utf8_append(out, util::to_lower(cp));
    } else if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r') {
      pending_space = true;
    }
    // punctuation is dropped without introducing a word break
  }
  return out;
}

std::optional<int> parse_year(std::string_view text) {
  for (std::size_t i = 0; i + 4 <= text.size(); ++i) {
    bool digits = true;
    for (std::size_t k = 0; k < 4; ++k) digits = digits && std::isdigit(static_cast<unsigned char>(text[i + k]));
    if (!digits) continue;
    if (i + 4 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 4]))) continue;
    if (i > 0 && std::isdigit(static_cast<unsigned char>(text[i - 1]))) continue;
    int year = std::stoi(std::string(text.substr(i, 4)));
    if (year >= 1900 && year <= 2100) return year;
  }
  return std::nullopt;
}

namespace {

std::optional<std::string> string_field(const Payload& raw, std::string_view key) {
  auto it = raw.find(key);
  if (it == raw.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) {
    std::string value = util::trim(it->get<std::string>());
    if (value.empty()) return std::nullopt;
    return value;
  }
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  return std::nullopt;
}

std::optional<int> year_value(const Payload& value) {
  if (value.is_number_integer()) {
    int y = value.get<int>();
    if (y >= 1900 && y <= 2100) return y;
    return std::nullopt;
  }
  if (value.is_string()) return parse_year(value.get<std::string>());
  return std::nullopt;
}

std::optional<std::string> country_value(const Payload& value) {
  if (!value.is_string()) return std::nullopt;
  std::string code = util::trim(value.get<std::string>());
  if (code.size() != 2) return std::nullopt;
  std::transform(code.begin(), code.end(), code.begin(), [](unsigned char c) { return std::toupper(c); });
  if (!std::isalpha(static_cast<unsigned char>(code[0])) || !std::isalpha(static_cast<unsigned char>(code[1]))) {
    return std::nullopt;
  }
  return code;
}

void add_mention(std::vector<AffiliationMention>& out, const Payload& item, std::string_view name_key,
                 std::string_view country_key, std::string_view id_key) {
  if (!item.is_object()) return;
  auto name = string_field(item, name_key);
  if (!name) return;
  AffiliationMention mention{*name, std::nullopt, std::nullopt};
  if (auto it = item.find(country_key); it != item.end()) mention.country_code = country_value(*it);
  mention.source_org_id = string_field(item, id_key);
  if (std::find(out.begin(), out.end(), mention) == out.end()) out.push_back(std::move(mention));
}

std::string strip_openalex_prefix(std::string id) {
  constexpr std::string_view kPrefix = "https://openalex.org/";
  if (id.starts_with(kPrefix)) id.erase(0, kPrefix.size());
  return id;
}

void normalize_openalex(const Payload& raw, Record& record) {
  if (auto it = raw.find("abstract_inverted_index"); it != raw.end() && it->is_object() && !it->empty()) {
    std::string text = harvest::reconstruct_abstract(*it);
    if (!text.empty()) record.abstract_text = std::move(text);
  }
  if (auto it = raw.find("publication_year"); it != raw.end()) record.year = year_value(*it);
  if (!record.year) {
    if (auto date = string_field(raw, "publication_date")) record.year = parse_year(*date);
  }
  if (auto lang = string_field(raw, "language")) record.language = normalize_language(*lang);
  if (auto doi = string_field(raw, "doi")) record.doi = normalize_doi(*doi);
  if (auto it = raw.find("authorships"); it != raw.end() && it->is_array()) {
    for (const auto& authorship : *it) {
      auto inst = authorship.find("institutions");
      if (inst == authorship.end() || !inst->is_array()) continue;
      for (const auto& institution : *inst) {
        add_mention(record.affiliations, institution, "display_name", "country_code", "id");
      }
    }
  }
}

void normalize_candidates(const Payload& raw, Record& record, SourceProvenance* provenance) {
  // Repositories disagree on acceptance dates; keep the earliest and log all.
  std::set<int> years;
  if (auto it = raw.find("dates"); it != raw.end() && it->is_array()) {
    for (const auto& d : *it) {
      if (auto y = year_value(d)) years.insert(*y);
    }
  }
  if (auto it = raw.find("year"); it != raw.end()) {
    if (auto y = year_value(*it)) years.insert(*y);
  }
  if (!years.empty()) record.year = *years.begin();
  if (years.size() > 1 && provenance) {
    provenance->year_candidates[record.id] = std::vector<int>(years.begin(), years.end());
  }

  std::vector<std::string> raw_langs;
  std::set<std::string> langs;
  if (auto it = raw.find("languages"); it != raw.end() && it->is_array()) {
    for (const auto& l : *it) {
      if (!l.is_string()) continue;
      raw_langs.push_back(l.get<std::string>());
      if (auto code = normalize_language(l.get<std::string>())) langs.insert(*code);
    }
  }
  if (auto lang = string_field(raw, "language")) {
    raw_langs.push_back(*lang);
    if (auto code = normalize_language(*lang)) langs.insert(*code);
  }
  if (langs.size() == 1) {
    record.language = *langs.begin();
  } else if (langs.size() > 1 && provenance) {
    provenance->language_candidates[record.id] = raw_langs;
  }
}

}  // namespace

std::optional<Record> normalize_record(const Payload& raw, Source source, SourceProvenance* provenance) {
  auto id = string_field(raw, "id");
  auto title = string_field(raw, "title");
  if (!title && source == Source::OpenAlex) title = string_field(raw, "display_name");
  if (!id || !title) {
    spdlog::warn("{}: skipping malformed payload (missing {})", display_name(source), !id ? "id" : "title");
    if (provenance) ++provenance->skipped;
    return std::nullopt;
  }

  Record record;
  record.id = source == Source::OpenAlex ? strip_openalex_prefix(*id) : *id;
  record.source = source;
  record.title = *title;
  record.kind = (source == Source::Cordis || source == Source::Kohesio) ? Kind::Project : Kind::Publication;
  if (auto kind = string_field(raw, "kind")) record.kind = parse_kind(*kind);

  try {
    switch (source) {
      case Source::OpenAlex:
        normalize_openalex(raw, record);
        break;
      case Source::OpenAire:
        record.abstract_text = string_field(raw, "abstract");
        normalize_candidates(raw, record, provenance);
        if (auto doi = string_field(raw, "doi")) record.doi = normalize_doi(*doi);
        if (auto it = raw.find("affiliations"); it != raw.end() && it->is_array()) {
          for (const auto& a : *it) add_mention(record.affiliations, a, "name", "country", "id");
        }
        break;
      case Source::Cordis:
      case Source::Kohesio:
        record.abstract_text = string_field(raw, source == Source::Cordis ? "objective" : "description");
        normalize_candidates(raw, record, provenance);
        if (auto doi = string_field(raw, "doi")) record.doi = normalize_doi(*doi);
        if (auto panel = string_field(raw, "panel")) record.panel_label = panel;
        for (std::string_view key : {"participants", "beneficiaries"}) {
          if (auto it = raw.find(key); it != raw.end() && it->is_array()) {
            for (const auto& a : *it) add_mention(record.affiliations, a, "name", "country", "id");
          }
        }
        break;
    }
  } catch (const Error& e) {
    spdlog::warn("{}: skipping payload {}: {}", display_name(source), record.id, e.what());
    if (provenance) ++provenance->skipped;
    return std::nullopt;
  }
  return record;
}

// ---- dedupe ---------------------------------------------------------------

std::string dedupe_key(const Record& record) {
  if (record.doi) return "doi:" + *record.doi;
  return std::string("title:") + std::string(to_string(record.kind)) + ":" + normalize_title(record.title);
}

namespace {

int present_fields(const Record& r) {
  return int(r.abstract_text.has_value()) + int(r.year.has_value()) + int(r.language.has_value()) +
         int(r.doi.has_value()) + int(r.panel_label.has_value()) + int(!r.affiliations.empty());
}

}  // namespace

std::vector<Record> dedupe(const std::vector<Record>& records) {
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = group_of.try_emplace(dedupe_key(records[i]), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  std::vector<Record> out;
  out.reserve(groups.size());
  for (const auto& members : groups) {
    std::size_t best = members.front();
    for (std::size_t m : members) {
      if (present_fields(records[m]) > present_fields(records[best])) best = m;
    }
    Record survivor = records[best];
    for (std::size_t m : members) {
      const Record& other = records[m];
      if (other.year && (!survivor.year || *other.year < *survivor.year)) survivor.year = other.year;
    }
    std::set<std::string> names;
    for (const auto& a : survivor.affiliations) names.insert(a.raw_name);
    for (std::size_t m : members) {
      if (m == best) continue;
      for (const auto& a : records[m].affiliations) {
        if (names.insert(a.raw_name).second) survivor.affiliations.push_back(a);
      }
    }
    out.push_back(std::move(survivor));
  }
  return out;
}

std::vector<Record> filter(const std::vector<Record>& records, const FilterOptions& options) {
  if (options.year_lo > options.year_hi) {
    throw Error(ErrorCode::InvalidRange, "year range [" + std::to_string(options.year_lo) + ", " +
                                             std::to_string(options.year_hi) + "] is empty");
  }
  std::string country = options.country;
  std::transform(country.begin(), country.end(), country.begin(), [](unsigned char c) { return std::toupper(c); });

  std::vector<Record> out;
  for (const auto& r : records) {
    bool in_country = std::any_of(r.affiliations.begin(), r.affiliations.end(),
                                  [&](const AffiliationMention& a) { return a.country_code == country; });
    if (!in_country) continue;
    if (r.year) {
      if (*r.year < options.year_lo || *r.year > options.year_hi) continue;
    } else if (!options.keep_undated) {
      continue;
    }
    if (options.require_abstract && (!r.abstract_text || util::trim(*r.abstract_text).empty())) continue;
    out.push_back(r);
  }
  return out;
}

// ---- JSONL ----------------------------------------------------------------

nlohmann::ordered_json to_json(const Record& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["source"] = to_string(r.source);
  j["kind"] = to_string(r.kind);
  j["title"] = r.title;
  if (r.abstract_text) j["abstract_text"] = *r.abstract_text;
  if (r.year) j["year"] = *r.year;
  if (r.language) j["language"] = *r.language;
  if (r.doi) j["doi"] = *r.doi;
  auto affs = nlohmann::ordered_json::array();
  for (const auto& a : r.affiliations) {
    nlohmann::ordered_json aj;
    aj["raw_name"] = a.raw_name;
    if (a.country_code) aj["country_code"] = *a.country_code;
    if (a.source_org_id) aj["source_org_id"] = *a.source_org_id;
    affs.push_back(std::move(aj));
  }
  j["affiliations"] = std::move(affs);
  if (r.panel_label) j["panel_label"] = *r.panel_label;
  return j;
}

Record record_from_json(const nlohmann::json& j) {
  try {
    Record r;
    r.id = j.at("id").get<std::string>();
    if (r.id.empty()) throw Error(ErrorCode::SchemaError, "record id is empty");
    r.source = parse_source(j.at("source").get<std::string>());
    r.kind = parse_kind(j.at("kind").get<std::string>());
    r.title = j.at("title").get<std::string>();
    if (j.contains("abstract_text")) r.abstract_text = j["abstract_text"].get<std::string>();
    if (j.contains("year")) {
      int y = j["year"].get<int>();
      if (y < 1900 || y > 2100) throw Error(ErrorCode::SchemaError, "year out of range for " + r.id);
      r.year = y;
    }
    if (j.contains("language")) r.language = j["language"].get<std::string>();
    if (j.contains("doi")) {
      r.doi = j["doi"].get<std::string>();
      if (!r.doi->starts_with("10.")) throw Error(ErrorCode::SchemaError, "bad doi for " + r.id);
    }
    if (j.contains("affiliations")) {
      for (const auto& a : j["affiliations"]) {
        AffiliationMention m{a.at("raw_name").get<std::string>(), std::nullopt, std::nullopt};
        if (m.raw_name.empty()) throw Error(ErrorCode::SchemaError, "empty affiliation name in " + r.id);
        if (a.contains("country_code")) m.country_code = a["country_code"].get<std::string>();
        if (a.contains("source_org_id")) m.source_org_id = a["source_org_id"].get<std::string>();
        r.affiliations.push_back(std::move(m));
      }
    }
    if (j.contains("panel_label")) r.panel_label = j["panel_label"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bad record: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<Record>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<Record> parse_jsonl(std::string_view text) {
  std::vector<Record> records;
  std::size_t line_no = 0;
  for (const auto& line : util::split(text, '\n')) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(record_from_json(j));
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records) {
  util::write_file_atomic(path, to_jsonl(records));
}

std::vector<Record> read_jsonl(const std::filesystem::path& path) { return parse_jsonl(util::read_file(path)); }

nlohmann::ordered_json provenance_to_json(const std::map<Source, SourceProvenance>& provenance) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [source, p] : provenance) {
    nlohmann::ordered_json pj;
    pj["query"] = p.query;
    pj["fetch_date"] = p.fetch_date;
    pj["raw_count"] = p.raw_count;
    pj["skipped"] = p.skipped;
    pj["year_candidates"] = p.year_candidates;
    pj["language_candidates"] = p.language_candidates;
    j[std::string(to_string(source))] = std::move(pj);
  }
  return j;
}

std::map<Source, SourceProvenance> provenance_from_json(const nlohmann::json& j) {
  std::map<Source, SourceProvenance> out;
  for (const auto& [key, pj] : j.items()) {
    SourceProvenance p;
    p.query = pj.value("query", "");
    p.fetch_date = pj.value("fetch_date", "");
    p.raw_count = pj.value("raw_count", std::int64_t{0});
    p.skipped = pj.value("skipped", std::int64_t{0});
    if (pj.contains("year_candidates")) {
      p.year_candidates = pj["year_candidates"].get<std::map<std::string, std::vector<int>>>();
    }
    if (pj.contains("language_candidates")) {
      p.language_candidates = pj["language_candidates"].get<std::map<std::string, std::vector<std::string>>>();
    }
    out[parse_source(key)] = std::move(p);
  }
  return out;
}

}  // namespace atlas::corpus
