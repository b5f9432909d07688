#include "sti_atlas/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "sti_atlas/analytics.hpp"
#include "sti_atlas/corpus.hpp"
#include "sti_atlas/error.hpp"
#include "sti_atlas/harvest.hpp"
#include "sti_atlas/panels.hpp"
#include "sti_atlas/topics.hpp"
#include "sti_atlas/util.hpp"
#include "sti_atlas/vocab.hpp"

namespace atlas::pipeline {

namespace fs = std::filesystem;
using corpus::Record;
using corpus::Source;
using corpus::Payload;

// ---- config ---------------------------------------------------------------

namespace {

// Drops a trailing "# comment" that sits outside double quotes.
std::string strip_comment(const std::string& raw) {
  bool quoted = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '"' && (i == 0 || raw[i - 1] != '\\')) quoted = !quoted;
    if (raw[i] == '#' && !quoted) return util::trim(std::string_view(raw).substr(0, i));
  }
  return util::trim(raw);
}

std::optional<std::string> decode_string(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        char n = v[++i];
        out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
      } else {
        out.push_back(v[i]);
      }
    }
    return out;
  }
  if (v.size() >= 2 && v.front() == '\'' && v.back() == '\'') return v.substr(1, v.size() - 2);
  return std::nullopt;
}

class ConfigReader {
 public:
  explicit ConfigReader(const boost::property_tree::ptree& tree) {
    for (const auto& [key, node] : tree) {
      if (node.empty()) {
        values_[key] = strip_comment(node.data());
      } else {
        for (const auto& [sub, leaf] : node) values_[key + "." + sub] = strip_comment(leaf.data());
      }
    }
  }

  void string(const std::string& key, std::string& target) {
    auto raw = take(key);
    if (!raw) return;
    auto s = decode_string(*raw);
    if (!s) return fail(key, "expected a quoted string");
    target = *s;
  }

  void path(const std::string& key, fs::path& target) {
    std::string s;
    string(key, s);
    if (!s.empty()) target = s;
  }

  void boolean(const std::string& key, bool& target) {
    auto raw = take(key);
    if (!raw) return;
    if (*raw == "true") target = true;
    else if (*raw == "false") target = false;
    else fail(key, "expected true or false");
  }

  template <class Int>
  void integer(const std::string& key, Int& target, long long lo, long long hi) {
    auto raw = take(key);
    if (!raw) return;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc() || ptr != raw->data() + raw->size()) return fail(key, "expected an integer");
    if (v < lo || v > hi) return fail(key, fmt::format("must be within [{}, {}]", lo, hi));
    target = static_cast<Int>(v);
  }

  void unsigned64(const std::string& key, std::optional<std::uint64_t>& target) {
    auto raw = take(key);
    if (!raw) return;
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc() || ptr != raw->data() + raw->size()) return fail(key, "expected a non-negative integer");
    target = v;
  }

  void real(const std::string& key, double& target) {
    auto raw = take(key);
    if (!raw) return;
    char* end = nullptr;
    double v = std::strtod(raw->c_str(), &end);
    if (raw->empty() || end != raw->c_str() + raw->size() || !std::isfinite(v)) return fail(key, "expected a number");
    target = v;
  }

  void string_list(const std::string& key, std::vector<std::string>& target) {
    auto raw = take(key);
    if (!raw) return;
    if (raw->size() < 2 || raw->front() != '[' || raw->back() != ']') return fail(key, "expected [\"a\", \"b\"]");
    target.clear();
    auto inner = util::trim(std::string_view(*raw).substr(1, raw->size() - 2));
    if (inner.empty()) return;
    for (const auto& item : util::split(inner, ',')) {
      auto s = decode_string(util::trim(item));
      if (!s) return fail(key, "list items must be quoted strings");
      target.push_back(*s);
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void fail(const std::string& key, const std::string& message) { errors_.push_back(key + ": " + message); }

  std::vector<std::string> finish() {
    for (const auto& [key, value] : values_) {
      if (!used_.count(key)) errors_.push_back(key + ": unknown field");
    }
    return errors_;
  }

 private:
  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
  std::vector<std::string> errors_;
};

[[noreturn]] void throw_config(const std::vector<std::string>& errors) {
  std::string message = "invalid configuration";
  for (const auto& e : errors) message += "\n  " + e;
  throw Error(ErrorCode::ConfigError, message);
}

fs::path resolve(const Config& config, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return config.base_dir / p;
}

}  // namespace

Config parse_config(std::string_view text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigError, fmt::format("config line {}: {}", e.line(), e.message()));
  }

  Config c;
  c.base_dir = base_dir;
  ConfigReader r(tree);

  std::optional<std::uint64_t> seed;
  r.unsigned64("run.seed", seed);
  if (seed) {
    c.seed = *seed;
  } else if (!r.has("run.seed")) {
    r.fail("run.seed", "required (seeds are never taken from the clock)");
  }
  r.string("run.country", c.country);
  r.integer("run.year_from", c.year_from, 1000, 9999);
  r.integer("run.year_to", c.year_to, 1000, 9999);
  r.integer("run.goal", c.goal, 1, 17);
  r.path("run.out", c.out);
  r.integer("run.workers", c.workers, 0, 1024);
  if (c.year_from > c.year_to) r.fail("run.year_from", "must not exceed run.year_to");
  if (c.country.size() != 2) r.fail("run.country", "expected a two-letter country code");
  std::transform(c.country.begin(), c.country.end(), c.country.begin(), [](unsigned char ch) { return std::toupper(ch); });

  auto& h = c.harvest;
  r.boolean("harvest.openalex", h.openalex);
  r.boolean("harvest.openaire", h.openaire);
  r.boolean("harvest.cordis", h.cordis);
  r.boolean("harvest.kohesio", h.kohesio);
  r.boolean("harvest.live", h.live);
  r.path("harvest.openalex_file", h.openalex_file);
  r.path("harvest.openaire_file", h.openaire_file);
  r.path("harvest.cordis_file", h.cordis_file);
  r.path("harvest.kohesio_file", h.kohesio_file);
  r.string("harvest.openalex_endpoint", h.openalex_endpoint);
  r.string("harvest.openaire_endpoint", h.openaire_endpoint);
  r.integer("harvest.page_size", h.page_size, 1, 10000);
  r.real("harvest.requests_per_second", h.requests_per_second);
  r.path("harvest.cache", h.cache_dir);
  r.string("harvest.fetch_date", h.fetch_date);
  r.boolean("harvest.require_abstract", h.require_abstract);
  r.integer("harvest.kohesio_min_words", h.kohesio_min_words, 0, 1000);
  r.string_list("harvest.kohesio_categories", h.kohesio_categories);

  r.path("tag.vocabulary", c.tag.vocabulary);
  r.integer("tag.min_hits", c.tag.min_hits, 1, 1000);

  std::string provider = "FALLBACK_HASH";
  r.string("embed.provider", provider);
  try {
    c.embed.provider.kind = embed::parse_provider_kind(provider);
  } catch (const Error&) {
    r.fail("embed.provider", "expected FILE, FALLBACK_HASH or SIDECAR");
  }
  std::uint32_t dim = 0;
  r.integer("embed.dim", dim, 8, 65536);
  if (dim) c.embed.provider.params["dim"] = std::to_string(dim);
  for (const char* key : {"path", "command", "model"}) {
    std::string v;
    r.string(std::string("embed.") + key, v);
    if (!v.empty()) c.embed.provider.params[key] = v;
  }
  int batch = 32;
  r.integer("embed.batch", batch, 1, 100000);
  c.embed.provider.params["batch"] = std::to_string(batch);
  r.string("embed.separator", c.embed.separator);

  auto& t = c.topics;
  r.integer("topics.k", t.k, 1, 100000);
  r.integer("topics.sweep_min", t.sweep_min, 1, 100000);
  r.integer("topics.sweep_max", t.sweep_max, 1, 100000);
  r.integer("topics.max_iterations", t.max_iterations, 1, 1000000);
  r.real("topics.perplexity", t.perplexity);
  r.integer("topics.tsne_iterations", t.tsne_iterations, 0, 1000000);
  r.integer("topics.label_terms", t.label_terms, 0, 1000);
  if (t.sweep_min > t.sweep_max) r.fail("topics.sweep_min", "must not exceed topics.sweep_max");
  if (t.perplexity < 3.0) r.fail("topics.perplexity", "must be at least 3");

  auto& p = c.panels;
  r.path("panels.projects", p.projects);
  r.path("panels.publications", p.publications);
  r.real("panels.percentile", p.percentile);
  r.integer("panels.positives_cap", p.positives_cap, 1, 100000000);
  r.integer("panels.negatives_cap", p.negatives_cap, 1, 100000000);
  r.integer("panels.epochs", p.epochs, 1, 100000);
  r.real("panels.learning_rate", p.learning_rate);
  r.real("panels.l2", p.l2);
  r.integer("panels.batch_size", p.batch_size, 1, 100000000);
  if (p.percentile < 0.0 || p.percentile > 100.0) r.fail("panels.percentile", "must be within [0, 100]");
  if (p.learning_rate <= 0.0) r.fail("panels.learning_rate", "must be positive");
  if (p.l2 < 0.0) r.fail("panels.l2", "must be non-negative");

  auto errors = r.finish();
  if (!errors.empty()) throw_config(errors);
  return c;
}

Config load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "config file not found: " + path.string());
  return parse_config(util::read_file(path), fs::absolute(path).parent_path());
}

// ---- stages ---------------------------------------------------------------

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Harvest: return "harvest";
    case Stage::Tag: return "tag";
    case Stage::Embed: return "embed";
    case Stage::Topics: return "topics";
    case Stage::Panels: return "panels";
    case Stage::Report: return "report";
  }
  return "?";
}

std::vector<Stage> stages_for(std::string_view subcommand) {
  static const std::vector<Stage> kAll = {Stage::Harvest, Stage::Tag,    Stage::Embed,
                                          Stage::Topics,  Stage::Panels, Stage::Report};
  if (subcommand == "all") return kAll;
  for (Stage s : kAll) {
    if (to_string(s) == subcommand) return {s};
  }
  throw Error(ErrorCode::ConfigError, "unknown subcommand '" + std::string(subcommand) + "'");
}

std::vector<std::string> stage_outputs(Stage stage) {
  switch (stage) {
    case Stage::Harvest: return {"corpus.jsonl", "provenance.json"};
    case Stage::Tag: return {"tags.jsonl"};
    case Stage::Embed: return {"sdg.emb1", "erc_projects.emb1", "erc_publications.emb1"};
    case Stage::Topics: return {"topic_model.json", "topic_sweep.json", "projection.csv", "projection.json"};
    case Stage::Panels:
      return {"centroids.json", "training_sets.json", "classifiers.json", "eval.json", "predictions.jsonl"};
    case Stage::Report: {
      std::vector<std::string> out;
      for (const char* f : analytics::kReportFiles) out.push_back(std::string("report/") + f);
      out.push_back("report/manifest.json");
      return out;
    }
  }
  return {};
}

namespace {

std::vector<std::string> stage_inputs(Stage stage) {
  switch (stage) {
    case Stage::Harvest: return {};
    case Stage::Tag: return {"corpus.jsonl"};
    case Stage::Embed: return {"corpus.jsonl", "tags.jsonl"};
    case Stage::Topics: return {"corpus.jsonl", "sdg.emb1"};
    case Stage::Panels: return {"sdg.emb1", "erc_projects.emb1", "erc_publications.emb1"};
    case Stage::Report:
      return {"corpus.jsonl", "tags.jsonl", "topic_model.json", "topic_sweep.json", "projection.csv",
              "predictions.jsonl"};
  }
  return {};
}

void require_file(const Config& config, const std::string& field, const fs::path& value,
                  std::vector<std::string>& errors) {
  if (value.empty()) {
    errors.push_back(field + ": required");
  } else if (!fs::is_regular_file(resolve(config, value))) {
    errors.push_back(field + ": file not found: " + resolve(config, value).string());
  }
}

}  // namespace

void validate(const Config& config, const std::vector<Stage>& stages, const fs::path& out_dir) {
  std::vector<std::string> errors;
  std::set<std::string> produced;
  for (Stage stage : stages) {
    for (const auto& input : stage_inputs(stage)) {
      if (!produced.count(input) && !fs::is_regular_file(out_dir / input)) {
        errors.push_back(fmt::format("{}: needs {} from an earlier stage (not found in {})", to_string(stage), input,
                                     out_dir.string()));
      }
    }
    switch (stage) {
      case Stage::Harvest: {
        const auto& h = config.harvest;
        if (!h.openalex && !h.openaire && !h.cordis && !h.kohesio) errors.push_back("harvest: every source is disabled");
        if (h.openalex && !h.live) require_file(config, "harvest.openalex_file", h.openalex_file, errors);
        if (h.openaire && !h.live) require_file(config, "harvest.openaire_file", h.openaire_file, errors);
        if (h.cordis) require_file(config, "harvest.cordis_file", h.cordis_file, errors);
        if (h.kohesio) require_file(config, "harvest.kohesio_file", h.kohesio_file, errors);
        break;
      }
      case Stage::Tag: require_file(config, "tag.vocabulary", config.tag.vocabulary, errors); break;
      case Stage::Embed: {
        const auto& spec = config.embed.provider;
        try {
          embed::validate(spec);
        } catch (const Error&) {
          const char* field = spec.kind == embed::ProviderKind::File      ? "embed.path"
                              : spec.kind == embed::ProviderKind::Sidecar ? "embed.command"
                                                                          : "embed.dim";
          errors.push_back(std::string(field) + ": required by provider " + std::string(embed::to_string(spec.kind)));
        }
        if (spec.kind == embed::ProviderKind::File && spec.params.count("path")) {
          require_file(config, "embed.path", spec.params.at("path"), errors);
        }
        require_file(config, "panels.projects", config.panels.projects, errors);
        require_file(config, "panels.publications", config.panels.publications, errors);
        break;
      }
      case Stage::Topics: break;
      case Stage::Panels:
        require_file(config, "panels.projects", config.panels.projects, errors);
        require_file(config, "panels.publications", config.panels.publications, errors);
        break;
      case Stage::Report: break;
    }
    for (const auto& output : stage_outputs(stage)) produced.insert(output);
  }
  if (!errors.empty()) throw_config(errors);
}

std::string describe_plan(const Config& config, const std::vector<Stage>& stages, const fs::path& out_dir) {
  std::string plan = fmt::format("plan: {} stage(s), output {}, seed {}\n", stages.size(), out_dir.string(),
                                 config.seed);
  for (Stage stage : stages) {
    std::string inputs, outputs;
    for (const auto& f : stage_inputs(stage)) inputs += (inputs.empty() ? "" : ", ") + f;
    for (const auto& f : stage_outputs(stage)) outputs += (outputs.empty() ? "" : ", ") + f;
    plan += fmt::format("  {:<8} reads [{}] writes [{}]\n", to_string(stage), inputs, outputs);
  }
  return plan;
}

namespace {

std::size_t workers_of(const Config& config) {
  return config.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.workers;
}

std::string record_text(const Record& r, const std::string& separator) {
  if (!r.abstract_text || r.abstract_text->empty()) return r.title;
  return r.title + separator + *r.abstract_text;
}

std::vector<Payload> load_openalex_file(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedPayload, path.string() + ": " + e.what());
  }
  if (doc.is_object() && doc.contains("results")) doc = doc["results"];
  if (!doc.is_array()) throw Error(ErrorCode::SchemaDrift, path.string() + ": expected an array of works");
  return std::vector<Payload>(doc.begin(), doc.end());
}

harvest::FetchOptions fetch_options(const Config& config) {
  harvest::FetchOptions options;
  options.limiter = std::make_shared<harvest::RateLimiter>(config.harvest.requests_per_second);
  fs::path cache = config.harvest.cache_dir.empty() ? fs::path() : resolve(config, config.harvest.cache_dir);
  if (const char* env = std::getenv("STI_ATLAS_CACHE"); env && *env) cache = env;
  if (!cache.empty()) options.cache.emplace(cache);
  return options;
}

std::vector<Record> normalize_all(const std::vector<Payload>& payloads, Source source,
                                  corpus::SourceProvenance& provenance) {
  std::vector<Record> out;
  for (const auto& p : payloads) {
    if (auto r = corpus::normalize_record(p, source, &provenance)) out.push_back(std::move(*r));
  }
  return out;
}

void run_harvest(const Config& config, const fs::path& out_dir) {
  const auto& h = config.harvest;
  corpus::FilterOptions filter{config.country, config.year_from, config.year_to, h.require_abstract, true};
  std::map<Source, corpus::SourceProvenance> provenance;
  std::vector<Record> records;

  auto add = [&](Source source, std::vector<Record> raw) {
    auto& prov = provenance[source];
    prov.fetch_date = h.fetch_date;
    auto kept = corpus::filter(corpus::dedupe(raw), filter);
    spdlog::info("{}: {} raw, {} after dedupe and filter", corpus::display_name(source), raw.size(), kept.size());
    records.insert(records.end(), kept.begin(), kept.end());
  };

  if (h.openalex) {
    auto& prov = provenance[Source::OpenAlex];
    std::vector<Payload> payloads;
    if (h.live) {
      auto request = harvest::openalex_request(h.openalex_endpoint, config.country, config.year_from, config.year_to,
                                               std::min(h.page_size, harvest::max_page_size(Source::OpenAlex)));
      prov.query = harvest::request_url(request, Source::OpenAlex);
      payloads = harvest::fetch_paged(request, Source::OpenAlex, fetch_options(config)).payloads;
    } else {
      prov.query = "file:" + h.openalex_file.generic_string();
      payloads = load_openalex_file(resolve(config, h.openalex_file));
    }
    prov.raw_count = static_cast<std::int64_t>(payloads.size());
    add(Source::OpenAlex, normalize_all(payloads, Source::OpenAlex, prov));
  }
  if (h.openaire) {
    auto& prov = provenance[Source::OpenAire];
    std::vector<Payload> payloads;
    if (h.live) {
      auto range = harvest::make_window(fmt::format("{}-01-01", config.year_from),
                                        fmt::format("{}-12-31", config.year_to));
      auto base = harvest::openaire_request(h.openaire_endpoint, config.country, range,
                                            std::min(h.page_size, harvest::max_page_size(Source::OpenAire)));
      auto options = fetch_options(config);
      auto windows = harvest::plan_openaire_windows(
          range, [&](const harvest::DateWindow& w) { return harvest::openaire_count(base, w, options); });
      prov.query = harvest::request_url(base, Source::OpenAire);
      payloads = harvest::fetch_windows(base, windows, options, workers_of(config)).payloads;
    } else {
      prov.query = "file:" + h.openaire_file.generic_string();
      auto doc = harvest::parse_openaire_xml(util::read_file(resolve(config, h.openaire_file)));
      payloads = std::move(doc.payloads);
      prov.skipped += doc.skipped;
    }
    prov.raw_count = static_cast<std::int64_t>(payloads.size());
    add(Source::OpenAire, normalize_all(payloads, Source::OpenAire, prov));
  }
  if (h.cordis) {
    auto& prov = provenance[Source::Cordis];
    prov.query = "file:" + h.cordis_file.generic_string();
    auto raw = harvest::ingest_cordis(resolve(config, h.cordis_file), &prov);
    add(Source::Cordis, std::move(raw));
  }
  if (h.kohesio) {
    auto& prov = provenance[Source::Kohesio];
    prov.query = "file:" + h.kohesio_file.generic_string();
    harvest::KohesioOptions options;
    options.min_description_words = h.kohesio_min_words;
    if (!h.kohesio_categories.empty()) options.prefilter = harvest::category_prefilter(h.kohesio_categories);
    auto raw = harvest::ingest_kohesio(resolve(config, h.kohesio_file), options, &prov);
    add(Source::Kohesio, std::move(raw));
  }

  corpus::write_jsonl(out_dir / "corpus.jsonl", records);
  util::write_file_atomic(out_dir / "provenance.json", corpus::provenance_to_json(provenance).dump(2) + "\n");
}

void run_tag(const Config& config, const fs::path& out_dir) {
  auto records = corpus::read_jsonl(out_dir / "corpus.jsonl");
  auto vocab = vocab::compile_vocabulary(resolve(config, config.tag.vocabulary));
  auto tags = vocab::tag_corpus(records, vocab, vocab::TagOptions{config.tag.min_hits}, workers_of(config));
  std::size_t tagged = std::count_if(tags.begin(), tags.end(),
                                     [&](const auto& kv) { return kv.second.goals.count(config.goal) > 0; });
  spdlog::info("tagged {} of {} records with goal {}", tagged, records.size(), config.goal);
  vocab::write_tags(out_dir / "tags.jsonl", tags);
}

std::vector<Record> goal_records(const Config& config, const fs::path& out_dir) {
  auto records = corpus::read_jsonl(out_dir / "corpus.jsonl");
  auto tags = vocab::read_tags(out_dir / "tags.jsonl");
  std::vector<Record> out;
  for (auto& r : records) {
    auto it = tags.find(corpus::qualified_id(r));
    if (it != tags.end() && it->second.goals.count(config.goal)) out.push_back(std::move(r));
  }
  return out;
}

struct ErcData {
  std::vector<Record> projects;
  harvest::LinkResult links;
};

ErcData load_erc(const Config& config) {
  ErcData erc;
  erc.projects = harvest::ingest_cordis(resolve(config, config.panels.projects));
  auto payloads = harvest::ingest_cordis_publications(util::read_csv(resolve(config, config.panels.publications)));
  erc.links = harvest::link_grant_publications(erc.projects, payloads);
  return erc;
}

embed::EmbeddingProviderSpec provider_spec(const Config& config) {
  auto spec = config.embed.provider;
  if (spec.params.count("path")) spec.params["path"] = resolve(config, spec.params["path"]).string();
  spec.params["seed"] = std::to_string(config.seed);
  return spec;
}

void run_embed(const Config& config, const fs::path& out_dir) {
  auto spec = provider_spec(config);
  auto embed_set = [&](const std::string& name, const std::vector<std::pair<std::string, std::string>>& texts) {
    auto matrix = embed::provide_embeddings(spec, texts, out_dir / "embed_work" / name);
    embed::write_vectors(matrix, out_dir / (name + ".emb1"));
    spdlog::info("embedded {} texts into {} (dim {})", matrix.rows(), name, matrix.dim());
  };

  std::vector<std::pair<std::string, std::string>> texts;
  for (const auto& r : goal_records(config, out_dir)) {
    texts.emplace_back(corpus::qualified_id(r), record_text(r, config.embed.separator));
  }
  embed_set("sdg", texts);

  auto erc = load_erc(config);
  texts.clear();
  for (const auto& r : erc.projects) texts.emplace_back(corpus::qualified_id(r), record_text(r, config.embed.separator));
  embed_set("erc_projects", texts);

  texts.clear();
  std::set<std::string> seen;
  for (const auto& [grant, r] : erc.links.pairs) {
    auto id = corpus::qualified_id(r);
    if (seen.insert(id).second) texts.emplace_back(id, record_text(r, config.embed.separator));
  }
  embed_set("erc_publications", texts);
}

void run_topics(const Config& config, const fs::path& out_dir) {
  const auto& t = config.topics;
  auto x = embed::read_vectors(out_dir / "sdg.emb1");
  const int n = static_cast<int>(x.rows());
  topics::KMeansOptions km{t.max_iterations, workers_of(config)};

  std::vector<int> ks;
  for (int k = t.sweep_min; k <= std::min(t.sweep_max, n); ++k) ks.push_back(k);
  topics::SweepResult sweep;
  if (!ks.empty()) sweep = topics::sweep_k(x, ks, config.seed, km);

  auto model = topics::kmeans_fit(x, t.k, config.seed, km);

  std::map<std::string, std::string> text_by_id;
  for (const auto& r : corpus::read_jsonl(out_dir / "corpus.jsonl")) {
    text_by_id[corpus::qualified_id(r)] = record_text(r, " ");
  }
  std::vector<std::vector<std::string>> topic_texts(static_cast<std::size_t>(model.k));
  for (std::size_t i = 0; i < model.ids.size(); ++i) {
    topic_texts[static_cast<std::size_t>(model.assignments[i])].push_back(text_by_id[model.ids[i]]);
  }
  model.label_candidates = topics::label_candidates(topic_texts, static_cast<std::size_t>(t.label_terms));
  topics::save_topic_model(model, out_dir / "topic_model.json");

  nlohmann::ordered_json sweep_json;
  sweep_json["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : sweep.rows) {
    sweep_json["rows"].push_back({{"k", row.k}, {"wcss", row.wcss}, {"dbcc_min", row.dbcc_min}});
  }
  sweep_json["elbow"] = sweep.elbow ? nlohmann::ordered_json(*sweep.elbow) : nlohmann::ordered_json();
  sweep_json["chosen_k"] = t.k;
  util::write_file_atomic(out_dir / "topic_sweep.json", sweep_json.dump(2) + "\n");

  // Exact t-SNE needs perplexity < n / 3; small corpora get the largest valid value.
  double perplexity = std::min(t.perplexity, std::floor(double(n - 1) / 3.0));
  nlohmann::ordered_json meta;
  meta["requested_perplexity"] = t.perplexity;
  if (perplexity >= 3.0) {
    if (perplexity < t.perplexity) spdlog::warn("t-SNE perplexity lowered to {} for {} documents", perplexity, n);
    auto projection = topics::tsne_project(x, perplexity, config.seed, t.tsne_iterations);
    util::write_file_atomic(out_dir / "projection.csv", topics::projection_csv(projection, model.assignment_map()));
    meta["perplexity"] = perplexity;
    meta["seed"] = config.seed;
    meta["iterations"] = t.tsne_iterations;
    meta["kl_initial"] = projection.kl_initial;
    meta["kl_final"] = projection.kl_final;
  } else {
    spdlog::warn("too few documents ({}) for a t-SNE projection", n);
    util::write_file_atomic(out_dir / "projection.csv", "id,x,y,topic\n");
    meta["perplexity"] = nullptr;
  }
  util::write_file_atomic(out_dir / "projection.json", meta.dump(2) + "\n");
}

void run_panels(const Config& config, const fs::path& out_dir) {
  const auto& p = config.panels;
  auto erc = load_erc(config);
  auto project_x = embed::read_vectors(out_dir / "erc_projects.emb1");
  auto publication_x = embed::read_vectors(out_dir / "erc_publications.emb1");

  std::map<std::string, std::string> gold;
  std::map<std::string, std::string> grant_panel;
  for (const auto& r : erc.projects) {
    if (!r.panel_label) continue;
    gold[corpus::qualified_id(r)] = *r.panel_label;
    grant_panel[r.id] = *r.panel_label;
  }
  auto centroids = panels::panel_centroids(project_x, gold, panels::CentroidOptions{p.percentile, true});

  std::vector<panels::GrantLink> links;
  for (const auto& [grant, record] : erc.links.pairs) {
    if (auto it = grant_panel.find(grant); it != grant_panel.end()) {
      links.push_back(panels::GrantLink{it->second, corpus::qualified_id(record)});
    }
  }
  auto propagation = panels::propagate_labels(publication_x, centroids, links);
  auto sets = panels::build_training_sets(propagation.labels, propagation.candidates,
                                          panels::TrainingCaps{p.positives_cap, p.negatives_cap}, config.seed);
  panels::TrainHyper hyper{p.epochs, p.learning_rate, p.l2, p.batch_size, config.seed};
  auto classifiers = panels::train_all(sets, publication_x, hyper, workers_of(config));
  auto report = panels::evaluate(panels::predict_all(project_x, classifiers), gold);
  spdlog::info("panel classifiers: macro F1 {:.3f} on {} projects", report.macro_f1, gold.size());

  nlohmann::ordered_json centroid_json = nlohmann::ordered_json::array();
  for (const auto& c : centroids) {
    centroid_json.push_back({{"panel", c.panel},
                             {"threshold", c.threshold},
                             {"projects", c.project_count},
                             {"degenerate", c.degenerate},
                             {"vector", c.vector}});
  }
  util::write_file_atomic(out_dir / "centroids.json", centroid_json.dump(2) + "\n");

  nlohmann::ordered_json sets_json;
  sets_json["labelled"] = propagation.labels.size();
  sets_json["excluded"] = propagation.excluded.size();
  sets_json["unlinked_publications"] = erc.links.dropped;
  sets_json["panels"] = nlohmann::ordered_json::array();
  for (const auto& s : sets) {
    sets_json["panels"].push_back(
        {{"panel", s.panel}, {"seed", s.seed}, {"positives", s.positives}, {"negatives", s.negatives}});
  }
  util::write_file_atomic(out_dir / "training_sets.json", sets_json.dump(2) + "\n");

  panels::save_classifiers(classifiers, out_dir / "classifiers.json");
  util::write_file_atomic(out_dir / "eval.json", panels::to_json(report).dump(2) + "\n");
  panels::write_predictions(out_dir / "predictions.jsonl",
                            panels::predict_all(embed::read_vectors(out_dir / "sdg.emb1"), classifiers));
}

nlohmann::ordered_json params_json(const Config& config) {
  nlohmann::ordered_json j;
  j["seed"] = config.seed;
  j["country"] = config.country;
  j["year_from"] = config.year_from;
  j["year_to"] = config.year_to;
  j["goal"] = config.goal;
  j["harvest"] = {{"live", config.harvest.live},
                  {"openalex", config.harvest.openalex},
                  {"openaire", config.harvest.openaire},
                  {"cordis", config.harvest.cordis},
                  {"kohesio", config.harvest.kohesio},
                  {"require_abstract", config.harvest.require_abstract},
                  {"kohesio_min_words", config.harvest.kohesio_min_words}};
  j["tag"] = {{"min_hits", config.tag.min_hits}};
  nlohmann::ordered_json provider;
  provider["kind"] = embed::to_string(config.embed.provider.kind);
  for (const auto& [k, v] : config.embed.provider.params) {
    provider[k] = k == "path" || k == "command" ? fs::path(v).filename().string() : v;
  }
  j["embed"] = provider;
  const auto& t = config.topics;
  j["topics"] = {{"k", t.k},
                 {"sweep_min", t.sweep_min},
                 {"sweep_max", t.sweep_max},
                 {"max_iterations", t.max_iterations},
                 {"perplexity", t.perplexity},
                 {"tsne_iterations", t.tsne_iterations},
                 {"label_terms", t.label_terms}};
  const auto& p = config.panels;
  j["panels"] = {{"percentile", p.percentile},     {"positives_cap", p.positives_cap},
                 {"negatives_cap", p.negatives_cap}, {"epochs", p.epochs},
                 {"learning_rate", p.learning_rate}, {"l2", p.l2},
                 {"batch_size", p.batch_size}};
  return j;
}

void run_report(const Config& config, const fs::path& out_dir) {
  auto records = corpus::read_jsonl(out_dir / "corpus.jsonl");
  auto tags = vocab::read_tags(out_dir / "tags.jsonl");
  auto predictions = panels::read_predictions(out_dir / "predictions.jsonl");
  auto model = topics::load_topic_model(out_dir / "topic_model.json");

  std::vector<Record> tagged;
  for (const auto& r : records) {
    auto it = tags.find(corpus::qualified_id(r));
    if (it != tags.end() && it->second.goals.count(config.goal)) tagged.push_back(r);
  }

  analytics::ReportArtifacts a;
  a.shares = analytics::sdg_share(records, tags, config.goal);
  analytics::AffiliationOptions affiliation;
  affiliation.goal = config.goal;
  affiliation.country = config.country;
  a.affiliations = analytics::top_affiliations(records, tags, affiliation);
  a.panel_counts = analytics::panel_source_counts(predictions, tagged);
  a.cooccurrence = analytics::topic_panel_cooccurrence(model.assignment_map(), model.k, predictions);
  a.projection_csv = util::read_file(out_dir / "projection.csv");

  auto sweep_json = nlohmann::json::parse(util::read_file(out_dir / "topic_sweep.json"));
  for (const auto& row : sweep_json.at("rows")) {
    a.sweep.rows.push_back(
        topics::SweepRow{row.at("k").get<int>(), row.at("wcss").get<double>(), row.at("dbcc_min").get<double>()});
  }
  if (!sweep_json.at("elbow").is_null()) a.sweep.elbow = sweep_json["elbow"].get<int>();

  for (const auto& stage : {Stage::Harvest, Stage::Tag, Stage::Embed, Stage::Topics, Stage::Panels}) {
    for (const auto& f : stage_outputs(stage)) {
      if (fs::is_regular_file(out_dir / f)) a.inputs["stage/" + f] = out_dir / f;
    }
  }
  auto add_config_input = [&](const fs::path& p) {
    if (!p.empty() && fs::is_regular_file(resolve(config, p))) a.inputs["config/" + p.generic_string()] = resolve(config, p);
  };
  add_config_input(config.tag.vocabulary);
  add_config_input(config.panels.projects);
  add_config_input(config.panels.publications);
  if (!config.harvest.live) {
    add_config_input(config.harvest.openalex_file);
    add_config_input(config.harvest.openaire_file);
  }
  add_config_input(config.harvest.cordis_file);
  add_config_input(config.harvest.kohesio_file);

  a.params = params_json(config);
  a.versions["sti_atlas"] = kVersion;
  a.versions["embedding_provider"] = embed::to_string(config.embed.provider.kind);
  switch (config.embed.provider.kind) {
    case embed::ProviderKind::FallbackHash:
      a.versions["embedding_model"] = "feature-hashing fallback (non-semantic)";
      break;
    case embed::ProviderKind::Sidecar:
      a.versions["embedding_model"] = config.embed.provider.params.count("model")
                                          ? config.embed.provider.params.at("model")
                                          : std::string("allenai/specter");
      break;
    case embed::ProviderKind::File: a.versions["embedding_model"] = "precomputed vectors"; break;
  }
  analytics::emit_report(a, out_dir / "report");
}

}  // namespace

void run_stage(Stage stage, const Config& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  spdlog::info("stage {}", to_string(stage));
  switch (stage) {
    case Stage::Harvest: return run_harvest(config, out_dir);
    case Stage::Tag: return run_tag(config, out_dir);
    case Stage::Embed: return run_embed(config, out_dir);
    case Stage::Topics: return run_topics(config, out_dir);
    case Stage::Panels: return run_panels(config, out_dir);
    case Stage::Report: return run_report(config, out_dir);
  }
}

int run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  Config config;
  std::vector<Stage> stages;
  fs::path out_dir;
  try {
    stages = stages_for(options.subcommand);
    config = load_config(options.config);
    if (options.seed) config.seed = *options.seed;
    if (options.out) {
      out_dir = *options.out;
    } else if (!config.out.empty()) {
      out_dir = resolve(config, config.out);
    } else {
      throw Error(ErrorCode::ConfigError, "run.out: required unless --out is given");
    }
    validate(config, stages, out_dir);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  }

  if (options.dry_run) {
    out << describe_plan(config, stages, out_dir);
    return 0;
  }
  try {
    for (Stage stage : stages) run_stage(stage, config, out_dir);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace atlas::pipeline
