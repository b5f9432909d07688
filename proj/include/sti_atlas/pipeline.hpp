#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sti_atlas/embed.hpp"

namespace atlas::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct HarvestConfig {
  bool openalex = true;
  bool openaire = true;
  bool cordis = true;
  bool kohesio = true;
  // Offline runs read saved payloads from the *_file paths; live runs query the APIs.
  bool live = false;
  std::filesystem::path openalex_file;
  std::filesystem::path openaire_file;
  std::filesystem::path cordis_file;
  std::filesystem::path kohesio_file;
  std::string openalex_endpoint = "https://api.openalex.org/works";
  std::string openaire_endpoint = "https://api.openaire.eu/search/publications";
  int page_size = 200;
  double requests_per_second = 5.0;
  std::filesystem::path cache_dir;  // STI_ATLAS_CACHE wins when set
  std::string fetch_date;           // recorded in provenance
  bool require_abstract = false;
  int kohesio_min_words = 5;
  std::vector<std::string> kohesio_categories;
};

struct TagConfig {
  std::filesystem::path vocabulary;
  int min_hits = 1;
};

struct EmbedConfig {
  embed::EmbeddingProviderSpec provider;
  std::string separator = " [SEP] ";
};

struct TopicsConfig {
  int k = 30;
  int sweep_min = 2;
  int sweep_max = 40;
  int max_iterations = 300;
  double perplexity = 30.0;
  int tsne_iterations = 1000;
  int label_terms = 10;
};

struct PanelsConfig {
  std::filesystem::path projects;      // ERC projects CSV with panel column
  std::filesystem::path publications;  // grant-linked publications CSV
  double percentile = 90.0;
  std::size_t positives_cap = 1500;
  std::size_t negatives_cap = 20000;
  int epochs = 60;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::size_t batch_size = 64;
};

struct Config {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::uint64_t seed = 0;
  std::string country = "DK";
  int year_from = 2014;
  int year_to = 2019;
  int goal = 13;
  std::filesystem::path out;
  std::size_t workers = 0;
  HarvestConfig harvest;
  TagConfig tag;
  EmbedConfig embed;
  TopicsConfig topics;
  PanelsConfig panels;
};

// TOML-style sections of `key = value`. Every problem is collected and
// reported in one ConfigError naming the offending fields.
Config parse_config(std::string_view text, const std::filesystem::path& base_dir);
Config load_config(const std::filesystem::path& path);

enum class Stage { Harvest, Tag, Embed, Topics, Panels, Report };
std::string_view to_string(Stage stage);
// "all" expands to every stage in order.
std::vector<Stage> stages_for(std::string_view subcommand);

// Files each stage writes under the output directory.
std::vector<std::string> stage_outputs(Stage stage);

// ConfigError when a referenced path or predecessor file is missing.
void validate(const Config& config, const std::vector<Stage>& stages, const std::filesystem::path& out_dir);
std::string describe_plan(const Config& config, const std::vector<Stage>& stages, const std::filesystem::path& out_dir);

void run_stage(Stage stage, const Config& config, const std::filesystem::path& out_dir);

struct RunOptions {
  std::string subcommand;
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

// 0 success, 1 validation error, 2 runtime error.
int run(const RunOptions& options, std::ostream& out, std::ostream& err);

}  // namespace atlas::pipeline
