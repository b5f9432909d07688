#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

#include "sti_atlas/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Research-landscape pipeline: harvest, tag, embed, topics, panels, report"};
  app.require_subcommand(1, 1);

  atlas::pipeline::RunOptions options;
  std::string config = "config.toml";
  std::string out;
  std::uint64_t seed = 0;
  bool verbose = false;
  app.add_option("--config", config, "pipeline config file")->capture_default_str();
  auto* out_opt = app.add_option("--out", out, "output directory (overrides run.out)");
  auto* seed_opt = app.add_option("--seed", seed, "global seed override");
  app.add_flag("--dry-run", options.dry_run, "validate and print the plan without writing files");
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  for (const char* name : {"harvest", "tag", "embed", "topics", "panels", "report", "all"}) {
    app.add_subcommand(name, std::string(name) == "all" ? "run every stage in order" : std::string("run the ") + name + " stage")
        ->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("sti-atlas"));
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  options.subcommand = app.get_subcommands().front()->get_name();
  options.config = config;
  if (*out_opt) options.out = out;
  if (*seed_opt) options.seed = seed;
  return atlas::pipeline::run(options, std::cout, std::cerr);
}
