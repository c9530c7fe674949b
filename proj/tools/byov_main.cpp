#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "byov/experiments.hpp"

namespace {

// exit codes: 0 ok, 1 runtime error, 2 invalid config, 3 non-finite abort
int run(const std::string& name, const byov::CliOptions& opts) {
  try {
    byov::RunContext ctx = byov::prepare_run(name, opts);
    byov::run_subcommand(name, ctx);
    return 0;
  } catch (const byov::ConfigError& e) {
    std::cerr << nlohmann::json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const byov::NanError& e) {
    std::cerr << nlohmann::json{{"error", "nan"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "runtime"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BYOV: variational self-distillation training and analysis"};
  app.require_subcommand(1);

  byov::CliOptions opts;
  std::string chosen;
  for (const std::string& name : byov::subcommand_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "JSON experiment config");
    sub->add_option("--set", opts.overrides, "override, key.path=value (repeatable)");
    sub->add_option("--resume", opts.resume_path, "checkpoint to resume training from");
    sub->add_option("--seed", [&opts](const std::vector<std::string>& v) {
      try {
        size_t used = 0;
        opts.seed = std::stoull(v.back(), &used);
        return used == v.back().size();
      } catch (const std::exception&) {
        return false;
      }
    }, "seed override");
    sub->add_flag("--force", opts.force, "reuse an existing output directory");
    sub->callback([&chosen, name] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);
  return run(chosen, opts);
}
