#include <CLI11.hpp>

#include "horloop/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Closed horizontal geodesics: minimization, min-max, shooting and checks"};
  app.require_subcommand(1, 1);
  std::string config;
  std::string output;
  bool quiet = false;
  app.add_option("--config", config, "Configuration file (key = value)")->required();
  app.add_option("--output", output, "Output directory, overrides output.dir");
  app.add_flag("--quiet", quiet, "No status line on stdout");
  app.fallthrough();
  for (const char* name : {"solve-min", "solve-minmax", "shoot", "verify", "check-gradients", "contract"}) {
    app.add_subcommand(name);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : horloop::cli::kExitInputError;
  }
  horloop::cli::RunOptions options;
  if (!output.empty()) options.output_dir = output;
  options.quiet = quiet;
  return horloop::cli::run(app.get_subcommands().front()->get_name(), config, options);
}
