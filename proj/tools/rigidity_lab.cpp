// rigidity-lab: runs one experiment config and writes a JSON report plus CSV
// data. Exit codes: 0 report written, 2 config error, 3 computation error.

#include <cstdint>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rigidity/experiments.hpp"

namespace {

int run(const std::string& config_path, const std::string& output_dir, std::optional<std::uint64_t> seed) {
  using rigidity::Error;
  using rigidity::ErrorKind;
  rigidity::PreparedExperiment ex;
  try {
    ex = rigidity::prepare_experiment(rigidity::load_config(config_path), seed);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto out = rigidity::run_experiment(ex, output_dir);
    std::cout << out.report_path << "\n";
    for (const auto& p : out.data_paths) std::cout << p << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << (e.kind() == ErrorKind::Config ? "config error: " : "computation error: ") << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "computation error: " << e.what() << "\n";
    return 3;
  }
}

void list() {
  for (const auto& e : rigidity::list_experiments())
    std::cout << std::left << std::setw(19) << e.name << std::setw(21) << e.module << std::setw(26) << e.entry
              << e.description << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rigidity-lab: reproducible rigidity experiments"};
  app.require_subcommand(1);
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;
  app.add_option("--output-dir", output_dir, "directory for the report and CSV files");
  app.add_option("--seed-override", seed, "replace the seed given in the config");

  auto* run_cmd = app.add_subcommand("run", "run the experiment described by a config file");
  run_cmd->fallthrough();
  std::string config_path;
  run_cmd->add_option("config", config_path, "JSON config file")->required();
  auto* list_cmd = app.add_subcommand("list", "list the available experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (list_cmd->parsed()) {
    list();
    return 0;
  }
  return run(config_path, output_dir, seed);
}
