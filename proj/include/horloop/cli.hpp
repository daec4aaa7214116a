#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "horloop/models.hpp"
#include "horloop/solvers.hpp"

namespace horloop::cli {

// Flat `key = value` configuration. Lines starting with '#' are comments.
// Keys are dotted (model.name, solver.tol_grad, ...); unknown or repeated
// keys are rejected with ConfigError.
class Config {
 public:
  static Config parse(std::istream& in);
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);

  std::string text(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<int> integers(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_keys();

// Reads the format written by write_path_csv: controls from the u_i columns,
// basepoint and class from the metadata line.
Loop read_loop_csv(std::istream& in, const Model& model);

struct RunOptions {
  std::optional<std::string> output_dir;
  bool quiet = false;
};

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitNotConverged = 2;
inline constexpr int kExitInputError = 3;
inline constexpr int kExitNumericalFailure = 4;

// Runs one of solve-min, solve-minmax, shoot, verify, check-gradients and
// contract. Always writes summary.txt (and timing.txt) into the output
// directory, plus command-specific CSV files.
int run(const std::string& command, const std::string& config_path, const RunOptions& options = {});
int run(const std::string& command, const Config& config, const RunOptions& options = {});

// Largest pairwise control distance among the last `window` tracked loops.
double tail_spread(const SolveTrace& trace, std::size_t window = 10);

}  // namespace horloop::cli
