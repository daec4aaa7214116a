#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "horloop/cli.hpp"
#include "horloop/error.hpp"
#include "support.hpp"

using namespace horloop;
using namespace horloop::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("horloop_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

cli::Config config_of(const std::string& text) {
  std::istringstream in(text);
  return cli::Config::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> summary_of(const fs::path& dir) {
  std::map<std::string, std::string> out;
  std::istringstream in(slurp(dir / "summary.txt"));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

int run_quiet(const std::string& command, const cli::Config& c, const fs::path& dir) {
  cli::RunOptions o;
  o.output_dir = dir.string();
  o.quiet = true;
  return cli::run(command, c, o);
}

}  // namespace

TEST_CASE("config parsing") {
  const cli::Config c = config_of(
      "# comment\n"
      "model.name = heisenberg\n"
      "model.params = 2\n"
      "\n"
      "  seed.class = 1, 0 \n"
      "solver.tol_grad=1e-9\n");
  CHECK(c.text("model.name", "") == "heisenberg");
  CHECK(c.integer("model.params", 0) == 2);
  CHECK(c.integers("seed.class") == std::vector<int>{1, 0});
  CHECK(c.real("solver.tol_grad", 0.0) == 1e-9);
  CHECK(c.real("solver.tol_geo", 0.5) == 0.5);
  CHECK_FALSE(c.has("grid.N"));

  CHECK_THROWS_AS(config_of("model.nmae = flat_torus\n"), ConfigError);
  CHECK_THROWS_AS(config_of("grid.N = 4\ngrid.N = 8\n"), ConfigError);
  CHECK_THROWS_AS(config_of("grid.N\n"), ConfigError);
  CHECK_THROWS_AS(config_of("grid.N = 4x\n").integer("grid.N", 1), ConfigError);
  cli::Config empty;
  CHECK_THROWS_AS(empty.set("no.such", "1"), ConfigError);
}

TEST_CASE("loop CSV round trip") {
  const Model model = contact_t3();
  SplitMix64 rng(51);
  const Loop loop = random_loop_in_class(model, Eigen::Vector3i(0, 0, 1), 16, rng, 0.5);
  std::stringstream io;
  write_path_csv(io, model, integrate(model, loop.control, loop.basepoint), loop.klass);
  const Loop back = cli::read_loop_csv(io, model);
  CHECK(back.control.values() == loop.control.values());
  CHECK(back.basepoint == loop.basepoint);
  CHECK(back.klass == loop.klass);

  std::istringstream bad("t,x_1,u_1\n");
  CHECK_THROWS_AS(cli::read_loop_csv(bad, model), InputError);
}

TEST_CASE("solve-min on the flat torus") {
  const fs::path dir = scratch("solve_min");
  const cli::Config c = config_of("model.name = flat_torus\nseed.class = 1, 0\n");
  CHECK(run_quiet("solve-min", c, dir) == cli::kExitOk);
  auto s = summary_of(dir);
  CHECK(s["command"] == "solve-min");
  CHECK(s["status"] == "converged");
  CHECK(s["exit_code"] == "0");
  CHECK(std::stod(s["energy"]) == doctest::Approx(2 * kPi * kPi).epsilon(0.01));
  CHECK(s["certified"] == "true");
  CHECK(s.count("multiplier_1"));
  CHECK(fs::exists(dir / "timing.txt"));
  CHECK(slurp(dir / "trace.csv").rfind("iteration,energy,grad_norm,constraint_norm\n", 0) == 0);
  for (const auto& entry : fs::directory_iterator(dir)) CHECK(entry.path().extension() != ".tmp");

  // The exported curve certifies on its own.
  cli::Config v = config_of("model.name = flat_torus\n");
  v.set("verify.loop_file", (dir / "curve.csv").string());
  const fs::path vdir = scratch("verify_geodesic");
  CHECK(run_quiet("verify", v, vdir) == cli::kExitOk);
}

TEST_CASE("verify rejects a constant loop") {
  const fs::path dir = scratch("verify_constant");
  const Model model = flat_torus(2);
  {
    std::ofstream out(dir / "still.csv");
    write_path_csv(out, model, integrate(model, Control::zeros(8, 2), Eigen::Vector2d(1, 1)),
                   IVec(Eigen::Vector2i(0, 0)));
  }
  cli::Config c = config_of("model.name = flat_torus\n");
  c.set("verify.loop_file", (dir / "still.csv").string());
  CHECK(run_quiet("verify", c, dir / "out") == cli::kExitNotConverged);
  CHECK(summary_of(dir / "out")["reason"] == "constant curve: not a geodesic");
}

TEST_CASE("check-gradients on heisenberg") {
  const fs::path dir = scratch("check");
  const cli::Config c = config_of("model.name = heisenberg\nmodel.params = 1\nrun.rng_seed = 7\ngrid.N = 16\n");
  CHECK(run_quiet("check-gradients", c, dir) == cli::kExitOk);
  auto s = summary_of(dir);
  CHECK(std::stod(s["max_rel_error_jacobian"]) < 1e-5);
  CHECK(std::stod(s["max_rel_error_gradient"]) < 1e-5);
  CHECK(std::stod(s["max_orthogonality"]) < 1e-9);
}

TEST_CASE("shoot on contact T3") {
  const fs::path dir = scratch("shoot");
  const cli::Config c = config_of(
      "model.name = contact_t3\nshoot.x0 = 0.1, 0.2, 0\nshoot.lam0 = 0.05, 0, 1\nshoot.period = 6.28\n");
  CHECK(run_quiet("shoot", c, dir) == cli::kExitOk);
  auto s = summary_of(dir);
  CHECK(std::stod(s["periodicity_residual"]) < 1e-8);
  CHECK(std::stod(s["energy"]) == doctest::Approx(2 * kPi * kPi).epsilon(1e-3));
}

TEST_CASE("contract") {
  const cli::Config ok = config_of("model.name = flat_torus\nsweep.kind = small\nsweep.P = 6\ncontract.epsilon = 1e-4\n");
  CHECK(run_quiet("contract", ok, scratch("contract_ok")) == cli::kExitOk);
  const cli::Config bad = config_of(
      "model.name = flat_torus\nsweep.kind = small\nsweep.P = 6\ncontract.epsilon = 1e-4\n"
      "sweep.include_class = 1, 0\n");
  const fs::path dir = scratch("contract_bad");
  CHECK(run_quiet("contract", bad, dir) == cli::kExitNumericalFailure);
  CHECK(summary_of(dir)["status"] == "numerical_failure");
}

TEST_CASE("solve-minmax on a constant sweep collapses") {
  const fs::path dir = scratch("collapse");
  const cli::Config c = config_of("model.name = round_s2\nsweep.kind = constant\nsweep.P = 8\ngrid.N = 16\n");
  CHECK(run_quiet("solve-minmax", c, dir) == cli::kExitNumericalFailure);
  CHECK(summary_of(dir)["reason"].find("level collapses") != std::string::npos);
}

TEST_CASE("input errors exit 3 and still leave a summary") {
  const fs::path dir = scratch("input");
  CHECK(run_quiet("solve-min", config_of("model.name = moebius\n"), dir / "a") == cli::kExitInputError);
  CHECK(summary_of(dir / "a")["status"] == "input_error");
  CHECK(run_quiet("solve-min", config_of("model.name = flat_torus\ngrid.N = 0\n"), dir / "b") ==
        cli::kExitInputError);
  CHECK(run_quiet("solve-min", config_of("model.name = flat_torus\nsolver.tol_grad = -1\n"), dir / "c") ==
        cli::kExitInputError);
  CHECK(run_quiet("fly", config_of("model.name = flat_torus\n"), dir / "d") == cli::kExitInputError);

  cli::RunOptions o;
  o.output_dir = (dir / "e").string();
  o.quiet = true;
  CHECK(cli::run("solve-min", (dir / "missing.cfg").string(), o) == cli::kExitInputError);
  CHECK(fs::exists(dir / "e" / "summary.txt"));
}

TEST_CASE("runs are deterministic") {
  const cli::Config c = config_of("model.name = contact_t3\nseed.class = 0, 0, 1\nrun.rng_seed = 3\ngrid.N = 32\n");
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  CHECK(run_quiet("solve-min", c, a) == run_quiet("solve-min", c, b));
  for (const char* f : {"summary.txt", "curve.csv", "trace.csv"}) CHECK(slurp(a / f) == slurp(b / f));
}
