#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "rigidity/experiments.hpp"

using namespace rigidity;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("rigidity_lab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RIGIDITY_LAB_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

const char* kAffineS1 = R"({
  "experiment": "s1-rigidity", "seed": 1,
  "system": {"maps": [{"degree": 2}, {"degree": 3}], "probs": [0.5, 0.5]},
  "params": {"n_bins": 512, "n_steps": 20000}
})";

const char* kQuickTorus = R"({
  "experiment": "torus-exponents", "seed": 5,
  "system": {"maps": [{"type": "perturbed", "matrix": [[2,1],[1,1]], "epsilon": 0.01, "g": [[[0,1,1.0,0.0]],[]]}]},
  "params": {"n_orbits": 4, "n_steps": 10000}
})";

}  // namespace

TEST(Io, SeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1.0");
  EXPECT_EQ(format_double(1.0 / 3.0), "0.33333333333333331");
  for (double x : {-2.5e-300, 6.02214076e23, 0.962424, 1.0 / 7.0}) EXPECT_EQ(std::stod(format_double(x)), x);
  EXPECT_EQ(format_double(std::nan("")), "null");
  const nlohmann::json j = {{"b", 0.1}, {"a", {1, 2.0, "x"}}, {"c", nlohmann::json::object()}};
  EXPECT_EQ(to_report_string(j, 0), R"({"a":[1,2.0,"x"],"b":0.10000000000000001,"c":{}})");
  // the output parses back to the same doubles
  const auto back = nlohmann::json::parse(to_report_string(j));
  EXPECT_EQ(back["b"].get<double>(), 0.1);
}

TEST(Io, CsvQuotingAndLineEnds) {
  CsvTable t("t", {"name", "value"});
  t.row() << "plain" << 1.5;
  t.row() << "a,b" << 2;
  t.row() << "say \"hi\"" << std::size_t{3};
  t.row() << "two\nlines" << std::int64_t{-4};
  EXPECT_EQ(t.str(),
            "name,value\r\nplain,1.5\r\n\"a,b\",2\r\n\"say \"\"hi\"\"\",3\r\n\"two\nlines\",-4\r\n");
}

TEST(Io, Fnv1a) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Experiments, ListHasSevenUniqueEntries) {
  const auto& l = list_experiments();
  ASSERT_EQ(l.size(), 7u);
  std::set<std::string> names, entries;
  for (const auto& e : l) {
    names.insert(e.name);
    entries.insert(e.module + "::" + e.entry);
    EXPECT_FALSE(e.module.empty());
    EXPECT_FALSE(e.entry.empty());
  }
  EXPECT_EQ(names.size(), 7u);
  EXPECT_EQ(entries.size(), 7u);
}

TEST(Experiments, AffineS1IsRigid) {
  auto ex = prepare_experiment(parse_config_text(kAffineS1));
  auto res = ex.compute();
  const auto rep = build_report(ex, res);
  EXPECT_TRUE(rep["rigid"].get<bool>());
  EXPECT_EQ(rep["provenance"]["seed"], 1u);
  // resolved defaults are embedded
  EXPECT_EQ(rep["config"]["params"]["threshold"], 5e-3);
  EXPECT_EQ(rep["config"]["params"]["n_bins"], 512);
  EXPECT_EQ(rep["config"]["output"]["report"], "s1-rigidity.json");
}

TEST(Experiments, GenericCheckMatchesModule) {
  auto ex = prepare_experiment(
      parse_config_text(R"({"experiment": "generic-check", "system": {"matrix": [[2,1],[1,1]]}})"));
  auto res = ex.compute();
  const auto rep = build_report(ex, res);
  EXPECT_TRUE(rep["generic"].get<bool>());
  EXPECT_EQ(rep["generic"].get<bool>(), is_generic_automorphism(IntMatrix{{2, 1}, {1, 1}}).generic);
  auto ex2 = prepare_experiment(
      parse_config_text(R"({"experiment": "generic-check", "system": {"matrix": [[3,0],[0,1]]}})"));
  auto res2 = ex2.compute();
  EXPECT_FALSE(res2.fields["generic"].get<bool>());
}

TEST(Experiments, ConeCheckParabolicFailsInCompute) {
  auto ex = prepare_experiment(parse_config_text(
      R"({"experiment": "cone-check", "system": {"matrices": [[[1,1],[0,1]]], "probs": [1.0]}})"));
  try {
    ex.compute();
    FAIL() << "expected ConeNotPreserved";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConeNotPreserved);
  }
}

TEST(Experiments, ConfigErrorsBeforeComputing) {
  auto kind = [](const std::string& text) {
    try {
      prepare_experiment(parse_config_text(text));
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  EXPECT_EQ(kind("{not json"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "nope", "system": {}})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "generic-check", "system": {"matrix": [[2,1],[1,1]]}, "extra": 1})"),
            ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "generic-check", "system": {"matrix": [[2,1],[1,1]], "m": 1}})"),
            ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "matrix-exponents", "system": {"matrices": [[[2,1],[1,1]]], "probs": [1]},
                     "params": {"n_steps": 10}})"),
            ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "matrix-exponents", "system": {"matrices": [[[2,1],[1,1]]], "probs": [1]},
                     "params": {"n_stpes": 10000}})"),
            ErrorKind::Config);
  // a non-expanding circle map is a config error, not a computation error
  EXPECT_EQ(kind(R"({"experiment": "s1-rigidity", "system": {"maps": [{"degree": 1}]}})"), ErrorKind::Config);
  // torus linear parts without common cones
  EXPECT_EQ(kind(R"({"experiment": "torus-exponents", "system": {"maps": [
                     {"matrix": [[2,1],[1,1]]}, {"matrix": [[2,-1],[-1,1]]}]}})"),
            ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "generic-check", "seed": -3, "system": {"matrix": [[2,1],[1,1]]}})"),
            ErrorKind::Config);
  EXPECT_EQ(kind(R"({"experiment": "generic-check", "system": {"matrix": [[2,1],[1,1]]},
                     "output": {"report": "../x.json"}})"),
            ErrorKind::Config);
}

TEST(Experiments, SeedOverride) {
  auto ex = prepare_experiment(parse_config_text(kQuickTorus), 77);
  EXPECT_EQ(ex.seed, 77u);
  EXPECT_EQ(ex.resolved["seed"], 77u);
}

TEST(Experiments, ReportsAreByteIdentical) {
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  const auto cfg = parse_config_text(kQuickTorus);
  const auto r1 = run_experiment(prepare_experiment(cfg), d1.string());
  const auto r2 = run_experiment(prepare_experiment(cfg), d2.string());
  EXPECT_EQ(slurp(r1.report_path), slurp(r2.report_path));
  ASSERT_EQ(r1.data_paths.size(), r2.data_paths.size());
  for (std::size_t i = 0; i < r1.data_paths.size(); ++i) EXPECT_EQ(slurp(r1.data_paths[i]), slurp(r2.data_paths[i]));
  const auto r3 = run_experiment(prepare_experiment(cfg, 6), d2.string());
  EXPECT_NE(slurp(r1.report_path), slurp(r3.report_path));
}

TEST(Cli, ExitCodes) {
  const auto d = scratch("cli");
  EXPECT_EQ(run_cli("list"), 0);
  const auto good = write_config(d, "good.json", kAffineS1);
  EXPECT_EQ(run_cli("run " + good.string() + " --output-dir " + (d / "out").string()), 0);
  EXPECT_TRUE(fs::exists(d / "out" / "s1-rigidity.json"));
  EXPECT_TRUE(fs::exists(d / "out" / "s1-rigidity_density.csv"));
  const auto bad = write_config(d, "bad.json", R"({"experiment": "s1-rigidity", "sytem": {}})");
  EXPECT_EQ(run_cli("run " + bad.string() + " --output-dir " + d.string()), 2);
  EXPECT_EQ(run_cli("run " + (d / "missing.json").string()), 2);
  const auto cone = write_config(
      d, "cone.json", R"({"experiment": "cone-check", "system": {"matrices": [[[1,1],[0,1]]], "probs": [1.0]}})");
  EXPECT_EQ(run_cli("run " + cone.string() + " --output-dir " + d.string()), 3);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST(Cli, SeedOverrideAndDeterminism) {
  const auto d = scratch("cli_seed");
  const auto cfg = write_config(d, "torus.json", kQuickTorus);
  ASSERT_EQ(run_cli("run " + cfg.string() + " --output-dir " + (d / "a").string() + " --seed-override 42"), 0);
  ASSERT_EQ(run_cli("--seed-override 42 --output-dir " + (d / "b").string() + " run " + cfg.string()), 0);
  const auto a = slurp(d / "a" / "torus-exponents.json"), b = slurp(d / "b" / "torus-exponents.json");
  EXPECT_EQ(a, b);
  EXPECT_EQ(nlohmann::json::parse(a)["provenance"]["seed"], 42u);
}
