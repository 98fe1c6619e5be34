#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cli_support.hpp"
#include "fracdiff/fracops.hpp"

using namespace fracdiff;
using namespace fracdiff::cli;
namespace fs = std::filesystem;

namespace {

// scratch directory removed on scope exit
struct TempDir {
  fs::path path;

  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("fracdiff_cli_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// runs the installed binary, captures combined output, returns the exit code
int run_cli(const std::string& args, const fs::path& capture, std::string* output = nullptr) {
  std::string cmd = std::string(FRACDIFF_CLI_BIN) + " " + args + " > " +
                    capture.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  if (output) *output = read_file(capture);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

double eval1(const Expression& e, std::initializer_list<double> v) {
  return e.eval(std::vector<double>(v));
}

}  // namespace

TEST_CASE("expression parser evaluates the grammar") {
  Expression e = parse_expression("2 + 3*4", {});
  CHECK(eval1(e, {}) == 14.0);

  e = parse_expression("2^3^2", {});  // right associative
  CHECK(eval1(e, {}) == 512.0);

  e = parse_expression("-2^2", {});  // minus binds looser than the power
  CHECK(eval1(e, {}) == -4.0);

  e = parse_expression("(2 + 3)*4 - 6/3", {});
  CHECK(eval1(e, {}) == 18.0);

  e = parse_expression("sin(pi/2) + cos(0)", {});
  CHECK(eval1(e, {}) == doctest::Approx(2.0).epsilon(1e-14));

  e = parse_expression("gamma(5)", {});
  CHECK(eval1(e, {}) == doctest::Approx(24.0).epsilon(1e-12));

  e = parse_expression("sqrt(abs(-9))", {});
  CHECK(eval1(e, {}) == doctest::Approx(3.0).epsilon(1e-14));

  e = parse_expression("t^2*x + y", {"t", "x", "y"});
  CHECK(eval1(e, {3.0, 2.0, 1.0}) == 19.0);

  e = parse_expression("exp(log(7))", {});
  CHECK(eval1(e, {}) == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("expression parser rejects malformed input with a position") {
  CHECK_THROWS_WITH_AS(parse_expression("2 + ", {}),
                       doctest::Contains("unexpected end of input"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_expression("2 + bogus", {"t"}),
                       doctest::Contains("unknown name 'bogus'"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_expression("(1 + 2", {}), doctest::Contains("')'"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_expression("1 2", {}),
                       doctest::Contains("trailing input"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_expression("sin 3", {}),
                       doctest::Contains("parentheses"), ValidationError);
  // x only exists when declared
  CHECK_THROWS_AS(parse_expression("x", {}), ValidationError);
  CHECK_NOTHROW(parse_expression("x", {"x"}));
}

TEST_CASE("config parsing, lookups, and canonical hashing") {
  Config c = parse_config("# header comment\n"
                          "[problem]\n"
                          "beta = 0.5   # trailing comment\n"
                          "T = 2\n"
                          "[solver]\n"
                          "picard = on\n",
                          "/tmp");
  CHECK(c.number("problem", "beta") == 0.5);
  CHECK(c.integer("problem", "T") == 2);
  CHECK(c.flag("solver", "picard", false));
  CHECK(c.raw_or("problem", "missing", "dflt") == "dflt");
  CHECK_THROWS_WITH_AS(c.raw("problem", "missing"),
                       doctest::Contains("problem.missing"), ValidationError);
  CHECK_THROWS_AS(c.integer("problem", "beta"), ValidationError);
  CHECK_NOTHROW(c.restrict_keys("problem", {"beta", "T"}));
  CHECK_THROWS_WITH_AS(c.restrict_keys("problem", {"beta"}),
                       doctest::Contains("unknown key 'problem.T'"), ValidationError);

  // the canonical form is insensitive to declaration order
  Config c2 = parse_config("[solver]\npicard = on\n[problem]\nT = 2\nbeta = 0.5\n",
                           "/tmp");
  CHECK(canonical_config(c) == canonical_config(c2));
  CHECK(config_hash(c) == config_hash(c2));
  Config c3 = parse_config("[problem]\nbeta = 0.6\n", "/tmp");
  CHECK(config_hash(c) != config_hash(c3));

  CHECK_THROWS_WITH_AS(parse_config("[nonsense]\n", "/tmp"),
                       doctest::Contains("unknown section"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config("beta = 0.5\n", "/tmp"),
                       doctest::Contains("outside any [section]"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config("[problem]\nbeta\n", "/tmp"),
                       doctest::Contains("expected 'key = value'"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config("[problem]\nbeta = 1\nbeta = 2\n", "/tmp"),
                       doctest::Contains("duplicate key"), ValidationError);
}

TEST_CASE("field values resolve constants, expressions, and tables") {
  TempDir dir("fields");
  FieldValue f = classify_field("0.25", "/tmp", "reaction.z");
  CHECK(f.kind == FieldValue::Kind::Constant);
  CHECK(f.constant == 0.25);
  f = classify_field("constant: -3", "/tmp", "reaction.z");
  CHECK(f.constant == -3.0);
  f = classify_field("expr: x + 1", "/tmp", "reaction.z");
  CHECK(f.kind == FieldValue::Kind::Expr);
  CHECK_THROWS_WITH_AS(classify_field("wat?", "/tmp", "reaction.z"),
                       doctest::Contains("reaction.z"), ValidationError);

  SpaceGrid g = make_grid_1d(1.0, 4);
  TimeGrid tg{1.0, 2};
  SpatialField zf = space_field(classify_field("expr: 2*x", "/tmp", "f"), g, "f");
  CHECK(zf.values[2] == doctest::Approx(1.0));

  write_file(dir.path / "z.csv", "# one value per node\n0\n1\n2\n3\n4\n");
  zf = space_field(classify_field("table: z.csv", dir.path.string(), "f"), g, "f");
  CHECK(zf.values[3] == 3.0);
  write_file(dir.path / "short.csv", "0\n1\n");
  CHECK_THROWS_WITH_AS(
      space_field(classify_field("table: short.csv", dir.path.string(), "f"), g, "f"),
      doctest::Contains("2 rows"), ValidationError);

  ArrayXd prof = time_profile(classify_field("expr: 1 - t", "/tmp", "w"), tg, "w");
  CHECK(prof.size() == 3);
  CHECK(prof[2] == doctest::Approx(0.0));
}

TEST_CASE("token comparison tolerates formatting but not drift") {
  CHECK(compare_tokens("a = 1.0\n", "a = 1.0\n").empty());
  CHECK(compare_tokens("v = 1.000000000001\n", "v = 1.0\n").empty());
  CHECK(!compare_tokens("v = 1.001\n", "v = 1.0\n").empty());
  CHECK(!compare_tokens("v = 1\n", "v = 1 2\n").empty());
  CHECK(!compare_tokens("name = alpha\n", "name = beta\n").empty());
  // volatile lines are exempt
  CHECK(compare_tokens("wall_seconds = 0.5\n", "wall_seconds = 99\n").empty());
  CHECK(compare_tokens("generated_at = 2020\n", "generated_at = 2021\n").empty());
  // the infinities compare equal to themselves
  CHECK(compare_tokens("m = inf\n", "m = inf\n").empty());
  CHECK(compare_tokens("m = nan\n", "m = nan\n").empty());
  CHECK(!compare_tokens("m = inf\n", "m = 1\n").empty());
}

TEST_CASE("build_setup validates field paths") {
  auto setup = [](const std::string& text) {
    return build_setup(parse_config(text, "/tmp"));
  };
  CHECK_THROWS_WITH_AS(setup("[problem]\nbeta = 1.5\nT = 1\nn_steps = 4\n"
                             "n_cells_x = 4\n"),
                       doctest::Contains("problem.beta"), ValidationError);
  CHECK_THROWS_WITH_AS(setup("[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\n"
                             "n_cells_x = 4\ndim = 3\n"),
                       doctest::Contains("problem.dim"), ValidationError);
  CHECK_THROWS_WITH_AS(setup("[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\n"
                             "n_cells_x = 4\n[reaction]\nvariant = kpp\n"),
                       doctest::Contains("reaction.variant"), ValidationError);
  CHECK_THROWS_WITH_AS(setup("[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\n"
                             "n_cells_x = 4\n[measure]\ndirac_t = 1\nweight = 1\n"),
                       doctest::Contains("exactly one"), ValidationError);
  CHECK_THROWS_WITH_AS(setup("[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\n"
                             "n_cells_x = 4\nbc = oblique\n"),
                       doctest::Contains("problem.omega_x"), ValidationError);

  RunSetup s = setup("[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\nn_cells_x = 4\n"
                     "[measure]\nweight = 1\n");
  CHECK(s.measure.has_value());
  CHECK(s.varkappa.has_value());
  CHECK(s.varkappa->size() == 5);
}

TEST_CASE("direct run on the zero problem stays at zero") {
  TempDir dir("zero");
  write_file(dir.path / "run.cfg",
             "[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\nn_cells_x = 4\n");
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " direct",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 0);
  MatrixXd m = load_table(dir.path / "out" / "trajectory.csv", "trajectory");
  CHECK(m.rows() == 5);
  CHECK(m.cols() == 6);
  CHECK(m.rightCols(5).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fs::exists(dir.path / "out" / "manifest.txt"));
  CHECK(fs::exists(dir.path / "out" / "solve_report.txt"));
  CHECK(fs::exists(dir.path / "out" / "positivity_report.txt"));
}

namespace {

const char* kRelaxConfig =
    "[problem]\n"
    "beta = 0.5\n"
    "T = 1.0\n"
    "n_steps = 512\n"
    "n_cells_x = 4\n"
    "bc = oblique\n"
    "omega_x = expr: 2*x - 1\n"
    "u0 = 1.0\n"
    "diffusion = 0.0\n"
    "[reaction]\n"
    "variant = linear\n"
    "z = -1.0\n"
    "[solver]\n"
    "tol = 1e-12\n";

}  // namespace

TEST_CASE("homogeneous relaxation tracks the one-parameter decay curve") {
  TempDir dir("relax");
  write_file(dir.path / "run.cfg", kRelaxConfig);
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " direct",
                   dir.path / "cap.txt");
  REQUIRE(rc == 0);
  // the early-time error sits on the weak singularity of the decay curve, so
  // the comparison window starts at T/2 where the scheme's full order holds
  MatrixXd m = load_table(dir.path / "out" / "trajectory.csv", "trajectory");
  double worst = 0.0;
  for (int n = 0; n < m.rows(); ++n) {
    double t = m(n, 0);
    if (t < 0.5) continue;
    double exact = mittag_leffler(0.5, -std::pow(t, 0.5));
    worst = std::max(worst, std::abs(m(n, 1) - exact));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("inadmissible oblique direction is refused naming the node") {
  TempDir dir("omega");
  std::string cfg = kRelaxConfig;
  size_t at = cfg.find("2*x - 1");
  REQUIRE(at != std::string::npos);
  cfg.replace(at, 7, "1 - 2*x");
  write_file(dir.path / "run.cfg", cfg);
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " direct",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 2);
  CHECK(out.find("node") != std::string::npos);
}

namespace {

const char* kTwinConfig =
    "[problem]\n"
    "beta = 0.5\n"
    "T = 1.0\n"
    "n_steps = 128\n"
    "n_cells_x = 32\n"
    "u0 = expr: 0.2 + 0.1*sin(pi*x)\n"
    "g = 0.2\n"
    "[reaction]\n"
    "variant = fisher\n"
    "W = 1.0\n"
    "b = 0.05\n"
    "[measure]\n"
    "weight = constant: 1\n"
    "[solver]\n"
    "tol = 1e-12\n"
    "[inverse]\n"
    "z_true = expr: 0.3 + 0.2*sin(pi*x)\n"
    "tol = 1e-9\n"
    "max_iters = 60\n";

}  // namespace

TEST_CASE("twin reconstruction recovers the factor through the binary") {
  TempDir dir("twin");
  write_file(dir.path / "run.cfg", kTwinConfig);
  std::string outdir = (dir.path / "out").string();
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                       " invert",
                   dir.path / "cap.txt");
  REQUIRE(rc == 0);

  // z.csv carries x, y, z, z_true, abs_err in twin mode
  MatrixXd z = load_table(dir.path / "out" / "z.csv", "z");
  REQUIRE(z.cols() == 5);
  double scale = z.col(3).cwiseAbs().maxCoeff();
  double rel = z.col(4).maxCoeff() / scale;
  CHECK(rel <= 1e-3);

  std::string report = read_file(dir.path / "out" / "invert_report.txt");
  CHECK(report.find("converged = yes") != std::string::npos);
  CHECK(fs::exists(dir.path / "out" / "residuals.csv"));
  CHECK(fs::exists(dir.path / "out" / "condition_report.txt"));

  // identical rerun in check mode agrees with the stored outputs
  rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                   " --check invert",
               dir.path / "cap.txt");
  CHECK(rc == 0);

  // a tampered output is drift
  fs::path zpath = dir.path / "out" / "z.csv";
  std::string original = read_file(zpath);
  write_file(zpath, original + "0.5,0,0.1,0.1,0\n");
  rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                   " --check invert",
               dir.path / "cap.txt");
  CHECK(rc == 5);
  write_file(zpath, original);

  // checking against a run of a different configuration is refused outright
  std::string other = std::string(kTwinConfig) + "damping = 0.5\n";
  write_file(dir.path / "other.cfg", other);
  std::string cap;
  rc = run_cli("--config " + (dir.path / "other.cfg").string() + " --out " + outdir +
                   " --check invert",
               dir.path / "cap.txt", &cap);
  CHECK(rc == 2);
  CHECK(cap.find("config hash") != std::string::npos);
}

TEST_CASE("check mode against an empty directory is a validation error") {
  TempDir dir("nobase");
  write_file(dir.path / "run.cfg",
             "[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\nn_cells_x = 4\n");
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " --check direct",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 2);
  CHECK(out.find("baseline") != std::string::npos);
}

TEST_CASE("noisy twin data complete without a promise") {
  TempDir dir("noisy");
  std::string cfg = std::string(kTwinConfig) + "damping = 0.9\nnoise = 0.01\n";
  write_file(dir.path / "run.cfg", cfg);
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " --seed 9001 invert",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 0);
  std::string report = read_file(dir.path / "out" / "invert_report.txt");
  CHECK(report.find("noise = 0.01") != std::string::npos);
  CHECK(report.find("seed = 9001") != std::string::npos);
  CHECK(report.find("rel_error = ") != std::string::npos);
}

TEST_CASE("missing data outside twin mode is refused") {
  TempDir dir("nodata");
  std::string cfg = kTwinConfig;
  size_t at = cfg.find("z_true");
  REQUIRE(at != std::string::npos);
  cfg.erase(at, cfg.find('\n', at) - at + 1);
  write_file(dir.path / "run.cfg", cfg);
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " invert",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 2);
  CHECK(out.find("inverse.data") != std::string::npos);
}

TEST_CASE("audit prints the bound matrix and never gates") {
  TempDir dir("audit");
  write_file(dir.path / "run.cfg",
             "[problem]\nbeta = 0.5\nT = 1\nn_steps = 64\nn_cells_x = 24\n"
             "[reaction]\nvariant = fisher\nW = 1.0\nz = 0.28\n"
             "b = expr: t*(0.15 + 0.15*sin(pi*x))\n"
             "b_t = expr: 0.15 + 0.15*sin(pi*x)\n"
             "[measure]\nweight = 1\n"
             "[solver]\ntol = 1e-11\n");
  std::string out;
  std::string outdir = (dir.path / "out").string();
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                       " audit",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 0);
  // the nonlinear family admits no positive factor under single-time data
  CHECK(out.find("fisher / single-time data: FAIL") != std::string::npos);
  CHECK(out.find("fisher / weighted-average data: PASS") != std::string::npos);
  std::string weighted = read_file(dir.path / "out" / "condition_weighted.txt");
  CHECK(weighted.find("covered = yes") != std::string::npos);
  CHECK(fs::exists(dir.path / "out" / "conditions.csv"));
  CHECK(fs::exists(dir.path / "out" / "closed_form.txt"));
  CHECK(fs::exists(dir.path / "out" / "condition_growth.txt"));

  // the second pass reuses the stored trajectory and stays consistent
  rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                   " --check audit",
               dir.path / "cap.txt");
  CHECK(rc == 0);
}

TEST_CASE("audit reports an undefined damping bound for an empty state weight") {
  TempDir dir("nostate");
  write_file(dir.path / "run.cfg",
             "[problem]\nbeta = 0.5\nT = 1\nn_steps = 16\nn_cells_x = 8\n"
             "[reaction]\nvariant = none\nb = expr: t*sin(pi*x)\n");
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " audit",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 0);
  CHECK(out.find("theta = undefined") != std::string::npos);
}

TEST_CASE("mittag-leffler command matches the exponential at order one") {
  TempDir dir("ml");
  std::string out;
  int rc = run_cli("--out " + (dir.path / "out").string() + " ml 1.0 1.0",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 0);
  std::string txt = read_file(dir.path / "out" / "ml.txt");
  size_t at = txt.find("value = ");
  REQUIRE(at != std::string::npos);
  double v = std::strtod(txt.c_str() + at + 8, nullptr);
  CHECK(v == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(txt.find("series_terms = ") != std::string::npos);

  rc = run_cli("--out " + (dir.path / "out").string() + " --check ml 1.0 1.0",
               dir.path / "cap.txt");
  CHECK(rc == 0);
}

namespace {

const char* kConvergenceConfig =
    "[problem]\n"
    "beta = 0.5\n"
    "T = 1.0\n"
    "n_steps = 8\n"
    "n_cells_x = 16\n"
    "[reaction]\n"
    "variant = linear\n"
    "z = 0\n"
    "b = expr: gamma(3)/gamma(3 - 0.5)*t^(2 - 0.5)*x*(1 - x) + 2*t^2\n"
    "[solver]\n"
    "tol = 1e-12\n"
    "[convergence]\n"
    "levels = 4\n"
    "refine = time\n"
    "exact = expr: t^2*x*(1 - x)\n";

}  // namespace

TEST_CASE("temporal refinement recovers the scheme order") {
  TempDir dir("conv");
  write_file(dir.path / "run.cfg", kConvergenceConfig);
  std::string outdir = (dir.path / "out").string();
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                       " convergence",
                   dir.path / "cap.txt");
  REQUIRE(rc == 0);
  std::string report = read_file(dir.path / "out" / "convergence_report.txt");
  size_t at = report.find("fitted_order = ");
  REQUIRE(at != std::string::npos);
  double slope = std::strtod(report.c_str() + at + 15, nullptr);
  CHECK(slope >= 2.0 - 0.5 - 0.2);

  rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " + outdir +
                   " --check convergence",
               dir.path / "cap.txt");
  CHECK(rc == 0);
}

TEST_CASE("refinement study needs at least three levels") {
  TempDir dir("conv1");
  std::string cfg = kConvergenceConfig;
  size_t at = cfg.find("levels = 4");
  REQUIRE(at != std::string::npos);
  cfg.replace(at, 10, "levels = 1");
  write_file(dir.path / "run.cfg", cfg);
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " convergence",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 2);
  CHECK(out.find("levels") != std::string::npos);
}

TEST_CASE("unknown config keys are refused before any solve") {
  TempDir dir("badkey");
  write_file(dir.path / "run.cfg",
             "[problem]\nbeta = 0.5\nT = 1\nn_steps = 4\nn_cells_x = 4\ntypo = 7\n");
  std::string out;
  int rc = run_cli("--config " + (dir.path / "run.cfg").string() + " --out " +
                       (dir.path / "out").string() + " direct",
                   dir.path / "cap.txt", &out);
  CHECK(rc == 2);
  CHECK(out.find("problem.typo") != std::string::npos);
}
