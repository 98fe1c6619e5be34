#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fracdiff/conditions.hpp"
#include "fracdiff/forward.hpp"
#include "fracdiff/inverse.hpp"
#include "fracdiff/positivity.hpp"

namespace fracdiff::cli {

inline constexpr const char* kToolVersion = "fracdiff 0.1.0";

// ---------------------------------------------------------------------------
// expressions

// Compiled scalar expression over named variables. Grammar: + - * /, '^'
// (right associative), unary minus, parentheses, numeric literals, pi, and
// the one-argument functions sin cos tan exp log sqrt abs gamma. Unknown
// identifiers and syntax errors raise ValidationError with the character
// position.
struct Expression {
  std::function<double(const std::vector<double>&)> eval;
  std::vector<std::string> vars;

  double operator()(std::initializer_list<double> values) const {
    return eval(std::vector<double>(values));
  }
};

Expression parse_expression(const std::string& text,
                            const std::vector<std::string>& vars);

// ---------------------------------------------------------------------------
// config

// Sectioned key-value file: '[section]' headers, 'key = value' lines, '#'
// comments. Section and key names are case-sensitive.
struct Config {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::filesystem::path base_dir;  // table paths resolve against this

  bool has(const std::string& sec, const std::string& key) const;
  const std::string& raw(const std::string& sec, const std::string& key) const;
  std::string raw_or(const std::string& sec, const std::string& key,
                     const std::string& dflt) const;
  double number(const std::string& sec, const std::string& key, double dflt) const;
  double number(const std::string& sec, const std::string& key) const;
  int integer(const std::string& sec, const std::string& key, int dflt) const;
  int integer(const std::string& sec, const std::string& key) const;
  bool flag(const std::string& sec, const std::string& key, bool dflt) const;

  // rejects keys outside 'known' so typos fail loudly instead of silently
  // falling back to defaults
  void restrict_keys(const std::string& sec, const std::vector<std::string>& known) const;
};

Config parse_config(const std::string& text, std::filesystem::path base_dir);
Config load_config(const std::filesystem::path& path);

// sections and keys sorted, values trimmed; the hashed regression identity
std::string canonical_config(const Config& c);
std::uint64_t fnv1a64(const std::string& s);
std::string config_hash(const Config& c);

// ---------------------------------------------------------------------------
// field values

// One configured field: a bare number, "constant:<v>", "expr:<text>", or
// "table:<csv path>" (resolved against the config directory).
struct FieldValue {
  enum class Kind { Constant, Expr, Table };
  Kind kind = Kind::Constant;
  double constant = 0.0;
  std::string expr;
  std::filesystem::path table;
};

// 'where' names the config field in error messages, e.g. "reaction.z"
FieldValue classify_field(const std::string& value, const std::filesystem::path& base,
                          const std::string& where);

// numeric table, '#' comment lines skipped, commas or whitespace between values
MatrixXd load_table(const std::filesystem::path& path, const std::string& where);

// value per grid node: constants broadcast, expressions get (x, y), tables
// need one row per node with the value in the last column
SpatialField space_field(const FieldValue& v, const SpaceGrid& grid,
                         const std::string& where);

// (t, x, y) callback: tables are node-by-node lattices interpolated linearly
// in t (rows = time nodes, cols = space nodes)
std::function<double(double, double, double)> space_time_fn(const FieldValue& v,
                                                            const TimeGrid& tg,
                                                            const SpaceGrid& grid,
                                                            const std::string& where);

// value per time node: constants broadcast, expressions get t, tables need
// one row per node with the value in the last column
ArrayXd time_profile(const FieldValue& v, const TimeGrid& tg, const std::string& where);

// ---------------------------------------------------------------------------
// run assembly

struct SolverOptions {
  double tol = 1e-10;
  int max_newton = 25;
  bool picard = false;
  double rho = 0.5;
  int picard_iters = 200;
};

struct RunSetup {
  SpaceGrid grid;
  TimeGrid tg;
  EllipticOperator op;
  BoundaryCondition bc;
  Reaction reaction;
  SpatialField u0;
  double beta = 0.5;
  SolverOptions solver;
  std::optional<MeasureSpec> measure;
  std::optional<ArrayXd> varkappa;  // weighted measures only
};

// builds and validates everything the solvers need; throws ValidationError
// naming the offending config field
RunSetup build_setup(const Config& c);

struct DirectResult {
  Trajectory traj;
  SolveReport report;
};

// dispatches to solve_picard or solve_l1 and enforces solver.max_newton
DirectResult run_direct(const RunSetup& s);

// ---------------------------------------------------------------------------
// output

// Collects run outputs under one directory. In check mode nothing is
// written: each file is compared against the stored baseline token by token,
// numeric tokens within relative 1e-9, and finish() reports drift instead of
// writing the manifest.
struct OutputSink {
  std::filesystem::path dir;
  bool check = false;
  std::vector<std::string> files;
  std::vector<std::string> drift;

  void text(const std::string& name, const std::string& content);
  // write mode: emits the manifest and returns 0. check mode: verifies the
  // stored config hash, prints drift to stderr, returns 0 or 5.
  int finish(const std::string& command, const std::string& hash,
             const std::string& summary);
};

// token comparison used by check mode; returns a description of the first
// mismatch or an empty string. Lines whose key is 'wall_seconds' or
// 'generated_at' are volatile and skipped.
std::string compare_tokens(const std::string& baseline, const std::string& fresh);

std::string fmt(double v);   // %.17g, round-trip exact
std::string fmt6(double v);  // %.6g, for prose reports

// ---------------------------------------------------------------------------
// writers and readers

std::string trajectory_csv(const Trajectory& t);
std::string grid_csv(const SpaceGrid& g);
std::string solve_report_text(const SolveReport& r, const SolverOptions& opt);
std::string positivity_report_text(const PositivityReport& r);
std::string condition_report_text(const std::string& title, const ConditionReport& r);
std::string condition_reports_csv(
    const std::vector<std::pair<std::string, const ConditionReport*>>& reports);
std::string closed_form_matrix_text(double beta, double T, double W,
                                    const SpatialField& z, double u_bound,
                                    double theta_general);
std::string residual_history_csv(const ReconstructionReport& r);

Trajectory read_trajectory_csv(const std::filesystem::path& path, const SpaceGrid& grid,
                               const TimeGrid& tg);

std::string svg_line_plot(const std::string& title,
                          const std::vector<std::pair<std::string, ArrayXd>>& series,
                          const ArrayXd& xs);
std::string svg_heatmap(const std::string& title, const MatrixXd& values,
                        double x1, double y1);

// ---------------------------------------------------------------------------
// commands

struct CommandContext {
  Config config;
  std::filesystem::path out_dir;
  bool check = false;
  unsigned seed = 12345;
};

int cmd_direct(CommandContext& ctx);
int cmd_invert(CommandContext& ctx);
int cmd_audit(CommandContext& ctx);
int cmd_ml(double alpha, double z, CommandContext& ctx);
int cmd_convergence(CommandContext& ctx);

}  // namespace fracdiff::cli
