#include "cli_support.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

#include "fracdiff/fracops.hpp"

namespace fracdiff::cli {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& s, double& out) {
  const char* c = s.c_str();
  char* end = nullptr;
  out = std::strtod(c, &end);
  return end != c && *end == '\0' && !s.empty();
}

std::string yn(bool v) { return v ? "yes" : "no"; }

}  // namespace

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// expressions

namespace {

double call_named(const std::string& name, double x, bool& known) {
  known = true;
  if (name == "sin") return std::sin(x);
  if (name == "cos") return std::cos(x);
  if (name == "tan") return std::tan(x);
  if (name == "exp") return std::exp(x);
  if (name == "log") return std::log(x);
  if (name == "sqrt") return std::sqrt(x);
  if (name == "abs") return std::fabs(x);
  if (name == "gamma") return gamma_fn(x);
  known = false;
  return 0.0;
}

bool is_function_name(const std::string& name) {
  bool known = false;
  call_named(name, 1.0, known);
  return known;
}

struct ExprParser {
  using Fn = std::function<double(const std::vector<double>&)>;

  const std::string& text;
  const std::vector<std::string>& vars;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("expression: " + msg + " at position " +
                          std::to_string(pos + 1) + " of '" + text + "'");
  }

  void skip() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool eat(char c) {
    skip();
    if (pos < text.size() && text[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  Fn parse() {
    Fn e = expr();
    skip();
    if (pos != text.size()) fail("unexpected trailing input");
    return e;
  }

  Fn expr() {
    Fn left = term();
    for (;;) {
      if (eat('+')) {
        Fn r = term();
        Fn l = left;
        left = [l, r](const std::vector<double>& v) { return l(v) + r(v); };
      } else if (eat('-')) {
        Fn r = term();
        Fn l = left;
        left = [l, r](const std::vector<double>& v) { return l(v) - r(v); };
      } else {
        return left;
      }
    }
  }

  Fn term() {
    Fn left = factor();
    for (;;) {
      if (eat('*')) {
        Fn r = factor();
        Fn l = left;
        left = [l, r](const std::vector<double>& v) { return l(v) * r(v); };
      } else if (eat('/')) {
        Fn r = factor();
        Fn l = left;
        left = [l, r](const std::vector<double>& v) { return l(v) / r(v); };
      } else {
        return left;
      }
    }
  }

  // unary minus binds looser than '^', so -x^2 reads as -(x^2)
  Fn factor() {
    if (eat('-')) {
      Fn r = factor();
      return [r](const std::vector<double>& v) { return -r(v); };
    }
    if (eat('+')) return factor();
    return power();
  }

  Fn power() {
    Fn base = atom();
    if (eat('^')) {
      Fn e = factor();
      return [base, e](const std::vector<double>& v) { return std::pow(base(v), e(v)); };
    }
    return base;
  }

  Fn atom() {
    skip();
    if (pos >= text.size()) fail("unexpected end of input");
    char c = text[pos];
    if (c == '(') {
      ++pos;
      Fn inner = expr();
      if (!eat(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* start = text.c_str() + pos;
      char* end = nullptr;
      double value = std::strtod(start, &end);
      if (end == start) fail("malformed number");
      pos += static_cast<size_t>(end - start);
      return [value](const std::vector<double>&) { return value; };
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos;
      while (pos < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
        ++pos;
      std::string name = text.substr(start, pos - start);
      if (name == "pi")
        return [](const std::vector<double>&) { return 3.14159265358979323846; };
      for (size_t i = 0; i < vars.size(); ++i)
        if (vars[i] == name)
          return [i](const std::vector<double>& v) { return v[i]; };
      if (is_function_name(name)) {
        if (!eat('(')) fail("function '" + name + "' needs an argument in parentheses");
        Fn arg = expr();
        if (!eat(')')) fail("expected ')'");
        return [name, arg](const std::vector<double>& v) {
          bool known = false;
          return call_named(name, arg(v), known);
        };
      }
      pos = start;
      fail("unknown name '" + name + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

}  // namespace

Expression parse_expression(const std::string& text, const std::vector<std::string>& vars) {
  ExprParser p{text, vars};
  Expression e;
  e.eval = p.parse();
  e.vars = vars;
  return e;
}

// ---------------------------------------------------------------------------
// config

bool Config::has(const std::string& sec, const std::string& key) const {
  auto s = sections.find(sec);
  return s != sections.end() && s->second.count(key) > 0;
}

const std::string& Config::raw(const std::string& sec, const std::string& key) const {
  auto s = sections.find(sec);
  if (s != sections.end()) {
    auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw ValidationError("config: missing '" + sec + "." + key + "'");
}

std::string Config::raw_or(const std::string& sec, const std::string& key,
                           const std::string& dflt) const {
  return has(sec, key) ? raw(sec, key) : dflt;
}

double Config::number(const std::string& sec, const std::string& key, double dflt) const {
  if (!has(sec, key)) return dflt;
  return number(sec, key);
}

double Config::number(const std::string& sec, const std::string& key) const {
  double v = 0.0;
  if (!parse_number(raw(sec, key), v))
    throw ValidationError("config: '" + sec + "." + key + "' is not a number: '" +
                          raw(sec, key) + "'");
  return v;
}

int Config::integer(const std::string& sec, const std::string& key, int dflt) const {
  if (!has(sec, key)) return dflt;
  return integer(sec, key);
}

int Config::integer(const std::string& sec, const std::string& key) const {
  double v = number(sec, key);
  int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw ValidationError("config: '" + sec + "." + key + "' is not an integer: '" +
                          raw(sec, key) + "'");
  return i;
}

bool Config::flag(const std::string& sec, const std::string& key, bool dflt) const {
  if (!has(sec, key)) return dflt;
  const std::string& v = raw(sec, key);
  if (v == "on" || v == "true" || v == "yes" || v == "1") return true;
  if (v == "off" || v == "false" || v == "no" || v == "0") return false;
  throw ValidationError("config: '" + sec + "." + key + "' is not on/off: '" + v + "'");
}

void Config::restrict_keys(const std::string& sec,
                           const std::vector<std::string>& known) const {
  auto s = sections.find(sec);
  if (s == sections.end()) return;
  for (const auto& [key, value] : s->second)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("config: unknown key '" + sec + "." + key + "'");
}

Config parse_config(const std::string& text, std::filesystem::path base_dir) {
  static const char* kSections[] = {"problem", "reaction",    "measure", "solver",
                                    "inverse", "convergence", "output",  "ml"};
  Config c;
  c.base_dir = std::move(base_dir);
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ValidationError("config line " + std::to_string(lineno) +
                              ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::find_if(std::begin(kSections), std::end(kSections), [&](const char* s) {
            return section == s;
          }) == std::end(kSections))
        throw ValidationError("config line " + std::to_string(lineno) +
                              ": unknown section [" + section + "]");
      c.sections[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected 'key = value'");
    if (section.empty())
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": key outside any [section]");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (c.sections[section].count(key))
      throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" +
                            section + "." + key + "'");
    c.sections[section][key] = value;
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path.parent_path());
}

std::string canonical_config(const Config& c) {
  std::ostringstream out;
  for (const auto& [sec, keys] : c.sections) {
    out << '[' << sec << "]\n";
    for (const auto& [key, value] : keys) out << key << " = " << value << '\n';
  }
  return out.str();
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const Config& c) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(c))));
  return buf;
}

// ---------------------------------------------------------------------------
// field values

FieldValue classify_field(const std::string& value, const std::filesystem::path& base,
                          const std::string& where) {
  FieldValue f;
  if (value.starts_with("constant:")) {
    if (!parse_number(trim(value.substr(9)), f.constant))
      throw ValidationError(where + ": bad number '" + value.substr(9) + "'");
    return f;
  }
  if (value.starts_with("expr:")) {
    f.kind = FieldValue::Kind::Expr;
    f.expr = trim(value.substr(5));
    if (f.expr.empty()) throw ValidationError(where + ": empty expression");
    return f;
  }
  if (value.starts_with("table:")) {
    f.kind = FieldValue::Kind::Table;
    std::string rel = trim(value.substr(6));
    if (rel.empty()) throw ValidationError(where + ": empty table path");
    f.table = base / rel;
    return f;
  }
  if (parse_number(value, f.constant)) return f;
  throw ValidationError(where +
                        ": expected a number, 'constant:<v>', 'expr:<text>', or "
                        "'table:<csv>', got '" +
                        value + "'");
}

MatrixXd load_table(const std::filesystem::path& path, const std::string& where) {
  std::ifstream in(path);
  if (!in) throw ValidationError(where + ": cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::vector<double> row;
    std::string tok;
    auto flush = [&] {
      if (tok.empty()) return;
      double v = 0.0;
      if (!parse_number(tok, v))
        throw ValidationError(where + ": line " + std::to_string(lineno) +
                              " has a non-numeric entry '" + tok + "'");
      row.push_back(v);
      tok.clear();
    };
    for (char ch : line) {
      if (ch == ',' || std::isspace(static_cast<unsigned char>(ch)))
        flush();
      else
        tok += ch;
    }
    flush();
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError(where + ": line " + std::to_string(lineno) + " has " +
                            std::to_string(row.size()) + " entries, expected " +
                            std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(where + ": " + path.string() + " is empty");
  MatrixXd m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

SpatialField space_field(const FieldValue& v, const SpaceGrid& grid,
                         const std::string& where) {
  switch (v.kind) {
    case FieldValue::Kind::Constant:
      return make_field(grid, v.constant);
    case FieldValue::Kind::Expr: {
      Expression e = parse_expression(v.expr, {"x", "y"});
      return sample_field(grid,
                          [e](double x, double y) { return e.eval({x, y}); });
    }
    case FieldValue::Kind::Table: {
      MatrixXd m = load_table(v.table, where);
      if (m.rows() != grid.n_nodes())
        throw ValidationError(where + ": table has " + std::to_string(m.rows()) +
                              " rows, the grid has " + std::to_string(grid.n_nodes()) +
                              " nodes");
      SpatialField f{grid, m.col(m.cols() - 1).array()};
      return f;
    }
  }
  throw ValidationError(where + ": unreachable field kind");
}

std::function<double(double, double, double)> space_time_fn(const FieldValue& v,
                                                            const TimeGrid& tg,
                                                            const SpaceGrid& grid,
                                                            const std::string& where) {
  switch (v.kind) {
    case FieldValue::Kind::Constant: {
      double c = v.constant;
      return [c](double, double, double) { return c; };
    }
    case FieldValue::Kind::Expr: {
      Expression e = parse_expression(v.expr, {"t", "x", "y"});
      return [e](double t, double x, double y) { return e.eval({t, x, y}); };
    }
    case FieldValue::Kind::Table: {
      MatrixXd m = load_table(v.table, where);
      if (m.rows() != tg.n_nodes() || m.cols() != grid.n_nodes())
        throw ValidationError(where + ": table is " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + ", the lattice is " +
                              std::to_string(tg.n_nodes()) + "x" +
                              std::to_string(grid.n_nodes()));
      return table_source(std::move(m), tg, grid);
    }
  }
  throw ValidationError(where + ": unreachable field kind");
}

ArrayXd time_profile(const FieldValue& v, const TimeGrid& tg, const std::string& where) {
  switch (v.kind) {
    case FieldValue::Kind::Constant:
      return ArrayXd::Constant(tg.n_nodes(), v.constant);
    case FieldValue::Kind::Expr: {
      Expression e = parse_expression(v.expr, {"t"});
      ArrayXd out(tg.n_nodes());
      for (int n = 0; n < tg.n_nodes(); ++n) out[n] = e.eval({tg.node(n)});
      return out;
    }
    case FieldValue::Kind::Table: {
      MatrixXd m = load_table(v.table, where);
      if (m.rows() != tg.n_nodes())
        throw ValidationError(where + ": table has " + std::to_string(m.rows()) +
                              " rows, the time grid has " + std::to_string(tg.n_nodes()) +
                              " nodes");
      return m.col(m.cols() - 1).array();
    }
  }
  throw ValidationError(where + ": unreachable field kind");
}

// ---------------------------------------------------------------------------
// run assembly

namespace {

FieldValue field_of(const Config& c, const std::string& sec, const std::string& key,
                    const std::string& dflt) {
  return classify_field(c.raw_or(sec, key, dflt), c.base_dir, sec + "." + key);
}

// (x, y) callback for boundary directions; tables have no natural lookup here
std::function<double(double, double)> space_fn(const FieldValue& v,
                                               const std::string& where) {
  switch (v.kind) {
    case FieldValue::Kind::Constant: {
      double c = v.constant;
      return [c](double, double) { return c; };
    }
    case FieldValue::Kind::Expr: {
      Expression e = parse_expression(v.expr, {"x", "y"});
      return [e](double x, double y) { return e.eval({x, y}); };
    }
    case FieldValue::Kind::Table:
      throw ValidationError(where + ": a table cannot drive this field, use constant: "
                            "or expr:");
  }
  throw ValidationError(where + ": unreachable field kind");
}

}  // namespace

RunSetup build_setup(const Config& c) {
  c.restrict_keys("problem",
                  {"beta", "T", "n_steps", "dim", "length_x", "length_y", "n_cells_x",
                   "n_cells_y", "bc", "g", "omega_x", "omega_y", "u0", "diffusion",
                   "a11", "a22", "a12", "a1", "a2"});
  c.restrict_keys("reaction", {"variant", "W", "z", "b", "b_t"});
  c.restrict_keys("solver", {"tol", "max_newton", "picard", "rho", "picard_iters"});
  c.restrict_keys("measure", {"type", "dirac_t", "weight"});

  RunSetup s;
  s.beta = c.number("problem", "beta");
  if (!(s.beta > 0.0 && s.beta < 1.0))
    throw ValidationError("problem.beta: must lie in (0, 1)");
  s.tg.T = c.number("problem", "T");
  s.tg.n_steps = c.integer("problem", "n_steps");
  validate_time_grid(s.tg);

  int dim = c.integer("problem", "dim", 1);
  double lx = c.number("problem", "length_x", 1.0);
  if (dim == 1)
    s.grid = make_grid_1d(lx, c.integer("problem", "n_cells_x"));
  else if (dim == 2)
    s.grid = make_grid_2d(lx, c.number("problem", "length_y", 1.0),
                          c.integer("problem", "n_cells_x"),
                          c.integer("problem", "n_cells_y"));
  else
    throw ValidationError("problem.dim: must be 1 or 2");

  double diffusion = c.number("problem", "diffusion", 1.0);
  bool custom_op = false;
  for (const char* key : {"a11", "a22", "a12", "a1", "a2"})
    custom_op = custom_op || c.has("problem", key);
  if (!custom_op) {
    s.op = laplace_operator(s.grid, diffusion);
  } else {
    auto coeff = [&](const char* key, double dflt) -> ArrayXd {
      std::string where = std::string("problem.") + key;
      if (!c.has("problem", key)) return ArrayXd::Constant(s.grid.n_nodes(), dflt);
      return space_field(classify_field(c.raw("problem", key), c.base_dir, where),
                         s.grid, where)
          .values;
    };
    s.op = make_operator(s.grid, coeff("a11", diffusion),
                         coeff("a22", dim == 2 ? diffusion : 0.0), coeff("a12", 0.0),
                         coeff("a1", 0.0), coeff("a2", 0.0));
  }

  auto gfn = space_time_fn(field_of(c, "problem", "g", "0"), s.tg, s.grid, "problem.g");
  std::string bck = c.raw_or("problem", "bc", "dirichlet");
  if (bck == "dirichlet") {
    s.bc = dirichlet_bc(s.grid, s.tg, gfn);
  } else if (bck == "oblique") {
    if (!c.has("problem", "omega_x"))
      throw ValidationError("problem.omega_x: required for the oblique boundary condition");
    auto ox = space_fn(classify_field(c.raw("problem", "omega_x"), c.base_dir,
                                      "problem.omega_x"),
                       "problem.omega_x");
    auto oy = space_fn(field_of(c, "problem", "omega_y", "0"), "problem.omega_y");
    s.bc = oblique_bc(s.grid, s.tg, gfn, [ox, oy](double x, double y) {
      return std::array<double, 2>{ox(x, y), oy(x, y)};
    });
  } else {
    throw ValidationError("problem.bc: expected 'dirichlet' or 'oblique', got '" + bck +
                          "'");
  }

  s.u0 = space_field(field_of(c, "problem", "u0", "0"), s.grid, "problem.u0");

  SpatialField z = space_field(field_of(c, "reaction", "z", "0"), s.grid, "reaction.z");
  double W = c.number("reaction", "W", 1.0);
  std::function<double(double, double, double)> bfn, btfn;
  if (c.has("reaction", "b"))
    bfn = space_time_fn(field_of(c, "reaction", "b", "0"), s.tg, s.grid, "reaction.b");
  if (c.has("reaction", "b_t")) {
    if (!bfn) throw ValidationError("reaction.b_t: given without reaction.b");
    btfn = space_time_fn(field_of(c, "reaction", "b_t", "0"), s.tg, s.grid,
                         "reaction.b_t");
  }

  std::string variant = c.raw_or("reaction", "variant", "linear");
  if (variant == "linear") {
    s.reaction = linear_potential(z);
  } else if (variant == "fisher") {
    s.reaction = fisher_reaction(W, z);
  } else if (variant == "zeldovich") {
    s.reaction = zeldovich_reaction(W, z);
  } else if (variant == "none") {
    // pure source problem: the state weight is identically zero and the
    // factor multiplies nothing
    std::function<double(double, double, double)> b3 = bfn;
    if (!b3) b3 = [](double, double, double) { return 0.0; };
    auto zero = [](double, double, double, double) { return 0.0; };
    CustomEvaluators ev;
    ev.a = ev.a_w = ev.a_t = ev.a_ww = ev.a_wt = zero;
    ev.b = [b3](double, double t, double x, double y) { return b3(t, x, y); };
    ev.b_w = ev.b_ww = ev.b_wt = zero;
    if (btfn) {
      auto bt = btfn;
      ev.b_t = [bt](double, double t, double x, double y) { return bt(t, x, y); };
    } else {
      ev.b_t = [b3](double, double t, double x, double y) {
        double h = 1e-6;
        return (b3(t + h, x, y) - b3(t - h, x, y)) / (2.0 * h);
      };
    }
    s.reaction = custom_reaction(z, std::move(ev));
  } else {
    throw ValidationError(
        "reaction.variant: expected linear, fisher, zeldovich, or none, got '" + variant +
        "'");
  }
  if (variant != "none" && bfn) set_source(s.reaction, bfn, btfn);

  s.solver.tol = c.number("solver", "tol", 1e-10);
  if (!(s.solver.tol > 0.0)) throw ValidationError("solver.tol: must be positive");
  s.solver.max_newton = c.integer("solver", "max_newton", 25);
  if (s.solver.max_newton < 1)
    throw ValidationError("solver.max_newton: must be at least 1");
  s.solver.picard = c.flag("solver", "picard", false);
  s.solver.rho = c.number("solver", "rho", 0.5);
  s.solver.picard_iters = c.integer("solver", "picard_iters", 200);

  if (c.sections.count("measure")) {
    bool hd = c.has("measure", "dirac_t");
    bool hw = c.has("measure", "weight");
    if (hd == hw)
      throw ValidationError("measure: give exactly one of dirac_t and weight");
    std::string type = c.raw_or("measure", "type", hd ? "dirac" : "weighted");
    if (type == "dirac") {
      if (!hd) throw ValidationError("measure.dirac_t: required for type = dirac");
      s.measure = dirac_measure(c.number("measure", "dirac_t"));
    } else if (type == "weighted") {
      if (!hw) throw ValidationError("measure.weight: required for type = weighted");
      ArrayXd vk = time_profile(field_of(c, "measure", "weight", "1"), s.tg,
                                "measure.weight");
      s.measure = weighted_measure(vk);
      s.varkappa = vk;
    } else {
      throw ValidationError("measure.type: expected 'dirac' or 'weighted', got '" + type +
                            "'");
    }
    validate_measure(*s.measure, s.tg);
  }

  return s;
}

DirectResult run_direct(const RunSetup& s) {
  auto [traj, rep] =
      s.solver.picard
          ? solve_picard(s.op, s.bc, s.reaction, s.u0, s.beta, s.tg, s.solver.rho,
                         s.solver.picard_iters, s.solver.tol)
          : solve_l1(s.op, s.bc, s.reaction, s.u0, s.beta, s.tg, s.solver.tol);
  for (size_t n = 0; n < rep.newton_iterations.size(); ++n)
    if (rep.newton_iterations[n] > s.solver.max_newton)
      throw SolverError("step " + std::to_string(n + 1) + " needed " +
                        std::to_string(rep.newton_iterations[n]) +
                        " newton iterations, solver.max_newton allows " +
                        std::to_string(s.solver.max_newton));
  return {std::move(traj), std::move(rep)};
}

// ---------------------------------------------------------------------------
// output

namespace {

std::vector<std::string> check_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t key_end = line.find_first_of(" \t=");
    std::string key = line.substr(0, key_end);
    // timing and timestamps vary between runs of the same configuration
    if (key == "wall_seconds" || key == "generated_at") continue;
    std::string tok;
    auto flush = [&] {
      if (!tok.empty()) out.push_back(tok);
      tok.clear();
    };
    for (char ch : line) {
      if (ch == ',' || ch == ';' || ch == '=' ||
          std::isspace(static_cast<unsigned char>(ch)))
        flush();
      else
        tok += ch;
    }
    flush();
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string compare_tokens(const std::string& baseline, const std::string& fresh) {
  std::vector<std::string> a = check_tokens(baseline);
  std::vector<std::string> b = check_tokens(fresh);
  if (a.size() != b.size())
    return "token count " + std::to_string(a.size()) + " vs " + std::to_string(b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    double x = 0.0, y = 0.0;
    bool nx = parse_number(a[i], x), ny = parse_number(b[i], y);
    if (nx && ny) {
      if (x == y) continue;  // covers the infinities, which defeat the difference
      if (std::isnan(x) && std::isnan(y)) continue;
      // an infinite magnitude would swallow the relative tolerance
      if (std::isfinite(x) && std::isfinite(y) &&
          std::abs(x - y) <= 1e-12 + 1e-9 * std::max(std::abs(x), std::abs(y)))
        continue;
      return "token " + std::to_string(i + 1) + ": " + a[i] + " vs " + b[i];
    }
    if (a[i] != b[i])
      return "token " + std::to_string(i + 1) + ": '" + a[i] + "' vs '" + b[i] + "'";
  }
  return {};
}

void OutputSink::text(const std::string& name, const std::string& content) {
  files.push_back(name);
  std::filesystem::path path = dir / name;
  if (check) {
    if (!std::filesystem::exists(path))
      throw ValidationError("check: no stored baseline for " + name + " under " +
                            dir.string());
    std::string why = compare_tokens(read_file(path), content);
    if (!why.empty()) drift.push_back(name + ": " + why);
    return;
  }
  std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
}

int OutputSink::finish(const std::string& command, const std::string& hash,
                       const std::string& summary) {
  std::filesystem::path mpath = dir / "manifest.txt";
  if (!check) {
    std::ostringstream m;
    m << "# run manifest\n";
    m << "tool_version = " << kToolVersion << '\n';
    m << "command = " << command << '\n';
    m << "config_hash = " << hash << '\n';
    m << "generated_at = " << iso_now() << '\n';
    for (const std::string& f : files) m << "output = " << f << '\n';
    m << "summary = " << summary << '\n';
    std::filesystem::create_directories(dir);
    std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + mpath.string());
    out << m.str();
    return 0;
  }
  if (!std::filesystem::exists(mpath))
    throw ValidationError("check: no stored manifest under " + dir.string());
  std::istringstream in(read_file(mpath));
  std::string line, stored;
  while (std::getline(in, line)) {
    if (line.starts_with("config_hash = ")) stored = trim(line.substr(14));
  }
  if (stored != hash)
    throw ValidationError("check: config hash " + hash +
                          " does not match the stored run " + stored);
  for (const std::string& d : drift) std::cerr << "drift: " << d << '\n';
  return drift.empty() ? 0 : 5;
}

// ---------------------------------------------------------------------------
// writers and readers

std::string trajectory_csv(const Trajectory& t) {
  std::ostringstream out;
  out << "# columns: t, then the state at every space node in index order\n";
  for (int n = 0; n < t.values.rows(); ++n) {
    out << fmt(t.time_grid.node(n));
    for (int idx = 0; idx < t.values.cols(); ++idx) out << ',' << fmt(t.values(n, idx));
    out << '\n';
  }
  return out.str();
}

std::string grid_csv(const SpaceGrid& g) {
  std::ostringstream out;
  out << "# columns: node, x, y, on_boundary\n";
  for (int idx = 0; idx < g.n_nodes(); ++idx)
    out << idx << ',' << fmt(g.x(idx)) << ',' << fmt(g.y(idx)) << ','
        << (g.on_boundary(idx) ? 1 : 0) << '\n';
  return out.str();
}

std::string solve_report_text(const SolveReport& r, const SolverOptions& opt) {
  std::ostringstream o;
  o << "# forward solve report\n";
  o << "method = " << (opt.picard ? "picard" : "l1-newton") << '\n';
  o << "tol = " << fmt(opt.tol) << '\n';
  if (!r.newton_iterations.empty()) {
    o << "max_newton_iterations = "
      << *std::max_element(r.newton_iterations.begin(), r.newton_iterations.end())
      << '\n';
    o << "newton_iterations =";
    for (int k : r.newton_iterations) o << ' ' << k;
    o << '\n';
    o << "step_residuals =";
    for (double v : r.residuals) o << ' ' << fmt(v);
    o << '\n';
  }
  if (opt.picard) {
    o << "picard_iterations = " << r.picard_iterations << '\n';
    o << "contraction = " << fmt(r.contraction) << '\n';
    o << "contraction_closed = " << fmt(r.contraction_closed) << '\n';
    o << "resolvent_norm = " << fmt(r.resolvent_norm) << '\n';
    o << "shift = " << fmt(r.shift) << '\n';
  }
  o << "positivity_min = " << fmt(r.positivity_min) << '\n';
  o << "wall_seconds = " << fmt6(r.wall_seconds) << '\n';
  for (const std::string& f : r.flags) o << "flag = " << f << '\n';
  return o.str();
}

std::string positivity_report_text(const PositivityReport& r) {
  std::ostringstream o;
  o << "# sign preservation audit\n";
  for (const HypothesisCheck& h : r.hypotheses)
    o << "hypothesis = " << h.name << ": " << (h.passed ? "PASS" : "FAIL") << ", "
      << h.witness << '\n';
  o << "covered = " << yn(r.covered) << '\n';
  if (!r.scope_note.empty()) o << "scope_note = " << r.scope_note << '\n';
  o << "min_value = " << fmt(r.min_value) << " at step " << r.min_step << " node "
    << r.min_node << '\n';
  o << "nonnegative = " << yn(r.nonnegative) << '\n';
  o << "zero_history_violations = " << r.zero_history_violations.size() << '\n';
  for (const ZeroHistoryViolation& v : r.zero_history_violations)
    o << "violation = step " << v.step << " node " << v.node << " value "
      << fmt6(v.u_here) << ", earlier step " << v.earlier_step << " value "
      << fmt6(v.u_earlier) << '\n';
  o << "min_gradient = " << fmt(r.min_gradient) << '\n';
  o << "minimum_principle_ok = " << yn(r.minimum_principle_ok) << '\n';
  o << "tol = " << fmt(r.tol) << '\n';
  o << "zero_trigger = " << fmt(r.zero_trigger) << '\n';
  o << "history_budget = " << fmt(r.history_budget) << '\n';
  for (const std::string& cv : r.caveats) o << "caveat = " << cv << '\n';
  return o.str();
}

std::string condition_report_text(const std::string& title, const ConditionReport& r) {
  std::ostringstream o;
  o << "# " << title << '\n';
  if (std::isinf(r.theta) && r.theta < 0.0)
    o << "theta = undefined\n";
  else
    o << "theta = " << fmt(r.theta) << '\n';
  if (!std::isnan(r.theta_hat)) o << "theta_hat = " << fmt(r.theta_hat) << '\n';
  o << "state_range = [" << fmt6(r.m_hat) << ", " << fmt6(r.m_tilde) << "]\n";
  for (const HypothesisEntry& e : r.entries)
    o << e.id << " = "
      << (!e.applicable ? "not applicable"
                        : e.passed ? std::string("PASS") : std::string("FAIL"))
      << ", margin " << fmt6(e.margin) << ", " << e.witness << '\n';
  o << "covered = " << yn(r.covered) << '\n';
  for (const std::string& a : r.annotations) o << "note = " << a << '\n';
  return o.str();
}

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string condition_reports_csv(
    const std::vector<std::pair<std::string, const ConditionReport*>>& reports) {
  std::ostringstream o;
  o << "# columns: report, hypothesis, applicable, passed, margin, witness\n";
  for (const auto& [name, rep] : reports)
    for (const HypothesisEntry& e : rep->entries)
      o << name << ',' << e.id << ',' << (e.applicable ? 1 : 0) << ','
        << (e.passed ? 1 : 0) << ',' << fmt(e.margin) << ',' << csv_quote(e.witness)
        << '\n';
  return o.str();
}

std::string closed_form_matrix_text(double beta, double T, double W,
                                    const SpatialField& z, double u_bound,
                                    double theta_general) {
  std::ostringstream o;
  o << "# closed-form factor and state bounds per reaction family\n";
  o << "theta_star = " << fmt(std::pow(T, -beta) / gamma_fn(1.0 - beta)) << '\n';
  if (std::isinf(theta_general) && theta_general < 0.0)
    o << "theta = undefined\n";
  else
    o << "theta = " << fmt(theta_general) << '\n';
  o << "u_bound = " << fmt6(u_bound) << ", W = " << fmt6(W) << ", max_z = "
    << fmt6(z.values.maxCoeff()) << '\n';
  struct Row {
    Reaction::Variant v;
    const char* name;
  };
  const Row rows[] = {{Reaction::Variant::LinearPotential, "linear"},
                      {Reaction::Variant::Fisher, "fisher"},
                      {Reaction::Variant::Zeldovich, "zeldovich"}};
  for (const Row& row : rows)
    for (bool weighted : {false, true}) {
      ClosedFormCheck cc = closed_form_bounds(row.v, beta, T, W, z, u_bound, weighted);
      o << row.name << " / " << (weighted ? "weighted-average data" : "single-time data")
        << ": " << (cc.pass ? "PASS" : "FAIL") << ", z_margin " << fmt6(cc.z_margin)
        << ", u_margin " << fmt6(cc.u_margin) << '\n';
    }
  return o.str();
}

std::string residual_history_csv(const ReconstructionReport& r) {
  std::ostringstream o;
  o << "# columns: iteration, data residual, update norm, nodes at the denominator "
       "floor\n";
  size_t n = std::min({r.data_residuals.size(), r.update_norms.size(),
                       r.floor_activations.size()});
  for (size_t k = 0; k < n; ++k)
    o << k + 1 << ',' << fmt(r.data_residuals[k]) << ',' << fmt(r.update_norms[k]) << ','
      << r.floor_activations[k] << '\n';
  return o.str();
}

Trajectory read_trajectory_csv(const std::filesystem::path& path, const SpaceGrid& grid,
                               const TimeGrid& tg) {
  MatrixXd m = load_table(path, "trajectory.csv");
  if (m.rows() != tg.n_nodes() || m.cols() != grid.n_nodes() + 1)
    throw ValidationError("trajectory.csv: stored shape " + std::to_string(m.rows()) +
                          "x" + std::to_string(m.cols()) +
                          " does not match the configured grids (" +
                          std::to_string(tg.n_nodes()) + "x" +
                          std::to_string(grid.n_nodes() + 1) + ")");
  for (int n = 0; n < m.rows(); ++n)
    if (std::abs(m(n, 0) - tg.node(n)) > 1e-9 * (1.0 + tg.T))
      throw ValidationError("trajectory.csv: row " + std::to_string(n) +
                            " is at t = " + fmt6(m(n, 0)) +
                            ", the configured grid expects " + fmt6(tg.node(n)));
  Trajectory t;
  t.time_grid = tg;
  t.space_grid = grid;
  t.values = m.rightCols(m.cols() - 1);
  t.u0 = SpatialField{grid, t.values.row(0).transpose().array()};
  validate_trajectory(t);
  return t;
}

// ---------------------------------------------------------------------------
// svg

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};

void svg_axes(std::ostringstream& o, double xmin, double xmax, double ymin, double ymax,
              double left, double right, double top, double bottom, double width,
              double height) {
  o << "<rect x='0' y='0' width='" << width << "' height='" << height
    << "' fill='white'/>\n";
  o << "<line x1='" << left << "' y1='" << height - bottom << "' x2='" << width - right
    << "' y2='" << height - bottom << "' stroke='black'/>\n";
  o << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='"
    << height - bottom << "' stroke='black'/>\n";
  for (int k = 0; k <= 4; ++k) {
    double fx = left + k / 4.0 * (width - left - right);
    double fy = height - bottom - k / 4.0 * (height - top - bottom);
    double vx = xmin + k / 4.0 * (xmax - xmin);
    double vy = ymin + k / 4.0 * (ymax - ymin);
    o << "<line x1='" << fx << "' y1='" << height - bottom << "' x2='" << fx << "' y2='"
      << height - bottom + 5 << "' stroke='black'/>\n";
    o << "<text x='" << fx << "' y='" << height - bottom + 18
      << "' font-size='11' text-anchor='middle'>" << fmt6(vx) << "</text>\n";
    o << "<line x1='" << left - 5 << "' y1='" << fy << "' x2='" << left << "' y2='" << fy
      << "' stroke='black'/>\n";
    o << "<text x='" << left - 8 << "' y='" << fy + 4
      << "' font-size='11' text-anchor='end'>" << fmt6(vy) << "</text>\n";
  }
}

}  // namespace

std::string svg_line_plot(const std::string& title,
                          const std::vector<std::pair<std::string, ArrayXd>>& series,
                          const ArrayXd& xs) {
  const double width = 720, height = 480, left = 70, right = 30, top = 40, bottom = 50;
  double xmin = xs.minCoeff(), xmax = xs.maxCoeff();
  double ymin = kInf, ymax = -kInf;
  for (const auto& [name, ys] : series) {
    ymin = std::min(ymin, ys.minCoeff());
    ymax = std::max(ymax, ys.maxCoeff());
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (width - left - right); };
  auto Y = [&](double y) {
    return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom);
  };
  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
    << height << "' viewBox='0 0 " << width << ' ' << height << "'>\n";
  svg_axes(o, xmin, xmax, ymin, ymax, left, right, top, bottom, width, height);
  o << "<text x='" << width / 2 << "' y='24' font-size='15' text-anchor='middle'>"
    << title << "</text>\n";
  int si = 0;
  for (const auto& [name, ys] : series) {
    const char* color = kPalette[si % 6];
    o << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (int i = 0; i < xs.size(); ++i) o << fmt6(X(xs[i])) << ',' << fmt6(Y(ys[i])) << ' ';
    o << "'/>\n";
    o << "<text x='" << width - right - 8 << "' y='" << top + 16 + 16 * si
      << "' font-size='12' text-anchor='end' fill='" << color << "'>" << name
      << "</text>\n";
    ++si;
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_heatmap(const std::string& title, const MatrixXd& values, double x1,
                        double y1) {
  const double width = 720, height = 560, left = 70, right = 30, top = 40, bottom = 60;
  double vmin = values.minCoeff(), vmax = values.maxCoeff();
  if (!(vmax > vmin)) vmax = vmin + 1.0;
  int ny = static_cast<int>(values.rows()), nx = static_cast<int>(values.cols());
  double cw = (width - left - right) / nx, ch = (height - top - bottom) / ny;
  auto channel = [](double a, double b, double t) {
    return static_cast<int>(a + (b - a) * t + 0.5);
  };
  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
    << height << "' viewBox='0 0 " << width << ' ' << height << "'>\n";
  o << "<rect x='0' y='0' width='" << width << "' height='" << height
    << "' fill='white'/>\n";
  o << "<text x='" << width / 2 << "' y='24' font-size='15' text-anchor='middle'>"
    << title << "</text>\n";
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j) {
      double t = (values(i, j) - vmin) / (vmax - vmin);
      int r, g, b;
      if (t < 0.5) {
        double s = t / 0.5;
        r = channel(33, 247, s);
        g = channel(102, 247, s);
        b = channel(172, 247, s);
      } else {
        double s = (t - 0.5) / 0.5;
        r = channel(247, 178, s);
        g = channel(247, 24, s);
        b = channel(247, 43, s);
      }
      o << "<rect x='" << fmt6(left + j * cw) << "' y='"
        << fmt6(height - bottom - (i + 1) * ch) << "' width='" << fmt6(cw + 0.5)
        << "' height='" << fmt6(ch + 0.5) << "' fill='rgb(" << r << ',' << g << ',' << b
        << ")'/>\n";
    }
  o << "<text x='" << left << "' y='" << height - 24 << "' font-size='12'>x in [0, "
    << fmt6(x1) << "], y in [0, " << fmt6(y1) << "], value range [" << fmt6(vmin) << ", "
    << fmt6(vmax) << "]</text>\n";
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// commands

namespace {

bool plots_enabled(const CommandContext& ctx) {
  return ctx.config.flag("output", "emit_plots", false);
}

// final, middle, and initial time slices of a 1D run
std::string solution_plot(const Trajectory& traj) {
  const SpaceGrid& g = traj.space_grid;
  ArrayXd xs(g.n_nodes());
  for (int i = 0; i < g.n_nodes(); ++i) xs[i] = g.x(i);
  int last = static_cast<int>(traj.values.rows()) - 1;
  std::vector<std::pair<std::string, ArrayXd>> series;
  for (int n : {0, last / 2, last})
    series.emplace_back("t = " + fmt6(traj.time_grid.node(n)),
                        traj.values.row(n).transpose().array());
  return svg_line_plot("state profiles", series, xs);
}

std::string heatmap_of_slice(const Trajectory& traj, int row, const std::string& title) {
  const SpaceGrid& g = traj.space_grid;
  MatrixXd slice(g.axis_nodes(1), g.axis_nodes(0));
  for (int idx = 0; idx < g.n_nodes(); ++idx)
    slice(g.iy(idx), g.ix(idx)) = traj.values(row, idx);
  return svg_heatmap(title, slice, g.extent[0], g.extent[1]);
}

bool reconstruction_converged(const ReconstructionReport& rep) {
  for (const std::string& f : rep.flags)
    if (f.find("iteration cap") != std::string::npos) return false;
  return true;
}

}  // namespace

int cmd_direct(CommandContext& ctx) {
  RunSetup s = build_setup(ctx.config);
  DirectResult r = run_direct(s);
  PositivityReport pos =
      audit_positivity(r.traj, s.reaction, fractional_kernel(s.beta), s.bc);

  OutputSink sink{ctx.out_dir, ctx.check};
  sink.text("trajectory.csv", trajectory_csv(r.traj));
  sink.text("grid.csv", grid_csv(s.grid));
  sink.text("solve_report.txt", solve_report_text(r.report, s.solver));
  sink.text("positivity_report.txt", positivity_report_text(pos));
  if (plots_enabled(ctx)) {
    if (s.grid.dim == 1)
      sink.text("solution.svg", solution_plot(r.traj));
    else
      sink.text("solution.svg",
                heatmap_of_slice(r.traj, s.tg.n_steps,
                                 "state at t = " + fmt6(s.tg.T)));
  }

  double final_max = r.traj.values.row(s.tg.n_steps).cwiseAbs().maxCoeff();
  std::string summary = "direct: steps=" + std::to_string(s.tg.n_steps) + " nodes=" +
                        std::to_string(s.grid.n_nodes()) + " min_u=" +
                        fmt6(pos.min_value) + " final_max=" + fmt6(final_max);
  int rc = sink.finish("direct", config_hash(ctx.config), summary);
  std::cout << summary << " wall=" << fmt6(r.report.wall_seconds) << "s\n";
  return rc;
}

int cmd_invert(CommandContext& ctx) {
  const Config& c = ctx.config;
  c.restrict_keys("inverse", {"mode", "z_true", "data", "noise", "tol", "max_iters",
                              "damping", "floor", "z_init"});
  RunSetup s = build_setup(c);
  if (!s.measure)
    throw ValidationError("invert: a [measure] section is required");

  InverseProblemSpec ip;
  ip.op = s.op;
  ip.bc = s.bc;
  ip.reaction = s.reaction;
  ip.u0 = s.u0;
  ip.beta = s.beta;
  ip.time_grid = s.tg;
  ip.measure = *s.measure;
  ip.tol = c.number("inverse", "tol", 1e-8);
  ip.max_iters = c.integer("inverse", "max_iters", 40);
  ip.newton_tol = s.solver.tol;
  ip.damping = c.number("inverse", "damping", 0.0);
  ip.floor = c.number("inverse", "floor", -1.0);
  if (c.has("inverse", "z_init"))
    ip.z_init = space_field(field_of(c, "inverse", "z_init", "0"), s.grid,
                            "inverse.z_init");

  double noise = c.number("inverse", "noise", 0.0);
  std::string mode = c.raw_or("inverse", "mode", c.has("inverse", "z_true") ? "twin"
                                                                            : "data");
  SpatialField z_true;
  bool twin = mode == "twin";
  if (twin) {
    if (!c.has("inverse", "z_true"))
      throw ValidationError("inverse.z_true: required in twin mode");
    z_true = space_field(field_of(c, "inverse", "z_true", "0"), s.grid,
                         "inverse.z_true");
    Reaction rt = s.reaction;
    rt.z = z_true;
    auto [traj0, rep0] = solve_l1(s.op, s.bc, rt, s.u0, s.beta, s.tg, s.solver.tol);
    ip.d = apply_measure(traj0, ip.measure);
    if (noise > 0.0) {
      std::mt19937 rng(ctx.seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int i = 0; i < ip.d.values.size(); ++i)
        ip.d.values[i] *= 1.0 + noise * u(rng);
    }
  } else if (mode == "data") {
    if (!c.has("inverse", "data"))
      throw ValidationError("inverse.data: required outside twin mode");
    ip.d = space_field(field_of(c, "inverse", "data", "0"), s.grid, "inverse.data");
  } else {
    throw ValidationError("inverse.mode: expected 'twin' or 'data', got '" + mode + "'");
  }

  bool weighted = ip.measure.variant == MeasureSpec::Variant::Weighted;
  auto [zr, rep] = weighted ? reconstruct_weighted(ip) : reconstruct_final_time(ip);
  bool converged = reconstruction_converged(rep);

  ConditionReport cond =
      weighted ? audit_weighted_uniqueness(rep.trajectory, s.reaction, zr, s.beta,
                                           *s.varkappa)
               : audit_uniqueness_conditions(rep.trajectory, s.reaction, zr, s.beta);

  OutputSink sink{ctx.out_dir, ctx.check};
  {
    std::ostringstream o;
    o << "# columns: x, y, z" << (twin ? ", z_true, abs_err" : "") << '\n';
    for (int idx = 0; idx < s.grid.n_nodes(); ++idx) {
      o << fmt(s.grid.x(idx)) << ',' << fmt(s.grid.y(idx)) << ',' << fmt(zr.values[idx]);
      if (twin)
        o << ',' << fmt(z_true.values[idx]) << ','
          << fmt(std::abs(zr.values[idx] - z_true.values[idx]));
      o << '\n';
    }
    sink.text("z.csv", o.str());
  }
  sink.text("residuals.csv", residual_history_csv(rep));
  sink.text("condition_report.txt",
            condition_report_text(weighted
                                      ? "uniqueness hypotheses, weighted time-average data"
                                      : "uniqueness hypotheses, single-time data",
                                  cond));
  sink.text("condition_report.csv", condition_reports_csv({{"uniqueness", &cond}}));

  double rel_err = 0.0;
  if (twin) {
    double scale = z_true.values.abs().maxCoeff();
    rel_err = (zr.values - z_true.values).abs().maxCoeff() / (scale > 0.0 ? scale : 1.0);
  }
  double final_res = rep.data_residuals.empty() ? 0.0 : rep.data_residuals.back();
  {
    std::ostringstream o;
    o << "# reconstruction report\n";
    o << "mode = " << mode << '\n';
    o << "measure = " << (weighted ? "weighted" : "dirac") << '\n';
    o << "iterations = " << rep.iterations << '\n';
    o << "converged = " << yn(converged) << '\n';
    o << "final_residual = " << fmt(final_res) << '\n';
    o << "tol = " << fmt(ip.tol) << '\n';
    o << "damping = " << fmt(ip.damping) << '\n';
    o << "contraction = " << fmt(rep.contraction) << '\n';
    if (!weighted) o << "snap_distance = " << fmt(rep.snap_distance) << '\n';
    if (twin) {
      o << "rel_error = " << fmt(rel_err) << '\n';
      if (noise > 0.0)
        o << "noise = " << fmt(noise) << ", seed = " << ctx.seed << '\n';
    }
    for (const std::string& f : rep.flags) o << "flag = " << f << '\n';
    sink.text("invert_report.txt", o.str());
  }
  if (plots_enabled(ctx) && s.grid.dim == 1) {
    ArrayXd xs(s.grid.n_nodes());
    for (int i = 0; i < s.grid.n_nodes(); ++i) xs[i] = s.grid.x(i);
    std::vector<std::pair<std::string, ArrayXd>> series{{"reconstructed", zr.values}};
    if (twin) series.emplace_back("ground truth", z_true.values);
    sink.text("z.svg", svg_line_plot("reconstructed factor", series, xs));
  }

  std::string summary = "invert: iterations=" + std::to_string(rep.iterations) +
                        " final_residual=" + fmt6(final_res) + " converged=" +
                        yn(converged);
  if (twin) summary += " rel_error=" + fmt6(rel_err);
  int rc = sink.finish("invert", config_hash(c), summary);
  std::cout << summary << '\n';
  // noisy data carry no convergence promise, so only clean runs gate the exit
  if (rc == 0 && !converged && noise == 0.0) rc = 1;
  return rc;
}

int cmd_audit(CommandContext& ctx) {
  RunSetup s = build_setup(ctx.config);
  OutputSink sink{ctx.out_dir, ctx.check};

  Trajectory traj;
  std::filesystem::path stored = ctx.out_dir / "trajectory.csv";
  bool loaded = std::filesystem::exists(stored);
  if (loaded) {
    traj = read_trajectory_csv(stored, s.grid, s.tg);
  } else {
    DirectResult r = run_direct(s);
    traj = std::move(r.traj);
    sink.text("trajectory.csv", trajectory_csv(traj));
    sink.text("grid.csv", grid_csv(s.grid));
  }

  PositivityReport pos =
      audit_positivity(traj, s.reaction, fractional_kernel(s.beta), s.bc);
  ConditionReport general =
      audit_uniqueness_conditions(traj, s.reaction, s.reaction.z, s.beta);
  ConditionReport growth =
      audit_monotone_growth(traj, s.reaction, s.reaction.z, s.beta, s.op, s.bc);
  std::vector<std::pair<std::string, const ConditionReport*>> reports{
      {"uniqueness", &general}, {"growth", &growth}};
  ConditionReport weighted_rep;
  if (s.varkappa) {
    weighted_rep = audit_weighted_uniqueness(traj, s.reaction, s.reaction.z, s.beta,
                                             *s.varkappa);
    reports.emplace_back("weighted-uniqueness", &weighted_rep);
  }

  double u_bound = traj.values.cwiseAbs().maxCoeff();
  double W = ctx.config.number("reaction", "W", 1.0);
  std::string matrix =
      closed_form_matrix_text(s.beta, s.tg.T, W, s.reaction.z, u_bound, general.theta);

  sink.text("positivity_report.txt", positivity_report_text(pos));
  sink.text("condition_general.txt",
            condition_report_text("uniqueness hypotheses, single-time data", general));
  if (s.varkappa)
    sink.text("condition_weighted.txt",
              condition_report_text("uniqueness hypotheses, weighted time-average data",
                                    weighted_rep));
  sink.text("condition_growth.txt",
            condition_report_text("monotone growth hypotheses", growth));
  sink.text("conditions.csv", condition_reports_csv(reports));
  sink.text("closed_form.txt", matrix);

  std::string summary = "audit: positivity_covered=" + yn(pos.covered) +
                        " uniqueness_covered=" + yn(general.covered) +
                        " growth_covered=" + yn(growth.covered) + " min_u=" +
                        fmt6(pos.min_value);
  int rc = sink.finish("audit", config_hash(ctx.config), summary);
  std::cout << matrix << summary << '\n';
  return rc;
}

int cmd_ml(double alpha, double z, CommandContext& ctx) {
  double value = mittag_leffler(alpha, z);

  // replay the defining series to report how many terms it takes; when the
  // series is numerically hopeless the implementation switched to its
  // integral representation
  int terms = -1;
  if (z == 0.0) {
    terms = 1;
  } else {
    double sum = 1.0;
    for (int m = 1; m <= 400; ++m) {
      double lt = m * std::log(std::abs(z)) - std::lgamma(alpha * m + 1.0);
      if (lt > 690.0) break;
      double t = std::exp(lt);
      if (z < 0.0 && (m & 1)) t = -t;
      sum += t;
      if (std::abs(t) <= std::numeric_limits<double>::epsilon() * std::abs(sum)) {
        if (std::abs(sum - value) <= 1e-12 * (1.0 + std::abs(value))) terms = m + 1;
        break;
      }
    }
  }

  std::ostringstream o;
  o << "# Mittag-Leffler evaluation\n";
  o << "alpha = " << fmt(alpha) << '\n';
  o << "z = " << fmt(z) << '\n';
  o << "value = " << fmt(value) << '\n';
  if (terms > 0)
    o << "series_terms = " << terms << '\n';
  else
    o << "branch = integral\n";

  Config mc;
  mc.sections["ml"] = {{"alpha", fmt(alpha)}, {"z", fmt(z)}};
  OutputSink sink{ctx.out_dir, ctx.check};
  sink.text("ml.txt", o.str());
  std::string summary = "ml: alpha=" + fmt6(alpha) + " z=" + fmt6(z) + " value=" +
                        fmt(value);
  int rc = sink.finish("ml", config_hash(mc), summary);
  std::cout << "E_" << fmt6(alpha) << "(" << fmt6(z) << ") = " << fmt(value);
  if (terms > 0)
    std::cout << "  (" << terms << " series terms)\n";
  else
    std::cout << "  (integral branch)\n";
  return rc;
}

int cmd_convergence(CommandContext& ctx) {
  const Config& c = ctx.config;
  c.restrict_keys("convergence", {"levels", "refine", "exact"});
  int levels = c.integer("convergence", "levels");
  if (levels < 3)
    throw ValidationError("convergence.levels: need at least 3 refinement levels");
  std::string refine = c.raw_or("convergence", "refine", "time");
  if (refine != "time" && refine != "space")
    throw ValidationError("convergence.refine: expected 'time' or 'space', got '" +
                          refine + "'");
  FieldValue ef = classify_field(c.raw("convergence", "exact"), c.base_dir,
                                 "convergence.exact");
  if (ef.kind == FieldValue::Kind::Table)
    throw ValidationError(
        "convergence.exact: give an expression, tables cannot follow refinement");
  Expression exact = ef.kind == FieldValue::Kind::Expr
                         ? parse_expression(ef.expr, {"t", "x", "y"})
                         : parse_expression(fmt(ef.constant), {"t", "x", "y"});

  int base_steps = c.integer("problem", "n_steps");
  int base_cells_x = c.integer("problem", "n_cells_x");
  int base_cells_y = c.integer("problem", "n_cells_y", 0);

  std::vector<double> hs(levels), errs(levels);
  std::vector<int> steps(levels), cells(levels);
  for (int l = 0; l < levels; ++l) {
    Config cl = c;
    int ns = base_steps, ncx = base_cells_x, ncy = base_cells_y;
    if (refine == "time")
      ns <<= l;
    else {
      ncx <<= l;
      ncy <<= l;
    }
    cl.sections["problem"]["n_steps"] = std::to_string(ns);
    cl.sections["problem"]["n_cells_x"] = std::to_string(ncx);
    if (ncy > 0) cl.sections["problem"]["n_cells_y"] = std::to_string(ncy);
    RunSetup sl = build_setup(cl);
    DirectResult r = run_direct(sl);
    double err = 0.0;
    for (int idx = 0; idx < sl.grid.n_nodes(); ++idx)
      err = std::max(err, std::abs(r.traj.values(sl.tg.n_steps, idx) -
                                   exact.eval({sl.tg.T, sl.grid.x(idx),
                                               sl.grid.y(idx)})));
    hs[l] = refine == "time" ? sl.tg.tau() : sl.grid.h(0);
    errs[l] = err;
    steps[l] = ns;
    cells[l] = ncx;
  }

  // least squares slope of log(err) against log(step), the observed order
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int l = 0; l < levels; ++l) {
    double lx = std::log(hs[l]), ly = std::log(std::max(errs[l], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double slope = (levels * sxy - sx * sy) / (levels * sxx - sx * sx);

  std::ostringstream csv;
  csv << "# columns: level, n_steps, n_cells, step, error, observed_order\n";
  for (int l = 0; l < levels; ++l) {
    csv << l << ',' << steps[l] << ',' << cells[l] << ',' << fmt(hs[l]) << ','
        << fmt(errs[l]) << ',';
    if (l == 0)
      csv << "nan";
    else
      csv << fmt(std::log(errs[l - 1] / errs[l]) / std::log(hs[l - 1] / hs[l]));
    csv << '\n';
  }

  std::ostringstream rep;
  rep << "# refinement study\n";
  rep << "refine = " << refine << '\n';
  rep << "levels = " << levels << '\n';
  rep << "fitted_order = " << fmt(slope) << '\n';
  rep << "final_error = " << fmt(errs[levels - 1]) << '\n';

  OutputSink sink{ctx.out_dir, ctx.check};
  sink.text("convergence.csv", csv.str());
  sink.text("convergence_report.txt", rep.str());
  std::string summary = "convergence: refine=" + refine + " levels=" +
                        std::to_string(levels) + " fitted_order=" + fmt6(slope);
  int rc = sink.finish("convergence", config_hash(c), summary);
  std::cout << summary << '\n';
  return rc;
}

}  // namespace fracdiff::cli
