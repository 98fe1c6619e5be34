#include "fracdiff/domain.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace fracdiff {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

std::string node_label(const SpaceGrid& g, int idx) {
  std::ostringstream os;
  os << "node " << idx << " at x=" << g.x(idx);
  if (g.dim == 2) os << ", y=" << g.y(idx);
  return os.str();
}

}  // namespace

bool SpaceGrid::on_boundary(int idx) const {
  int i = ix(idx);
  if (i == 0 || i == n_cells[0]) return true;
  if (dim == 2) {
    int j = iy(idx);
    if (j == 0 || j == n_cells[1]) return true;
  }
  return false;
}

bool SpaceGrid::is_corner(int idx) const {
  if (dim == 1) return false;
  int i = ix(idx), j = iy(idx);
  return (i == 0 || i == n_cells[0]) && (j == 0 || j == n_cells[1]);
}

std::vector<int> SpaceGrid::interior_indices() const {
  std::vector<int> out;
  for (int idx = 0; idx < n_nodes(); ++idx)
    if (!on_boundary(idx)) out.push_back(idx);
  return out;
}

std::vector<int> SpaceGrid::boundary_indices() const {
  std::vector<int> out;
  for (int idx = 0; idx < n_nodes(); ++idx)
    if (on_boundary(idx)) out.push_back(idx);
  return out;
}

std::array<double, 2> SpaceGrid::outward_normal(int idx) const {
  double nx = 0.0, ny = 0.0;
  int i = ix(idx);
  if (i == 0) nx = -1.0;
  if (i == n_cells[0]) nx = 1.0;
  if (dim == 2) {
    int j = iy(idx);
    if (j == 0) ny = -1.0;
    if (j == n_cells[1]) ny = 1.0;
  }
  double len = std::sqrt(nx * nx + ny * ny);
  require(len > 0.0, "outward_normal: not a boundary node");
  return {nx / len, ny / len};
}

SpaceGrid make_grid_1d(double length, int cells) {
  SpaceGrid g;
  g.dim = 1;
  g.extent = {length, 0.0};
  g.n_cells = {cells, 0};
  validate_space_grid(g);
  return g;
}

SpaceGrid make_grid_2d(double lx, double ly, int cells_x, int cells_y) {
  SpaceGrid g;
  g.dim = 2;
  g.extent = {lx, ly};
  g.n_cells = {cells_x, cells_y};
  validate_space_grid(g);
  return g;
}

void validate_space_grid(const SpaceGrid& grid) {
  require(grid.dim == 1 || grid.dim == 2, "space grid: dim must be 1 or 2");
  for (int a = 0; a < grid.dim; ++a) {
    require(grid.extent[a] > 0.0, "space grid: extent must be positive");
    require(grid.n_cells[a] >= 2, "space grid: need at least 2 cells per axis");
  }
}

SpatialField make_field(const SpaceGrid& grid, double value) {
  return {grid, ArrayXd::Constant(grid.n_nodes(), value)};
}

SpatialField sample_field(const SpaceGrid& grid,
                          const std::function<double(double, double)>& fn) {
  SpatialField f{grid, ArrayXd(grid.n_nodes())};
  for (int idx = 0; idx < grid.n_nodes(); ++idx)
    f.values[idx] = fn(grid.x(idx), grid.y(idx));
  validate_field(f);
  return f;
}

void validate_field(const SpatialField& field) {
  require(field.values.size() == field.grid.n_nodes(),
          "spatial field: value count does not match grid");
  require(field.values.allFinite(), "spatial field: non-finite values");
}

EllipticOperator laplace_operator(const SpaceGrid& grid, double diffusion) {
  int n = grid.n_nodes();
  EllipticOperator op;
  op.grid = grid;
  op.a11 = ArrayXd::Constant(n, diffusion);
  op.a22 = grid.dim == 2 ? ArrayXd::Constant(n, diffusion) : ArrayXd::Zero(n);
  op.a12 = ArrayXd::Zero(n);
  op.a1 = ArrayXd::Zero(n);
  op.a2 = ArrayXd::Zero(n);
  return op;
}

EllipticOperator make_operator(const SpaceGrid& grid, ArrayXd a11, ArrayXd a22,
                               ArrayXd a12, ArrayXd a1, ArrayXd a2) {
  int n = grid.n_nodes();
  auto fit = [&](ArrayXd& a, const char* name) {
    if (a.size() == 0) a = ArrayXd::Zero(n);
    if (a.size() != n)
      throw ValidationError(std::string("operator coefficient ") + name +
                            ": size does not match grid");
    if (!a.allFinite())
      throw ValidationError(std::string("operator coefficient ") + name +
                            ": non-finite values");
  };
  EllipticOperator op{grid, std::move(a11), std::move(a22), std::move(a12),
                      std::move(a1), std::move(a2)};
  fit(op.a11, "a11");
  fit(op.a22, "a22");
  fit(op.a12, "a12");
  fit(op.a1, "a1");
  fit(op.a2, "a2");
  return op;
}

double check_ellipticity(const EllipticOperator& op) {
  const SpaceGrid& g = op.grid;
  double worst = std::numeric_limits<double>::infinity();
  int worst_node = 0;
  for (int idx = 0; idx < g.n_nodes(); ++idx) {
    double lam;
    if (g.dim == 1) {
      lam = op.a11[idx];
    } else {
      double mean = 0.5 * (op.a11[idx] + op.a22[idx]);
      double diff = 0.5 * (op.a11[idx] - op.a22[idx]);
      lam = mean - std::sqrt(diff * diff + op.a12[idx] * op.a12[idx]);
    }
    if (lam < worst) {
      worst = lam;
      worst_node = idx;
    }
  }
  if (!(worst > 0.0))
    throw ValidationError("operator is not uniformly elliptic: smallest coefficient "
                          "eigenvalue " + std::to_string(worst) + " at " +
                          node_label(g, worst_node));
  return worst;
}

bool is_zero_operator(const EllipticOperator& op) {
  return op.a11.abs().maxCoeff() == 0.0 && op.a22.abs().maxCoeff() == 0.0 &&
         op.a12.abs().maxCoeff() == 0.0 && op.a1.abs().maxCoeff() == 0.0 &&
         op.a2.abs().maxCoeff() == 0.0;
}

SpatialField apply_operator(const EllipticOperator& op, const SpatialField& field) {
  const SpaceGrid& g = op.grid;
  require(field.grid.n_nodes() == g.n_nodes() && field.grid.dim == g.dim,
          "apply_operator: field grid does not match operator grid");
  const ArrayXd& u = field.values;
  ArrayXd out = ArrayXd::Zero(g.n_nodes());
  double hx = g.h(0);
  int nx = g.axis_nodes(0);

  // index offset helpers with clamping to one-sided stencils at the boundary;
  // interior nodes always see the centered versions
  auto d2x = [&](int i, int j) {
    int ii = std::min(std::max(i, 1), g.n_cells[0] - 1);
    return (u[g.index(ii + 1, j)] - 2.0 * u[g.index(ii, j)] + u[g.index(ii - 1, j)]) /
           (hx * hx);
  };
  auto d1x = [&](int i, int j) {
    if (i == 0) return (u[g.index(1, j)] - u[g.index(0, j)]) / hx;
    if (i == g.n_cells[0]) return (u[g.index(i, j)] - u[g.index(i - 1, j)]) / hx;
    return (u[g.index(i + 1, j)] - u[g.index(i - 1, j)]) / (2.0 * hx);
  };

  if (g.dim == 1) {
    for (int i = 0; i < nx; ++i) {
      int idx = g.index(i);
      out[idx] = op.a11[idx] * d2x(i, 0) + op.a1[idx] * d1x(i, 0);
    }
    return {g, out};
  }

  double hy = g.h(1);
  auto d2y = [&](int i, int j) {
    int jj = std::min(std::max(j, 1), g.n_cells[1] - 1);
    return (u[g.index(i, jj + 1)] - 2.0 * u[g.index(i, jj)] + u[g.index(i, jj - 1)]) /
           (hy * hy);
  };
  auto d1y = [&](int i, int j) {
    if (j == 0) return (u[g.index(i, 1)] - u[g.index(i, 0)]) / hy;
    if (j == g.n_cells[1]) return (u[g.index(i, j)] - u[g.index(i, j - 1)]) / hy;
    return (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) / (2.0 * hy);
  };
  auto dxy = [&](int i, int j) {
    int ii = std::min(std::max(i, 1), g.n_cells[0] - 1);
    int jj = std::min(std::max(j, 1), g.n_cells[1] - 1);
    return (u[g.index(ii + 1, jj + 1)] - u[g.index(ii + 1, jj - 1)] -
            u[g.index(ii - 1, jj + 1)] + u[g.index(ii - 1, jj - 1)]) /
           (4.0 * hx * hy);
  };

  for (int j = 0; j < g.axis_nodes(1); ++j)
    for (int i = 0; i < nx; ++i) {
      int idx = g.index(i, j);
      out[idx] = op.a11[idx] * d2x(i, j) + op.a22[idx] * d2y(i, j) +
                 2.0 * op.a12[idx] * dxy(i, j) + op.a1[idx] * d1x(i, j) +
                 op.a2[idx] * d1y(i, j);
    }
  return {g, out};
}

BoundaryCondition dirichlet_bc(const SpaceGrid& grid, const TimeGrid& tg,
                               const std::function<double(double, double, double)>& g) {
  BoundaryCondition bc;
  bc.kind = BoundaryCondition::Kind::Dirichlet;
  bc.grid = grid;
  bc.time_grid = tg;
  auto bnodes = grid.boundary_indices();
  bc.g.resize(tg.n_nodes(), (int)bnodes.size());
  for (int n = 0; n < tg.n_nodes(); ++n)
    for (int b = 0; b < (int)bnodes.size(); ++b)
      bc.g(n, b) = g(tg.node(n), grid.x(bnodes[b]), grid.y(bnodes[b]));
  validate_boundary(bc);
  return bc;
}

BoundaryCondition oblique_bc(const SpaceGrid& grid, const TimeGrid& tg,
                             const std::function<double(double, double, double)>& g,
                             const std::function<std::array<double, 2>(double, double)>& omega) {
  BoundaryCondition bc;
  bc.kind = BoundaryCondition::Kind::Oblique;
  bc.grid = grid;
  bc.time_grid = tg;
  auto bnodes = grid.boundary_indices();
  bc.g.resize(tg.n_nodes(), (int)bnodes.size());
  for (int n = 0; n < tg.n_nodes(); ++n)
    for (int b = 0; b < (int)bnodes.size(); ++b)
      bc.g(n, b) = g(tg.node(n), grid.x(bnodes[b]), grid.y(bnodes[b]));
  bc.omega.resize((int)bnodes.size(), 2);
  for (int b = 0; b < (int)bnodes.size(); ++b) {
    auto w = omega(grid.x(bnodes[b]), grid.y(bnodes[b]));
    bc.omega(b, 0) = w[0];
    bc.omega(b, 1) = w[1];
  }
  validate_boundary(bc);
  return bc;
}

void validate_boundary(const BoundaryCondition& bc) {
  auto bnodes = bc.grid.boundary_indices();
  require(bc.g.rows() == bc.time_grid.n_nodes() && bc.g.cols() == (int)bnodes.size(),
          "boundary data: g must be sampled on time nodes x boundary nodes");
  require(bc.g.allFinite(), "boundary data: non-finite g");
  if (bc.kind == BoundaryCondition::Kind::Oblique) {
    require(bc.omega.rows() == (int)bnodes.size() && bc.omega.cols() == 2,
            "boundary data: omega must be given per boundary node");
    for (int b = 0; b < (int)bnodes.size(); ++b) {
      auto nu = bc.grid.outward_normal(bnodes[b]);
      double dot = bc.omega(b, 0) * nu[0] + bc.omega(b, 1) * nu[1];
      if (!(dot > 0.0))
        throw ValidationError("oblique direction fails omega.nu > 0 at " +
                              node_label(bc.grid, bnodes[b]));
    }
  }
}

std::vector<BoundaryStencil> boundary_stencils(const BoundaryCondition& bc) {
  const SpaceGrid& g = bc.grid;
  auto bnodes = g.boundary_indices();
  std::vector<BoundaryStencil> rows;
  rows.reserve(bnodes.size());

  if (bc.kind == BoundaryCondition::Kind::Dirichlet) {
    for (int node : bnodes) rows.push_back({node, {{node, 1.0}}});
    return rows;
  }

  double hx = g.h(0);
  double hy = g.dim == 2 ? g.h(1) : 1.0;
  for (int b = 0; b < (int)bnodes.size(); ++b) {
    int node = bnodes[b];
    int i = g.ix(node), j = g.iy(node);
    double wx = bc.omega(b, 0), wy = bc.omega(b, 1);
    BoundaryStencil row{node, {}};
    auto add = [&](int idx, double v) {
      for (auto& [k, c] : row.coeffs)
        if (k == idx) {
          c += v;
          return;
        }
      row.coeffs.push_back({idx, v});
    };

    // x part: one-sided into the domain on x faces, centered along edges
    if (i == 0) {
      add(g.index(0, j), -wx / hx);
      add(g.index(1, j), wx / hx);
    } else if (i == g.n_cells[0]) {
      add(g.index(i, j), wx / hx);
      add(g.index(i - 1, j), -wx / hx);
    } else if (g.dim == 2 && wx != 0.0) {
      add(g.index(i + 1, j), wx / (2.0 * hx));
      add(g.index(i - 1, j), -wx / (2.0 * hx));
    }

    if (g.dim == 2) {
      if (j == 0) {
        add(g.index(i, 0), -wy / hy);
        add(g.index(i, 1), wy / hy);
      } else if (j == g.n_cells[1]) {
        add(g.index(i, j), wy / hy);
        add(g.index(i, j - 1), -wy / hy);
      } else if (wy != 0.0) {
        add(g.index(i, j + 1), wy / (2.0 * hy));
        add(g.index(i, j - 1), -wy / (2.0 * hy));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

SpatialField enforce_boundary(const BoundaryCondition& bc, const SpatialField& field,
                              int t_index) {
  const SpaceGrid& g = bc.grid;
  require(field.grid.n_nodes() == g.n_nodes(), "enforce_boundary: grid mismatch");
  require(t_index >= 0 && t_index < bc.time_grid.n_nodes(),
          "enforce_boundary: time index out of range");
  SpatialField out = field;
  auto bnodes = g.boundary_indices();

  if (bc.kind == BoundaryCondition::Kind::Dirichlet) {
    for (int b = 0; b < (int)bnodes.size(); ++b)
      out.values[bnodes[b]] = bc.g(t_index, b);
    return out;
  }

  auto rows = boundary_stencils(bc);
  for (int b = 0; b < (int)bnodes.size(); ++b) {
    const BoundaryStencil& row = rows[b];
    double diag = 0.0, rest = 0.0;
    for (const auto& [idx, c] : row.coeffs) {
      if (idx == row.node)
        diag += c;
      else
        rest += c * field.values[idx];
    }
    require(diag != 0.0, "enforce_boundary: degenerate oblique stencil at " +
                             node_label(g, row.node));
    out.values[row.node] = (bc.g(t_index, b) - rest) / diag;
  }
  return out;
}

std::vector<Eigen::Triplet<double>> operator_triplets(const EllipticOperator& op) {
  const SpaceGrid& g = op.grid;
  std::vector<Eigen::Triplet<double>> trips;
  double hx = g.h(0);

  if (g.dim == 1) {
    for (int i = 1; i < g.n_cells[0]; ++i) {
      int idx = g.index(i);
      double da = op.a11[idx] / (hx * hx);
      double dr = op.a1[idx] / (2.0 * hx);
      trips.emplace_back(idx, g.index(i - 1), da - dr);
      trips.emplace_back(idx, idx, -2.0 * da);
      trips.emplace_back(idx, g.index(i + 1), da + dr);
    }
    return trips;
  }

  double hy = g.h(1);
  for (int j = 1; j < g.n_cells[1]; ++j)
    for (int i = 1; i < g.n_cells[0]; ++i) {
      int idx = g.index(i, j);
      double dax = op.a11[idx] / (hx * hx);
      double day = op.a22[idx] / (hy * hy);
      double crs = 2.0 * op.a12[idx] / (4.0 * hx * hy);
      double drx = op.a1[idx] / (2.0 * hx);
      double dry = op.a2[idx] / (2.0 * hy);
      trips.emplace_back(idx, g.index(i - 1, j), dax - drx);
      trips.emplace_back(idx, g.index(i + 1, j), dax + drx);
      trips.emplace_back(idx, g.index(i, j - 1), day - dry);
      trips.emplace_back(idx, g.index(i, j + 1), day + dry);
      trips.emplace_back(idx, idx, -2.0 * dax - 2.0 * day);
      trips.emplace_back(idx, g.index(i + 1, j + 1), crs);
      trips.emplace_back(idx, g.index(i - 1, j - 1), crs);
      trips.emplace_back(idx, g.index(i + 1, j - 1), -crs);
      trips.emplace_back(idx, g.index(i - 1, j + 1), -crs);
    }
  return trips;
}

}  // namespace fracdiff
