#pragma once

#include <Eigen/SparseCore>

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "fracdiff/types.hpp"

namespace fracdiff {

// Axis-aligned grid on [0, Lx] (1D) or [0, Lx] x [0, Ly] (2D), node-centered
// with cells+1 nodes per axis. Node indices are flattened x-fastest.
struct SpaceGrid {
  int dim = 1;
  std::array<double, 2> extent{1.0, 1.0};
  std::array<int, 2> n_cells{1, 1};

  double h(int axis) const { return extent[axis] / n_cells[axis]; }
  int axis_nodes(int axis) const { return n_cells[axis] + 1; }
  int n_nodes() const { return dim == 1 ? axis_nodes(0) : axis_nodes(0) * axis_nodes(1); }
  int index(int i, int j = 0) const { return j * axis_nodes(0) + i; }
  int ix(int idx) const { return idx % axis_nodes(0); }
  int iy(int idx) const { return idx / axis_nodes(0); }
  double x(int idx) const { return ix(idx) * h(0); }
  double y(int idx) const { return dim == 1 ? 0.0 : iy(idx) * h(1); }

  bool on_boundary(int idx) const;
  bool is_corner(int idx) const;
  std::vector<int> interior_indices() const;
  std::vector<int> boundary_indices() const;
  // outward unit normal at a boundary node; corners get the averaged normal
  std::array<double, 2> outward_normal(int idx) const;
};

SpaceGrid make_grid_1d(double length, int cells);
SpaceGrid make_grid_2d(double lx, double ly, int cells_x, int cells_y);
void validate_space_grid(const SpaceGrid& grid);

struct SpatialField {
  SpaceGrid grid;
  ArrayXd values;
};

SpatialField make_field(const SpaceGrid& grid, double value);
SpatialField sample_field(const SpaceGrid& grid,
                          const std::function<double(double, double)>& fn);
void validate_field(const SpatialField& field);

// Second-order operator sum_ij a_ij d2/dxi dxj + sum_j a_j d/dxj with
// node-wise coefficients. In 1D only a11 and a1 participate.
struct EllipticOperator {
  SpaceGrid grid;
  ArrayXd a11;
  ArrayXd a22;
  ArrayXd a12;
  ArrayXd a1;
  ArrayXd a2;
};

EllipticOperator laplace_operator(const SpaceGrid& grid, double diffusion = 1.0);
EllipticOperator make_operator(const SpaceGrid& grid, ArrayXd a11, ArrayXd a22,
                               ArrayXd a12, ArrayXd a1, ArrayXd a2);

// smallest eigenvalue of the coefficient matrix over all nodes; throws when
// the operator fails uniform ellipticity, naming the worst node
double check_ellipticity(const EllipticOperator& op);
// true when every coefficient field vanishes identically (no spatial
// coupling); such operators are accepted by the solvers and skip the
// ellipticity gate
bool is_zero_operator(const EllipticOperator& op);

SpatialField apply_operator(const EllipticOperator& op, const SpatialField& field);

struct BoundaryCondition {
  enum class Kind { Dirichlet, Oblique };
  Kind kind = Kind::Dirichlet;
  SpaceGrid grid;
  TimeGrid time_grid;
  // rows = time nodes, cols = boundary nodes in boundary_indices() order
  MatrixXd g;
  // oblique direction per boundary node (cols: component), Oblique only
  MatrixXd omega;
};

BoundaryCondition dirichlet_bc(const SpaceGrid& grid, const TimeGrid& tg,
                               const std::function<double(double, double, double)>& g);
BoundaryCondition oblique_bc(const SpaceGrid& grid, const TimeGrid& tg,
                             const std::function<double(double, double, double)>& g,
                             const std::function<std::array<double, 2>(double, double)>& omega);
void validate_boundary(const BoundaryCondition& bc);

// one matrix row enforcing the condition at a boundary node:
// sum_k coeff_k u_k = g(t, node)
struct BoundaryStencil {
  int node = 0;
  std::vector<std::pair<int, double>> coeffs;
};

std::vector<BoundaryStencil> boundary_stencils(const BoundaryCondition& bc);

// Dirichlet: overwrite boundary values with g(t_n). Oblique: solve each
// boundary stencil for its boundary node given current neighbor values.
SpatialField enforce_boundary(const BoundaryCondition& bc, const SpatialField& field,
                              int t_index);

// interior-row triplets of the discrete operator (row, col, value); boundary
// rows come from boundary_stencils
std::vector<Eigen::Triplet<double>> operator_triplets(const EllipticOperator& op);

}  // namespace fracdiff
