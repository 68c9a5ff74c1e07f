#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icotrack/vec3.hpp"

namespace icotrack {

// Icosahedral sampling grid at resolution r.
//
// The sphere is covered by 5 congruent rhombic charts, each unrolled to a
// 2^r x 2^(r+1) block of hexagonal cells; the blocks are stacked vertically
// in the planar representation.  Chart k spans the strip between meridians
// 72k and 72(k+1) degrees, from the north pole down to the south pole:
//
//   lattice (i,j), i in [0,2^r], j in [0,2^(r+1)]
//     (0,0)        = north pole          (2^r,0)       = upper vertex U_k
//     (0,2^r)      = upper vertex U_k+1  (2^r,2^r)     = lower vertex L_k
//     (0,2^(r+1))  = lower vertex L_k+1  (2^r,2^(r+1)) = south pole
//
// Each unit square of the lattice is split along its anti-diagonal, so every
// interior point has the six neighbors (+-1,0), (0,+-1), (+1,-1), (-1,+1).
// Chart k owns the lattice points with i in [1,2^r], j in [0,2^(r+1)-1];
// the remaining boundary points belong to chart k+1 and the two poles are
// not planar cells at all.  Cell (k,row,col) sits at lattice (row+1, col).
//
// The 10 icosahedron vertices that are cells have valence 5; the sixth tap
// slot of their hexagonal stencil is a phantom position with no sphere point
// behind it.

inline constexpr int kTapPhantom = -1;
inline constexpr int kTapPoleN = -2;
inline constexpr int kTapPoleS = -3;

// Hexagonal stencil offsets in (row, col) order, counterclockwise.
inline constexpr int kTapDr[6] = {+1, 0, -1, -1, 0, +1};
inline constexpr int kTapDc[6] = {0, +1, +1, 0, -1, -1};

// One position of the padded planar layout.  kCell entries copy a cell value;
// for 6-orientation fields the copy reads orientation (o + shift) mod 6 of the
// source cell (charts meet at a 60-degree frame rotation, so padded copies
// re-index the orientation channels).  kPoleN/kPoleS positions take the mean
// of the pole's five neighbor cells (over all orientations for 6-orientation
// fields), and kZero positions are structural zeros.
struct PadEntry {
  enum Kind : uint8_t { kCell, kPoleN, kPoleS, kZero };
  Kind kind = kZero;
  int32_t src = -1;
  uint8_t shift = 0;
};

struct IcoGrid {
  int r = 0;
  int H = 0;  // 2^r rows per chart
  int W = 0;  // 2^(r+1) cols per chart
  int n_cells = 0;

  std::vector<Vec3> coords;                     // unit vector per cell
  std::vector<uint8_t> is_vertex;               // 1 for the 10 vertex cells
  std::vector<std::array<int32_t, 6>> tap_nbr;  // tap-ordered neighbors (kTap* sentinels)
  std::array<std::array<int32_t, 5>, 2> pole_nbr{};  // cells adjacent to N / S

  std::vector<PadEntry> pad;  // 5*(H+2) x (W+2), row-major

  int rows() const { return 5 * H; }
  int cols() const { return W; }
  int padded_rows() const { return 5 * (H + 2); }
  int padded_cols() const { return W + 2; }

  int cell_index(int chart, int row, int col) const { return (chart * H + row) * W + col; }
  int chart_of(int cell) const { return cell / (H * W); }

  // Planar neighbors only (5 for vertex and pole-adjacent cells, else 6).
  std::vector<int> neighbor_cells(int cell) const;

  // Source cell copied into a padded position, or -1 where the position is a
  // pole mean or a structural zero.
  int pad_source(int padded_index) const {
    const PadEntry& e = pad[padded_index];
    return e.kind == PadEntry::kCell ? e.src : -1;
  }
};

IcoGrid build_grid(int r);

// Pads one scalar field into the 5*(H+2) x (W+2) layout.
std::vector<double> planar_pad(const std::vector<double>& field, const IcoGrid& g);

// Replaces each vertex cell by the arithmetic mean of its 5 neighbors.
std::vector<double> vertex_fill(std::vector<double> field, const IcoGrid& g);

// Cell whose center maximizes coords . u; ties break toward the lowest index.
// |u| must be within 1e-3 of 1 (normalized internally), else rejected.
int nearest_cell(const IcoGrid& g, Vec3 u);

void grid_dump_csv(const IcoGrid& g, const std::string& path);

// The 60 rotational symmetries of the icosahedron together with the induced
// cell permutations, on the build grid and on every coarser level down to 1.
//
// perm[g][level_idx][i] is the cell j with coords[j] = rot[g] * coords[i];
// level_idx 0 is resolution r, 1 is r-1, ... down to resolution 1.  The 50
// rotations that move the poles map two vertex cells onto pole positions;
// those two images are matched with the two cells that sit where the poles
// came from (vertex cells again), so each perm stays a bijection that maps
// vertex cells to vertex cells.  Coordinates match exactly for every
// non-vertex cell.
struct RotationSet {
  int top_r = 0;
  std::vector<Mat3> rot;
  std::vector<std::vector<std::vector<int32_t>>> perm;

  const std::vector<int32_t>& cell_perm(int g) const { return perm[g][0]; }
  const std::vector<int32_t>& level_perm(int g, int level) const { return perm[g][top_r - level]; }
  // True if the rotation maps the polar axis pair onto itself (10 elements).
  bool preserves_poles(int g) const;
};

RotationSet rotation_set(const IcoGrid& g);

// out[perm[i]] = f[i]; the rotated field evaluated at g*x equals f at x.
template <typename T>
std::vector<T> apply_perm(const std::vector<T>& f, const std::vector<int32_t>& perm) {
  std::vector<T> out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[perm[i]] = f[i];
  return out;
}

}  // namespace icotrack
