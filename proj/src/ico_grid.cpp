#include "icotrack/ico_grid.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace icotrack {
namespace {

constexpr int kUnknown = -9;

void check(bool ok, const char* what) {
  if (!ok) throw std::logic_error(std::string("ico_grid: ") + what);
}

// Canonical icosahedron, poles on +-z.  Point ids: 0 = N, 1 = S,
// 2+k = upper ring vertex U_k (longitude 72k), 7+k = lower ring vertex L_k
// (longitude 72k+36).
std::vector<Vec3> base_points() {
  std::vector<Vec3> p(12);
  p[0] = {0, 0, 1};
  p[1] = {0, 0, -1};
  const double rho = 2.0 / std::sqrt(5.0), zz = 1.0 / std::sqrt(5.0);
  for (int k = 0; k < 5; ++k) {
    double au = 2.0 * M_PI * k / 5.0;
    double al = 2.0 * M_PI * k / 5.0 + M_PI / 5.0;
    p[2 + k] = {rho * std::cos(au), rho * std::sin(au), zz};
    p[7 + k] = {rho * std::cos(al), rho * std::sin(al), -zz};
  }
  return p;
}

std::vector<std::array<int, 3>> base_faces() {
  std::vector<std::array<int, 3>> f;
  for (int k = 0; k < 5; ++k) {
    int u = 2 + k, u1 = 2 + (k + 1) % 5, l = 7 + k, l1 = 7 + (k + 1) % 5;
    f.push_back({0, u, u1});
    f.push_back({u, l, u1});
    f.push_back({u1, l, l1});
    f.push_back({1, l1, l});
  }
  return f;
}

struct GridBuilder {
  int r, P, Q;  // final lattice: i in [0,P], j in [0,Q]
  std::vector<Vec3> pos;                     // per point
  std::array<std::vector<int32_t>, 5> lat;   // point id per lattice slot
  std::vector<std::vector<int32_t>> adj;     // sorted neighbor lists per point
  std::vector<int32_t> point_to_cell;
  std::vector<std::array<int32_t, 3>> cell_owner;      // (chart, i, j)
  std::vector<std::array<int32_t, 6>> cell_tap_pid;    // tap targets as point ids

  int32_t& at(int k, int i, int j, int q) { return lat[k][i * (q + 1) + j]; }
  int32_t at(int k, int i, int j) const { return lat[k][i * (Q + 1) + j]; }

  void subdivide() {
    pos = base_points();
    int p = 1, q = 2;
    for (int k = 0; k < 5; ++k) {
      lat[k].assign((p + 1) * (q + 1), -1);
      at(k, 0, 0, q) = 0;
      at(k, 1, 0, q) = 2 + k;
      at(k, 0, 1, q) = 2 + (k + 1) % 5;
      at(k, 1, 1, q) = 7 + k;
      at(k, 0, 2, q) = 7 + (k + 1) % 5;
      at(k, 1, 2, q) = 1;
    }
    std::unordered_map<uint64_t, int32_t> midpoint;
    auto mid = [&](int32_t a, int32_t b) {
      uint64_t key = (uint64_t(std::min(a, b)) << 32) | uint64_t(std::max(a, b));
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      int32_t id = int32_t(pos.size());
      pos.push_back((pos[a] + pos[b]).normalized());
      midpoint.emplace(key, id);
      return id;
    };
    for (int lvl = 1; lvl <= r; ++lvl) {
      int np = 2 * p, nq = 2 * q;
      for (int k = 0; k < 5; ++k) {
        std::vector<int32_t> next((np + 1) * (nq + 1), -1);
        auto prev = [&](int i, int j) { return lat[k][i * (q + 1) + j]; };
        for (int i = 0; i <= np; ++i)
          for (int j = 0; j <= nq; ++j) {
            int32_t id;
            if (i % 2 == 0 && j % 2 == 0)
              id = prev(i / 2, j / 2);
            else if (i % 2 == 1 && j % 2 == 0)
              id = mid(prev((i - 1) / 2, j / 2), prev((i + 1) / 2, j / 2));
            else if (i % 2 == 0 && j % 2 == 1)
              id = mid(prev(i / 2, (j - 1) / 2), prev(i / 2, (j + 1) / 2));
            else  // cell centers sit on the anti-diagonal edge
              id = mid(prev((i + 1) / 2, (j - 1) / 2), prev((i - 1) / 2, (j + 1) / 2));
            next[i * (nq + 1) + j] = id;
          }
        lat[k] = std::move(next);
      }
      p = np;
      q = nq;
    }
    check(p == P && q == Q, "subdivision level mismatch");
  }

  void build_adjacency() {
    adj.assign(pos.size(), {});
    for (int k = 0; k < 5; ++k)
      for (int i = 0; i <= P; ++i)
        for (int j = 0; j <= Q; ++j)
          for (int t = 0; t < 6; ++t) {
            int ni = i + kTapDr[t], nj = j + kTapDc[t];
            if (ni < 0 || ni > P || nj < 0 || nj > Q) continue;
            adj[at(k, i, j)].push_back(at(k, ni, nj));
          }
    for (auto& a : adj) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    for (size_t i = 0; i < adj.size(); ++i) {
      size_t want = (i < 12) ? 5 : 6;
      check(adj[i].size() == want, "point valence");
    }
  }

  bool adjacent(int32_t a, int32_t b) const {
    return std::binary_search(adj[a].begin(), adj[a].end(), b);
  }

  // The two triangles flanking edge (a,b) give exactly two common neighbors;
  // returns the one that is not `exclude`.
  int32_t other_common_neighbor(int32_t a, int32_t b, int32_t exclude) const {
    int32_t found = kTapPhantom;
    for (int32_t c : adj[a]) {
      if (c == exclude || !adjacent(b, c)) continue;
      check(found == kTapPhantom, "more than one ghost candidate");
      found = c;
    }
    check(found != kTapPhantom, "missing ghost point");
    return found;
  }

  // Resolves an extended-lattice position of chart k to a point id.  The
  // extension covers one ghost row below the chart (i = P+1, inside the next
  // chart clockwise) and one ghost column to its left (j = -1); positions
  // further out return kUnknown, corner slots with no sphere point behind
  // them return kTapPhantom.
  int resolve(int k, int i, int j) const {
    if (i >= 0 && i <= P && j >= 0 && j <= Q) return at(k, i, j);
    if (i == P + 1 && j >= 0 && j <= Q - 1)
      return other_common_neighbor(at(k, P, j), at(k, P, j + 1), at(k, P - 1, j + 1));
    if (j == -1 && i >= 1 && i <= P)
      return other_common_neighbor(at(k, i - 1, 0), at(k, i, 0), at(k, i - 1, 1));
    if ((i == P + 1 && (j == -1 || j == Q)) || (j == -1 && i == 0)) return kTapPhantom;
    return kUnknown;
  }
};

// Aligns the padding chart's frame with the source cell's own frame using the
// probe taps that point back into the source lattice (the flat extension is
// only trustworthy there; probes that run past a vertex cone may wrap).
int match_pad_shift(const std::array<int32_t, 6>& own_pid,
                    const std::array<int, 6>& ext_pid,
                    const std::array<bool, 6>& ext_valid) {
  int found = -1;
  for (int d = 0; d < 6; ++d) {
    bool ok = true;
    int matched = 0;
    for (int t = 0; t < 6; ++t) {
      if (!ext_valid[t]) continue;
      if (own_pid[(t + d) % 6] == ext_pid[t])
        ++matched;
      else {
        ok = false;
        break;
      }
    }
    if (ok && matched >= 1) {
      check(found == -1, "ambiguous pad orientation shift");
      found = d;
    }
  }
  check(found >= 0, "no pad orientation shift matches");
  return found;
}

}  // namespace

IcoGrid build_grid(int r) {
  if (r < 1) throw std::invalid_argument("build_grid: resolution must be >= 1");
  IcoGrid g;
  g.r = r;
  g.H = 1 << r;
  g.W = 1 << (r + 1);
  g.n_cells = 5 * g.H * g.W;

  GridBuilder b;
  b.r = r;
  b.P = g.H;
  b.Q = g.W;
  b.subdivide();
  check(int(b.pos.size()) == g.n_cells + 2, "point count");
  b.build_adjacency();

  // Cells: chart k owns lattice i in [1,P], j in [0,Q-1].
  b.point_to_cell.assign(b.pos.size(), -1);
  b.cell_owner.resize(g.n_cells);
  g.coords.resize(g.n_cells);
  g.is_vertex.assign(g.n_cells, 0);
  for (int k = 0; k < 5; ++k)
    for (int i = 1; i <= b.P; ++i)
      for (int j = 0; j <= b.Q - 1; ++j) {
        int32_t pid = b.at(k, i, j);
        int cell = g.cell_index(k, i - 1, j);
        check(b.point_to_cell[pid] == -1, "point owned twice");
        check(pid >= 2, "pole claimed as cell");
        b.point_to_cell[pid] = cell;
        b.cell_owner[cell] = {k, i, j};
        g.coords[cell] = b.pos[pid];
        g.is_vertex[cell] = pid < 12 ? 1 : 0;
      }
  for (size_t pid = 2; pid < b.pos.size(); ++pid)
    check(b.point_to_cell[pid] >= 0, "point not owned");

  // Tap-ordered neighbors.  Around a vertex cell the five faces of its cone
  // unroll into six lattice sectors, so the neighbor on the chart-boundary
  // edge resolves twice; the duplicate slot is the phantom.
  b.cell_tap_pid.resize(g.n_cells);
  g.tap_nbr.resize(g.n_cells);
  for (int c = 0; c < g.n_cells; ++c) {
    auto [k, i, j] = b.cell_owner[c];
    int phantoms = 0;
    for (int t = 0; t < 6; ++t) {
      int pid = b.resolve(k, i + kTapDr[t], j + kTapDc[t]);
      check(pid != kUnknown, "cell tap outside extended lattice");
      for (int s = 0; s < t; ++s)
        if (pid >= 0 && b.cell_tap_pid[c][s] == pid) pid = kTapPhantom;
      b.cell_tap_pid[c][t] = pid;
      if (pid == kTapPhantom) {
        ++phantoms;
        g.tap_nbr[c][t] = kTapPhantom;
      } else if (pid == 0)
        g.tap_nbr[c][t] = kTapPoleN;
      else if (pid == 1)
        g.tap_nbr[c][t] = kTapPoleS;
      else
        g.tap_nbr[c][t] = b.point_to_cell[pid];
    }
    check(phantoms == (g.is_vertex[c] ? 1 : 0), "phantom tap placement");
  }
  for (int pole = 0; pole < 2; ++pole) {
    check(b.adj[pole].size() == 5, "pole valence");
    for (int n = 0; n < 5; ++n) g.pole_nbr[pole][n] = b.point_to_cell[b.adj[pole][n]];
  }

  // Padded layout.
  g.pad.assign(size_t(g.padded_rows()) * g.padded_cols(), PadEntry{});
  for (int k = 0; k < 5; ++k)
    for (int pi = 0; pi <= b.P + 1; ++pi)
      for (int pj = 0; pj <= b.Q + 1; ++pj) {
        PadEntry e;
        int i = pi, j = pj - 1;
        if (pi >= 1 && pi <= b.P && pj >= 1 && pj <= b.Q) {
          e = {PadEntry::kCell, g.cell_index(k, pi - 1, pj - 1), 0};
        } else {
          int pid = b.resolve(k, i, j);
          check(pid != kUnknown, "pad position unresolvable");
          if (pid == kTapPhantom)
            e = {PadEntry::kZero, -1, 0};
          else if (pid == 0)
            e = {PadEntry::kPoleN, -1, 0};
          else if (pid == 1)
            e = {PadEntry::kPoleS, -1, 0};
          else {
            int cell = b.point_to_cell[pid];
            if (g.is_vertex[cell]) {
              // Vertex cells are isotropic across orientations once filled,
              // so no shift applies (and none is well defined at valence 5).
              e = {PadEntry::kCell, cell, 0};
            } else {
              std::array<int, 6> ext{};
              std::array<bool, 6> valid{};
              for (int t = 0; t < 6; ++t) {
                int ti = i + kTapDr[t], tj = j + kTapDc[t];
                valid[t] = ti >= 0 && ti <= b.P && tj >= 0 && tj <= b.Q;
                ext[t] = valid[t] ? b.at(k, ti, tj) : kUnknown;
              }
              e = {PadEntry::kCell, cell,
                   uint8_t(match_pad_shift(b.cell_tap_pid[cell], ext, valid))};
            }
          }
        }
        g.pad[(size_t(k) * (b.P + 2) + pi) * (b.Q + 2) + pj] = e;
      }
  return g;
}

std::vector<int> IcoGrid::neighbor_cells(int cell) const {
  std::vector<int> out;
  out.reserve(6);
  for (int t = 0; t < 6; ++t)
    if (tap_nbr[cell][t] >= 0) out.push_back(tap_nbr[cell][t]);
  return out;
}

std::vector<double> planar_pad(const std::vector<double>& field, const IcoGrid& g) {
  if (int(field.size()) != g.n_cells)
    throw std::invalid_argument("planar_pad: field size does not match grid");
  std::vector<double> out(g.pad.size(), 0.0);
  for (size_t p = 0; p < g.pad.size(); ++p) {
    const PadEntry& e = g.pad[p];
    switch (e.kind) {
      case PadEntry::kCell:
        out[p] = field[e.src];
        break;
      case PadEntry::kPoleN:
      case PadEntry::kPoleS: {
        const auto& nb = g.pole_nbr[e.kind == PadEntry::kPoleN ? 0 : 1];
        double s = 0;
        for (int n : nb) s += field[n];
        out[p] = s / 5.0;
        break;
      }
      case PadEntry::kZero:
        break;
    }
  }
  return out;
}

std::vector<double> vertex_fill(std::vector<double> field, const IcoGrid& g) {
  if (int(field.size()) != g.n_cells)
    throw std::invalid_argument("vertex_fill: field size does not match grid");
  std::vector<double> out = field;
  for (int c = 0; c < g.n_cells; ++c) {
    if (!g.is_vertex[c]) continue;
    double s = 0;
    for (int t = 0; t < 6; ++t)
      if (g.tap_nbr[c][t] >= 0) s += field[g.tap_nbr[c][t]];
    out[c] = s / 5.0;
  }
  return out;
}

int nearest_cell(const IcoGrid& g, Vec3 u) {
  double n = u.norm();
  if (std::abs(n - 1.0) > 1e-3)
    throw std::invalid_argument("nearest_cell: direction is not a unit vector");
  if (std::abs(n - 1.0) > 1e-6) {
    std::fprintf(stderr, "icotrack: nearest_cell normalizing input (|u| = %.8f)\n", n);
  }
  u = u.normalized();
  int best = 0;
  double best_dot = g.coords[0].dot(u);
  for (int c = 1; c < g.n_cells; ++c) {
    double d = g.coords[c].dot(u);
    if (d > best_dot) {
      best_dot = d;
      best = c;
    }
  }
  return best;
}

void grid_dump_csv(const IcoGrid& g, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("grid_dump_csv: cannot open " + path);
  std::fprintf(f, "cell_index,x,y,z,is_vertex\n");
  for (int c = 0; c < g.n_cells; ++c)
    std::fprintf(f, "%d,%.17g,%.17g,%.17g,%d\n", c, g.coords[c].x, g.coords[c].y,
                 g.coords[c].z, int(g.is_vertex[c]));
  std::fclose(f);
}

namespace {

// Coarse coordinate lookup with 1e-6 matching tolerance.
struct CoordIndex {
  static constexpr double kBucket = 1e-3;
  std::unordered_map<uint64_t, std::vector<int32_t>> buckets;
  const std::vector<Vec3>* pts = nullptr;

  static uint64_t key(int64_t a, int64_t b, int64_t c) {
    uint64_t h = 1469598103934665603ULL;
    for (int64_t v : {a, b, c}) {
      h ^= uint64_t(v) + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return h;
  }

  explicit CoordIndex(const std::vector<Vec3>& p) : pts(&p) {
    for (size_t i = 0; i < p.size(); ++i) {
      buckets[key(int64_t(std::floor(p[i].x / kBucket)), int64_t(std::floor(p[i].y / kBucket)),
                  int64_t(std::floor(p[i].z / kBucket)))]
          .push_back(int32_t(i));
    }
  }

  int find(const Vec3& q, double tol) const {
    int64_t bx = int64_t(std::floor(q.x / kBucket));
    int64_t by = int64_t(std::floor(q.y / kBucket));
    int64_t bz = int64_t(std::floor(q.z / kBucket));
    for (int64_t dx = -1; dx <= 1; ++dx)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dz = -1; dz <= 1; ++dz) {
          auto it = buckets.find(key(bx + dx, by + dy, bz + dz));
          if (it == buckets.end()) continue;
          for (int32_t i : it->second) {
            const Vec3& p = (*pts)[i];
            if (std::abs(p.x - q.x) <= tol && std::abs(p.y - q.y) <= tol &&
                std::abs(p.z - q.z) <= tol)
              return i;
          }
        }
    return -1;
  }
};

std::vector<int32_t> match_permutation(const IcoGrid& g, const Mat3& rot) {
  CoordIndex index(g.coords);
  const double tol = 1e-6;
  std::vector<int32_t> perm(g.n_cells, -1);
  std::vector<int32_t> to_pole;  // cells whose image is a pole
  for (int c = 0; c < g.n_cells; ++c) {
    Vec3 q = rot.apply(g.coords[c]);
    int m = index.find(q, tol);
    if (m >= 0) {
      perm[c] = m;
      continue;
    }
    if (std::abs(std::abs(q.z) - 1.0) < tol) {
      to_pole.push_back(c);
      continue;
    }
    throw std::logic_error("rotation_set: rotated cell matches no grid point");
  }
  // Cells mapped onto a pole pair up with the cells the poles map onto.
  for (int32_t c : to_pole) {
    check(g.is_vertex[c], "non-vertex cell mapped to a pole");
    bool north = rot.apply(g.coords[c]).z > 0;
    Vec3 pole{0, 0, north ? 1.0 : -1.0};
    int target = index.find(rot.apply(pole), tol);
    check(target >= 0 && g.is_vertex[target], "pole image is not a vertex cell");
    perm[c] = target;
  }
  std::vector<char> seen(g.n_cells, 0);
  for (int c = 0; c < g.n_cells; ++c) {
    check(perm[c] >= 0 && !seen[perm[c]], "cell permutation is not a bijection");
    seen[perm[c]] = 1;
  }
  return perm;
}

}  // namespace

bool RotationSet::preserves_poles(int g) const {
  Vec3 img = rot[g].apply({0, 0, 1});
  return std::abs(std::abs(img.z) - 1.0) < 1e-6;
}

RotationSet rotation_set(const IcoGrid& g) {
  RotationSet rs;
  rs.top_r = g.r;
  std::vector<Vec3> verts = base_points();
  auto faces = base_faces();

  std::vector<Vec3> axes5, axes3, axes2;
  auto add_axis = [](std::vector<Vec3>& axes, const Vec3& a) {
    for (const Vec3& b : axes)
      if ((a - b).norm() < 1e-9 || (a + b).norm() < 1e-9) return;
    axes.push_back(a);
  };
  for (const Vec3& v : verts) add_axis(axes5, v.normalized());
  for (const auto& f : faces)
    add_axis(axes3, (verts[f[0]] + verts[f[1]] + verts[f[2]]).normalized());
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e)
      add_axis(axes2, (verts[f[e]] + verts[f[(e + 1) % 3]]).normalized());
  check(axes5.size() == 6 && axes3.size() == 10 && axes2.size() == 15, "axis counts");

  rs.rot.push_back(Mat3::identity());
  for (const Vec3& a : axes5)
    for (int k = 1; k <= 4; ++k) rs.rot.push_back(Mat3::axis_angle(a, 2.0 * M_PI * k / 5.0));
  for (const Vec3& a : axes3)
    for (int k = 1; k <= 2; ++k) rs.rot.push_back(Mat3::axis_angle(a, 2.0 * M_PI * k / 3.0));
  for (const Vec3& a : axes2) rs.rot.push_back(Mat3::axis_angle(a, M_PI));
  check(rs.rot.size() == 60, "rotation count");
  for (size_t i = 0; i < rs.rot.size(); ++i)
    for (size_t j = i + 1; j < rs.rot.size(); ++j)
      check(rs.rot[i].max_abs_diff(rs.rot[j]) > 1e-6, "duplicate rotation");

  rs.perm.resize(60);
  for (int level = g.r; level >= 1; --level) {
    IcoGrid gl = (level == g.r) ? g : build_grid(level);
    for (int i = 0; i < 60; ++i) rs.perm[i].push_back(match_permutation(gl, rs.rot[i]));
  }
  return rs;
}

}  // namespace icotrack
