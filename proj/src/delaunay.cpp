#include "orchard/delaunay.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>

#include "orchard/error.hpp"

namespace orchard {

double tetrahedron_volume(const Vector3d& a, const Vector3d& b,
                          const Vector3d& c, const Vector3d& d) {
  return std::abs((b - a).cross(c - a).dot(d - a)) / 6.0;
}

void circumsphere(const Vector3d& a, const Vector3d& b, const Vector3d& c,
                  const Vector3d& d, Vector3d& center, double& radius) {
  // 2 (p_i - a) . x = |p_i|^2 - |a|^2 for i in {b, c, d}
  Matrix3d m;
  m.row(0) = 2.0 * (b - a).transpose();
  m.row(1) = 2.0 * (c - a).transpose();
  m.row(2) = 2.0 * (d - a).transpose();
  Vector3d rhs(b.squaredNorm() - a.squaredNorm(),
               c.squaredNorm() - a.squaredNorm(),
               d.squaredNorm() - a.squaredNorm());
  const double det = m.determinant();
  const double scale = m.cwiseAbs().maxCoeff();
  if (std::abs(det) < 1e-14 * scale * scale * scale) {
    center = (a + b + c + d) / 4.0;
    radius = std::numeric_limits<double>::infinity();
    return;
  }
  center = m.partialPivLu().solve(rhs);
  radius = (a - center).norm();
}

namespace {

using i128 = __int128;

struct QPoint {
  std::int64_t x, y, z;
};

// Exact sign of det(b-a, c-a, d-a) on lattice coordinates. Coordinates
// live on a 2^21 grid, so every term fits comfortably in 128 bits.
int orient_sign(const QPoint& a, const QPoint& b, const QPoint& c,
                const QPoint& d) {
  const i128 bx = b.x - a.x, by = b.y - a.y, bz = b.z - a.z;
  const i128 cx = c.x - a.x, cy = c.y - a.y, cz = c.z - a.z;
  const i128 dx = d.x - a.x, dy = d.y - a.y, dz = d.z - a.z;
  const i128 det = bx * (cy * dz - cz * dy) - by * (cx * dz - cz * dx) +
                   bz * (cx * dy - cy * dx);
  return det > 0 ? 1 : (det < 0 ? -1 : 0);
}

// Exact sign of the translated insphere determinant with rows (v_i - p,
// |v_i - p|^2). For a positively oriented (a,b,c,d) a strictly interior
// point makes the determinant negative.
int insphere_sign(const QPoint& a, const QPoint& b, const QPoint& c,
                  const QPoint& d, const QPoint& p) {
  const i128 r[4][3] = {{a.x - p.x, a.y - p.y, a.z - p.z},
                        {b.x - p.x, b.y - p.y, b.z - p.z},
                        {c.x - p.x, c.y - p.y, c.z - p.z},
                        {d.x - p.x, d.y - p.y, d.z - p.z}};
  i128 w[4];
  for (int i = 0; i < 4; ++i) {
    w[i] = r[i][0] * r[i][0] + r[i][1] * r[i][1] + r[i][2] * r[i][2];
  }
  auto minor3 = [&](int skip) {
    i128 m[3][3];
    int row = 0;
    for (int i = 0; i < 4; ++i) {
      if (i == skip) continue;
      m[row][0] = r[i][0];
      m[row][1] = r[i][1];
      m[row][2] = r[i][2];
      ++row;
    }
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  // Expansion along the weight column.
  i128 det = 0;
  int sign = -1;  // (-1)^(0+3)
  for (int i = 0; i < 4; ++i) {
    det += sign * w[i] * minor3(i);
    sign = -sign;
  }
  return det > 0 ? 1 : (det < 0 ? -1 : 0);
}

struct Tet {
  std::array<int, 4> v;
  std::array<int, 4> n;  // neighbor opposite v[i]
  bool alive = false;
};

// Bowyer-Watson on snapped coordinates with exact integer predicates and
// one symbolic vertex at infinity. Conflict ties break toward "keep", and
// cavities are pruned to stay star-shaped, so the complex remains a
// watertight tessellation of the snapped hull after every insertion.
class Builder {
 public:
  explicit Builder(const std::vector<Vector3d>& points) : pts_(points) {
    const int n = static_cast<int>(points.size());
    if (n < 4) {
      throw Error(ErrorCode::degenerate_input,
                  "delaunay: need at least 4 points");
    }
    Vector3d lo = points[0], hi = points[0];
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    scale_ = std::max((hi - lo).maxCoeff(), 1e-12);
    const double step = scale_ / double(1 << 21);
    qpts_.resize(n);
    for (int i = 0; i < n; ++i) {
      const Vector3d q = (points[i] - lo) / step;
      qpts_[i] = {static_cast<std::int64_t>(std::llround(q.x())),
                  static_cast<std::int64_t>(std::llround(q.y())),
                  static_cast<std::int64_t>(std::llround(q.z()))};
    }
    inf_ = n;

    // Morton-ish insertion order for walk locality.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    auto key = [&](int i) {
      std::uint64_t k = 0;
      const std::uint64_t xs = qpts_[i].x >> 15, ys = qpts_[i].y >> 15,
                          zs = qpts_[i].z >> 15;
      for (int b = 0; b < 6; ++b) {
        k |= ((xs >> b) & 1u) << (3 * b);
        k |= ((ys >> b) & 1u) << (3 * b + 1);
        k |= ((zs >> b) & 1u) << (3 * b + 2);
      }
      return k;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return key(a) < key(b); });

    // Seed simplex from extreme points, so the interior reference sits
    // deep inside the hull.
    int s0 = 0;
    for (int i = 1; i < n; ++i) {
      if (pts_[i].x() < pts_[s0].x()) s0 = i;
    }
    int s1 = -1;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = (pts_[i] - pts_[s0]).norm();
      if (d > best) {
        best = d;
        s1 = i;
      }
    }
    int s2 = -1;
    best = -1.0;
    const Vector3d dir = (pts_[s1] - pts_[s0]).normalized();
    for (int i = 0; i < n; ++i) {
      const Vector3d d = pts_[i] - pts_[s0];
      const double off = (d - d.dot(dir) * dir).norm();
      if (off > best) {
        best = off;
        s2 = i;
      }
    }
    int s3 = -1;
    best = -1.0;
    for (int i = 0; i < n; ++i) {
      if (orient_sign(qpts_[s0], qpts_[s1], qpts_[s2], qpts_[i]) == 0) {
        continue;
      }
      const double vol =
          tetrahedron_volume(pts_[s0], pts_[s1], pts_[s2], pts_[i]);
      if (vol > best) {
        best = vol;
        s3 = i;
      }
    }
    if (s2 < 0 || s3 < 0) {
      throw Error(ErrorCode::degenerate_input,
                  "delaunay: points are coplanar");
    }

    std::array<int, 4> s = {s0, s1, s2, s3};
    if (orient_sign(qpts_[s[0]], qpts_[s[1]], qpts_[s[2]], qpts_[s[3]]) < 0) {
      std::swap(s[2], s[3]);
    }
    // 4x the seed centroid stays on the lattice for exact interior tests.
    interior4_ = {
        qpts_[s[0]].x + qpts_[s[1]].x + qpts_[s[2]].x + qpts_[s[3]].x,
        qpts_[s[0]].y + qpts_[s[1]].y + qpts_[s[2]].y + qpts_[s[3]].y,
        qpts_[s[0]].z + qpts_[s[1]].z + qpts_[s[2]].z + qpts_[s[3]].z};

    tets_.push_back({{s[0], s[1], s[2], s[3]}, {-1, -1, -1, -1}, true});
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> face = {s[(f + 1) & 3], s[(f + 2) & 3],
                                 s[(f + 3) & 3]};
      if (outward_sign(face) < 0) std::swap(face[1], face[2]);
      tets_.push_back(
          {{face[0], face[1], face[2], inf_}, {-1, -1, -1, -1}, true});
    }
    stitch_all();

    mark_.assign(tets_.size(), 0);
    for (int pi : order) {
      if (pi == s0 || pi == s1 || pi == s2 || pi == s3) continue;
      insert(pi);
    }
    if (std::getenv("ORCHARD_DELAUNAY_VALIDATE")) validate();
  }

  std::vector<Tetrahedron> finite() const {
    std::vector<Tetrahedron> out;
    for (const auto& t : tets_) {
      if (!t.alive || has_inf(t)) continue;
      Tetrahedron ft;
      ft.v = t.v;
      ft.neighbor = {-1, -1, -1, -1};
      circumsphere(pts_[t.v[0]], pts_[t.v[1]], pts_[t.v[2]], pts_[t.v[3]],
                   ft.circumcenter, ft.circumradius);
      ft.volume = tetrahedron_volume(pts_[t.v[0]], pts_[t.v[1]],
                                     pts_[t.v[2]], pts_[t.v[3]]);
      out.push_back(ft);
    }
    struct Face {
      std::array<int, 3> key;
      int tet, slot;
    };
    std::vector<Face> faces;
    faces.reserve(out.size() * 4);
    for (size_t ti = 0; ti < out.size(); ++ti) {
      for (int s = 0; s < 4; ++s) {
        std::array<int, 3> f;
        int j = 0;
        for (int k = 0; k < 4; ++k) {
          if (k != s) f[j++] = out[ti].v[k];
        }
        std::sort(f.begin(), f.end());
        faces.push_back({f, static_cast<int>(ti), s});
      }
    }
    std::sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) {
      return a.key < b.key;
    });
    for (size_t i = 0; i + 1 < faces.size(); ++i) {
      if (faces[i].key == faces[i + 1].key) {
        out[faces[i].tet].neighbor[faces[i].slot] = faces[i + 1].tet;
        out[faces[i + 1].tet].neighbor[faces[i + 1].slot] = faces[i].tet;
      }
    }
    return out;
  }

 private:
  bool has_inf(const Tet& t) const {
    return t.v[0] == inf_ || t.v[1] == inf_ || t.v[2] == inf_ ||
           t.v[3] == inf_;
  }

  // +1 when the face is wound outward (interior reference on the
  // negative side). Vertices are scaled by 4 to keep the comparison with
  // the quartered centroid on the lattice.
  int outward_sign(const std::array<int, 3>& face) const {
    const QPoint a4 = {4 * qpts_[face[0]].x, 4 * qpts_[face[0]].y,
                       4 * qpts_[face[0]].z};
    const QPoint b4 = {4 * qpts_[face[1]].x, 4 * qpts_[face[1]].y,
                       4 * qpts_[face[1]].z};
    const QPoint c4 = {4 * qpts_[face[2]].x, 4 * qpts_[face[2]].y,
                       4 * qpts_[face[2]].z};
    return -orient_sign(a4, b4, c4, interior4_);
  }

  bool in_conflict(const Tet& t, int pi) const {
    if (!has_inf(t)) {
      return insphere_sign(qpts_[t.v[0]], qpts_[t.v[1]], qpts_[t.v[2]],
                           qpts_[t.v[3]], qpts_[pi]) < 0;
    }
    // Infinite cell (facet wound outward, inf in slot 3): conflict iff p
    // lies strictly outside the facet plane.
    return orient_sign(qpts_[t.v[0]], qpts_[t.v[1]], qpts_[t.v[2]],
                       qpts_[pi]) > 0;
  }

  int locate(int pi) const {
    int cur = last_;
    if (!tets_[cur].alive) cur = first_alive();
    int steps = 0;
    const int max_steps = static_cast<int>(tets_.size()) + 64;
    while (steps++ < max_steps) {
      const Tet& t = tets_[cur];
      if (has_inf(t)) return cur;
      bool moved = false;
      for (int f = 0; f < 4; ++f) {
        const int i0 = t.v[(f + 1) & 3], i1 = t.v[(f + 2) & 3],
                  i2 = t.v[(f + 3) & 3];
        const int o =
            orient_sign(qpts_[i0], qpts_[i1], qpts_[i2], qpts_[t.v[f]]);
        int s = orient_sign(qpts_[i0], qpts_[i1], qpts_[i2], qpts_[pi]);
        if (o > 0) s = -s;
        if (s > 0 && t.n[f] >= 0) {
          cur = t.n[f];
          moved = true;
          break;
        }
      }
      if (!moved) return cur;
    }
    return cur;
  }

  int first_alive() const {
    for (size_t i = 0; i < tets_.size(); ++i) {
      if (tets_[i].alive) return static_cast<int>(i);
    }
    return 0;
  }

  int alloc_tet(const std::array<int, 4>& v) {
    int id;
    if (!free_.empty()) {
      id = free_.back();
      free_.pop_back();
      tets_[id] = {v, {-1, -1, -1, -1}, true};
    } else {
      id = static_cast<int>(tets_.size());
      tets_.push_back({v, {-1, -1, -1, -1}, true});
      mark_.push_back(0);
    }
    return id;
  }

  void stitch_all() {
    // Brute force; only used on the five seed cells.
    for (size_t a = 0; a < tets_.size(); ++a) {
      for (int fa = 0; fa < 4; ++fa) {
        if (tets_[a].n[fa] >= 0) continue;
        std::array<int, 3> face;
        int j = 0;
        for (int k = 0; k < 4; ++k) {
          if (k != fa) face[j++] = tets_[a].v[k];
        }
        std::sort(face.begin(), face.end());
        for (size_t b = 0; b < tets_.size(); ++b) {
          if (a == b) continue;
          for (int fb = 0; fb < 4; ++fb) {
            std::array<int, 3> other;
            j = 0;
            for (int k = 0; k < 4; ++k) {
              if (k != fb) other[j++] = tets_[b].v[k];
            }
            std::sort(other.begin(), other.end());
            if (face == other) {
              tets_[a].n[fa] = static_cast<int>(b);
              tets_[b].n[fb] = static_cast<int>(a);
            }
          }
        }
      }
    }
  }

  void insert(int pi) {
    int start = locate(pi);
    {
      // Exact duplicates add nothing.
      const Tet& t = tets_[start];
      for (int k = 0; k < 4; ++k) {
        if (t.v[k] == inf_) continue;
        const QPoint& q = qpts_[t.v[k]];
        if (q.x == qpts_[pi].x && q.y == qpts_[pi].y && q.z == qpts_[pi].z) {
          return;
        }
      }
    }

    if (tets_[start].alive && !in_conflict(tets_[start], pi)) {
      // The walk can stop next to the conflict region; hop over to it.
      ++epoch_;
      std::vector<int> frontier = {start};
      mark_[start] = epoch_;
      int found = -1;
      while (!frontier.empty() && found < 0) {
        const int ti = frontier.back();
        frontier.pop_back();
        if (tets_[ti].alive && in_conflict(tets_[ti], pi)) {
          found = ti;
          break;
        }
        for (int f = 0; f < 4; ++f) {
          const int nb = tets_[ti].n[f];
          if (nb >= 0 && mark_[nb] != epoch_) {
            mark_[nb] = epoch_;
            frontier.push_back(nb);
          }
        }
      }
      if (found < 0) return;  // degenerate placement: drop the point
      start = found;
    }

    ++epoch_;
    std::vector<int> cavity;
    std::vector<int> stack = {start};
    mark_[start] = epoch_;
    while (!stack.empty()) {
      const int ti = stack.back();
      stack.pop_back();
      if (!tets_[ti].alive || !in_conflict(tets_[ti], pi)) continue;
      cavity.push_back(ti);
      for (int f = 0; f < 4; ++f) {
        const int nb = tets_[ti].n[f];
        if (nb >= 0 && mark_[nb] != epoch_) {
          mark_[nb] = epoch_;
          stack.push_back(nb);
        }
      }
    }
    if (cavity.empty()) return;
    ++epoch_;
    for (int ti : cavity) mark_[ti] = epoch_;

    // Star-shape guard (exact): every finite boundary face must see p
    // strictly on its cavity side, so the fan below is a valid
    // retessellation.
    bool shrunk = true;
    while (shrunk) {
      shrunk = false;
      for (size_t ci = 0; ci < cavity.size(); ++ci) {
        const Tet& t = tets_[cavity[ci]];
        bool bad = false;
        for (int f = 0; f < 4 && !bad; ++f) {
          const int nb = t.n[f];
          if (nb >= 0 && mark_[nb] == epoch_) continue;
          const int i0 = t.v[(f + 1) & 3], i1 = t.v[(f + 2) & 3],
                    i2 = t.v[(f + 3) & 3];
          if (i0 == inf_ || i1 == inf_ || i2 == inf_) continue;
          const int ref = t.v[f] == inf_
                              ? outward_sign({i0, i1, i2})
                              : orient_sign(qpts_[i0], qpts_[i1], qpts_[i2],
                                            qpts_[t.v[f]]);
          const int sgn =
              orient_sign(qpts_[i0], qpts_[i1], qpts_[i2], qpts_[pi]);
          if (sgn == 0 || ref == 0 || sgn != ref) bad = true;
        }
        if (bad) {
          mark_[cavity[ci]] = 0;
          cavity.erase(cavity.begin() + ci);
          shrunk = true;
          break;
        }
      }
      if (cavity.empty()) return;  // degenerate placement: drop the point
    }
    // Keep the part still face-connected to the first cavity element.
    {
      std::vector<int> keep;
      ++epoch_;
      for (int ti : cavity) mark_[ti] = epoch_ - 1;
      mark_[cavity.front()] = epoch_;
      std::vector<int> stack2 = {cavity.front()};
      while (!stack2.empty()) {
        const int ti = stack2.back();
        stack2.pop_back();
        keep.push_back(ti);
        for (int f = 0; f < 4; ++f) {
          const int nb = tets_[ti].n[f];
          if (nb >= 0 && mark_[nb] == epoch_ - 1) {
            mark_[nb] = epoch_;
            stack2.push_back(nb);
          }
        }
      }
      for (int ti : cavity) {
        if (mark_[ti] != epoch_) mark_[ti] = 0;
      }
      cavity = std::move(keep);
    }

    struct BFace {
      std::array<int, 3> v;
      int outside;
    };
    std::vector<BFace> boundary;
    for (int ti : cavity) {
      const Tet& t = tets_[ti];
      for (int f = 0; f < 4; ++f) {
        const int nb = t.n[f];
        if (nb >= 0 && mark_[nb] == epoch_) continue;
        boundary.push_back(
            {{t.v[(f + 1) & 3], t.v[(f + 2) & 3], t.v[(f + 3) & 3]}, nb});
      }
    }

    for (int ti : cavity) {
      tets_[ti].alive = false;
      free_.push_back(ti);
    }

    std::vector<int> fresh;
    for (auto& bf : boundary) {
      int inf_at = -1;
      for (int k = 0; k < 3; ++k) {
        if (bf.v[k] == inf_) inf_at = k;
      }
      std::array<int, 4> verts;
      if (inf_at < 0) {
        // (p, face) positively oriented, exactly.
        if (orient_sign(qpts_[bf.v[0]], qpts_[bf.v[1]], qpts_[bf.v[2]],
                        qpts_[pi]) > 0) {
          std::swap(bf.v[1], bf.v[2]);
        }
        verts = {pi, bf.v[0], bf.v[1], bf.v[2]};
      } else {
        std::array<int, 2> e;
        int j = 0;
        for (int k = 0; k < 3; ++k) {
          if (k != inf_at) e[j++] = bf.v[k];
        }
        // New hull facet (p, e0, e1) wound outward.
        if (outward_sign({pi, e[0], e[1]}) < 0) std::swap(e[0], e[1]);
        verts = {pi, e[0], e[1], inf_};
      }
      const int id = alloc_tet(verts);
      fresh.push_back(id);
      tets_[id].n[0] = bf.outside;
      if (bf.outside >= 0) {
        std::array<int, 3> want = bf.v;
        std::sort(want.begin(), want.end());
        Tet& o = tets_[bf.outside];
        for (int f = 0; f < 4; ++f) {
          std::array<int, 3> of = {o.v[(f + 1) & 3], o.v[(f + 2) & 3],
                                   o.v[(f + 3) & 3]};
          std::sort(of.begin(), of.end());
          if (of == want) {
            o.n[f] = id;
            break;
          }
        }
      }
    }

    // Siblings share the edge left after dropping one face vertex.
    struct EdgeSlot {
      std::array<int, 2> key;
      int tet, slot;
    };
    std::vector<EdgeSlot> slots;
    for (int id : fresh) {
      const Tet& t = tets_[id];
      for (int s = 1; s < 4; ++s) {
        std::array<int, 2> e;
        int j = 0;
        for (int k = 1; k < 4; ++k) {
          if (k != s) e[j++] = t.v[k];
        }
        std::sort(e.begin(), e.end());
        slots.push_back({e, id, s});
      }
    }
    std::sort(slots.begin(), slots.end(),
              [](const EdgeSlot& a, const EdgeSlot& b) {
                return a.key < b.key || (a.key == b.key && a.tet < b.tet);
              });
    for (size_t i = 0; i + 1 < slots.size(); i += 2) {
      if (slots[i].key != slots[i + 1].key) {
        std::fprintf(stderr, "delaunay: unpaired fan face at insert %d\n",
                     pi);
        break;
      }
      tets_[slots[i].tet].n[slots[i].slot] = slots[i + 1].tet;
      tets_[slots[i + 1].tet].n[slots[i + 1].slot] = slots[i].tet;
    }
    if (!fresh.empty()) last_ = fresh.front();
  }

  void validate() const {
    int bad_sym = 0, bad_face = 0, inverted = 0;
    std::map<std::array<int, 3>, int> face_use;
    for (size_t ti = 0; ti < tets_.size(); ++ti) {
      const Tet& t = tets_[ti];
      if (!t.alive) continue;
      if (!has_inf(t) &&
          orient_sign(qpts_[t.v[0]], qpts_[t.v[1]], qpts_[t.v[2]],
                      qpts_[t.v[3]]) <= 0) {
        ++inverted;
      }
      for (int f = 0; f < 4; ++f) {
        std::array<int, 3> fc = {t.v[(f + 1) & 3], t.v[(f + 2) & 3],
                                 t.v[(f + 3) & 3]};
        std::sort(fc.begin(), fc.end());
        face_use[fc]++;
        const int nb = t.n[f];
        if (nb < 0 || !tets_[nb].alive) {
          ++bad_sym;
          continue;
        }
        bool back = false;
        for (int g = 0; g < 4; ++g) {
          if (tets_[nb].n[g] == static_cast<int>(ti)) back = true;
        }
        if (!back) ++bad_sym;
      }
    }
    for (const auto& [fc, uses] : face_use) {
      if (uses != 2) ++bad_face;
    }
    if (bad_sym || bad_face || inverted) {
      std::fprintf(stderr,
                   "delaunay validate: %d asymmetric neighbors, %d faces "
                   "with use != 2, %d inverted tets\n",
                   bad_sym, bad_face, inverted);
    }
  }

  const std::vector<Vector3d>& pts_;
  std::vector<QPoint> qpts_;
  std::vector<Tet> tets_;
  std::vector<int> free_;
  std::vector<int> mark_;
  int epoch_ = 0;
  int inf_ = 0;
  int last_ = 0;
  QPoint interior4_ = {0, 0, 0};
  double scale_ = 1.0;
};

}  // namespace

Delaunay3D::Delaunay3D(const std::vector<Vector3d>& points) {
  Builder builder(points);
  finite_ = builder.finite();
}

double Delaunay3D::total_volume() const {
  double v = 0.0;
  for (const auto& t : finite_) v += t.volume;
  return v;
}

}  // namespace orchard
