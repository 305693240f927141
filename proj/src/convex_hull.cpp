#include "orchard/convex_hull.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "orchard/error.hpp"

namespace orchard {

namespace {

struct Face {
  std::array<int, 3> v;
  Vector3d normal;  // outward, unit
  double offset = 0.0;
  bool alive = true;
};

Face make_face(const std::vector<Vector3d>& pts, int a, int b, int c,
               const Vector3d& inside) {
  Face f;
  f.v = {a, b, c};
  Vector3d n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  const double len = n.norm();
  if (len > 0) n /= len;
  if (n.dot(inside - pts[a]) > 0) {
    std::swap(f.v[1], f.v[2]);
    n = -n;
  }
  f.normal = n;
  f.offset = n.dot(pts[f.v[0]]);
  return f;
}

}  // namespace

ConvexHull3D convex_hull(const std::vector<Vector3d>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 4) {
    throw Error(ErrorCode::degenerate_input, "convex_hull: need 4+ points");
  }
  double scale = 0.0;
  for (const auto& p : points) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double eps = 1e-12 * std::max(scale, 1.0);

  // Initial simplex from extreme points.
  int i0 = 0, i1 = -1;
  for (int i = 1; i < n; ++i) {
    if (points[i].x() < points[i0].x()) i0 = i;
  }
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (points[i] - points[i0]).norm();
    if (d > best) {
      best = d;
      i1 = i;
    }
  }
  if (best <= eps) {
    throw Error(ErrorCode::degenerate_input, "convex_hull: coincident points");
  }
  int i2 = -1;
  best = -1.0;
  const Vector3d dir = (points[i1] - points[i0]).normalized();
  for (int i = 0; i < n; ++i) {
    const Vector3d d = points[i] - points[i0];
    const double off = (d - d.dot(dir) * dir).norm();
    if (off > best) {
      best = off;
      i2 = i;
    }
  }
  if (best <= eps) {
    throw Error(ErrorCode::degenerate_input, "convex_hull: collinear points");
  }
  int i3 = -1;
  best = -1.0;
  const Vector3d pn =
      (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
  for (int i = 0; i < n; ++i) {
    const double off = std::abs(pn.dot(points[i] - points[i0]));
    if (off > best) {
      best = off;
      i3 = i;
    }
  }
  if (best <= eps) {
    throw Error(ErrorCode::degenerate_input, "convex_hull: coplanar points");
  }

  const Vector3d inside =
      (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
  std::vector<Face> faces = {make_face(points, i0, i1, i2, inside),
                             make_face(points, i0, i1, i3, inside),
                             make_face(points, i0, i2, i3, inside),
                             make_face(points, i1, i2, i3, inside)};

  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    // Visible faces and the horizon that rings them.
    std::vector<int> visible;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!faces[f].alive) continue;
      if (faces[f].normal.dot(points[p]) - faces[f].offset > eps) {
        visible.push_back(static_cast<int>(f));
      }
    }
    if (visible.empty()) continue;
    std::map<std::pair<int, int>, int> edge_count;
    for (int f : visible) {
      for (int e = 0; e < 3; ++e) {
        int a = faces[f].v[e], b = faces[f].v[(e + 1) % 3];
        if (a > b) std::swap(a, b);
        edge_count[{a, b}]++;
      }
    }
    for (int f : visible) faces[f].alive = false;
    for (int f : visible) {
      for (int e = 0; e < 3; ++e) {
        const int a = faces[f].v[e], b = faces[f].v[(e + 1) % 3];
        auto key = std::minmax(a, b);
        if (edge_count[{key.first, key.second}] == 1) {
          faces.push_back(make_face(points, a, b, p, inside));
        }
      }
    }
  }

  ConvexHull3D hull;
  std::vector<char> used(n, 0);
  for (const auto& f : faces) {
    if (!f.alive) continue;
    hull.faces.push_back(f.v);
    for (int v : f.v) used[v] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (used[i]) hull.vertices.push_back(i);
  }
  return hull;
}

double convex_hull_volume(const std::vector<Vector3d>& points) {
  const ConvexHull3D hull = convex_hull(points);
  Vector3d centroid = Vector3d::Zero();
  for (int v : hull.vertices) centroid += points[v];
  centroid /= static_cast<double>(hull.vertices.size());
  double volume = 0.0;
  for (const auto& f : hull.faces) {
    volume += (points[f[0]] - centroid)
                  .cross(points[f[1]] - centroid)
                  .dot(points[f[2]] - centroid) /
              6.0;
  }
  return std::abs(volume);
}

}  // namespace orchard
