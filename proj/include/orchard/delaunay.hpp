#pragma once

#include <array>
#include <vector>

#include "orchard/geometry.hpp"
#include "orchard/parallel.hpp"

namespace orchard {

// One tetrahedron of the triangulation: vertex ids and the circumsphere.
struct Tetrahedron {
  std::array<int, 4> v;
  std::array<int, 4> neighbor;  // tet opposite v[i], -1 at the boundary
  Vector3d circumcenter = Vector3d::Zero();
  double circumradius = 0.0;
  double volume = 0.0;
};

// Incremental (Bowyer-Watson) Delaunay tetrahedralization. Cospherical
// ties inside 1e-10 of the insphere predicate are broken by a
// deterministic index-keyed perturbation. Throws degenerate_input when the
// points are affinely dependent (coplanar or worse).
class Delaunay3D {
 public:
  explicit Delaunay3D(const std::vector<Vector3d>& points);

  // Finite tetrahedra only (super-vertices stripped), in deterministic
  // order. Together they tile the convex hull of the input.
  const std::vector<Tetrahedron>& tetrahedra() const { return finite_; }
  double total_volume() const;

 private:
  std::vector<Tetrahedron> finite_;
};

double tetrahedron_volume(const Vector3d& a, const Vector3d& b,
                          const Vector3d& c, const Vector3d& d);

// Circumsphere; radius is +inf for degenerate (near-flat) tetrahedra.
void circumsphere(const Vector3d& a, const Vector3d& b, const Vector3d& c,
                  const Vector3d& d, Vector3d& center, double& radius);

}  // namespace orchard
