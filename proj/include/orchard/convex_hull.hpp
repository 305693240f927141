#pragma once

#include <array>
#include <vector>

#include "orchard/geometry.hpp"

namespace orchard {

// Incremental 3D convex hull. Kept deliberately independent of the
// Delaunay code: the alpha-shape limit check compares the two volumes.
struct ConvexHull3D {
  std::vector<std::array<int, 3>> faces;  // outward-oriented triangles
  std::vector<int> vertices;              // hull vertex ids
};

// Throws degenerate_input for fewer than 4 affinely independent points.
ConvexHull3D convex_hull(const std::vector<Vector3d>& points);

// Volume enclosed by the hull (signed tetra fan from the centroid).
double convex_hull_volume(const std::vector<Vector3d>& points);

}  // namespace orchard
