#pragma once

#include <array>
#include <vector>

#include "perfcap/image.hpp"
#include "perfcap/kinematics.hpp"

namespace perfcap {

// Pixel (x, y) covers [x, x+1) x [y, y+1) in projected coordinates; its
// center is (x + 0.5, y + 0.5).

/// Binary coverage of the projected triangles (either winding), sampled at
/// pixel centers with the top-left fill rule. Triangles with a vertex at
/// z <= kMinDepth are skipped.
BinaryMask render_mask(const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& triangles,
                       const Camera& cam);

/// Bones drawn as 2D segments of the given thickness (pixels whose center is
/// within thickness/2 of the segment). A bone that projects to a point is a
/// disc of radius ceil(thickness/2). Bones with a joint behind the camera are
/// skipped and their child joint indices appended to `skipped`.
BinaryMask render_skeleton_mask(const SkeletonRig& rig, const SkeletonPose& pose, const Camera& cam,
                                double thickness = 3.0, std::vector<int>* skipped = nullptr);

struct ContourPoint {
  int px = 0;
  int py = 0;
  Vec2 position = Vec2::Zero();  // subpixel edge estimate
  Vec2 normal = Vec2::Zero();    // outward, unit length
};
using Contour = std::vector<ContourPoint>;

/// Foreground pixels with a background 4-neighbor (outside the image counts
/// as background), in row-major order. Normals are the negated Sobel gradient
/// of the 3x3 box-smoothed occupancy; points with a vanishing gradient are
/// dropped. Positions are moved along the normal to the 0.5 level of the
/// smoothed occupancy (by at most one pixel).
Contour extract_contour(const BinaryMask& mask);

struct BoundaryVertex {
  int vertex = 0;
  Vec2 position = Vec2::Zero();  // projection
  Vec2 normal = Vec2::Zero();    // normal of the nearest contour point
};

/// Rim vertices (on an edge between front- and back-facing triangles, or on
/// an open edge) whose projection lies within `max_dist` pixels of the
/// contour of the mesh's own rendered mask, or on a pixel the mask leaves
/// uncovered (sub-pixel slivers and tips) next to the contour.
std::vector<BoundaryVertex> model_boundary_vertices(const std::vector<Vec3>& vertices,
                                                    const std::vector<std::array<int, 3>>& triangles,
                                                    const Camera& cam, double max_dist = 1.0);

struct Correspondence {
  int vertex = 0;
  Vec2 target = Vec2::Zero();
  Vec2 normal = Vec2::Zero();  // target contour normal
};

/// For each boundary vertex, the nearest contour point whose normal is within
/// `max_angle_deg` of the vertex normal (ties: lowest contour index); kept
/// when no farther than `max_dist` pixels.
std::vector<Correspondence> find_correspondences(const std::vector<BoundaryVertex>& boundary, const Contour& target,
                                                 double max_dist = 30.0, double max_angle_deg = 45.0);

/// Angle between two 2D directions in degrees.
double normal_angle_deg(const Vec2& a, const Vec2& b);

}  // namespace perfcap
