#include "perfcap/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace perfcap {
namespace {

double edge(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Top edges are horizontal with the interior below (y grows downward); left
// edges have the interior on their +x side.
bool top_left(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  if (dy == 0.0) return c.y() > a.y();
  // Point on the edge line at c's height lies left of c.
  const double x_at = a.x() + dx * (c.y() - a.y()) / dy;
  return c.x() > x_at;
}

void fill_triangle(BinaryMask& mask, Vec2 a, Vec2 b, Vec2 c) {
  double area = edge(a, b, c);
  if (area == 0.0 || !std::isfinite(area)) return;
  if (area < 0.0) std::swap(b, c);
  const bool tl0 = top_left(b, c, a), tl1 = top_left(c, a, b), tl2 = top_left(a, b, c);
  const double minx = std::min({a.x(), b.x(), c.x()}), maxx = std::max({a.x(), b.x(), c.x()});
  const double miny = std::min({a.y(), b.y(), c.y()}), maxy = std::max({a.y(), b.y(), c.y()});
  const int x0 = std::max(0, static_cast<int>(std::floor(minx - 0.5)));
  const int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(maxx - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
  const int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(maxy - 0.5)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p(x + 0.5, y + 0.5);
      const double w0 = edge(b, c, p), w1 = edge(c, a, p), w2 = edge(a, b, p);
      const bool in0 = w0 > 0.0 || (w0 == 0.0 && tl0);
      const bool in1 = w1 > 0.0 || (w1 == 0.0 && tl1);
      const bool in2 = w2 > 0.0 || (w2 == 0.0 && tl2);
      if (in0 && in1 && in2) mask.set(x, y);
    }
  }
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * d)).norm();
}

void draw_segment(BinaryMask& mask, const Vec2& a, const Vec2& b, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - radius - 1)));
  const int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - radius - 1)));
  const int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + radius)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (segment_distance(Vec2(x + 0.5, y + 0.5), a, b) <= radius) mask.set(x, y);
}

// Uniform grid over contour positions for radius queries.
class ContourIndex {
 public:
  ContourIndex(const Contour& c, double cell) : contour_(c), cell_(cell) {
    for (size_t i = 0; i < c.size(); ++i) {
      const auto [cx, cy] = key(c[i].position);
      min_x_ = std::min(min_x_, cx);
      min_y_ = std::min(min_y_, cy);
      max_x_ = std::max(max_x_, cx);
      max_y_ = std::max(max_y_, cy);
    }
    if (c.empty()) return;
    nx_ = max_x_ - min_x_ + 1;
    buckets_.resize(static_cast<size_t>(nx_) * static_cast<size_t>(max_y_ - min_y_ + 1));
    for (size_t i = 0; i < c.size(); ++i) {
      const auto [cx, cy] = key(c[i].position);
      buckets_[index(cx, cy)].push_back(static_cast<int>(i));
    }
  }

  // Calls f(i) for every point that may lie within r of p, in any order.
  template <class F>
  void query(const Vec2& p, double r, F&& f) const {
    if (contour_.empty()) return;
    const int kx0 = std::max(min_x_, static_cast<int>(std::floor((p.x() - r) / cell_)));
    const int kx1 = std::min(max_x_, static_cast<int>(std::floor((p.x() + r) / cell_)));
    const int ky0 = std::max(min_y_, static_cast<int>(std::floor((p.y() - r) / cell_)));
    const int ky1 = std::min(max_y_, static_cast<int>(std::floor((p.y() + r) / cell_)));
    for (int ky = ky0; ky <= ky1; ++ky)
      for (int kx = kx0; kx <= kx1; ++kx)
        for (int i : buckets_[index(kx, ky)]) f(i);
  }

 private:
  std::pair<int, int> key(const Vec2& p) const {
    return {static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_))};
  }
  size_t index(int kx, int ky) const {
    return static_cast<size_t>(ky - min_y_) * static_cast<size_t>(nx_) + static_cast<size_t>(kx - min_x_);
  }

  const Contour& contour_;
  double cell_;
  int min_x_ = std::numeric_limits<int>::max(), min_y_ = std::numeric_limits<int>::max();
  int max_x_ = std::numeric_limits<int>::min(), max_y_ = std::numeric_limits<int>::min();
  int nx_ = 0;
  std::vector<std::vector<int>> buckets_;
};

}  // namespace

BinaryMask render_mask(const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& triangles,
                       const Camera& cam) {
  BinaryMask mask(cam.width, cam.height);
  std::vector<Vec2> px(vertices.size());
  std::vector<uint8_t> ok(vertices.size(), 0);
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (vertices[i].z() > kMinDepth) {
      px[i] = project(cam, vertices[i]);
      ok[i] = 1;
    }
  }
  for (const auto& t : triangles) {
    const auto a = static_cast<size_t>(t[0]), b = static_cast<size_t>(t[1]), c = static_cast<size_t>(t[2]);
    if (!ok[a] || !ok[b] || !ok[c]) continue;
    fill_triangle(mask, px[a], px[b], px[c]);
  }
  return mask;
}

BinaryMask render_skeleton_mask(const SkeletonRig& rig, const SkeletonPose& pose, const Camera& cam, double thickness,
                                std::vector<int>* skipped) {
  BinaryMask mask(cam.width, cam.height);
  const auto pos = joint_positions(rig, pose);
  for (int j = 1; j < rig.joint_count(); ++j) {
    const Vec3& pa = pos[static_cast<size_t>(rig.joint(j).parent)];
    const Vec3& pb = pos[static_cast<size_t>(j)];
    if (pa.z() <= kMinDepth || pb.z() <= kMinDepth) {
      if (skipped) skipped->push_back(j);
      continue;
    }
    const Vec2 a = project(cam, pa), b = project(cam, pb);
    const double radius = (a - b).norm() > 0.0 ? thickness / 2.0 : std::ceil(thickness / 2.0);
    draw_segment(mask, a, b, radius);
  }
  return mask;
}

Contour extract_contour(const BinaryMask& mask) {
  const int w = mask.width, h = mask.height;
  // Box-smoothed occupancy with a one-pixel zero border.
  const int sw = w + 2;
  std::vector<double> smooth(static_cast<size_t>(sw) * static_cast<size_t>(h + 2), 0.0);
  auto S = [&](int x, int y) -> double& { return smooth[static_cast<size_t>(y + 1) * static_cast<size_t>(sw) + static_cast<size_t>(x + 1)]; };
  for (int y = -1; y <= h; ++y) {
    for (int x = -1; x <= w; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) n += mask.get(x + dx, y + dy);
      S(x, y) = n / 9.0;
    }
  }
  Contour out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      if (mask.get(x - 1, y) && mask.get(x + 1, y) && mask.get(x, y - 1) && mask.get(x, y + 1)) continue;
      const double gx = (S(x + 1, y - 1) + 2 * S(x + 1, y) + S(x + 1, y + 1)) - (S(x - 1, y - 1) + 2 * S(x - 1, y) + S(x - 1, y + 1));
      const double gy = (S(x - 1, y + 1) + 2 * S(x, y + 1) + S(x + 1, y + 1)) - (S(x - 1, y - 1) + 2 * S(x, y - 1) + S(x + 1, y - 1));
      const Vec2 g(gx, gy);
      const double gn = g.norm();
      if (gn < 1e-9) continue;
      ContourPoint cp;
      cp.px = x;
      cp.py = y;
      cp.normal = -g / gn;
      // Sobel responds with 8x the slope of a linear ramp.
      const double offset = std::clamp((S(x, y) - 0.5) / (gn / 8.0), 0.0, 1.0);
      cp.position = Vec2(x + 0.5, y + 0.5) + offset * cp.normal;
      out.push_back(cp);
    }
  }
  return out;
}

std::vector<BoundaryVertex> model_boundary_vertices(const std::vector<Vec3>& vertices,
                                                    const std::vector<std::array<int, 3>>& triangles,
                                                    const Camera& cam, double max_dist) {
  const BinaryMask mask = render_mask(vertices, triangles, cam);
  const Contour contour = extract_contour(mask);
  std::vector<BoundaryVertex> out;
  if (contour.empty()) return out;
  // Rim vertices: endpoints of edges between a front- and a back-facing
  // triangle, or of edges with a single triangle.
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // (facing sum, triangle count)
  for (const auto& t : triangles) {
    const Vec3& a = vertices[static_cast<size_t>(t[0])];
    const double f = (vertices[static_cast<size_t>(t[1])] - a).cross(vertices[static_cast<size_t>(t[2])] - a).dot(a);
    const int facing = f > 0 ? 1 : (f < 0 ? -1 : 0);
    for (int e = 0; e < 3; ++e) {
      const int u = t[static_cast<size_t>(e)], w = t[static_cast<size_t>((e + 1) % 3)];
      auto& rec = edges[{std::min(u, w), std::max(u, w)}];
      rec.first += facing;
      ++rec.second;
    }
  }
  std::vector<uint8_t> rim(vertices.size(), 0);
  for (const auto& [e, rec] : edges)
    if (rec.second == 1 || std::abs(rec.first) != 2) rim[static_cast<size_t>(e.first)] = rim[static_cast<size_t>(e.second)] = 1;
  // Vertices landing on uncovered pixels (thin tips) are boundary too; they
  // take the normal of a contour point up to this far away.
  const double tip_radius = std::max(max_dist, 3.0);
  const ContourIndex index(contour, std::max(2.0, tip_radius));
  for (size_t v = 0; v < vertices.size(); ++v) {
    if (!rim[v] || vertices[v].z() <= kMinDepth) continue;
    const Vec2 p = project(cam, vertices[v]);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    const bool uncovered = !mask.get(static_cast<int>(std::floor(p.x())), static_cast<int>(std::floor(p.y())));
    index.query(p, tip_radius, [&](int i) {
      const double d = (contour[static_cast<size_t>(i)].position - p).norm();
      if (d < best_d || (d == best_d && i < best)) {
        best_d = d;
        best = i;
      }
    });
    if (best >= 0 && (best_d <= max_dist || uncovered)) out.push_back({static_cast<int>(v), p, contour[static_cast<size_t>(best)].normal});
  }
  return out;
}

double normal_angle_deg(const Vec2& a, const Vec2& b) {
  const double cross = a.x() * b.y() - a.y() * b.x();
  return std::atan2(std::abs(cross), a.dot(b)) * 180.0 / std::numbers::pi;
}

std::vector<Correspondence> find_correspondences(const std::vector<BoundaryVertex>& boundary, const Contour& target,
                                                 double max_dist, double max_angle_deg) {
  std::vector<Correspondence> out;
  if (boundary.empty() || target.empty()) return out;
  const ContourIndex index(target, std::max(4.0, max_dist / 2.0));
  for (const auto& bv : boundary) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    index.query(bv.position, max_dist, [&](int i) {
      const auto& c = target[static_cast<size_t>(i)];
      if (normal_angle_deg(bv.normal, c.normal) > max_angle_deg) return;
      const double d = (c.position - bv.position).norm();
      if (d < best_d || (d == best_d && i < best)) {
        best_d = d;
        best = i;
      }
    });
    if (best >= 0 && best_d <= max_dist) {
      const auto& c = target[static_cast<size_t>(best)];
      out.push_back({bv.vertex, c.position, c.normal});
    }
  }
  return out;
}

}  // namespace perfcap
