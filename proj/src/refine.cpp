#include "perfcap/refine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <set>
#include <tuple>

#include "perfcap/batchpose.hpp"
#include "perfcap/error.hpp"

namespace perfcap {
namespace {

using Tris = std::vector<std::array<int, 3>>;

std::vector<std::vector<std::pair<int, double>>> mesh_adjacency(const std::vector<Vec3>& v, const Tris& tris) {
  std::vector<std::set<int>> adj(v.size());
  for (const auto& t : tris) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[static_cast<size_t>(e)], b = t[static_cast<size_t>((e + 1) % 3)];
      adj[static_cast<size_t>(a)].insert(b);
      adj[static_cast<size_t>(b)].insert(a);
    }
  }
  std::vector<std::vector<std::pair<int, double>>> out(v.size());
  for (size_t i = 0; i < v.size(); ++i)
    for (int j : adj[i]) out[i].emplace_back(j, (v[i] - v[static_cast<size_t>(j)]).norm());
  return out;
}

using MinHeap = std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>, std::greater<>>;

std::vector<int> vertex_list(const std::vector<Correspondence>& corr) {
  std::vector<int> ids;
  ids.reserve(corr.size());
  for (const auto& c : corr) ids.push_back(c.vertex);
  return ids;
}

}  // namespace

void RefineConfig::validate() const {
  if (!(w_stab > 0.0)) throw InputError("w_stab must be positive");
  if (pose_iterations < 0) throw InputError("pose ICP iterations must be non-negative");
  for (double w : w_arap)
    if (!(w > 0.0)) throw InputError("w_arap entries must be positive");
  if (graph_nodes < 1) throw InputError("graph node count must be positive");
  if (smooth_window < 1 || smooth_window % 2 == 0) throw InputError("smoothing window must be a positive odd number");
  if (!(max_dist > 0.0) || !(max_angle_deg > 0.0)) throw InputError("correspondence thresholds must be positive");
  if (!(stab_unit > 0.0) || !(arap_unit > 0.0)) throw InputError("length units must be positive");
}

double energy_con(const std::vector<Vec3>& vertices, const Camera& cam, const std::vector<Correspondence>& corr) {
  if (corr.empty()) return 0.0;
  double e = 0.0;
  for (const auto& c : corr) {
    const double r = c.normal.dot(project_guarded(cam, vertices[static_cast<size_t>(c.vertex)]) - c.target);
    e += r * r;
  }
  return e / static_cast<double>(corr.size());
}

ResidualBlock make_con_pose_block(const ActorTemplate& actor, const SkeletonRig& rig, const Camera& cam,
                                  const std::vector<Correspondence>& corr, double weight) {
  const int dof = rig.dof();
  ResidualBlock b;
  b.name = "E_con pose";
  for (int p = 0; p < dof; ++p) b.parameters.push_back(p);
  b.num_residuals = static_cast<int>(corr.size());
  b.weight = weight;
  b.evaluate = [&actor, &rig, cam, corr, ids = vertex_list(corr)](const VecX& x, VecX& r, MatX* J) {
    const SkeletonPose pose = SkeletonPose::from_flat(std::span<const double>(x.data(), static_cast<size_t>(x.size())));
    const auto sk = skin_vertices(actor, rig, pose, ids, J != nullptr);
    for (size_t k = 0; k < corr.size(); ++k) {
      Eigen::Matrix<double, 2, 3> dp;
      const Vec2 px = project_guarded(cam, sk.positions[k], J ? &dp : nullptr);
      r[static_cast<Eigen::Index>(k)] = corr[k].normal.dot(px - corr[k].target);
      if (J) J->row(static_cast<Eigen::Index>(k)) = corr[k].normal.transpose() * dp * sk.jacobians[k];
    }
  };
  return b;
}

ResidualBlock make_stab_block(const SkeletonRig& rig, const std::vector<Vec3>& anchor, double weight,
                              double length_unit) {
  const int dof = rig.dof();
  const int nj = rig.joint_count();
  ResidualBlock b;
  b.name = "E_stab";
  for (int p = 0; p < dof; ++p) b.parameters.push_back(p);
  b.num_residuals = 3 * nj;
  b.weight = weight;
  b.evaluate = [&rig, anchor, nj, length_unit](const VecX& x, VecX& r, MatX* J) {
    const SkeletonPose pose = SkeletonPose::from_flat(std::span<const double>(x.data(), static_cast<size_t>(x.size())));
    const auto world = forward_kinematics(rig, pose);
    std::vector<ParameterTwist> twists;
    if (J) twists = parameter_twists(rig, pose, world);
    for (int j = 0; j < nj; ++j) {
      r.segment<3>(3 * j) = length_unit * (world[static_cast<size_t>(j)].translation - anchor[static_cast<size_t>(j)]);
      if (J) J->middleRows<3>(3 * j) = length_unit * joint_position_jacobian(rig, world, twists, j);
    }
  };
  return b;
}

PoseRefineResult refine_pose(const SkeletonPose& pose, const ActorTemplate& actor, const SkeletonRig& rig,
                             const Camera& cam, const Contour& silhouette, const RefineConfig& cfg) {
  cfg.validate();
  PoseRefineResult res;
  res.pose = pose;
  if (silhouette.empty()) {
    res.flagged = true;
    return res;
  }
  const auto anchor = joint_positions(rig, pose);
  const BoxConstraints box = angle_box(rig, 1);
  for (int it = 0; it < cfg.pose_iterations; ++it) {
    const auto verts = skin_mesh(actor, rig, res.pose);
    const auto boundary = model_boundary_vertices(verts, actor.triangles, cam);
    const auto corr = find_correspondences(boundary, silhouette, cfg.max_dist, cfg.max_angle_deg);
    res.correspondences.push_back(static_cast<int>(corr.size()));
    if (corr.empty()) {
      if (it == 0) res.flagged = true;
      break;
    }
    std::vector<ResidualBlock> blocks;
    blocks.push_back(make_con_pose_block(actor, rig, cam, corr, 1.0 / static_cast<double>(corr.size())));
    blocks.push_back(make_stab_block(rig, anchor, cfg.w_stab / rig.joint_count(), cfg.stab_unit));
    VecX x = res.pose.flatten();
    const SolverReport rep = lm_minimize(blocks, x, box, cfg.pose_solver);
    const auto next = SkeletonPose::from_flat(std::span<const double>(x.data(), static_cast<size_t>(x.size())));
    const double econ = energy_con(skin_mesh(actor, rig, next), cam, corr);
    // Near convergence fresh correspondences can make E_con tick upward;
    // such an iteration is dropped and the loop ends.
    if (!res.econ_after.empty() && econ > res.econ_after.back()) break;
    res.econ_before.push_back(energy_con(verts, cam, corr));
    res.econ_after.push_back(econ);
    res.objective_before.push_back(rep.initial_objective);
    res.objective_after.push_back(rep.final_objective);
    res.pose = next;
  }
  return res;
}

VecX DeformGraph::parameters() const {
  VecX x(6 * size());
  for (int k = 0; k < size(); ++k) {
    x.segment<3>(6 * k) = rotations[static_cast<size_t>(k)];
    x.segment<3>(6 * k + 3) = translations[static_cast<size_t>(k)];
  }
  return x;
}

void DeformGraph::set_parameters(const VecX& x) {
  for (int k = 0; k < size(); ++k) {
    rotations[static_cast<size_t>(k)] = x.segment<3>(6 * k);
    translations[static_cast<size_t>(k)] = x.segment<3>(6 * k + 3);
  }
}

void DeformGraph::reset() {
  std::fill(rotations.begin(), rotations.end(), Vec3::Zero());
  std::fill(translations.begin(), translations.end(), Vec3::Zero());
}

DeformGraph build_graph(const std::vector<Vec3>& vertices, const Tris& triangles, int target_nodes) {
  const int nv = static_cast<int>(vertices.size());
  if (nv == 0) throw InputError("build_graph: empty mesh");
  if (target_nodes < 1) throw InputError("build_graph: node count must be positive");
  const auto mesh = mesh_adjacency(vertices, triangles);
  DeformGraph g;

  // Shortest-edge collapse; the lower-indexed endpoint survives in place.
  std::vector<std::set<int>> adj(static_cast<size_t>(nv));
  for (int i = 0; i < nv; ++i)
    for (const auto& [j, len] : mesh[static_cast<size_t>(i)]) adj[static_cast<size_t>(i)].insert(j);
  std::vector<uint8_t> alive(static_cast<size_t>(nv), 1);
  int count = nv;
  using Entry = std::tuple<double, int, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  for (int i = 0; i < nv; ++i)
    for (int j : adj[static_cast<size_t>(i)])
      if (i < j) heap.emplace((vertices[static_cast<size_t>(i)] - vertices[static_cast<size_t>(j)]).norm(), i, j);
  while (count > target_nodes && !heap.empty()) {
    const auto [len, a, b] = heap.top();
    heap.pop();
    if (!alive[static_cast<size_t>(a)] || !alive[static_cast<size_t>(b)] || !adj[static_cast<size_t>(a)].count(b)) continue;
    alive[static_cast<size_t>(b)] = 0;
    --count;
    for (int w : adj[static_cast<size_t>(b)]) {
      adj[static_cast<size_t>(w)].erase(b);
      if (w == a) continue;
      if (adj[static_cast<size_t>(a)].insert(w).second) {
        adj[static_cast<size_t>(w)].insert(a);
        heap.emplace((vertices[static_cast<size_t>(a)] - vertices[static_cast<size_t>(w)]).norm(), std::min(a, w),
                     std::max(a, w));
      }
    }
    adj[static_cast<size_t>(b)].clear();
  }

  std::vector<int> node_of(static_cast<size_t>(nv), -1);
  for (int i = 0; i < nv; ++i) {
    if (!alive[static_cast<size_t>(i)]) continue;
    node_of[static_cast<size_t>(i)] = g.size();
    g.nodes.push_back(vertices[static_cast<size_t>(i)]);
    g.node_vertex.push_back(i);
  }
  const int m = g.size();
  g.neighbors.resize(static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) {
    for (int w : adj[static_cast<size_t>(g.node_vertex[static_cast<size_t>(k)])])
      g.neighbors[static_cast<size_t>(k)].push_back(node_of[static_cast<size_t>(w)]);
    std::sort(g.neighbors[static_cast<size_t>(k)].begin(), g.neighbors[static_cast<size_t>(k)].end());
  }
  g.rotations.assign(static_cast<size_t>(m), Vec3::Zero());
  g.translations.assign(static_cast<size_t>(m), Vec3::Zero());
  g.radii.assign(static_cast<size_t>(m), 0.0);
  g.influences.assign(static_cast<size_t>(nv), {});

  // Truncated Dijkstra from every node: radius = farthest graph neighbor,
  // then every vertex within that radius receives a Gaussian weight.
  std::vector<double> dist(static_cast<size_t>(nv), std::numeric_limits<double>::infinity());
  std::vector<int> touched;
  for (int k = 0; k < m; ++k) {
    const int src = g.node_vertex[static_cast<size_t>(k)];
    std::set<int> pending;
    for (int n : g.neighbors[static_cast<size_t>(k)]) pending.insert(g.node_vertex[static_cast<size_t>(n)]);
    double radius = pending.empty() ? 0.0 : std::numeric_limits<double>::infinity();
    std::vector<std::pair<int, double>> reached;
    MinHeap heap2;
    dist[static_cast<size_t>(src)] = 0.0;
    touched.push_back(src);
    heap2.emplace(0.0, src);
    while (!heap2.empty()) {
      const auto [d, v] = heap2.top();
      heap2.pop();
      if (d > dist[static_cast<size_t>(v)]) continue;
      if (d > radius) break;
      reached.emplace_back(v, d);
      if (pending.erase(v) && pending.empty()) radius = d;
      for (const auto& [w, len] : mesh[static_cast<size_t>(v)]) {
        const double nd = d + len;
        if (nd < dist[static_cast<size_t>(w)]) {
          if (std::isinf(dist[static_cast<size_t>(w)])) touched.push_back(w);
          dist[static_cast<size_t>(w)] = nd;
          heap2.emplace(nd, w);
        }
      }
    }
    for (int v : touched) dist[static_cast<size_t>(v)] = std::numeric_limits<double>::infinity();
    touched.clear();
    // Collapses only merge mesh neighbors, so graph neighbors are always
    // reachable; the Euclidean fallback is a guard.
    for (int v : pending) radius = std::max(radius, (vertices[static_cast<size_t>(v)] - vertices[static_cast<size_t>(src)]).norm());
    if (std::isinf(radius)) radius = 0.0;
    g.radii[static_cast<size_t>(k)] = radius;
    if (nv <= target_nodes || radius <= 0.0) continue;
    for (const auto& [v, d] : reached) {
      if (d > radius) continue;
      g.influences[static_cast<size_t>(v)].emplace_back(k, std::exp(-2.0 * d * d / (radius * radius)));
    }
  }

  if (nv <= target_nodes) {
    for (int i = 0; i < nv; ++i) g.influences[static_cast<size_t>(i)] = {{node_of[static_cast<size_t>(i)], 1.0}};
    return g;
  }

  // Vertices outside every radius take their geodesically nearest node.
  std::vector<int> nearest(static_cast<size_t>(nv), -1);
  {
    MinHeap heap3;
    for (int k = 0; k < m; ++k) {
      const int v = g.node_vertex[static_cast<size_t>(k)];
      dist[static_cast<size_t>(v)] = 0.0;
      nearest[static_cast<size_t>(v)] = k;
      heap3.emplace(0.0, v);
    }
    while (!heap3.empty()) {
      const auto [d, v] = heap3.top();
      heap3.pop();
      if (d > dist[static_cast<size_t>(v)]) continue;
      for (const auto& [w, len] : mesh[static_cast<size_t>(v)]) {
        if (d + len < dist[static_cast<size_t>(w)]) {
          dist[static_cast<size_t>(w)] = d + len;
          nearest[static_cast<size_t>(w)] = nearest[static_cast<size_t>(v)];
          heap3.emplace(d + len, w);
        }
      }
    }
  }
  for (int i = 0; i < nv; ++i) {
    auto& inf = g.influences[static_cast<size_t>(i)];
    if (inf.empty()) {
      int k = nearest[static_cast<size_t>(i)];
      if (k < 0) {
        // Isolated vertex: Euclidean nearest node.
        double best = std::numeric_limits<double>::infinity();
        for (int n = 0; n < m; ++n) {
          const double d = (g.nodes[static_cast<size_t>(n)] - vertices[static_cast<size_t>(i)]).norm();
          if (d < best) {
            best = d;
            k = n;
          }
        }
      }
      inf = {{k, 1.0}};
      continue;
    }
    std::sort(inf.begin(), inf.end());
    double s = 0.0;
    for (const auto& e : inf) s += e.second;
    for (auto& e : inf) e.second /= s;
  }
  return g;
}

std::vector<Vec3> apply_graph(const DeformGraph& graph, const std::vector<Vec3>& canonical) {
  if (canonical.size() != graph.influences.size()) throw InputError("apply_graph: vertex count does not match the graph");
  std::vector<Mat3> R(static_cast<size_t>(graph.size()));
  std::vector<uint8_t> identity(static_cast<size_t>(graph.size()));
  for (int k = 0; k < graph.size(); ++k) {
    identity[static_cast<size_t>(k)] = graph.rotations[static_cast<size_t>(k)].isZero(0.0) && graph.translations[static_cast<size_t>(k)].isZero(0.0);
    R[static_cast<size_t>(k)] = exp_so3(graph.rotations[static_cast<size_t>(k)]);
  }
  std::vector<Vec3> out(canonical.size());
  for (size_t i = 0; i < canonical.size(); ++i) {
    const auto& inf = graph.influences[i];
    bool all_identity = true;
    for (const auto& [k, w] : inf) all_identity = all_identity && identity[static_cast<size_t>(k)];
    if (all_identity) {
      out[i] = canonical[i];
      continue;
    }
    Vec3 v = Vec3::Zero();
    for (const auto& [k, w] : inf) {
      const auto s = static_cast<size_t>(k);
      v += w * (R[s] * (canonical[i] - graph.nodes[s]) + graph.nodes[s] + graph.translations[s]);
    }
    out[i] = v;
  }
  return out;
}

double energy_arap(const DeformGraph& graph) {
  double e = 0.0;
  for (int i = 0; i < graph.size(); ++i) {
    const auto si = static_cast<size_t>(i);
    const Mat3 R = exp_so3(graph.rotations[si]);
    for (int j : graph.neighbors[si]) {
      const auto sj = static_cast<size_t>(j);
      const Vec3 gi = graph.nodes[si] + graph.translations[si], gj = graph.nodes[sj] + graph.translations[sj];
      e += ((gi - gj) - R * (graph.nodes[si] - graph.nodes[sj])).squaredNorm();
    }
  }
  return graph.size() > 0 ? e / graph.size() : 0.0;
}

std::vector<ResidualBlock> make_arap_blocks(const DeformGraph& graph, double weight, double length_unit) {
  std::vector<ResidualBlock> blocks;
  for (int i = 0; i < graph.size(); ++i) {
    for (int j : graph.neighbors[static_cast<size_t>(i)]) {
      ResidualBlock b;
      b.name = "E_arap " + std::to_string(i) + "->" + std::to_string(j);
      b.parameters = {6 * i, 6 * i + 1, 6 * i + 2, 6 * i + 3, 6 * i + 4, 6 * i + 5, 6 * j + 3, 6 * j + 4, 6 * j + 5};
      b.num_residuals = 3;
      b.weight = weight;
      const Vec3 edge = graph.nodes[static_cast<size_t>(i)] - graph.nodes[static_cast<size_t>(j)];
      b.evaluate = [i, j, edge, length_unit](const VecX& x, VecX& r, MatX* J) {
        const Vec3 ri = x.segment<3>(6 * i);
        const Vec3 Re = exp_so3(ri) * edge;
        r = length_unit * ((edge + x.segment<3>(6 * i + 3) - x.segment<3>(6 * j + 3)) - Re);
        if (J) {
          J->block<3, 3>(0, 0) = -length_unit * rotate_point_derivative(ri, Re);
          J->block<3, 3>(0, 3) = length_unit * Mat3::Identity();
          J->block<3, 3>(0, 6) = -length_unit * Mat3::Identity();
        }
      };
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

std::vector<ResidualBlock> make_con_graph_blocks(const DeformGraph& graph, const std::vector<Vec3>& canonical,
                                                 const Camera& cam, const std::vector<Correspondence>& corr,
                                                 double weight) {
  std::vector<ResidualBlock> blocks;
  blocks.reserve(corr.size());
  for (const auto& c : corr) {
    const auto& inf = graph.influences[static_cast<size_t>(c.vertex)];
    ResidualBlock b;
    b.name = "E_con vertex " + std::to_string(c.vertex);
    struct Term {
      int node;
      double w;
      Vec3 local;  // canonical vertex relative to the node
      Vec3 node_pos;
    };
    std::vector<Term> terms;
    for (const auto& [k, w] : inf) {
      for (int p = 0; p < 6; ++p) b.parameters.push_back(6 * k + p);
      terms.push_back({k, w, canonical[static_cast<size_t>(c.vertex)] - graph.nodes[static_cast<size_t>(k)],
                       graph.nodes[static_cast<size_t>(k)]});
    }
    b.num_residuals = 1;
    b.weight = weight;
    b.evaluate = [terms, cam, c](const VecX& x, VecX& r, MatX* J) {
      Vec3 v = Vec3::Zero();
      std::vector<Vec3> rotated(terms.size());
      for (size_t t = 0; t < terms.size(); ++t) {
        const int k = terms[t].node;
        rotated[t] = exp_so3(x.segment<3>(6 * k)) * terms[t].local;
        v += terms[t].w * (rotated[t] + terms[t].node_pos + x.segment<3>(6 * k + 3));
      }
      Eigen::Matrix<double, 2, 3> dp;
      const Vec2 px = project_guarded(cam, v, J ? &dp : nullptr);
      r[0] = c.normal.dot(px - c.target);
      if (J) {
        const Eigen::RowVector3d g = c.normal.transpose() * dp;
        for (size_t t = 0; t < terms.size(); ++t) {
          const int k = terms[t].node;
          J->block<1, 3>(0, static_cast<Eigen::Index>(6 * t)) =
              terms[t].w * g * rotate_point_derivative(x.segment<3>(6 * k), rotated[t]);
          J->block<1, 3>(0, static_cast<Eigen::Index>(6 * t + 3)) = terms[t].w * g;
        }
      }
    };
    blocks.push_back(std::move(b));
  }
  return blocks;
}

SurfaceRefineResult refine_surface(DeformGraph graph, const std::vector<Vec3>& canonical, const Tris& triangles,
                                   const Contour& silhouette, const Camera& cam, const RefineConfig& cfg) {
  cfg.validate();
  SurfaceRefineResult res;
  res.graph = std::move(graph);
  res.vertices = apply_graph(res.graph, canonical);
  if (silhouette.empty()) {
    res.flagged = true;
    return res;
  }
  const int m = res.graph.size();
  for (size_t it = 0; it < cfg.w_arap.size(); ++it) {
    const auto boundary = model_boundary_vertices(res.vertices, triangles, cam);
    const auto corr = find_correspondences(boundary, silhouette, cfg.max_dist, cfg.max_angle_deg);
    res.correspondences.push_back(static_cast<int>(corr.size()));
    if (corr.empty()) {
      if (it == 0) res.flagged = true;
      break;
    }
    auto blocks = make_con_graph_blocks(res.graph, canonical, cam, corr, 1.0 / static_cast<double>(corr.size()));
    auto arap = make_arap_blocks(res.graph, cfg.w_arap[it] / m, cfg.arap_unit);
    blocks.insert(blocks.end(), std::make_move_iterator(arap.begin()), std::make_move_iterator(arap.end()));
    VecX x = res.graph.parameters();
    const SolverReport rep = lm_minimize(blocks, x, BoxConstraints::none(static_cast<int>(x.size())), cfg.surface_solver);
    res.objective_before.push_back(rep.initial_objective);
    res.objective_after.push_back(rep.final_objective);
    res.graph.set_parameters(x);
    res.vertices = apply_graph(res.graph, canonical);
  }
  return res;
}

std::vector<std::vector<Vec3>> temporal_smooth(const std::vector<std::vector<Vec3>>& frames, int window) {
  if (window < 1 || window % 2 == 0) throw InputError("smoothing window must be a positive odd number");
  const int n = static_cast<int>(frames.size());
  if (n == 0) return {};
  for (const auto& f : frames)
    if (f.size() != frames.front().size()) throw InputError("temporal_smooth: vertex counts differ between frames");
  std::vector<std::vector<Vec3>> out(frames.size());
  for (int f = 0; f < n; ++f) {
    const int half = std::min({window / 2, f, n - 1 - f});
    out[static_cast<size_t>(f)].assign(frames.front().size(), Vec3::Zero());
    for (int g = f - half; g <= f + half; ++g)
      for (size_t v = 0; v < frames.front().size(); ++v) out[static_cast<size_t>(f)][v] += frames[static_cast<size_t>(g)][v];
    for (auto& v : out[static_cast<size_t>(f)]) v /= 2 * half + 1;
  }
  return out;
}

}  // namespace perfcap
