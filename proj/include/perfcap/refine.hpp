#pragma once

#include <array>
#include <utility>
#include <vector>

#include "perfcap/kinematics.hpp"
#include "perfcap/raster.hpp"
#include "perfcap/solver.hpp"

namespace perfcap {

struct RefineConfig {
  double w_stab = 0.06;
  int pose_iterations = 3;
  std::vector<double> w_arap = {0.6, 0.2};  // one entry per surface ICP iteration
  int graph_nodes = 1000;
  int smooth_window = 5;
  double max_dist = 30.0;       // pixels
  double max_angle_deg = 45.0;  // normal compatibility
  /// Units per meter for joint offsets in E_stab (100: centimetres); E_stab
  /// is averaged over joints.
  double stab_unit = 100.0;
  /// Units per meter for node offsets in E_arap (100: centimetres).
  double arap_unit = 100.0;
  SolverOptions pose_solver{30, 1e-10, 1e-12, 1e-10, 1e-3, 1e16, 1};
  SolverOptions surface_solver{20, 1e-10, 1e-12, 1e-10, 1e-3, 1e16, 1};

  /// Throws InputError for non-positive weights or an even window.
  void validate() const;
};

/// (1/|S|) sum_k (n_k . (Pi(v_k) - s_k))^2 over the correspondences.
double energy_con(const std::vector<Vec3>& vertices, const Camera& cam, const std::vector<Correspondence>& corr);

/// E_con as a function of the pose (parameters 0..dof-1).
ResidualBlock make_con_pose_block(const ActorTemplate& actor, const SkeletonRig& rig, const Camera& cam,
                                  const std::vector<Correspondence>& corr, double weight);
/// u (J_i(S) - anchor_i) for every joint, u = length_unit.
ResidualBlock make_stab_block(const SkeletonRig& rig, const std::vector<Vec3>& anchor, double weight,
                              double length_unit);

struct PoseRefineResult {
  SkeletonPose pose;
  bool flagged = false;  // no correspondences; pose returned unchanged
  std::vector<int> correspondences;  // per iteration
  std::vector<double> objective_before, objective_after;  // on each iteration's correspondences
  std::vector<double> econ_before, econ_after;
};

/// Silhouette ICP: correspondences from the skinned mesh's boundary, then a
/// bounded LM solve of E_con + w_stab E_stab anchored at the input pose. An
/// iteration that would raise E_con above the previous one is dropped and
/// ends the loop.
PoseRefineResult refine_pose(const SkeletonPose& pose, const ActorTemplate& actor, const SkeletonRig& rig,
                             const Camera& cam, const Contour& silhouette, const RefineConfig& cfg = {});

/// Embedded deformation graph over a mesh. Node k warps a point by
/// W_k(x) = R_k (x - g_k) + g_k + t_k, R_k = exp(rotations[k]).
struct DeformGraph {
  std::vector<Vec3> nodes;
  std::vector<int> node_vertex;                // mesh vertex each node sits on
  std::vector<std::vector<int>> neighbors;     // sorted, symmetric
  std::vector<double> radii;
  std::vector<std::vector<std::pair<int, double>>> influences;  // per vertex: (node, weight)
  std::vector<Vec3> rotations;
  std::vector<Vec3> translations;

  int size() const { return static_cast<int>(nodes.size()); }
  /// Per node [r (3), t (3)].
  VecX parameters() const;
  void set_parameters(const VecX& x);
  void reset();
};

/// Shortest-edge collapse to `target_nodes` survivors, geodesic radii over
/// the original mesh edges and Gaussian blend weights with sigma = r / 2.
DeformGraph build_graph(const std::vector<Vec3>& vertices, const std::vector<std::array<int, 3>>& triangles,
                        int target_nodes = 1000);

std::vector<Vec3> apply_graph(const DeformGraph& graph, const std::vector<Vec3>& canonical);

/// (1/M) sum_i sum_{j in N_i} |(g_i - g_j) - R_i (gh_i - gh_j)|^2, g = gh + t.
double energy_arap(const DeformGraph& graph);

/// One block per directed edge over graph parameters; residuals scaled by
/// `length_unit`, weight applied as given.
std::vector<ResidualBlock> make_arap_blocks(const DeformGraph& graph, double weight, double length_unit);
/// One single-residual E_con block per correspondence over graph parameters.
std::vector<ResidualBlock> make_con_graph_blocks(const DeformGraph& graph, const std::vector<Vec3>& canonical,
                                                 const Camera& cam, const std::vector<Correspondence>& corr,
                                                 double weight);

struct SurfaceRefineResult {
  std::vector<Vec3> vertices;
  DeformGraph graph;
  bool flagged = false;
  std::vector<int> correspondences;
  std::vector<double> objective_before, objective_after;
};

/// One ICP iteration per entry of cfg.w_arap, each solving
/// E_con + w_arap E_arap over all node parameters.
SurfaceRefineResult refine_surface(DeformGraph graph, const std::vector<Vec3>& canonical,
                                   const std::vector<std::array<int, 3>>& triangles, const Contour& silhouette,
                                   const Camera& cam, const RefineConfig& cfg = {});

/// Per-vertex centered box filter; near the ends the window shrinks
/// symmetrically to fit.
std::vector<std::vector<Vec3>> temporal_smooth(const std::vector<std::vector<Vec3>>& frames, int window = 5);

}  // namespace perfcap
