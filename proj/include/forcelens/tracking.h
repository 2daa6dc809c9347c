#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forcelens/json_util.h"
#include "forcelens/scene.h"
#include "forcelens/scene_io.h"

namespace forcelens {

inline constexpr char kTrackSchemaVersion[] = "forcelens.tracks/1";

// Camera-frame depth of a world point.
double camera_depth(const Camera& camera, const Vec3& world);

// Pinhole projection; throws UsageError for points at or behind the camera.
Vec2 project(const Camera& camera, const Vec3& world);

// World point at camera-frame depth d along the pixel's ray; d must be > 0.
Vec3 unproject(const Camera& camera, const Vec2& pixel, double depth);

// Keypoint observations of N keypoints over T frames.
struct TrackSet {
  Camera camera;
  std::vector<int> keypoints;                  // source particle indices (synthetic)
  std::vector<std::vector<Vec2>> pixels;       // [n][t], px
  std::vector<std::vector<std::uint8_t>> visible;  // [n][t]
  std::vector<double> depths0;                 // [n], m
  std::vector<std::vector<Vec3>> lifted;       // [t][n], m; filled by lift_tracks

  int keypoint_count() const { return static_cast<int>(pixels.size()); }
  int frame_count() const { return pixels.empty() ? 0 : static_cast<int>(pixels[0].size()); }
};

// Checks shapes, image bounds of visible observations, positive depths and
// (when `require_rigid_basis`) at least 4 non-coplanar frame-0 keypoints.
void validate(const TrackSet& tracks, bool require_rigid_basis);

struct SynthTrackOptions {
  double pixel_noise = 0.0;  // std of Gaussian pixel noise, px
  double depth_noise = 0.0;  // std of multiplicative frame-0 depth noise
  std::uint64_t seed = 0;
};

TrackSet synth_tracks(const Trajectory& trajectory, const Camera& camera,
                      std::span<const int> keypoints, const SynthTrackOptions& options);

// Deterministic farthest-point sample of `count` particle indices, seeded at
// the particle farthest from the centroid.
std::vector<int> farthest_point_keypoints(std::span<const Vec3> positions, int count);

using Edge = std::pair<int, int>;

// Symmetric k-nearest-neighbour graph, each undirected edge once with i < j.
std::vector<Edge> knn_edges(std::span<const Vec3> points, int k);

// Sum over edges of |(Pn_i - Pn_j) - (Pp_i - Pp_j)|.
double arap_loss(std::span<const Vec3> prev, std::span<const Vec3> next,
                 std::span<const Edge> edges);

struct LiftConfig {
  double lambda = 1.0;
  int knn = 6;
  int max_iterations = 20000;
  double momentum = 0.99;
  double step_tol = 1e-12;  // m
  int patience = 50;
};

struct LiftStats {
  int iterations = 0;
  double objective = 0.0;
  double reprojection = 0.0;  // sum of squared focal-normalized residuals
  double arap = 0.0;          // arap_loss at the solution
};

// Solves for the keypoints at frame t_next given `prev` (frame t_next - 1) by
// minimizing sum |(project(P) - p) / f|^2 + lambda sum_edges |dP - dP_prev|^2
// with momentum gradient descent from P = prev. Throws SimulationError when
// the objective keeps increasing for `patience` iterations.
std::vector<Vec3> lift_frame(const TrackSet& tracks, std::span<const Vec3> prev, int t_next,
                             std::span<const Edge> edges, const LiftConfig& config,
                             LiftStats* stats = nullptr);

// Frame 0 by unprojection, then lift_frame for each adjacent pair. Edges are
// built on frame 0. Fills tracks.lifted.
void lift_tracks(TrackSet& tracks, const LiftConfig& config,
                 std::vector<LiftStats>* stats = nullptr);

struct BarycentricBinding {
  std::vector<std::array<int, 3>> indices;
  std::vector<Vec3> weights;      // alpha_i, alpha_j, alpha_k
  std::vector<double> residuals;  // frame-0 reconstruction distance, m
  std::vector<std::uint8_t> fallback;  // inverse-distance weights were used
};

// Frame-0 binding of each particle to its 3 nearest keypoints.
BarycentricBinding bind_barycentric(std::span<const Vec3> particles,
                                    std::span<const Vec3> keypoints0);

std::vector<Vec3> interpolate_targets(const BarycentricBinding& binding,
                                      std::span<const Vec3> keypoints);

Json tracks_to_json(const TrackSet& tracks);
TrackSet tracks_from_json(const Json& j);
void save_tracks(const TrackSet& tracks, const std::string& path);
TrackSet load_tracks(const std::string& path);

// Per-frame target positions; targets[t][particle].
using TargetSequence = std::vector<std::vector<Vec3>>;
void save_targets(const TargetSequence& targets, const std::string& path);
TargetSequence load_targets(const std::string& path);

}  // namespace forcelens
