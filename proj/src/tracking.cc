#include "forcelens/tracking.h"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "forcelens/errors.h"

namespace forcelens {

double camera_depth(const Camera& camera, const Vec3& world) {
  return (camera.rotation * world + camera.translation).z();
}

Vec2 project(const Camera& camera, const Vec3& world) {
  const Vec3 c = camera.rotation * world + camera.translation;
  if (!(c.z() > 0.0)) throw UsageError("project: point is at or behind the camera");
  return {camera.fx * c.x() / c.z() + camera.cx, camera.fy * c.y() / c.z() + camera.cy};
}

Vec3 unproject(const Camera& camera, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) throw UsageError("unproject: depth must be > 0");
  const Vec3 c((pixel.x() - camera.cx) / camera.fx * depth,
               (pixel.y() - camera.cy) / camera.fy * depth, depth);
  return camera.rotation.transpose() * (c - camera.translation);
}

void validate(const TrackSet& tracks, bool require_rigid_basis) {
  const int N = tracks.keypoint_count();
  const int T = tracks.frame_count();
  if (tracks.visible.size() != static_cast<std::size_t>(N) ||
      tracks.depths0.size() != static_cast<std::size_t>(N)) {
    throw InvariantError("track_shape", "visibility and depth arrays must have N entries");
  }
  for (int n = 0; n < N; ++n) {
    if (tracks.pixels[n].size() != static_cast<std::size_t>(T) ||
        tracks.visible[n].size() != static_cast<std::size_t>(T)) {
      throw InvariantError("track_shape", "keypoint " + std::to_string(n) + " has a ragged track");
    }
    if (!(tracks.depths0[n] > 0.0)) {
      throw InvariantError("depth", "keypoint " + std::to_string(n) + " has nonpositive depth");
    }
    for (int t = 0; t < T; ++t) {
      const Vec2& p = tracks.pixels[n][t];
      if (!tracks.visible[n][t]) continue;
      if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= tracks.camera.width &&
            p.y() <= tracks.camera.height)) {
        throw InvariantError("image_bounds", "keypoint " + std::to_string(n) + " frame " +
                                                 std::to_string(t) + " lies outside the image");
      }
    }
  }
  if (!require_rigid_basis) return;
  if (N < 4) throw InvariantError("keypoint_count", "ARAP lifting needs at least 4 keypoints");
  if (T > 0) {
    Eigen::MatrixXd X(N, 3);
    for (int n = 0; n < N; ++n) {
      X.row(n) = unproject(tracks.camera, tracks.pixels[n][0], tracks.depths0[n]).transpose();
    }
    X.rowwise() -= X.colwise().mean();
    const Eigen::Vector3d s = Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues();
    if (!(s(2) > 1e-9 * s(0))) {
      throw InvariantError("keypoint_coplanar", "frame-0 keypoints are coplanar");
    }
  }
}

TrackSet synth_tracks(const Trajectory& trajectory, const Camera& camera,
                      std::span<const int> keypoints, const SynthTrackOptions& options) {
  if (!(options.pixel_noise >= 0.0) || !(options.depth_noise >= 0.0)) {
    throw UsageError("synth_tracks: noise levels must be >= 0");
  }
  const std::size_t particles = trajectory.empty() ? 0 : trajectory[0].positions.size();
  TrackSet out;
  out.camera = camera;
  out.keypoints.assign(keypoints.begin(), keypoints.end());
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t N = keypoints.size();
  out.pixels.assign(N, {});
  out.visible.assign(N, {});
  out.depths0.assign(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    if (keypoints[n] < 0 || static_cast<std::size_t>(keypoints[n]) >= particles) {
      throw UsageError("synth_tracks: keypoint index " + std::to_string(keypoints[n]) +
                       " out of range");
    }
  }
  for (const auto& frame : trajectory) {
    for (std::size_t n = 0; n < N; ++n) {
      Vec2 p = project(camera, frame.positions[keypoints[n]]);
      if (options.pixel_noise > 0.0) {
        const double du = normal(rng), dv = normal(rng);
        p += options.pixel_noise * Vec2(du, dv);
      }
      const bool inside =
          p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= camera.width && p.y() <= camera.height;
      out.pixels[n].push_back(p);
      out.visible[n].push_back(inside ? 1 : 0);
    }
  }
  for (std::size_t n = 0; n < N && !trajectory.empty(); ++n) {
    const double d = camera_depth(camera, trajectory[0].positions[keypoints[n]]);
    const double noise = options.depth_noise > 0.0 ? options.depth_noise * normal(rng) : 0.0;
    out.depths0[n] = d * (1.0 + noise);
  }
  return out;
}

std::vector<int> farthest_point_keypoints(std::span<const Vec3> positions, int count) {
  const int n = static_cast<int>(positions.size());
  if (count < 1 || count > n) throw UsageError("farthest_point_keypoints: bad count");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : positions) centroid += p;
  centroid /= n;
  int first = 0;
  for (int i = 1; i < n; ++i) {
    if ((positions[i] - centroid).squaredNorm() > (positions[first] - centroid).squaredNorm()) {
      first = i;
    }
  }
  std::vector<int> chosen{first};
  std::vector<double> dist(n);
  for (int i = 0; i < n; ++i) dist[i] = (positions[i] - positions[first]).squaredNorm();
  while (static_cast<int>(chosen.size()) < count) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (dist[i] > dist[best]) best = i;
    }
    chosen.push_back(best);
    for (int i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (positions[i] - positions[best]).squaredNorm());
    }
  }
  return chosen;
}

std::vector<Edge> knn_edges(std::span<const Vec3> points, int k) {
  const int n = static_cast<int>(points.size());
  if (k < 1) throw UsageError("knn_edges: k must be >= 1");
  std::vector<Edge> edges;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return (points[a] - points[i]).squaredNorm() < (points[b] - points[i]).squaredNorm();
    });
    int added = 0;
    for (int j : order) {
      if (j == i) continue;
      if (added++ == k) break;
      edges.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

double arap_loss(std::span<const Vec3> prev, std::span<const Vec3> next,
                 std::span<const Edge> edges) {
  if (edges.empty()) throw UsageError("arap_loss: edge set is empty");
  if (prev.size() != next.size()) throw ShapeError("arap_loss: frame sizes differ");
  double sum = 0.0;
  for (const auto& [i, j] : edges) {
    sum += ((next[i] - next[j]) - (prev[i] - prev[j])).norm();
  }
  return sum;
}

namespace {

struct LiftObjective {
  const TrackSet& tracks;
  std::span<const Vec3> prev;
  int t;
  std::span<const Edge> edges;
  double lambda;

  double reprojection(const std::vector<Vec3>& P, std::vector<Vec3>* grad) const {
    const Camera& cam = tracks.camera;
    double e = 0.0;
    for (std::size_t n = 0; n < P.size(); ++n) {
      if (!tracks.visible[n][t]) continue;
      const Vec3 c = cam.rotation * P[n] + cam.translation;
      if (!(c.z() > 0.0)) return std::numeric_limits<double>::infinity();
      const Vec2& obs = tracks.pixels[n][t];
      const double r0 = c.x() / c.z() + (cam.cx - obs.x()) / cam.fx;
      const double r1 = c.y() / c.z() + (cam.cy - obs.y()) / cam.fy;
      e += r0 * r0 + r1 * r1;
      if (grad) {
        const Vec3 gc(2.0 * r0 / c.z(), 2.0 * r1 / c.z(),
                      -2.0 * (r0 * c.x() + r1 * c.y()) / (c.z() * c.z()));
        (*grad)[n] += cam.rotation.transpose() * gc;
      }
    }
    return e;
  }

  double arap(const std::vector<Vec3>& P, std::vector<Vec3>* grad) const {
    double e = 0.0;
    for (const auto& [i, j] : edges) {
      const Vec3 d = (P[i] - P[j]) - (prev[i] - prev[j]);
      e += d.squaredNorm();
      if (grad) {
        (*grad)[i] += 2.0 * lambda * d;
        (*grad)[j] -= 2.0 * lambda * d;
      }
    }
    return e;
  }

  double operator()(const std::vector<Vec3>& P, std::vector<Vec3>* grad) const {
    if (grad) grad->assign(P.size(), Vec3::Zero());
    const double r = reprojection(P, grad);
    return r + lambda * arap(P, grad);
  }
};

}  // namespace

std::vector<Vec3> lift_frame(const TrackSet& tracks, std::span<const Vec3> prev, int t_next,
                             std::span<const Edge> edges, const LiftConfig& config,
                             LiftStats* stats) {
  if (t_next < 1 || t_next >= tracks.frame_count()) {
    throw UsageError("lift_frame: frame " + std::to_string(t_next) + " out of range");
  }
  if (prev.size() != static_cast<std::size_t>(tracks.keypoint_count())) {
    throw ShapeError("lift_frame: previous keypoints do not match the track set");
  }
  if (!(config.lambda >= 0.0)) throw UsageError("lift_frame: lambda must be >= 0");
  const LiftObjective objective{tracks, prev, t_next, edges, config.lambda};

  // Step size from a curvature bound of both terms at the start point.
  std::vector<int> degree(prev.size(), 0);
  for (const auto& [i, j] : edges) {
    ++degree[i];
    ++degree[j];
  }
  const int max_degree = degree.empty() ? 0 : *std::max_element(degree.begin(), degree.end());
  double curvature = 4.0 * config.lambda * max_degree;
  double rep_curv = 0.0;
  for (const auto& p : prev) {
    const Vec3 c = tracks.camera.rotation * p + tracks.camera.translation;
    const double z2 = c.z() * c.z();
    rep_curv = std::max(rep_curv, 2.0 * (2.0 / z2 + (c.x() * c.x() + c.y() * c.y()) / (z2 * z2)));
  }
  curvature += rep_curv;
  double alpha = 1.0 / std::max(curvature, 1e-12);

  std::vector<Vec3> P(prev.begin(), prev.end());
  std::vector<Vec3> vel(P.size(), Vec3::Zero()), grad;
  double energy = objective(P, &grad);
  const double slack = 1e-14 * energy;
  int increases = 0;
  int it = 0;
  for (; it < config.max_iterations; ++it) {
    double step = 0.0;
    for (std::size_t n = 0; n < P.size(); ++n) {
      vel[n] = config.momentum * vel[n] - alpha * grad[n];
      P[n] += vel[n];
      step += vel[n].squaredNorm();
    }
    const double e = objective(P, &grad);
    if (!std::isfinite(e)) {
      throw SimulationError("lift_frame: objective became non-finite at frame " +
                            std::to_string(t_next) + " after " + std::to_string(it) +
                            " iterations");
    }
    // Drop the momentum once it points uphill.
    double uphill = 0.0;
    for (std::size_t n = 0; n < P.size(); ++n) uphill += grad[n].dot(vel[n]);
    if (uphill > 0.0) {
      for (auto& v : vel) v.setZero();
    }
    if (e > energy + slack) {
      if (++increases >= config.patience) {
        std::ostringstream msg;
        msg << "lift_frame diverged at frame " << t_next << ": objective rose for " << increases
            << " consecutive iterations (now " << e << ", step " << alpha << ")";
        throw SimulationError(msg.str());
      }
    } else {
      increases = 0;
    }
    energy = e;
    if (std::sqrt(step) < config.step_tol) {
      ++it;
      break;
    }
  }
  if (stats) {
    stats->iterations = it;
    stats->objective = energy;
    stats->reprojection = objective.reprojection(P, nullptr);
    stats->arap = edges.empty() ? 0.0 : arap_loss(prev, P, edges);
  }
  return P;
}

void lift_tracks(TrackSet& tracks, const LiftConfig& config, std::vector<LiftStats>* stats) {
  validate(tracks, true);
  const int N = tracks.keypoint_count();
  const int T = tracks.frame_count();
  tracks.lifted.assign(T, std::vector<Vec3>(N));
  for (int n = 0; n < N; ++n) {
    tracks.lifted[0][n] = unproject(tracks.camera, tracks.pixels[n][0], tracks.depths0[n]);
  }
  const auto edges = knn_edges(tracks.lifted[0], std::min(config.knn, N - 1));
  if (stats) stats->assign(T, LiftStats{});
  for (int t = 1; t < T; ++t) {
    tracks.lifted[t] =
        lift_frame(tracks, tracks.lifted[t - 1], t, edges, config, stats ? &(*stats)[t] : nullptr);
  }
}

BarycentricBinding bind_barycentric(std::span<const Vec3> particles,
                                    std::span<const Vec3> keypoints0) {
  const int K = static_cast<int>(keypoints0.size());
  if (K < 3) throw UsageError("bind_barycentric: need at least 3 keypoints");
  BarycentricBinding b;
  b.indices.resize(particles.size());
  b.weights.resize(particles.size());
  b.residuals.resize(particles.size());
  b.fallback.resize(particles.size());
  std::vector<int> order(K);
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const Vec3& x = particles[p];
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + 3, order.end(), [&](int a, int c) {
      const double da = (keypoints0[a] - x).squaredNorm();
      const double dc = (keypoints0[c] - x).squaredNorm();
      return da < dc || (da == dc && a < c);
    });
    const std::array<int, 3> idx{order[0], order[1], order[2]};
    const Vec3 &Pi = keypoints0[idx[0]], &Pj = keypoints0[idx[1]], &Pk = keypoints0[idx[2]];

    Eigen::Matrix<double, 3, 2> M;
    M.col(0) = Pi - Pk;
    M.col(1) = Pj - Pk;
    Eigen::JacobiSVD<Eigen::Matrix<double, 3, 2>> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector2d s = svd.singularValues();
    Vec3 alpha;
    const bool collinear = !(s(1) > 1e-9 * s(0));
    if (!collinear) {
      const Eigen::Vector2d ab = svd.solve(x - Pk);
      alpha = Vec3(ab(0), ab(1), 1.0 - ab(0) - ab(1));
    } else {
      Vec3 inv;
      for (int a = 0; a < 3; ++a) {
        const double d = (keypoints0[idx[a]] - x).norm();
        inv(a) = d == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / d;
      }
      if (std::isinf(inv.maxCoeff())) {
        for (int a = 0; a < 3; ++a) inv(a) = std::isinf(inv(a)) ? 1.0 : 0.0;
      }
      alpha = inv;
    }
    alpha /= alpha.sum();
    b.indices[p] = idx;
    b.weights[p] = alpha;
    b.fallback[p] = collinear ? 1 : 0;
    b.residuals[p] = (alpha(0) * Pi + alpha(1) * Pj + alpha(2) * Pk - x).norm();
  }
  return b;
}

std::vector<Vec3> interpolate_targets(const BarycentricBinding& binding,
                                      std::span<const Vec3> keypoints) {
  std::vector<Vec3> out(binding.indices.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const auto& idx = binding.indices[p];
    for (int i : idx) {
      if (i < 0 || static_cast<std::size_t>(i) >= keypoints.size()) {
        throw ShapeError("interpolate_targets: binding refers to a missing keypoint");
      }
    }
    const Vec3& a = binding.weights[p];
    out[p] = a(0) * keypoints[idx[0]] + a(1) * keypoints[idx[1]] + a(2) * keypoints[idx[2]];
  }
  return out;
}

Json tracks_to_json(const TrackSet& tracks) {
  Json px = Json::array(), vis = Json::array();
  for (int n = 0; n < tracks.keypoint_count(); ++n) {
    Json row = Json::array();
    for (const auto& p : tracks.pixels[n]) row.push_back({p.x(), p.y()});
    px.push_back(row);
    vis.push_back(tracks.visible[n]);
  }
  return {{"version", kTrackSchemaVersion},
          {"N", tracks.keypoint_count()},
          {"T", tracks.frame_count()},
          {"camera", to_json(tracks.camera)},
          {"keypoints", tracks.keypoints},
          {"tracks", px},
          {"visible", vis},
          {"depths0", tracks.depths0}};
}

TrackSet tracks_from_json(const Json& j) {
  const auto version = require_as<std::string>(j, "version", "");
  if (version != kTrackSchemaVersion) {
    throw VersionError("unsupported track schema version '" + version + "'");
  }
  TrackSet t;
  const int N = require_as<int>(j, "N", "");
  const int T = require_as<int>(j, "T", "");
  t.camera = camera_from_json(require(j, "camera", ""));
  t.keypoints = require_as<std::vector<int>>(j, "keypoints", "");
  const auto px = require_as<std::vector<std::vector<std::array<double, 2>>>>(j, "tracks", "");
  t.visible = require_as<std::vector<std::vector<std::uint8_t>>>(j, "visible", "");
  t.depths0 = require_as<std::vector<double>>(j, "depths0", "");
  if (px.size() != static_cast<std::size_t>(N)) throw ParseError("field 'tracks': expected N rows");
  for (const auto& row : px) {
    if (row.size() != static_cast<std::size_t>(T)) {
      throw ParseError("field 'tracks': expected T observations per keypoint");
    }
    std::vector<Vec2> r;
    for (const auto& p : row) r.emplace_back(p[0], p[1]);
    t.pixels.push_back(std::move(r));
  }
  validate(t, false);
  return t;
}

void save_tracks(const TrackSet& tracks, const std::string& path) {
  write_text_file(path, tracks_to_json(tracks).dump(1) + "\n");
}

TrackSet load_tracks(const std::string& path) {
  return tracks_from_json(parse_json_text(read_text_file(path), path));
}

void save_targets(const TargetSequence& targets, const std::string& path) {
  std::string text;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<double> flat;
    flat.reserve(3 * targets[t].size());
    for (const auto& v : targets[t]) flat.insert(flat.end(), {v.x(), v.y(), v.z()});
    text += Json{{"frame", t}, {"targets", flat}}.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

TargetSequence load_targets(const std::string& path) {
  TargetSequence out;
  std::istringstream in(read_text_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json rec = parse_json_text(line, path + " line " + std::to_string(lineno));
    const auto frame = require_as<std::size_t>(rec, "frame", "");
    if (frame != out.size()) throw ParseError(path + ": frames must be consecutive from 0");
    const auto flat = require_as<std::vector<double>>(rec, "targets", "");
    if (flat.size() % 3 != 0) throw ParseError(path + ": targets length is not a multiple of 3");
    std::vector<Vec3> row(flat.size() / 3);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace forcelens
