#include "forcelens/evalmetrics.h"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "forcelens/errors.h"

namespace forcelens {

std::optional<double> direction_error(const Vec3& estimate, const Vec3& truth) {
  const double ne = estimate.norm(), nt = truth.norm();
  if (ne < kForceEpsilon || nt < kForceEpsilon) return std::nullopt;
  // atan2 keeps small angles accurate where acos of the cosine would not.
  return std::atan2(estimate.cross(truth).norm(), estimate.dot(truth)) * 180.0 / std::numbers::pi;
}

std::optional<double> magnitude_error(const Vec3& estimate, const Vec3& truth) {
  const double nt = truth.norm();
  if (nt < kForceEpsilon) return std::nullopt;
  return 100.0 * std::abs(estimate.norm() - nt) / nt;
}

ForceErrorReport field_errors(const ForceField& estimate, const ForceField& truth,
                              const Trajectory& trajectory, double frame_dt) {
  if (trajectory.size() < 2) throw UsageError("field_errors: trajectory needs at least 2 frames");
  ForceErrorReport out;
  out.policy = "true particle positions at each frame start, mid-frame time";
  double mag_sum = 0.0, dir_sum = 0.0;
  int mag_n = 0, dir_n = 0;
  int mag_frames = 0, dir_frames = 0;
  for (std::size_t f = 0; f + 1 < trajectory.size(); ++f) {
    const auto& x = trajectory[f].positions;
    const double t = (static_cast<double>(f) + 0.5) * frame_dt;
    const int frame = static_cast<int>(f);
    std::vector<Vec3> est(x.size(), Vec3::Zero()), gt(x.size());
    if (estimate.has_frame(frame)) {
      estimate.query_batch(x, t, frame, est);
    } else {
      ++out.missing_frames;
    }
    truth.query_batch(x, t, frame, gt);
    FrameErrors fe;
    fe.frame = frame;
    double fm = 0.0, fd = 0.0;
    int nm = 0, nd = 0;
    for (std::size_t p = 0; p < x.size(); ++p) {
      ++fe.samples;
      if (const auto m = magnitude_error(est[p], gt[p])) {
        fm += *m;
        ++nm;
      } else {
        ++fe.excluded_magnitude;
      }
      if (const auto d = direction_error(est[p], gt[p])) {
        fd += *d;
        ++nd;
      } else {
        ++fe.excluded_direction;
      }
    }
    fe.magnitude = nm ? fm / nm : 0.0;
    fe.direction = nd ? fd / nd : 0.0;
    mag_sum += fm;
    dir_sum += fd;
    mag_n += nm;
    dir_n += nd;
    if (nm) {
      out.magnitude_frame_mean += fe.magnitude;
      ++mag_frames;
    }
    if (nd) {
      out.direction_frame_mean += fe.direction;
      ++dir_frames;
    }
    out.samples += fe.samples;
    out.excluded_magnitude += fe.excluded_magnitude;
    out.excluded_direction += fe.excluded_direction;
    out.frames.push_back(fe);
  }
  if (mag_n == 0 && dir_n == 0) {
    throw UsageError("field_errors: every sample was excluded (ground truth below " +
                     std::to_string(kForceEpsilon) + " N/kg)");
  }
  out.magnitude = mag_n ? mag_sum / mag_n : 0.0;
  out.direction = dir_n ? dir_sum / dir_n : 0.0;
  if (mag_frames) out.magnitude_frame_mean /= mag_frames;
  if (dir_frames) out.direction_frame_mean /= dir_frames;
  return out;
}

double trajectory_rmse(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) {
    throw ShapeError("trajectory_rmse: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " frames");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    const auto& pa = a[f].positions;
    const auto& pb = b[f].positions;
    if (pa.size() != pb.size()) {
      throw ShapeError("trajectory_rmse: particle count differs at frame " + std::to_string(f));
    }
    for (std::size_t p = 0; p < pa.size(); ++p) sum += (pa[p] - pb[p]).squaredNorm();
    n += pa.size();
  }
  return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

Json to_json(const ForceErrorReport& r) {
  Json frames = Json::array();
  for (const auto& f : r.frames) {
    frames.push_back({{"frame", f.frame},
                      {"magnitude_error_pct", f.magnitude},
                      {"direction_error_deg", f.direction},
                      {"samples", f.samples},
                      {"excluded_magnitude", f.excluded_magnitude},
                      {"excluded_direction", f.excluded_direction}});
  }
  return {{"magnitude_error_pct", r.magnitude},
          {"direction_error_deg", r.direction},
          {"magnitude_error_pct_frame_mean", r.magnitude_frame_mean},
          {"direction_error_deg_frame_mean", r.direction_frame_mean},
          {"samples", r.samples},
          {"excluded_magnitude", r.excluded_magnitude},
          {"excluded_direction", r.excluded_direction},
          {"missing_frames", r.missing_frames},
          {"policy", r.policy},
          {"frames", frames}};
}

Json to_json(const EvalRow& row) {
  return {{"scenario", row.scenario},
          {"representation", row.representation},
          {"magnitude_error_pct", row.magnitude},
          {"direction_error_deg", row.direction},
          {"trajectory_rmse_m", row.rmse}};
}

EvalRow eval_row_from_json(const Json& j) {
  return {require_as<std::string>(j, "scenario", ""),
          require_as<std::string>(j, "representation", ""),
          require_as<double>(j, "magnitude_error_pct", ""),
          require_as<double>(j, "direction_error_deg", ""),
          require_as<double>(j, "trajectory_rmse_m", "")};
}

std::string format_table(const std::vector<EvalRow>& rows) {
  const std::vector<std::string> head{"scenario", "representation", "Mag. Error (%)",
                                      "Dir. Error (deg)", "Traj. RMSE (m)"};
  std::vector<std::vector<std::string>> cells{head};
  char buf[64];
  for (const auto& r : rows) {
    std::vector<std::string> line{r.scenario, r.representation};
    std::snprintf(buf, sizeof buf, "%.2f", r.magnitude);
    line.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "%.2f", r.direction);
    line.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "%.3e", r.rmse);
    line.emplace_back(buf);
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& s = cells[i][c];
      const std::string pad(width[c] - s.size(), ' ');
      out += c < 2 ? s + pad : pad + s;  // text left, numbers right
      out += c + 1 < cells[i].size() ? "  " : "\n";
    }
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

}  // namespace forcelens
