#pragma once

#include <optional>
#include <string>
#include <vector>

#include "forcelens/forcefield.h"
#include "forcelens/json_util.h"
#include "forcelens/scene_io.h"

namespace forcelens {

// Ground-truth vectors shorter than this are excluded from error means.
inline constexpr double kForceEpsilon = 1e-9;  // N/kg

// Angle between the vectors in degrees, in [0, 180]. Returns nullopt when
// either vector is shorter than kForceEpsilon.
std::optional<double> direction_error(const Vec3& estimate, const Vec3& truth);

// 100 * | |estimate| - |truth| | / |truth|; nullopt when |truth| < kForceEpsilon.
std::optional<double> magnitude_error(const Vec3& estimate, const Vec3& truth);

struct FrameErrors {
  int frame = 0;
  double magnitude = 0.0;  // percent, mean over included samples
  double direction = 0.0;  // degrees
  int samples = 0;
  int excluded_magnitude = 0;
  int excluded_direction = 0;
};

struct ForceErrorReport {
  double magnitude = 0.0;  // pooled mean, percent
  double direction = 0.0;  // pooled mean, degrees
  double magnitude_frame_mean = 0.0;  // mean of per-frame means
  double direction_frame_mean = 0.0;
  int samples = 0;
  int excluded_magnitude = 0;
  int excluded_direction = 0;
  int missing_frames = 0;  // frames the estimate lacks; scored as a zero force
  std::vector<FrameErrors> frames;
  std::string policy;
};

// Compares both fields at the true particle positions of every frame
// transition f = 0..T-1, evaluated at the mid-frame time (f + 1/2) * frame_dt
// with frame index f. Frames the estimate has no parameters for count as a
// zero estimate. Throws UsageError when no sample survives exclusion.
ForceErrorReport field_errors(const ForceField& estimate, const ForceField& truth,
                              const Trajectory& trajectory, double frame_dt);

// Root-mean-square per-particle, per-frame position distance, m.
double trajectory_rmse(const Trajectory& a, const Trajectory& b);

Json to_json(const ForceErrorReport& report);

struct EvalRow {
  std::string scenario;
  std::string representation;
  double magnitude = 0.0;  // percent
  double direction = 0.0;  // degrees
  double rmse = 0.0;       // m
};

Json to_json(const EvalRow& row);
EvalRow eval_row_from_json(const Json& j);

// Aligned text table with columns scenario, representation, Mag. Error (%),
// Dir. Error (deg), Traj. RMSE (m).
std::string format_table(const std::vector<EvalRow>& rows);

}  // namespace forcelens
