#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forcelens/adjoint.h"
#include "forcelens/evalmetrics.h"
#include "forcelens/forcefield.h"
#include "forcelens/json_util.h"
#include "forcelens/recover.h"
#include "forcelens/scene.h"
#include "forcelens/tracking.h"

namespace forcelens::cli {

inline constexpr char kManifestVersion[] = "forcelens.manifest/1";
inline constexpr char kManifestFile[] = "manifest.json";

// A synthetic scenario: scene, ground-truth field, sequence length and the
// keypoint tracker settings.
struct Preset {
  std::string name;
  Scene scene;
  GroundTruthFieldSpec field;
  int frames = 10;
  int keypoints = 8;
  SynthTrackOptions tracks;
};

// Every bundled preset name, in display order.
std::vector<std::string> preset_names();
// Throws UsageError listing the valid names.
Preset make_preset(const std::string& name);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

// One command invocation recorded in a run directory.
struct CommandRecord {
  std::string command;
  Json config;
  std::vector<std::string> inputs;   // paths as given
  std::vector<std::string> outputs;  // file names inside the run directory
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

// manifest.json: the command history of a directory plus the SHA-256 of
// every artifact any command wrote there.
struct RunManifest {
  std::vector<CommandRecord> commands;
  std::vector<std::pair<std::string, std::string>> artifacts;  // file name, hash

  // Hash recorded for `file`, if any.
  std::optional<std::string> hash_of(const std::string& file) const;
};

Json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const Json& j);
// An absent manifest reads as empty.
RunManifest load_manifest(const std::string& dir);
// Hashes `record.outputs`, appends the record and rewrites the manifest.
void record_command(const std::string& dir, CommandRecord record);
// File names whose current hash differs from the recorded one (or that are
// missing). Empty means the directory verifies.
std::vector<std::string> verify_manifest(const std::string& dir);

// Run-directory file names.
namespace files {
inline constexpr char kScene[] = "scene.json";
inline constexpr char kFieldSpec[] = "field_spec.json";
inline constexpr char kTrajectory[] = "trajectory.jsonl";
inline constexpr char kTracks[] = "tracks.json";
inline constexpr char kTargets[] = "targets.jsonl";
inline constexpr char kField[] = "field.json";
inline constexpr char kReport[] = "recovery_report.json";
inline constexpr char kCommitted[] = "committed.jsonl";
inline constexpr char kResimTrajectory[] = "resim_trajectory.jsonl";
inline constexpr char kResimMetrics[] = "resim_metrics.json";
inline constexpr char kEval[] = "eval.json";
inline constexpr char kGradReport[] = "gradcheck.json";
}  // namespace files

struct SynthOptions {
  std::string preset = "elastic-constant-wind";
  std::optional<int> frames;     // overrides the preset
  std::optional<int> keypoints;
  std::optional<double> pixel_noise;
  std::optional<double> depth_noise;
  std::uint64_t seed = 0;
};

// Parses {"preset", "frames", "keypoints", "pixel_noise", "depth_noise",
// "seed"}; unknown keys are rejected.
SynthOptions synth_options_from_json(const Json& j);

struct SynthResult {
  Preset preset;
  Trajectory trajectory;
  TrackSet tracks;
};

// Simulates the preset under its ground-truth field and writes the scene,
// field spec, trajectory, tracks and manifest into `out_dir`.
SynthResult cmd_synth(const SynthOptions& options, const std::string& out_dir);

struct RecoverOptions {
  std::string run_dir;
  std::string out_dir;  // default: <run_dir>/recover-<representation>
  std::string representation = "triplane";
  // "tracks" lifts the keypoint tracks; "truth" uses the synthesized particle
  // positions; "dense" perturbs those along camera rays by `dense_noise`
  // relative depth error.
  std::string targets = "tracks";
  double dense_noise = 0.05;
  RecoveryConfig recovery;
  LiftConfig lift;
  TriPlaneConfig triplane;  // domain, frames and frame_dt come from the run
  KPlanesConfig kplanes;
};

// Parses {"representation", "targets", "dense_noise", "recovery", "lift",
// "triplane", "kplanes"}.
// Sections override the corresponding defaults key by key.
RecoverOptions recover_options_from_json(const Json& j, RecoverOptions base = {});

struct RecoverResult {
  SequenceResult sequence;
  std::optional<ForceErrorReport> errors;  // when the run has a ground truth
  std::string out_dir;
};

// Lifts the run's tracks to targets, recovers the field and writes the
// checkpoint, report, targets and committed rollout. Throws DivergenceError
// after writing everything when any frame diverged.
RecoverResult cmd_recover(const RecoverOptions& options);

// Builds an untrained field of the requested kind for `scene` and `frames`.
std::unique_ptr<ForceField> make_field(const RecoverOptions& options, const Scene& scene,
                                       int frames);

// Scene edits applied before re-simulating under the recovered field.
struct ResimEdits {
  // Swap object: resample the block and/or change its material.
  std::optional<std::string> material;
  std::optional<Vec3> block_center;
  std::optional<Vec3> block_extent;
  std::optional<double> block_spacing;
  // Mass factor. Specific semantics keep the field an acceleration; the
  // per-particle semantics keep the force m_original * f, so the
  // acceleration scales by 1 / factor.
  std::optional<double> mass_factor;
  bool per_particle_force = false;
  std::optional<double> field_factor;
  std::vector<BoundaryCondition> add_bcs;
  std::vector<int> remove_bcs;  // indices into the original list
  bool clear_bcs = false;

  bool empty() const;
};

ResimEdits resim_edits_from_json(const Json& j);
Json to_json(const ResimEdits& edits);

struct ResimOptions {
  std::string recover_dir;  // holds field.json; its manifest names the run
  std::string out_dir;      // default: <recover_dir>/resim
  ResimEdits edits;
};

struct ResimMetrics {
  int frames = 0;
  int particles = 0;
  std::optional<double> rmse_vs_committed;  // m, when particle sets match
  std::optional<double> rmse_vs_truth;
  int constrained = 0;                 // particles held by fixed regions
  double max_constrained_displacement = 0.0;  // m
};

Json to_json(const ResimMetrics& metrics);

struct ResimResult {
  Trajectory trajectory;
  ResimMetrics metrics;
  std::string out_dir;
};

ResimResult cmd_resim(const ResimOptions& options);

struct EvalResult {
  std::vector<EvalRow> rows;
  std::string table;
};

// Scores every recover-* directory under `run_dir` against the run's ground
// truth, writes eval.json and returns the rows and printed table.
EvalResult cmd_eval(const std::string& run_dir);

// Parses a GradCheckConfig JSON object; unknown keys are rejected.
GradCheckConfig gradcheck_config_from_json(const Json& j);
Json to_json(const GradCheckConfig& config);

// Formats the per-index comparison table printed by the gradcheck command.
std::string format_grad_report(const GradReport& report);

}  // namespace forcelens::cli
