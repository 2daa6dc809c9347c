// forcelens: synthesize scenarios, recover force fields, re-simulate edits,
// evaluate recoveries and check gradients.
//
// Exit codes: 0 ok, 1 gradient check failed, 2 usage, 3 input,
// 4 divergence, 5 simulator.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "forcelens/cli.h"
#include "forcelens/errors.h"
#include "forcelens/json_util.h"
#include "forcelens/parallel.h"

namespace fl = forcelens;
namespace cli = forcelens::cli;

namespace {

fl::Json load_config(const std::string& path) {
  if (path.empty()) return fl::Json::object();
  return fl::parse_json_text(fl::read_text_file(path), path);
}

fl::Vec3 vec3_of(const std::vector<double>& v) { return {v.at(0), v.at(1), v.at(2)}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Force-field recovery from tracked motion of simulated objects"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: FORCELENS_THREADS or all)")
      ->check(CLI::NonNegativeNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Simulate a preset and write its observations");
  std::string synth_config, synth_out, synth_preset;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_frames, synth_keypoints;
  synth->add_option("--preset", synth_preset, "Scenario preset (see 'presets')");
  synth->add_option("--config", synth_config, "JSON synth config");
  synth->add_option("--out", synth_out, "Run directory to create")->required();
  synth->add_option("--seed", synth_seed, "Seed of the track noise");
  synth->add_option("--frames", synth_frames, "Sequence length");
  synth->add_option("--keypoints", synth_keypoints, "Tracked keypoint count");

  // recover
  auto* recover = app.add_subcommand("recover", "Recover the force field of a run");
  std::string rec_run, rec_out, rec_config, rec_rep, rec_targets;
  std::optional<double> rec_dense_noise;
  std::optional<std::uint64_t> rec_seed;
  recover->add_option("run_dir", rec_run, "Run directory written by synth")->required();
  recover->add_option("--out", rec_out, "Output directory (default <run>/recover-<kind>)");
  recover->add_option("--config", rec_config, "JSON recover config");
  recover->add_option("--representation", rec_rep, "triplane, kplanes or point");
  recover->add_option("--seed", rec_seed, "Seed of the field initialization");
  recover->add_option("--targets", rec_targets, "Target source: tracks, truth or dense")
      ->check(CLI::IsMember({"tracks", "truth", "dense"}));
  recover->add_option("--dense-noise", rec_dense_noise, "Relative depth noise of dense targets");

  // resim
  auto* resim = app.add_subcommand("resim", "Re-simulate under a recovered field with edits");
  std::string rs_dir, rs_out, rs_config, rs_material, rs_ground_mode = "sticky";
  std::optional<double> rs_mass, rs_field, rs_spacing, rs_ground;
  std::vector<double> rs_center, rs_extent, rs_fixed;
  std::vector<int> rs_remove;
  bool rs_per_particle = false, rs_clear = false;
  resim->add_option("recover_dir", rs_dir, "Directory written by recover")->required();
  resim->add_option("--out", rs_out, "Output directory (default <recover_dir>/resim)");
  resim->add_option("--config", rs_config, "JSON edits");
  resim->add_option("--material", rs_material, "Swap the object's material");
  resim->add_option("--block-center", rs_center, "Resampled block centre, m")->expected(3);
  resim->add_option("--block-extent", rs_extent, "Resampled block extent, m")->expected(3);
  resim->add_option("--block-spacing", rs_spacing, "Resampled particle spacing, m");
  resim->add_option("--mass-factor", rs_mass, "Scale every particle mass");
  resim->add_flag("--per-particle-force", rs_per_particle,
                  "Hold the force m_original * f fixed under --mass-factor");
  resim->add_option("--field-factor", rs_field, "Scale the recovered field");
  resim->add_option("--add-fixed", rs_fixed, "Pin the box lo_x lo_y lo_z hi_x hi_y hi_z")
      ->expected(6);
  resim->add_option("--add-ground", rs_ground, "Add a ground plane at this height, m");
  resim->add_option("--ground-mode", rs_ground_mode, "sticky or separate")
      ->check(CLI::IsMember({"sticky", "separate"}));
  resim->add_option("--remove-bc", rs_remove, "Remove boundary conditions by index");
  resim->add_flag("--clear-bcs", rs_clear, "Remove every boundary condition");

  // eval
  auto* eval = app.add_subcommand("eval", "Score every recovery of a run");
  std::string ev_run;
  eval->add_option("run_dir", ev_run, "Run directory")->required();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Compare adjoint and finite-difference gradients");
  std::string gc_config, gc_out;
  std::optional<std::uint64_t> gc_seed;
  bool gc_corrupt = false;
  grad->add_option("--config", gc_config, "JSON gradient-check config");
  grad->add_option("--out", gc_out, "Directory for gradcheck.json");
  grad->add_option("--seed", gc_seed, "Seed of the parameter sample");
  grad->add_flag("--corrupt-adjoint", gc_corrupt, "Test hook: flip the field-force adjoint");

  auto* presets = app.add_subcommand("presets", "List bundled presets");
  auto* verify = app.add_subcommand("verify", "Check a directory's artifacts against its manifest");
  std::string vf_dir;
  verify->add_option("dir", vf_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(fl::ExitCode::kUsage);
  }

  if (threads == 0) threads = fl::env_thread_count();
  try {
    return fl::with_threads(threads, [&]() -> int {
      if (*synth) {
        cli::SynthOptions o = cli::synth_options_from_json(load_config(synth_config));
        if (!synth_preset.empty()) o.preset = synth_preset;
        if (synth_seed) o.seed = *synth_seed;
        if (synth_frames) o.frames = synth_frames;
        if (synth_keypoints) o.keypoints = synth_keypoints;
        const auto r = cli::cmd_synth(o, synth_out);
        std::printf("%s: %d frames, %zu particles, %d keypoints -> %s\n", r.preset.name.c_str(),
                    r.preset.frames, r.preset.scene.particles.size(), r.tracks.keypoint_count(),
                    synth_out.c_str());
      } else if (*recover) {
        cli::RecoverOptions o = cli::recover_options_from_json(load_config(rec_config));
        o.run_dir = rec_run;
        o.out_dir = rec_out;
        if (!rec_rep.empty()) o.representation = rec_rep;
        if (!rec_targets.empty()) o.targets = rec_targets;
        if (rec_dense_noise) o.dense_noise = *rec_dense_noise;
        if (rec_seed) o.recovery.seed = *rec_seed;
        const auto r = cli::cmd_recover(o);
        std::printf("recovered %zu frames -> %s\n", r.sequence.report.frames.size(),
                    r.out_dir.c_str());
        if (r.errors) {
          std::printf("magnitude error %.3f%%, direction error %.3f deg\n", r.errors->magnitude,
                      r.errors->direction);
        }
      } else if (*resim) {
        cli::ResimOptions o;
        o.recover_dir = rs_dir;
        o.out_dir = rs_out;
        if (!rs_config.empty()) o.edits = cli::resim_edits_from_json(load_config(rs_config));
        auto& e = o.edits;
        if (!rs_material.empty()) e.material = rs_material;
        if (!rs_center.empty()) e.block_center = vec3_of(rs_center);
        if (!rs_extent.empty()) e.block_extent = vec3_of(rs_extent);
        if (rs_spacing) e.block_spacing = rs_spacing;
        if (rs_mass) e.mass_factor = rs_mass;
        if (rs_per_particle) e.per_particle_force = true;
        if (rs_field) e.field_factor = rs_field;
        if (!rs_fixed.empty()) {
          e.add_bcs.push_back(fl::FixedRegion{fl::Vec3(rs_fixed[0], rs_fixed[1], rs_fixed[2]),
                                              fl::Vec3(rs_fixed[3], rs_fixed[4], rs_fixed[5])});
        }
        if (rs_ground) {
          e.add_bcs.push_back(fl::GroundPlane{*rs_ground, rs_ground_mode == "sticky"
                                                              ? fl::GroundMode::kSticky
                                                              : fl::GroundMode::kSeparate});
        }
        e.remove_bcs.insert(e.remove_bcs.end(), rs_remove.begin(), rs_remove.end());
        if (rs_clear) e.clear_bcs = true;
        const auto r = cli::cmd_resim(o);
        std::cout << cli::to_json(r.metrics).dump(2) << "\n";
      } else if (*eval) {
        std::cout << cli::cmd_eval(ev_run).table;
      } else if (*grad) {
        fl::GradCheckConfig c = cli::gradcheck_config_from_json(load_config(gc_config));
        if (gc_seed) c.seed = *gc_seed;
        if (gc_corrupt) c.corrupt_adjoint = true;
        const fl::GradReport r = fl::gradient_check(c);
        std::cout << cli::format_grad_report(r);
        if (!gc_out.empty()) {
          std::filesystem::create_directories(gc_out);
          fl::Json j = fl::to_json(r);
          j["config"] = cli::to_json(c);
          fl::write_text_file((std::filesystem::path(gc_out) / cli::files::kGradReport).string(),
                              j.dump(2) + "\n");
          cli::record_command(gc_out, {"gradcheck", cli::to_json(c), {},
                                       {cli::files::kGradReport}, c.seed, 0.0});
        }
        return r.pass ? 0 : 1;
      } else if (*presets) {
        for (const auto& n : cli::preset_names()) std::cout << n << "\n";
      } else if (*verify) {
        const auto bad = cli::verify_manifest(vf_dir);
        for (const auto& f : bad) std::cout << "mismatch: " << f << "\n";
        if (!bad.empty()) return static_cast<int>(fl::ExitCode::kInput);
        std::cout << "ok\n";
      }
      return 0;
    });
  } catch (const fl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(fl::ExitCode::kInput);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(fl::ExitCode::kSimulator);
  }
}
