#pragma once

// Command-line front end: deblur, synthesize and evaluate.
//
// Exit codes: 0 success, 2 missing/corrupt input or bad usage, 3 solver
// failure. Frame sequences are ordered lexicographically by file name.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evalkit.hpp"
#include "io.hpp"
#include "manifest.hpp"
#include "pipeline.hpp"

namespace flowdeblur {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitSolver = 3;

namespace detail {

// Input problems detected before the solver starts.
struct InputError : Error {
  using Error::Error;
};

inline std::string frame_name(const std::string& prefix, int i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return prefix + buf + ext;
}

inline int threads_from_env() {
  const char* env = std::getenv("FLOWDEBLUR_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw InputError(std::string("invalid FLOWDEBLUR_THREADS value: ") + env);
  return static_cast<int>(v);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

inline std::vector<std::string> command_line(const std::string& command, const std::vector<std::string>& args) {
  std::vector<std::string> all{command};
  all.insert(all.end(), args.begin(), args.end());
  return all;
}

// Parses args (without the program and subcommand names). Returns an exit
// code when parsing ends the command (help or usage error).
inline std::optional<int> parse_args(CLI::App& app, const std::vector<std::string>& args, std::ostream& out,
                                     std::ostream& err) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitInput;
  }
  return std::nullopt;
}

inline std::vector<Image> read_frames(const std::vector<std::string>& paths) {
  std::vector<Image> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) {
    try {
      frames.push_back(read_image(p));
    } catch (const IoError& e) {
      throw InputError(e.what());
    }
  }
  return frames;
}

inline std::vector<FlowField> read_flows(const std::vector<std::string>& paths) {
  std::vector<FlowField> flows;
  flows.reserve(paths.size());
  for (const auto& p : paths) {
    try {
      flows.push_back(read_flo(p));
    } catch (const IoError& e) {
      throw InputError(e.what());
    }
  }
  return flows;
}

inline void make_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// deblur

inline int cmd_deblur(const std::vector<std::string>& args, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  const auto t_start = std::chrono::steady_clock::now();
  CLI::App app{"Restore latent frames and bidirectional flows from a blurry frame sequence", "deblur"};
  std::string in_pattern;
  std::string out_dir;
  SolverParams p;
  double lambda = p.lambda;
  std::vector<double> mu;
  double nu = p.nu;
  std::string duty_arg = "auto";
  bool no_temporal = false;
  bool no_filter = false;
  bool viz_flow = false;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string log_path;

  app.add_option("--in", in_pattern, "Glob of input frames (PNG, PGM or PPM)")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  auto* lambda_opt = app.add_option("--lambda", lambda, "Data term weight")->check(CLI::NonNegativeNumber);
  auto* mu_opt = app.add_option("--mu", mu, "Temporal weights per offset, comma separated (default: lambda)")
                     ->delimiter(',')
                     ->check(CLI::NonNegativeNumber);
  auto* nu_opt = app.add_option("--nu", nu, "Flow smoothness scale (default: 0.08 lambda)")->check(CLI::NonNegativeNumber);
  app.add_option("--sigma-i", p.sigma_i, "Edge map bandwidth")->check(CLI::PositiveNumber);
  app.add_option("--n-neighbors", p.neighbors, "Temporal neighborhood radius")->check(CLI::PositiveNumber);
  app.add_option("--scale", p.pyr_scale, "Pyramid scale factor")->check(CLI::Range(0.0, 1.0));
  app.add_option("--levels", p.pyr_levels, "Maximum number of pyramid levels")->check(CLI::PositiveNumber);
  app.add_option("--outer-iters", p.outer_iters, "Alternations per level")->check(CLI::NonNegativeNumber);
  app.add_option("--pd-iters", p.pd_iters, "Latent primal-dual iterations")->check(CLI::NonNegativeNumber);
  app.add_option("--flow-pd-iters", p.flow_pd_iters, "Flow primal-dual iterations per warp")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--warps", p.warps, "Flow relinearizations per update")->check(CLI::NonNegativeNumber);
  app.add_option("--cg-iters", p.cg_iters, "Conjugate gradient iteration budget")->check(CLI::PositiveNumber);
  app.add_option("--duty", duty_arg, "Duty cycle in (0, 1], or auto")->capture_default_str();
  app.add_flag("--no-temporal", no_temporal, "Disable the temporal coherence term");
  app.add_flag("--no-filter", no_filter, "Disable the occlusion-aware filter");
  app.add_flag("--filter-finest-only", p.filter_finest_only, "Filter only at the finest level");
  app.add_flag("--viz-flow", viz_flow, "Write color-coded flow images");
  app.add_option("--seed", seed, "Recorded in the manifest; the solver is deterministic");
  app.add_option("--threads", threads, "Worker threads (default: FLOWDEBLUR_THREADS or 1)")
      ->check(CLI::Range(1, 1024));
  app.add_option("--log", log_path, "Write progress records as JSON lines to this file");
  if (auto code = detail::parse_args(app, args, out, err)) return *code;

  RunManifest manifest;
  manifest.command = "deblur";
  manifest.arguments = detail::command_line("deblur", args);
  manifest.input_pattern = in_pattern;
  manifest.output_dir = out_dir;
  manifest.seed = seed;

  std::vector<Image> frames;
  std::optional<double> duty;
  try {
    p.threads = threads > 0 ? threads : detail::threads_from_env();
    if (lambda_opt->count()) {
      const SolverParams coupled = SolverParams::with_lambda(lambda);
      p.lambda = coupled.lambda;
      p.nu = coupled.nu;
    }
    if (nu_opt->count()) p.nu = nu;
    p.mu.assign(static_cast<std::size_t>(p.neighbors), p.lambda);
    if (mu_opt->count()) {
      if (mu.size() == 1) mu.assign(static_cast<std::size_t>(p.neighbors), mu.front());
      if (static_cast<int>(mu.size()) != p.neighbors)
        throw detail::InputError("--mu needs one value or one per temporal offset");
      p.mu = mu;
    }
    p.temporal_enabled = !no_temporal;
    p.filter_enabled = !no_filter;
    if (duty_arg != "auto") {
      char* end = nullptr;
      const double d = std::strtod(duty_arg.c_str(), &end);
      if (*end != '\0' || !(d > 0.0 && d <= 1.0)) throw detail::InputError("--duty must be 'auto' or lie in (0, 1]");
      duty = d;
    }
    p.validate();

    manifest.inputs = expand_glob(in_pattern);
    if (manifest.inputs.empty()) throw detail::InputError("no input frames match " + in_pattern);
    if (manifest.inputs.size() < 2) throw detail::InputError("need ≥ 2 frames (found 1)");
    frames = detail::read_frames(manifest.inputs);
    try {
      check_frames(frames);
    } catch (const Error& e) {
      throw detail::InputError(e.what());
    }
    detail::make_output_dir(out_dir);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  manifest.params = p;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) {
      err << "error: cannot write log " << log_path << "\n";
      return kExitInput;
    }
  }
  RunOptions opts;
  opts.duty = duty;
  opts.progress = [&](const EnergyRecord& r) {
    if (log.is_open()) log << to_json(r).dump() << '\n' << std::flush;
    err << "level " << r.level << " iter " << r.iteration << " " << r.stage << " E=" << r.total
        << " (data " << r.data << ", temporal " << r.temporal << ", spatial " << r.spatial << ")\n";
  };

  RunResult res;
  const auto t_solve = std::chrono::steady_clock::now();
  try {
    res = run(frames, p, opts);
  } catch (const Error& e) {
    err << "error: solver failed: " << e.what() << "\n";
    return kExitSolver;
  }
  manifest.timings["solve"] = detail::seconds_since(t_solve);

  const auto t_write = std::chrono::steady_clock::now();
  try {
    std::string ext = std::filesystem::path(manifest.inputs.front()).extension().string();
    if (ext.empty()) ext = ".png";
    const SequenceState& st = res.state;
    for (int i = 0; i < st.frames(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const std::string img = detail::frame_name("restored_", i, ext);
      write_image(detail::join(out_dir, img), st.latent[k]);
      manifest.outputs.push_back(img);
      if (i + 1 < st.frames()) {
        const std::string f = detail::frame_name("flow_fwd_", i, ".flo");
        write_flo(detail::join(out_dir, f), st.fwd[k]);
        manifest.outputs.push_back(f);
        if (viz_flow) {
          const std::string v = detail::frame_name("flow_fwd_", i, ".png");
          write_png(detail::join(out_dir, v), flow_to_color(st.fwd[k]));
          manifest.outputs.push_back(v);
        }
      }
      if (i > 0) {
        const std::string f = detail::frame_name("flow_bwd_", i, ".flo");
        write_flo(detail::join(out_dir, f), st.bwd[k]);
        manifest.outputs.push_back(f);
        if (viz_flow) {
          const std::string v = detail::frame_name("flow_bwd_", i, ".png");
          write_png(detail::join(out_dir, v), flow_to_color(st.bwd[k]));
          manifest.outputs.push_back(v);
        }
      }
    }
    manifest.duty = res.duty;
    manifest.duty_source = res.duty_from_user ? "user" : "estimated";
    manifest.duty_per_frame = res.duty_per_frame;
    manifest.levels = res.levels;
    manifest.energy_log = res.energy_log;
    manifest.metrics["energy_violations"] = energy_violations(res.energy_log);
    if (!res.energy_log.empty()) manifest.metrics["final_energy"] = res.energy_log.back().total;
    manifest.timings["write"] = detail::seconds_since(t_write);
    manifest.timings["total"] = detail::seconds_since(t_start);
    save_manifest(detail::join(out_dir, "manifest.json"), manifest);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  out << "restored " << res.state.frames() << " frames into " << out_dir << " (duty " << res.duty << ", "
      << manifest.duty_source << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synthesize

inline int cmd_synthesize(const std::vector<std::string>& args, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
  const auto t_start = std::chrono::steady_clock::now();
  CLI::App app{"Render a synthetic scene and blur it with the forward model", "synthesize"};
  std::string spec_path;
  std::string out_dir;
  std::string ext = "png";
  std::uint64_t seed = 0;
  int samples = 0;
  int threads = 0;
  bool viz_flow = false;
  app.add_option("--spec", spec_path, "Scene spec (JSON); the built-in demo scene when omitted");
  app.add_option("--out", out_dir, "Output directory")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Texture seed (overrides the spec)");
  app.add_option("--format", ext, "Image format")->check(CLI::IsMember({"png", "pgm", "ppm"}))->capture_default_str();
  app.add_option("--samples", samples, "Blur integration samples per direction (0: 4x the solver default)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--threads", threads, "Worker threads (default: FLOWDEBLUR_THREADS or 1)")
      ->check(CLI::Range(1, 1024));
  app.add_flag("--viz-flow", viz_flow, "Write color-coded ground-truth flow images");
  if (auto code = detail::parse_args(app, args, out, err)) return *code;

  RunManifest manifest;
  manifest.command = "synthesize";
  manifest.arguments = detail::command_line("synthesize", args);
  manifest.input_pattern = spec_path;
  manifest.output_dir = out_dir;
  try {
    const int nthreads = threads > 0 ? threads : detail::threads_from_env();
    SceneSpec spec = SceneSpec::demo();
    if (!spec_path.empty()) {
      try {
        spec = load_scene_spec(spec_path);
      } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("malformed scene spec: ") + e.what());
      }
    }
    if (seed_opt->count()) spec.seed = seed;
    if (spec.channels == 3 && ext == "pgm") ext = "ppm";
    if (spec.channels == 1 && ext == "ppm") ext = "pgm";
    const SyntheticScene scene = render_scene(spec);
    const std::vector<Image> blurry = synthesize_blur(scene, samples, nthreads);
    detail::make_output_dir(out_dir);

    const std::string dot_ext = "." + ext;
    for (int i = 0; i < spec.frames; ++i) {
      const auto k = static_cast<std::size_t>(i);
      for (const auto& [prefix, img] : {std::pair{"sharp_", &scene.sharp[k]}, std::pair{"blurry_", &blurry[k]}}) {
        const std::string name = detail::frame_name(prefix, i, dot_ext);
        write_image(detail::join(out_dir, name), *img);
        manifest.outputs.push_back(name);
      }
      auto put_flow = [&](const char* prefix, const FlowField& f) {
        const std::string name = detail::frame_name(prefix, i, ".flo");
        write_flo(detail::join(out_dir, name), f);
        manifest.outputs.push_back(name);
        if (viz_flow) {
          const std::string v = detail::frame_name(prefix, i, ".png");
          write_png(detail::join(out_dir, v), flow_to_color(f));
          manifest.outputs.push_back(v);
        }
      };
      if (i + 1 < spec.frames) put_flow("gt_fwd_", scene.gt_fwd[k]);
      if (i > 0) put_flow("gt_bwd_", scene.gt_bwd[k]);
    }
    write_json_file(detail::join(out_dir, "scene.json"), to_json(spec));
    manifest.outputs.push_back("scene.json");
    manifest.seed = spec.seed;
    manifest.duty = scene.tau;
    manifest.duty_source = "scene";
    manifest.scene = spec;
    manifest.params.threads = nthreads;
    manifest.metrics["blurry_psnr"] = mean_psnr(blurry, scene.sharp);
    manifest.timings["total"] = detail::seconds_since(t_start);
    save_manifest(detail::join(out_dir, "manifest.json"), manifest);
    out << "wrote " << spec.frames << " frames (" << spec.width << "x" << spec.height << ", tau " << scene.tau
        << ") into " << out_dir << "\n";
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct FrameScore {
  std::string file;
  std::string reference;
  double psnr = 0.0;
};

struct FlowScore {
  std::string file;
  std::string reference;
  double epe = 0.0;
};

struct EvaluationReport {
  std::vector<FrameScore> frames;
  std::vector<FlowScore> flows;
  std::optional<double> mean_psnr;
  std::optional<double> mean_epe;
};

inline Json to_json(const EvaluationReport& r) {
  Json frames = Json::array();
  for (const auto& f : r.frames)
    frames.push_back({{"file", f.file}, {"reference", f.reference}, {"psnr", number_to_json(f.psnr)}});
  Json flows = Json::array();
  for (const auto& f : r.flows)
    flows.push_back({{"file", f.file}, {"reference", f.reference}, {"epe", number_to_json(f.epe)}});
  Json summary;
  summary["frames"] = r.frames.size();
  summary["flows"] = r.flows.size();
  summary["mean_psnr"] = r.mean_psnr ? number_to_json(*r.mean_psnr) : Json(nullptr);
  summary["mean_epe"] = r.mean_epe ? number_to_json(*r.mean_epe) : Json(nullptr);
  return {{"frames", frames}, {"flows", flows}, {"summary", summary}};
}

inline int cmd_evaluate(const std::vector<std::string>& args, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  const auto t_start = std::chrono::steady_clock::now();
  CLI::App app{"Score restored frames (PSNR) and flows (EPE) against ground truth", "evaluate"};
  std::string in_pattern;
  std::string ref_pattern;
  std::string flow_pattern;
  std::string gt_flow_pattern;
  std::string out_dir;
  int border = 0;
  app.add_option("--in", in_pattern, "Glob of restored frames");
  app.add_option("--ref", ref_pattern, "Glob of reference (sharp) frames");
  app.add_option("--flow", flow_pattern, "Glob of estimated .flo files");
  app.add_option("--gt-flow", gt_flow_pattern, "Glob of ground-truth .flo files");
  app.add_option("--out", out_dir, "Directory for report.json and manifest.json");
  app.add_option("--border", border, "Pixels excluded from EPE at each image edge")->check(CLI::NonNegativeNumber);
  if (auto code = detail::parse_args(app, args, out, err)) return *code;

  EvaluationReport report;
  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.arguments = detail::command_line("evaluate", args);
  manifest.input_pattern = in_pattern.empty() ? flow_pattern : in_pattern;
  manifest.output_dir = out_dir;
  try {
    if (in_pattern.empty() != ref_pattern.empty()) throw detail::InputError("--in and --ref must be given together");
    if (flow_pattern.empty() != gt_flow_pattern.empty())
      throw detail::InputError("--flow and --gt-flow must be given together");
    if (in_pattern.empty() && flow_pattern.empty()) throw detail::InputError("nothing to evaluate: give --in/--ref or --flow/--gt-flow");

    auto paired = [](const std::string& a, const std::string& b, const char* what) {
      std::pair<std::vector<std::string>, std::vector<std::string>> p{expand_glob(a), expand_glob(b)};
      if (p.first.empty()) throw detail::InputError(std::string("no ") + what + " match " + a);
      if (p.first.size() != p.second.size())
        throw detail::InputError(std::string(what) + " count mismatch: " + std::to_string(p.first.size()) + " vs " +
                                 std::to_string(p.second.size()));
      return p;
    };

    if (!in_pattern.empty()) {
      const auto [files, refs] = paired(in_pattern, ref_pattern, "frames");
      const auto imgs = detail::read_frames(files);
      const auto ref_imgs = detail::read_frames(refs);
      double sum = 0.0;
      for (std::size_t k = 0; k < files.size(); ++k) {
        if (!imgs[k].same_shape(ref_imgs[k]))
          throw detail::InputError("size mismatch between " + files[k] + " and " + refs[k]);
        const double v = psnr(imgs[k], ref_imgs[k]);
        report.frames.push_back({files[k], refs[k], v});
        sum += v;
      }
      report.mean_psnr = sum / static_cast<double>(files.size());
      manifest.inputs.insert(manifest.inputs.end(), files.begin(), files.end());
    }
    if (!flow_pattern.empty()) {
      const auto [files, refs] = paired(flow_pattern, gt_flow_pattern, "flows");
      const auto flows = detail::read_flows(files);
      const auto gts = detail::read_flows(refs);
      double sum = 0.0;
      for (std::size_t k = 0; k < files.size(); ++k) {
        if (flows[k].width != gts[k].width || flows[k].height != gts[k].height)
          throw detail::InputError("size mismatch between " + files[k] + " and " + refs[k]);
        std::optional<PixelMask> mask;
        if (border > 0) mask = interior_mask(flows[k].width, flows[k].height, border);
        const double v = epe(flows[k], gts[k], mask);
        report.flows.push_back({files[k], refs[k], v});
        sum += v;
      }
      report.mean_epe = sum / static_cast<double>(files.size());
      manifest.inputs.insert(manifest.inputs.end(), files.begin(), files.end());
    }
    if (!out_dir.empty()) detail::make_output_dir(out_dir);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  for (std::size_t k = 0; k < report.frames.size(); ++k)
    os << "frame " << k << " " << report.frames[k].file << " psnr " << detail::format_db(report.frames[k].psnr) << "\n";
  for (std::size_t k = 0; k < report.flows.size(); ++k)
    os << "flow " << k << " " << report.flows[k].file << " epe " << report.flows[k].epe << "\n";
  os << "summary";
  if (report.mean_psnr) os << " mean_psnr " << detail::format_db(*report.mean_psnr);
  if (report.mean_epe) os << " mean_epe " << *report.mean_epe;
  os << "\n";
  out << os.str();

  if (!out_dir.empty()) {
    try {
      write_json_file(detail::join(out_dir, "report.json"), to_json(report));
      if (report.mean_psnr) manifest.metrics["mean_psnr"] = *report.mean_psnr;
      if (report.mean_epe) manifest.metrics["mean_epe"] = *report.mean_epe;
      manifest.outputs = {"report.json"};
      manifest.timings["total"] = detail::seconds_since(t_start);
      save_manifest(detail::join(out_dir, "manifest.json"), manifest);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kExitInput;
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline std::string usage() {
  return "usage: flowdeblur <command> [options]\n"
         "commands:\n"
         "  deblur      restore latent frames and flows from blurry frames\n"
         "  synthesize  render a synthetic blurry sequence with ground truth\n"
         "  evaluate    score restorations (PSNR) and flows (EPE)\n"
         "run 'flowdeblur <command> --help' for options\n";
}

inline int run_cli(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (argv.size() < 2) {
    err << usage();
    return kExitInput;
  }
  const std::string& cmd = argv[1];
  const std::vector<std::string> rest(argv.begin() + 2, argv.end());
  if (cmd == "deblur") return cmd_deblur(rest, out, err);
  if (cmd == "synthesize") return cmd_synthesize(rest, out, err);
  if (cmd == "evaluate") return cmd_evaluate(rest, out, err);
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    out << usage();
    return kExitOk;
  }
  err << "error: unknown command '" << cmd << "'\n" << usage();
  return kExitInput;
}

}  // namespace flowdeblur
