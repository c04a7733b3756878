#pragma once

// JSON documents: solver parameters, scene specs, energy records and the run
// manifest written next to every CLI output. Non-finite numbers are stored as
// the strings "inf", "-inf" and "nan" so documents stay valid JSON and
// round-trip exactly.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "evalkit.hpp"
#include "pipeline.hpp"

namespace flowdeblur {

using Json = nlohmann::ordered_json;

class ManifestError : public Error {
 public:
  using Error::Error;
};

inline Json number_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ManifestError("expected a number, got " + j.dump());
}

namespace detail {

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    if constexpr (std::is_same_v<T, double>)
      out = number_from_json(j.at(key));
    else
      out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline Json vec2_to_json(Vec2 v) { return Json::array({v.x, v.y}); }

inline Vec2 vec2_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ManifestError(std::string(what) + " must be a [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline void require_object(const Json& j, const char* what) {
  if (!j.is_object()) throw ManifestError(std::string(what) + " must be a JSON object");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SolverParams

inline Json to_json(const SolverParams& p) {
  Json j;
  j["lambda"] = p.lambda;
  j["mu"] = p.mu;
  j["nu"] = p.nu;
  j["sigma_i"] = p.sigma_i;
  j["neighbors"] = p.neighbors;
  j["pyr_scale"] = p.pyr_scale;
  j["pyr_levels"] = p.pyr_levels;
  j["eta_latent"] = p.eta_latent;
  j["eps_latent"] = p.eps_latent;
  j["eta_flow"] = p.eta_flow;
  j["eps_flow"] = p.eps_flow;
  j["outer_iters"] = p.outer_iters;
  j["pd_iters"] = p.pd_iters;
  j["flow_pd_iters"] = p.flow_pd_iters;
  j["warps"] = p.warps;
  j["cg_iters"] = p.cg_iters;
  j["cg_tol"] = p.cg_tol;
  j["blur_samples"] = p.blur_samples;
  j["sigma_w"] = p.sigma_w;
  j["temporal_enabled"] = p.temporal_enabled;
  j["filter_enabled"] = p.filter_enabled;
  j["filter_finest_only"] = p.filter_finest_only;
  j["threads"] = p.threads;
  return j;
}

inline SolverParams solver_params_from_json(const Json& j) {
  detail::require_object(j, "solver params");
  SolverParams p;
  detail::read_field(j, "lambda", p.lambda);
  detail::read_field(j, "mu", p.mu);
  detail::read_field(j, "nu", p.nu);
  detail::read_field(j, "sigma_i", p.sigma_i);
  detail::read_field(j, "neighbors", p.neighbors);
  detail::read_field(j, "pyr_scale", p.pyr_scale);
  detail::read_field(j, "pyr_levels", p.pyr_levels);
  detail::read_field(j, "eta_latent", p.eta_latent);
  detail::read_field(j, "eps_latent", p.eps_latent);
  detail::read_field(j, "eta_flow", p.eta_flow);
  detail::read_field(j, "eps_flow", p.eps_flow);
  detail::read_field(j, "outer_iters", p.outer_iters);
  detail::read_field(j, "pd_iters", p.pd_iters);
  detail::read_field(j, "flow_pd_iters", p.flow_pd_iters);
  detail::read_field(j, "warps", p.warps);
  detail::read_field(j, "cg_iters", p.cg_iters);
  detail::read_field(j, "cg_tol", p.cg_tol);
  detail::read_field(j, "blur_samples", p.blur_samples);
  detail::read_field(j, "sigma_w", p.sigma_w);
  detail::read_field(j, "temporal_enabled", p.temporal_enabled);
  detail::read_field(j, "filter_enabled", p.filter_enabled);
  detail::read_field(j, "filter_finest_only", p.filter_finest_only);
  detail::read_field(j, "threads", p.threads);
  return p;
}

// ---------------------------------------------------------------------------
// SceneSpec

inline Json to_json(const SceneSpec& s) {
  Json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["frames"] = s.frames;
  j["channels"] = s.channels;
  j["tau"] = s.tau;
  j["seed"] = s.seed;
  j["texture_sigma"] = s.texture_sigma;
  j["contrast"] = s.contrast;
  j["background_mean"] = s.background_mean;
  j["background"] = {{"translation", detail::vec2_to_json(s.background.translation)},
                     {"affine", s.background.affine}};
  Json objs = Json::array();
  for (const SceneObject& o : s.objects) {
    objs.push_back({{"shape", o.shape == Shape::Rect ? "rect" : "disk"},
                    {"size", detail::vec2_to_json(o.size)},
                    {"position", detail::vec2_to_json(o.position)},
                    {"velocity", detail::vec2_to_json(o.velocity)},
                    {"texture_seed", o.texture_seed},
                    {"mean", o.mean}});
  }
  j["objects"] = objs;
  return j;
}

// Missing keys keep the demo scene's values; present keys must be well typed.
inline SceneSpec scene_spec_from_json(const Json& j) {
  detail::require_object(j, "scene spec");
  SceneSpec s;
  detail::read_field(j, "width", s.width);
  detail::read_field(j, "height", s.height);
  detail::read_field(j, "frames", s.frames);
  detail::read_field(j, "channels", s.channels);
  detail::read_field(j, "tau", s.tau);
  detail::read_field(j, "seed", s.seed);
  detail::read_field(j, "texture_sigma", s.texture_sigma);
  detail::read_field(j, "contrast", s.contrast);
  detail::read_field(j, "background_mean", s.background_mean);
  if (j.contains("background")) {
    const Json& b = j.at("background");
    detail::require_object(b, "background");
    if (b.contains("translation")) s.background.translation = detail::vec2_from_json(b.at("translation"), "translation");
    detail::read_field(b, "affine", s.background.affine);
  }
  if (j.contains("objects")) {
    const Json& arr = j.at("objects");
    if (!arr.is_array()) throw ManifestError("objects must be an array");
    s.objects.clear();
    for (const Json& oj : arr) {
      detail::require_object(oj, "object");
      SceneObject o;
      if (oj.contains("shape")) {
        const Json& sh = oj.at("shape");
        if (sh == "rect")
          o.shape = Shape::Rect;
        else if (sh == "disk")
          o.shape = Shape::Disk;
        else
          throw ManifestError("object shape must be \"rect\" or \"disk\"");
      }
      if (oj.contains("size")) {
        const Json& sz = oj.at("size");
        o.size = sz.is_number() ? Vec2{sz.get<double>(), sz.get<double>()} : detail::vec2_from_json(sz, "size");
      }
      if (oj.contains("position")) o.position = detail::vec2_from_json(oj.at("position"), "position");
      if (oj.contains("velocity")) o.velocity = detail::vec2_from_json(oj.at("velocity"), "velocity");
      detail::read_field(oj, "texture_seed", o.texture_seed);
      detail::read_field(oj, "mean", o.mean);
      s.objects.push_back(o);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Energy records

inline Json to_json(const EnergyRecord& r) {
  return {{"level", r.level},
          {"iteration", r.iteration},
          {"stage", r.stage},
          {"data", number_to_json(r.data)},
          {"temporal", number_to_json(r.temporal)},
          {"spatial", number_to_json(r.spatial)},
          {"total", number_to_json(r.total)}};
}

inline EnergyRecord energy_record_from_json(const Json& j) {
  detail::require_object(j, "energy record");
  EnergyRecord r;
  detail::read_field(j, "level", r.level);
  detail::read_field(j, "iteration", r.iteration);
  detail::read_field(j, "stage", r.stage);
  detail::read_field(j, "data", r.data);
  detail::read_field(j, "temporal", r.temporal);
  detail::read_field(j, "spatial", r.spatial);
  detail::read_field(j, "total", r.total);
  return r;
}

// ---------------------------------------------------------------------------
// RunManifest

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;  // full command line
  std::string input_pattern;
  std::vector<std::string> inputs;  // resolved, in processing order
  std::string output_dir;
  SolverParams params;
  std::optional<std::uint64_t> seed;
  std::optional<double> duty;
  std::string duty_source;  // "user", "estimated" or "scene"
  std::vector<double> duty_per_frame;
  int levels = 0;
  std::optional<SceneSpec> scene;
  std::vector<EnergyRecord> energy_log;
  std::map<std::string, double> metrics;
  std::map<std::string, double> timings;  // seconds
  std::vector<std::string> outputs;
};

inline Json to_json(const RunManifest& m) {
  Json j;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["input_pattern"] = m.input_pattern;
  j["inputs"] = m.inputs;
  j["output_dir"] = m.output_dir;
  j["params"] = to_json(m.params);
  j["seed"] = m.seed ? Json(*m.seed) : Json(nullptr);
  j["duty"] = m.duty ? number_to_json(*m.duty) : Json(nullptr);
  j["duty_source"] = m.duty_source;
  j["duty_per_frame"] = m.duty_per_frame;
  j["levels"] = m.levels;
  j["scene"] = m.scene ? to_json(*m.scene) : Json(nullptr);
  Json log = Json::array();
  for (const auto& r : m.energy_log) log.push_back(to_json(r));
  j["energy_log"] = log;
  Json metrics = Json::object();
  for (const auto& [k, v] : m.metrics) metrics[k] = number_to_json(v);
  j["metrics"] = metrics;
  Json timings = Json::object();
  for (const auto& [k, v] : m.timings) timings[k] = number_to_json(v);
  j["timings"] = timings;
  j["outputs"] = m.outputs;
  return j;
}

inline RunManifest run_manifest_from_json(const Json& j) {
  detail::require_object(j, "manifest");
  RunManifest m;
  detail::read_field(j, "command", m.command);
  detail::read_field(j, "arguments", m.arguments);
  detail::read_field(j, "input_pattern", m.input_pattern);
  detail::read_field(j, "inputs", m.inputs);
  detail::read_field(j, "output_dir", m.output_dir);
  if (j.contains("params")) m.params = solver_params_from_json(j.at("params"));
  if (j.contains("seed") && !j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("duty") && !j.at("duty").is_null()) m.duty = number_from_json(j.at("duty"));
  detail::read_field(j, "duty_source", m.duty_source);
  detail::read_field(j, "duty_per_frame", m.duty_per_frame);
  detail::read_field(j, "levels", m.levels);
  if (j.contains("scene") && !j.at("scene").is_null()) m.scene = scene_spec_from_json(j.at("scene"));
  if (j.contains("energy_log"))
    for (const Json& r : j.at("energy_log")) m.energy_log.push_back(energy_record_from_json(r));
  if (j.contains("metrics"))
    for (const auto& [k, v] : j.at("metrics").items()) m.metrics[k] = number_from_json(v);
  if (j.contains("timings"))
    for (const auto& [k, v] : j.at("timings").items()) m.timings[k] = number_from_json(v);
  detail::read_field(j, "outputs", m.outputs);
  return m;
}

inline Json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw ManifestError("write failed: " + path);
}

inline SceneSpec load_scene_spec(const std::string& path) { return scene_spec_from_json(parse_json_file(path)); }

inline RunManifest load_manifest(const std::string& path) { return run_manifest_from_json(parse_json_file(path)); }

inline void save_manifest(const std::string& path, const RunManifest& m) { write_json_file(path, to_json(m)); }

}  // namespace flowdeblur
