#pragma once

// Coarse-to-fine joint estimation of latent frames and bidirectional flows.
//
//   1. Flows from the blurry frames alone (data term off) and duty cycle.
//   2. Image pyramid of the blurry frames.
//   3. Per level, coarsest first: outer_iters alternations of latent
//      restoration and flow estimation, then occlusion-aware filtering, then
//      propagation to the next level.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blur.hpp"
#include "core.hpp"
#include "flow.hpp"
#include "latent.hpp"
#include "pyramid.hpp"
#include "refine.hpp"
#include "terms.hpp"

namespace flowdeblur {

struct EnergyRecord {
  int level = 0;
  int iteration = 0;     // 0 = level entry, k = after the k-th alternation
  std::string stage;     // "entry", "alternation" or "filtered"
  double data = 0.0;
  double temporal = 0.0;
  double spatial = 0.0;
  double total = 0.0;
};

using ProgressHook = std::function<void(const EnergyRecord&)>;

struct RunOptions {
  std::optional<double> duty;  // known duty cycle; estimated when absent
  ProgressHook progress;
};

struct RunResult {
  SequenceState state;
  std::vector<EnergyRecord> energy_log;
  std::vector<FlowField> init_fwd;
  std::vector<FlowField> init_bwd;
  double duty = 1.0;
  bool duty_from_user = false;
  std::vector<double> duty_per_frame;
  int levels = 0;
};

inline void check_frames(const std::vector<Image>& frames) {
  if (frames.size() < 2) throw Error("need >= 2 frames");
  for (const Image& f : frames) {
    if (!f.same_shape(frames.front())) throw DimensionMismatch("frames must share size and channel count");
    if (!all_finite(f)) throw Error("frames contain non-finite values");
  }
}

inline std::vector<FlowField> resize_flows(const std::vector<FlowField>& flows, int w, int h) {
  std::vector<FlowField> out;
  out.reserve(flows.size());
  for (const FlowField& f : flows) out.push_back(resize_flow(f, w, h));
  return out;
}

inline int level_blur_samples(const SequenceState& st, const SolverParams& p) {
  if (p.blur_samples > 0) return p.blur_samples;
  double mag = 0.0;
  double tau = 0.0;
  for (int i = 0; i < st.frames(); ++i) {
    mag = std::max({mag, max_flow_magnitude(st.fwd[static_cast<std::size_t>(i)]),
                    max_flow_magnitude(st.bwd[static_cast<std::size_t>(i)])});
    tau = std::max(tau, st.duty[static_cast<std::size_t>(i)]);
  }
  return default_blur_samples(tau, mag);
}

struct InitFlows {
  std::vector<FlowField> fwd;
  std::vector<FlowField> bwd;
};

// Flows between the blurry frames treated as latent frames (data term off,
// temporal and TV terms only), coarse to fine from zero flows.
inline InitFlows init_flows(const std::vector<Image>& blurry, const SolverParams& params) {
  check_frames(blurry);
  SolverParams p = params;
  p.lambda = 0.0;
  p.temporal_enabled = true;
  const auto pyramid = build_pyramid(blurry, p.pyr_scale, p.pyr_levels);
  SequenceState st = SequenceState::from_blurry(pyramid.front().frames, 1.0);
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    if (l > 0) {
      SequenceState next = SequenceState::from_blurry(pyramid[l].frames, 1.0);
      next.fwd = resize_flows(st.fwd, next.width(), next.height());
      next.bwd = resize_flows(st.bwd, next.width(), next.height());
      st = std::move(next);
    }
    assign_visibility(st, p.neighbors, OcclusionThresholds{}.scaled(pyramid[l].shape.scale));
    DualState duals(st, p.neighbors);
    const auto g = edge_maps(st, p);
    for (int k = 0; k < p.outer_iters; ++k) estimate_flows(st, duals, p, g);
  }
  return {st.fwd, st.bwd};
}

inline EnergyRecord make_record(int level, int iteration, const char* stage, const EnergyTerms& t) {
  return {level, iteration, stage, t.data, t.temporal, t.spatial(), t.total()};
}

inline RunResult run(const std::vector<Image>& blurry, const SolverParams& params, const RunOptions& opts = {}) {
  check_frames(blurry);
  params.validate();
  RunResult res;

  const InitFlows init = init_flows(blurry, params);
  res.init_fwd = init.fwd;
  res.init_bwd = init.bwd;
  if (opts.duty) {
    if (!(*opts.duty > 0.0 && *opts.duty <= 1.0)) throw Error("duty cycle must lie in (0, 1]");
    res.duty = *opts.duty;
    res.duty_from_user = true;
  } else {
    const DutyEstimate est = estimate_duty_cycle(blurry, init.fwd, init.bwd, params.threads);
    res.duty = est.median;
    res.duty_per_frame = est.per_frame;
  }

  const auto pyramid = build_pyramid(blurry, params.pyr_scale, params.pyr_levels);
  res.levels = static_cast<int>(pyramid.size());
  SequenceState st = SequenceState::from_blurry(pyramid.front().frames, res.duty);
  st.fwd = resize_flows(init.fwd, st.width(), st.height());
  st.bwd = resize_flows(init.bwd, st.width(), st.height());

  auto emit = [&](const EnergyRecord& r) {
    res.energy_log.push_back(r);
    if (opts.progress) opts.progress(r);
  };

  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    const int level = static_cast<int>(l);
    if (l > 0) st = propagate(st, pyramid[l].frames);
    st.blur_samples = level_blur_samples(st, params);
    st.edge_reference = st.latent;
    const OcclusionThresholds th = OcclusionThresholds{}.scaled(pyramid[l].shape.scale);
    assign_visibility(st, params.neighbors, th);
    const auto g = edge_maps(st, params);
    DualState duals(st, params.neighbors);

    emit(make_record(level, 0, "entry", energy_terms(st, params, g)));
    for (int k = 1; k <= params.outer_iters; ++k) {
      restore_latent(st, duals, params);
      estimate_flows(st, duals, params, g);
      emit(make_record(level, k, "alternation", energy_terms(st, params, g)));
    }

    const bool finest = l + 1 == pyramid.size();
    if (params.filter_enabled && (!params.filter_finest_only || finest)) {
      const OcclusionSet occ = detect_occlusions(st, params.neighbors, th);
      FilterConfig fc;
      fc.sigma_w = params.sigma_w;
      st.latent = spatiotemporal_filter(st, occ, fc, params.neighbors, params.threads);
      emit(make_record(level, params.outer_iters + 1, "filtered", energy_terms(st, params, g)));
    }
  }
  st.edge_reference.clear();
  st.visibility.clear();
  res.state = std::move(st);
  return res;
}

// Number of records in which the objective rose above the previous record of
// the same level (entry and alternation stages only).
inline int energy_violations(const std::vector<EnergyRecord>& log, double tol = 1e-6) {
  int bad = 0;
  for (std::size_t k = 1; k < log.size(); ++k) {
    if (log[k].stage != "alternation" || log[k].level != log[k - 1].level) continue;
    if (log[k].total > log[k - 1].total + tol) ++bad;
  }
  return bad;
}

}  // namespace flowdeblur
