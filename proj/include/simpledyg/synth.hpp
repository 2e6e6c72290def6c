#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/graph.hpp"
#include "simpledyg/rng.hpp"

namespace simpledyg {

enum class SynthKind { Cyclic, Bursty, Steady, Mixed };

inline const char* synth_kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::Cyclic: return "cyclic";
    case SynthKind::Bursty: return "bursty";
    case SynthKind::Steady: return "steady";
    case SynthKind::Mixed: return "mixed";
  }
  return "?";
}

struct SynthSpec {
  SynthKind kind = SynthKind::Cyclic;
  int num_egos = 100;
  int neighbors = 6;    // per-ego partner pool (and events per step for burst/steady)
  int period = 3;
  int num_steps = 10;
  double noise = 0.0;
  uint64_t seed = 0;
  int extra_steps = 3;  // pattern horizon past num_steps, recorded in truth only

  void validate() const {
    if (num_egos < 1) throw ConfigError("synth: num_egos must be >= 1");
    if (neighbors < 1) throw ConfigError("synth: neighbors must be >= 1");
    if (period < 1 || period > neighbors) {
      throw ConfigError("synth: period must be in [1, neighbors]");
    }
    if (num_steps < 2) throw ConfigError("synth: num_steps must be >= 2");
    if (noise < 0.0 || noise >= 1.0) throw ConfigError("synth: noise must be in [0,1)");
    if (extra_steps < 0) throw ConfigError("synth: extra_steps must be >= 0");
  }
};

// (ego name, step) -> interacting node names, in emission order.
struct TruthMap {
  std::map<std::string, std::map<int, std::vector<std::string>>> by_ego;

  const std::vector<std::string>* lookup(const std::string& ego, int step) const {
    auto it = by_ego.find(ego);
    if (it == by_ego.end()) return nullptr;
    auto jt = it->second.find(step);
    return jt == it->second.end() ? nullptr : &jt->second;
  }
};

struct SynthResult {
  TemporalGraph graph;
  TruthMap truth;
};

inline std::string synth_ego_name(int i) { return "u" + std::to_string(i); }
inline std::string synth_neighbor_name(int ego, int j) {
  return "v" + std::to_string(ego) + "_" + std::to_string(j);
}

// Each ego interacts with pool[(t-1) mod period] at every step t, at a
// mid-interval timestamp. With probability `noise` the partner is swapped
// for a different pool member, so the deviation rate equals the noise rate.
// The pattern runs for extra_steps past the emitted horizon; those steps
// appear in the truth map only.
inline SynthResult gen_cyclic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthResult res;
  const int horizon = spec.num_steps + spec.extra_steps;
  for (int t = 1; t <= horizon; ++t) {
    const double raw_time = static_cast<double>(t) - 0.5;  // step units
    for (int e = 0; e < spec.num_egos; ++e) {
      int pick = (t - 1) % spec.period;
      if (spec.noise > 0.0 && rng.bernoulli(spec.noise) && spec.neighbors > 1) {
        int alt = rng.uniform_int(spec.neighbors - 1);
        if (alt >= pick) ++alt;
        pick = alt;
      }
      const std::string ego = synth_ego_name(e);
      const std::string partner = synth_neighbor_name(e, pick);
      if (t <= spec.num_steps) {
        res.graph.edges.push_back(TemporalEdge{ego, partner, raw_time, EdgeOp::Add});
      }
      res.truth.by_ego[ego][t].push_back(partner);
    }
  }
  res.graph.finalize();
  return res;
}

// Bursty egos put all of a step's events inside the first 5% of the step
// interval; steady egos spread the same number of events evenly across it.
inline SynthResult gen_burst_steady(const SynthSpec& spec) {
  spec.validate();
  SynthResult res;
  const int k = spec.neighbors;
  for (int t = 1; t <= spec.num_steps; ++t) {
    for (int e = 0; e < spec.num_egos; ++e) {
      const bool bursty = spec.kind == SynthKind::Bursty ||
                          (spec.kind == SynthKind::Mixed && e % 2 == 0);
      const std::string ego = synth_ego_name(e);
      for (int j = 0; j < k; ++j) {
        const double frac = static_cast<double>(j) / k;
        const double raw_time = (t - 1) + (bursty ? 0.05 * frac : frac);
        const std::string partner = synth_neighbor_name(e, (t - 1 + j) % k);
        res.graph.edges.push_back(TemporalEdge{ego, partner, raw_time, EdgeOp::Add});
        res.truth.by_ego[ego][t].push_back(partner);
      }
    }
  }
  res.graph.finalize();
  return res;
}

inline SynthResult generate_synth(const SynthSpec& spec) {
  if (spec.kind == SynthKind::Cyclic) return gen_cyclic(spec);
  return gen_burst_steady(spec);
}

}  // namespace simpledyg
