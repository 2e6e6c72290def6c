#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "simpledyg/errors.hpp"

namespace simpledyg {

enum class EdgeOp { Add, Delete };

struct TemporalEdge {
  std::string src;
  std::string dst;
  double time = 0.0;
  EdgeOp op = EdgeOp::Add;
};

// Timestamped interaction list, stably sorted by time. Node ids are opaque
// strings; `nodes` lists them in first-appearance order over the sorted edge
// list, which fixes the dense integer ids used everywhere downstream.
struct TemporalGraph {
  std::vector<TemporalEdge> edges;
  std::vector<std::string> nodes;
  std::unordered_map<std::string, int> node_index;
  double time_min = 0.0;
  double time_max = 0.0;

  int node_id(const std::string& name) const {
    auto it = node_index.find(name);
    return it == node_index.end() ? -1 : it->second;
  }

  int self_loop_count() const {
    int n = 0;
    for (const auto& e : edges) n += e.src == e.dst;
    return n;
  }

  void rebuild_node_table() {
    nodes.clear();
    node_index.clear();
    auto touch = [&](const std::string& name) {
      if (node_index.emplace(name, static_cast<int>(nodes.size())).second) {
        nodes.push_back(name);
      }
    };
    for (const auto& e : edges) {
      touch(e.src);
      touch(e.dst);
    }
  }

  void finalize() {
    std::stable_sort(edges.begin(), edges.end(),
                     [](const TemporalEdge& a, const TemporalEdge& b) { return a.time < b.time; });
    rebuild_node_table();
    if (!edges.empty()) {
      time_min = edges.front().time;
      time_max = edges.back().time;
    }
  }
};

struct ParseOptions {
  char delimiter = '\0';        // '\0' = any run of whitespace
  bool allow_deletions = false;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == '\0') {
    size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) out.push_back(line.substr(i, j - i));
      i = j;
    }
  } else {
    size_t start = 0;
    while (start <= line.size()) {
      size_t end = line.find(delim, start);
      if (end == std::string_view::npos) end = line.size();
      out.push_back(line.substr(start, end - start));
      start = end + 1;
      if (end == line.size()) break;
    }
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

// Reads `src dst time [add|del]` lines. `#` comments and blank lines are
// skipped; duplicate lines are kept (repeat interactions are meaningful).
inline TemporalGraph parse_edge_list(std::istream& in, const ParseOptions& opt = {}) {
  TemporalGraph g;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    std::string_view sv(line);
    size_t ws = sv.find_first_not_of(" \t");
    if (ws == std::string_view::npos) continue;
    if (sv[ws] == '#') continue;
    auto fields = detail::split_fields(sv, opt.delimiter);
    if (fields.size() != 3 && fields.size() != 4) {
      throw DataError("edge list line " + std::to_string(lineno) + ": expected 3 or 4 fields, got " +
                      std::to_string(fields.size()));
    }
    TemporalEdge e;
    e.src = std::string(fields[0]);
    e.dst = std::string(fields[1]);
    if (e.src.empty() || e.dst.empty()) {
      throw DataError("edge list line " + std::to_string(lineno) + ": empty node id");
    }
    if (!detail::parse_double(fields[2], e.time) || !std::isfinite(e.time)) {
      throw DataError("edge list line " + std::to_string(lineno) + ": bad time value '" +
                      std::string(fields[2]) + "'");
    }
    if (fields.size() == 4) {
      if (fields[3] == "add") {
        e.op = EdgeOp::Add;
      } else if (fields[3] == "del") {
        if (!opt.allow_deletions) {
          throw DataError("edge list line " + std::to_string(lineno) +
                          ": deletion op but deletions are not enabled");
        }
        e.op = EdgeOp::Delete;
      } else {
        throw DataError("edge list line " + std::to_string(lineno) + ": bad op '" +
                        std::string(fields[3]) + "' (expected add|del)");
      }
    }
    g.edges.push_back(std::move(e));
  }
  if (g.edges.empty()) throw DataError("edge list: no edges");
  g.finalize();
  return g;
}

inline TemporalGraph parse_edge_list_text(const std::string& text, const ParseOptions& opt = {}) {
  std::istringstream ss(text);
  return parse_edge_list(ss, opt);
}

// Optional per-node features: `node_id v1 v2 ... vF`, fixed dimension F.
struct FeatureTable {
  int dim = 0;
  std::unordered_map<std::string, std::vector<double>> rows;
};

inline FeatureTable parse_feature_file(std::istream& in) {
  FeatureTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    size_t ws = sv.find_first_not_of(" \t\r");
    if (ws == std::string_view::npos || sv[ws] == '#') continue;
    auto fields = detail::split_fields(sv, '\0');
    if (fields.size() < 2) {
      throw DataError("feature file line " + std::to_string(lineno) + ": expected node id + values");
    }
    std::vector<double> vals(fields.size() - 1);
    for (size_t i = 1; i < fields.size(); ++i) {
      if (!detail::parse_double(fields[i], vals[i - 1])) {
        throw DataError("feature file line " + std::to_string(lineno) + ": bad value '" +
                        std::string(fields[i]) + "'");
      }
    }
    if (table.dim == 0) {
      table.dim = static_cast<int>(vals.size());
    } else if (static_cast<int>(vals.size()) != table.dim) {
      throw DataError("feature file line " + std::to_string(lineno) + ": dimension " +
                      std::to_string(vals.size()) + " != " + std::to_string(table.dim));
    }
    table.rows[std::string(fields[0])] = std::move(vals);
  }
  return table;
}

// Affine map of all timestamps onto [0,1]; a zero time span maps everything
// to 0. Idempotent, order preserving.
inline TemporalGraph normalize_times(TemporalGraph g) {
  if (g.edges.empty()) throw DataError("normalize_times: empty graph");
  const double span = g.time_max - g.time_min;
  for (auto& e : g.edges) {
    e.time = span > 0.0 ? (e.time - g.time_min) / span : 0.0;
  }
  g.time_min = 0.0;
  g.time_max = span > 0.0 ? 1.0 : 0.0;
  return g;
}

// Equal-interval segmentation of normalized time into T steps (1-based).
struct TimeGrid {
  int num_steps = 0;
  std::vector<double> boundaries;  // T+1 values, 0 .. 1

  static TimeGrid make(int t) {
    if (t < 2) throw ConfigError("time grid: need at least 2 steps, got " + std::to_string(t));
    TimeGrid g;
    g.num_steps = t;
    g.boundaries.resize(t + 1);
    for (int i = 0; i <= t; ++i) g.boundaries[i] = static_cast<double>(i) / t;
    return g;
  }

  // Intervals are left-closed/right-open, the last one closed.
  int step_of(double tau) const {
    if (tau >= 1.0) return num_steps;
    if (tau < 0.0) throw DataError("time grid: time " + std::to_string(tau) + " not normalized");
    const int s = static_cast<int>(std::floor(tau * num_steps)) + 1;
    return std::min(s, num_steps);
  }
};

struct SegmentedGraph {
  TemporalGraph graph;            // normalized times
  TimeGrid grid;
  std::vector<int> step_of_edge;  // 1..T, parallel to graph.edges
};

inline SegmentedGraph segment_time(TemporalGraph g, int num_steps) {
  if (g.edges.empty()) throw DataError("segment_time: empty graph");
  if (g.time_min < 0.0 || g.time_max > 1.0) {
    throw DataError("segment_time: times must be normalized to [0,1] first");
  }
  SegmentedGraph seg;
  seg.grid = TimeGrid::make(num_steps);
  seg.step_of_edge.reserve(g.edges.size());
  for (const auto& e : g.edges) seg.step_of_edge.push_back(seg.grid.step_of(e.time));
  seg.graph = std::move(g);
  return seg;
}

// Last step is the test target, step T-1 validation, targets 2..T-2 training.
struct DatasetSplit {
  int num_steps = 0;
  int test_step = 0;
  int val_step = 0;
  int train_min_target = 2;
  int train_max_target = 0;
};

inline DatasetSplit split_dataset(const TimeGrid& grid) {
  if (grid.num_steps < 3) {
    throw ConfigError("split: insufficient steps for split (need T >= 3, got " +
                      std::to_string(grid.num_steps) + ")");
  }
  DatasetSplit s;
  s.num_steps = grid.num_steps;
  s.test_step = grid.num_steps;
  s.val_step = grid.num_steps - 1;
  s.train_max_target = grid.num_steps - 2;
  return s;
}

// Node ids (dense ints) adjacent to ego at exactly `step`, de-duplicated,
// in first-interaction order. The graph is treated as undirected.
inline std::vector<int> ego_neighbors_at_step(const SegmentedGraph& seg, int ego, int step) {
  std::vector<int> out;
  for (size_t i = 0; i < seg.graph.edges.size(); ++i) {
    if (seg.step_of_edge[i] != step) continue;
    const auto& e = seg.graph.edges[i];
    int other = -1;
    if (seg.graph.node_index.at(e.src) == ego) {
      other = seg.graph.node_index.at(e.dst);
    } else if (seg.graph.node_index.at(e.dst) == ego) {
      other = seg.graph.node_index.at(e.src);
    } else {
      continue;
    }
    if (std::find(out.begin(), out.end(), other) == out.end()) out.push_back(other);
  }
  return out;
}

// All ego node ids with at least one incident edge in steps [1, upto_step].
inline std::vector<int> active_egos_upto(const SegmentedGraph& seg, int upto_step) {
  std::vector<char> seen(seg.graph.nodes.size(), 0);
  for (size_t i = 0; i < seg.graph.edges.size(); ++i) {
    if (seg.step_of_edge[i] > upto_step) continue;
    const auto& e = seg.graph.edges[i];
    seen[seg.graph.node_index.at(e.src)] = 1;
    seen[seg.graph.node_index.at(e.dst)] = 1;
  }
  std::vector<int> out;
  for (size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Appendix-D style binned interaction rates over raw time units.
struct StatsBin {
  double bin_start = 0.0;
  double bin_end = 0.0;
  double mean_rate = 0.0;  // interactions per raw time unit
};

inline std::vector<StatsBin> interaction_stats(const TemporalGraph& g, double bin_width) {
  if (!(bin_width > 0.0)) throw ConfigError("interaction_stats: bin_width must be > 0");
  if (g.edges.empty()) throw DataError("interaction_stats: empty graph");
  const double span = g.time_max - g.time_min;
  // Bins are left-closed/right-open from time_min; a point landing exactly on
  // the trailing boundary opens one more bin, so [time_min, time_max] is
  // always covered.
  const int num_bins = static_cast<int>(std::floor(span / bin_width)) + 1;
  std::vector<int> counts(static_cast<size_t>(num_bins), 0);
  for (const auto& e : g.edges) {
    int b = static_cast<int>(std::floor((e.time - g.time_min) / bin_width));
    if (b >= num_bins) b = num_bins - 1;
    if (b < 0) b = 0;
    counts[b] += 1;
  }
  std::vector<StatsBin> out(static_cast<size_t>(num_bins));
  for (int b = 0; b < num_bins; ++b) {
    out[b].bin_start = g.time_min + b * bin_width;
    out[b].bin_end = out[b].bin_start + bin_width;
    out[b].mean_rate = counts[b] / bin_width;
  }
  return out;
}

}  // namespace simpledyg
