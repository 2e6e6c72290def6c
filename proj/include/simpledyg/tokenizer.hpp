#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/graph.hpp"

namespace simpledyg {

enum class SpecialVariant { Distinct, SameForInOut, None };
enum class TemporalVariant { Distinct, SameToken, None };

struct TokenVariant {
  SpecialVariant special = SpecialVariant::Distinct;
  TemporalVariant temporal = TemporalVariant::Distinct;
};

inline const char* special_variant_name(SpecialVariant v) {
  switch (v) {
    case SpecialVariant::Distinct: return "distinct";
    case SpecialVariant::SameForInOut: return "same";
    case SpecialVariant::None: return "none";
  }
  return "?";
}

inline const char* temporal_variant_name(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::Distinct: return "distinct";
    case TemporalVariant::SameToken: return "same";
    case TemporalVariant::None: return "none";
  }
  return "?";
}

inline SpecialVariant parse_special_variant(const std::string& s) {
  if (s == "distinct") return SpecialVariant::Distinct;
  if (s == "same") return SpecialVariant::SameForInOut;
  if (s == "none") return SpecialVariant::None;
  throw ConfigError("unknown special-token variant '" + s + "' (distinct|same|none)");
}

inline TemporalVariant parse_temporal_variant(const std::string& s) {
  if (s == "distinct") return TemporalVariant::Distinct;
  if (s == "same") return TemporalVariant::SameToken;
  if (s == "none") return TemporalVariant::None;
  throw ConfigError("unknown temporal-token variant '" + s + "' (distinct|same|none)");
}

// Token id layout: node ids first (dense graph order), then the seven
// structural tokens, then <|time1|> .. <|timeT|> plus any reserved steps for
// multi-step rollout. All ids are contiguous from 0.
class Vocabulary {
 public:
  static constexpr int kNumSpecials = 7;

  static Vocabulary build(const TemporalGraph& g, int num_steps, int reserved_steps = 0) {
    if (g.nodes.empty()) throw DataError("vocab: empty graph");
    if (num_steps < 2) throw ConfigError("vocab: num_steps must be >= 2");
    if (reserved_steps < 0) throw ConfigError("vocab: reserved_steps must be >= 0");
    Vocabulary v;
    v.num_nodes_ = static_cast<int>(g.nodes.size());
    v.num_steps_ = num_steps;
    v.reserved_steps_ = reserved_steps;
    v.symbols_ = g.nodes;
    v.symbols_.insert(v.symbols_.end(), {"<|hist|>", "<|endofhist|>", "<|pred|>", "<|endofpred|>",
                                         "<|endoftext|>", "[del]", "[pad]"});
    for (int t = 1; t <= num_steps + reserved_steps; ++t) {
      v.symbols_.push_back("<|time" + std::to_string(t) + "|>");
    }
    v.index_.reserve(v.symbols_.size());
    for (size_t i = 0; i < v.symbols_.size(); ++i) {
      if (!v.index_.emplace(v.symbols_[i], static_cast<int>(i)).second) {
        throw DataError("vocab: node id '" + v.symbols_[i] + "' collides with a reserved symbol");
      }
    }
    return v;
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  int num_nodes() const { return num_nodes_; }
  int num_steps() const { return num_steps_; }
  int reserved_steps() const { return reserved_steps_; }

  int hist() const { return num_nodes_; }
  int endofhist() const { return num_nodes_ + 1; }
  int pred() const { return num_nodes_ + 2; }
  int endofpred() const { return num_nodes_ + 3; }
  int endoftext() const { return num_nodes_ + 4; }
  int del() const { return num_nodes_ + 5; }
  int pad() const { return num_nodes_ + 6; }

  int time_token(int t) const {
    if (t < 1 || t > num_steps_ + reserved_steps_) {
      throw ConfigError("vocab: temporal token " + std::to_string(t) + " out of range (have " +
                        std::to_string(num_steps_ + reserved_steps_) + ")");
    }
    return num_nodes_ + kNumSpecials + (t - 1);
  }

  bool is_node(int id) const { return id >= 0 && id < num_nodes_; }
  bool is_temporal(int id) const { return id >= num_nodes_ + kNumSpecials && id < size(); }

  const std::string& symbol(int id) const {
    if (id < 0 || id >= size()) {
      throw DataError("vocab: token id " + std::to_string(id) + " out of range");
    }
    return symbols_[id];
  }

  int id_of(const std::string& sym) const {
    auto it = index_.find(sym);
    if (it == index_.end()) throw DataError("vocab: unknown symbol '" + sym + "'");
    return it->second;
  }

  // FNV-1a over all symbols; pins a checkpoint to its vocabulary.
  uint64_t fingerprint() const {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::string& s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xff;
      h *= 1099511628211ULL;
    };
    for (const auto& s : symbols_) mix(s);
    mix(std::to_string(num_steps_));
    mix(std::to_string(reserved_steps_));
    return h;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  int num_nodes_ = 0;
  int num_steps_ = 0;
  int reserved_steps_ = 0;
};

// One interaction incident to an ego node, seen from the ego's side.
struct EgoEvent {
  int neighbor = -1;   // dense node id == node token id
  int step = 0;        // 1-based time step
  double time = 0.0;   // normalized time, for chronological order
  bool deletion = false;
};

// All interactions incident to `ego` with step <= upto_step, in edge order
// (non-decreasing time, stable). The other endpoint is the neighbor; a
// self-loop contributes the ego itself.
inline std::vector<EgoEvent> extract_ego_history(const SegmentedGraph& seg, int ego,
                                                 int upto_step) {
  if (ego < 0 || ego >= static_cast<int>(seg.graph.nodes.size())) {
    throw DataError("ego history: unknown ego id " + std::to_string(ego));
  }
  std::vector<EgoEvent> out;
  for (size_t i = 0; i < seg.graph.edges.size(); ++i) {
    if (seg.step_of_edge[i] > upto_step) continue;
    const auto& e = seg.graph.edges[i];
    const int s = seg.graph.node_index.at(e.src);
    const int d = seg.graph.node_index.at(e.dst);
    if (s != ego && d != ego) continue;
    EgoEvent ev;
    ev.neighbor = s == ego ? d : s;
    ev.step = seg.step_of_edge[i];
    ev.time = e.time;
    ev.deletion = e.op == EdgeOp::Delete;
    out.push_back(ev);
  }
  return out;
}

// Encoded instance: input ids x' and target ids y' in the temporal-token
// layout for the chosen variant.
struct TokenSequence {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  int ego = -1;
  int target_step = 0;
  TokenVariant variant;

  int total_length() const {
    return static_cast<int>(input_ids.size() + target_ids.size());
  }
};

namespace detail {

inline int event_cost(const EgoEvent& ev) { return ev.deletion ? 2 : 1; }

inline void emit_event(std::vector<int>& out, const Vocabulary& vocab, const EgoEvent& ev) {
  if (ev.deletion) out.push_back(vocab.del());
  out.push_back(ev.neighbor);
}

inline int temporal_id(const Vocabulary& vocab, TemporalVariant v, int t) {
  return v == TemporalVariant::SameToken ? vocab.time_token(1) : vocab.time_token(t);
}

}  // namespace detail

// Lays out
//   <|hist|> ego <|time1|> S^1 ... <|timeK-1|> S^{K-1} <|endofhist|>
//   <|pred|> <|timeK|> S^K <|endofpred|>
// for target step K, subject to the variant. A step's temporal token is
// emitted even when the step is empty. If the sequence exceeds
// context_length, the oldest history node tokens are dropped first (never
// the ego token or structural tokens), then the oldest target ones.
inline TokenSequence encode_instance(const Vocabulary& vocab, int ego,
                                     std::vector<EgoEvent> history,
                                     std::vector<EgoEvent> target, int target_step,
                                     TokenVariant variant, int context_length) {
  if (target_step < 2) {
    throw ConfigError("encode: target step must be >= 2 (no history exists before step 1)");
  }
  if (target_step > vocab.num_steps() + vocab.reserved_steps()) {
    throw ConfigError("encode: target step " + std::to_string(target_step) +
                      " beyond the vocabulary's temporal tokens");
  }
  if (!vocab.is_node(ego)) throw DataError("encode: ego id out of node range");
  for (const auto& ev : history) {
    if (ev.step >= target_step) {
      throw std::invalid_argument("encode: history event at step >= target step");
    }
  }

  const bool specials = variant.special != SpecialVariant::None;
  const bool temporals = variant.temporal != TemporalVariant::None;
  const int structural = (specials ? 4 : 0) + 1 /*ego*/ +
                         (temporals ? target_step - 1 + 1 : 0);
  if (structural > context_length) {
    throw ConfigError("encode: context_length " + std::to_string(context_length) +
                      " below the minimum structural length " + std::to_string(structural));
  }

  int total = structural;
  for (const auto& ev : history) total += detail::event_cost(ev);
  for (const auto& ev : target) total += detail::event_cost(ev);
  size_t hist_begin = 0;
  size_t target_begin = 0;
  while (total > context_length) {
    if (hist_begin < history.size()) {
      total -= detail::event_cost(history[hist_begin++]);
    } else if (target_begin < target.size()) {
      total -= detail::event_cost(target[target_begin++]);
    } else {
      break;  // structural only; already checked above
    }
  }

  TokenSequence seq;
  seq.ego = ego;
  seq.target_step = target_step;
  seq.variant = variant;

  auto& in = seq.input_ids;
  if (specials) in.push_back(vocab.hist());
  in.push_back(ego);
  size_t hi = hist_begin;
  for (int t = 1; t < target_step; ++t) {
    if (temporals) in.push_back(detail::temporal_id(vocab, variant.temporal, t));
    while (hi < history.size() && history[hi].step == t) {
      detail::emit_event(in, vocab, history[hi]);
      ++hi;
    }
  }
  if (specials) in.push_back(vocab.endofhist());

  auto& out = seq.target_ids;
  if (specials) {
    out.push_back(variant.special == SpecialVariant::SameForInOut ? vocab.hist() : vocab.pred());
  }
  if (temporals) out.push_back(detail::temporal_id(vocab, variant.temporal, target_step));
  for (size_t i = target_begin; i < target.size(); ++i) {
    detail::emit_event(out, vocab, target[i]);
  }
  if (specials) {
    out.push_back(variant.special == SpecialVariant::SameForInOut ? vocab.endofhist()
                                                                  : vocab.endofpred());
  }
  return seq;
}

// Prompt for generation at step K: the encoded history plus the target
// opening tokens (prediction marker and temporal token, per variant).
inline std::vector<int> prediction_prefix(const Vocabulary& vocab, int ego,
                                          std::vector<EgoEvent> history, int target_step,
                                          TokenVariant variant, int context_length) {
  TokenSequence seq = encode_instance(vocab, ego, std::move(history), {}, target_step, variant,
                                      context_length);
  std::vector<int> prefix = std::move(seq.input_ids);
  const size_t closing = variant.special != SpecialVariant::None ? 1 : 0;
  for (size_t i = 0; i + closing < seq.target_ids.size(); ++i) {
    prefix.push_back(seq.target_ids[i]);
  }
  return prefix;
}

// Inverse of encoding at the token level.
inline std::vector<std::string> decode_tokens(const std::vector<int>& ids,
                                              const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.symbol(id));
  return out;
}

inline std::string render_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.symbol(ids[i]);
  }
  return out;
}

}  // namespace simpledyg
