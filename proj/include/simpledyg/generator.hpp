#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/model.hpp"
#include "simpledyg/tokenizer.hpp"

namespace simpledyg {

struct GenerateResult {
  std::vector<int> ids;       // generated tokens, including the halt token
  std::vector<double> probs;  // softmax probability of each chosen token
  bool halted = false;        // a halt token was produced
};

namespace detail {

inline int argmax_lowest_id(const std::vector<double>& logits) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(logits.size()); ++j) {
    if (logits[j] > logits[best]) best = j;
  }
  return best;
}

inline double softmax_prob_of(const std::vector<double>& logits, int id) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::exp(logits[id] - mx) / sum;
}

}  // namespace detail

// Greedy argmax decoding (ties go to the lowest token id). Stops when a halt
// token is produced, the cap is reached, or the context is exhausted.
inline GenerateResult generate(const ModelParams& model, const std::vector<int>& prefix, int cap,
                               const std::vector<int>& halt_tokens) {
  if (cap < 1) throw ConfigError("generate: cap must be >= 1");
  if (prefix.empty()) throw DataError("generate: empty prefix");
  if (static_cast<int>(prefix.size()) >= model.config.context_length) {
    throw DataError("generate: prefix length " + std::to_string(prefix.size()) +
                    " leaves no room in context_length " +
                    std::to_string(model.config.context_length));
  }
  DecodeSession session(model);
  std::vector<double> logits;
  for (int id : prefix) logits = session.step(id);

  GenerateResult res;
  // prefix + generated never exceeds the context length
  while (static_cast<int>(res.ids.size()) < cap && !session.full()) {
    const int next = detail::argmax_lowest_id(logits);
    res.ids.push_back(next);
    res.probs.push_back(detail::softmax_prob_of(logits, next));
    if (std::find(halt_tokens.begin(), halt_tokens.end(), next) != halt_tokens.end()) {
      res.halted = true;
      break;
    }
    logits = session.step(next);
  }
  return res;
}

// Ordered generated node list for one ego at one step.
struct RankedPrediction {
  int ego = -1;
  int step = 0;
  std::vector<int> nodes;      // node ids, generation order, first occurrence kept
  std::vector<double> scores;  // chosen-token probability per kept node
  bool halted = false;
};

// The token that ends a prediction segment under the given variant.
inline int halt_token_for(const Vocabulary& vocab, TokenVariant variant) {
  switch (variant.special) {
    case SpecialVariant::Distinct: return vocab.endofpred();
    case SpecialVariant::SameForInOut: return vocab.endofhist();
    case SpecialVariant::None: return vocab.endoftext();
  }
  return vocab.endofpred();
}

inline RankedPrediction collect_prediction(const Vocabulary& vocab, const GenerateResult& gen,
                                           int ego, int step) {
  RankedPrediction pred;
  pred.ego = ego;
  pred.step = step;
  pred.halted = gen.halted;
  std::set<int> seen;
  for (size_t i = 0; i < gen.ids.size(); ++i) {
    const int id = gen.ids[i];
    if (!vocab.is_node(id)) continue;  // specials/temporals count toward the cap only
    if (!seen.insert(id).second) continue;
    pred.nodes.push_back(id);
    pred.scores.push_back(gen.probs[i]);
  }
  return pred;
}

struct PredictOptions {
  TokenVariant variant;
  int cap = 64;
  bool rank_by_first_logits = false;  // rank by the first position's distribution
};

namespace detail {

inline RankedPrediction predict_from_history(const ModelParams& model, const Vocabulary& vocab,
                                             int ego, std::vector<EgoEvent> history, int step,
                                             const PredictOptions& opt) {
  // keep room for the generated tokens when history alone would fill the context
  const int reserve = 1 + std::min(opt.cap, 16);
  const int budget = std::max(8, model.config.context_length - reserve);
  const std::vector<int> prefix =
      prediction_prefix(vocab, ego, std::move(history), step, opt.variant, budget);

  if (opt.rank_by_first_logits) {
    DecodeSession session(model);
    std::vector<double> logits;
    for (int id : prefix) logits = session.step(id);
    std::vector<int> order;
    for (int id = 0; id < vocab.num_nodes(); ++id) order.push_back(id);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    RankedPrediction pred;
    pred.ego = ego;
    pred.step = step;
    pred.halted = false;
    const int keep = std::min<int>(opt.cap, static_cast<int>(order.size()));
    for (int i = 0; i < keep; ++i) {
      pred.nodes.push_back(order[i]);
      pred.scores.push_back(softmax_prob_of(logits, order[i]));
    }
    return pred;
  }

  const GenerateResult gen =
      generate(model, prefix, opt.cap, {halt_token_for(vocab, opt.variant), vocab.endoftext()});
  return collect_prediction(vocab, gen, ego, step);
}

}  // namespace detail

// Single-step test prediction: encode history through step-1, open the
// prediction segment, decode greedily and keep the node tokens in order.
inline RankedPrediction predict_step(const ModelParams& model, const Vocabulary& vocab,
                                     const SegmentedGraph& seg, int ego, int step,
                                     const PredictOptions& opt) {
  if (step < 2) throw ConfigError("predict: step must be >= 2");
  return detail::predict_from_history(model, vocab, ego,
                                      extract_ego_history(seg, ego, step - 1), step, opt);
}

struct MultiStepResult {
  std::vector<RankedPrediction> steps;     // predictions for T, T+1, ..., T+delta-1
  std::vector<std::vector<int>> prefixes;  // the exact conditioning prefix per step
};

// Rollout: step j+1 conditions on the *generated* nodes of steps <= j,
// appended to the history between the matching temporal tokens.
inline MultiStepResult multi_step(const ModelParams& model, const Vocabulary& vocab,
                                  const SegmentedGraph& seg, int ego, int delta,
                                  const PredictOptions& opt) {
  if (delta < 1) throw ConfigError("multi_step: delta must be >= 1");
  const int t = seg.grid.num_steps;
  if (delta - 1 > vocab.reserved_steps()) {
    throw ConfigError("multi_step: delta " + std::to_string(delta) + " needs " +
                      std::to_string(delta - 1) + " reserved temporal tokens, vocabulary has " +
                      std::to_string(vocab.reserved_steps()));
  }
  MultiStepResult res;
  std::vector<EgoEvent> history = extract_ego_history(seg, ego, t - 1);
  for (int j = 0; j < delta; ++j) {
    const int step = t + j;
    const int reserve = 1 + std::min(opt.cap, 16);
    const int budget = std::max(8, model.config.context_length - reserve);
    res.prefixes.push_back(prediction_prefix(vocab, ego, history, step, opt.variant, budget));
    RankedPrediction pred = detail::predict_from_history(model, vocab, ego, history, step, opt);
    for (size_t i = 0; i < pred.nodes.size(); ++i) {
      EgoEvent ev;
      ev.neighbor = pred.nodes[i];
      ev.step = step;
      ev.time = 1.0 + j;  // past the normalized range; order within the step is list order
      history.push_back(ev);
    }
    res.steps.push_back(std::move(pred));
  }
  return res;
}

}  // namespace simpledyg
