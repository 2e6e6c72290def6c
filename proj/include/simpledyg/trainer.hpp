#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <span>
#include <string>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/graph.hpp"
#include "simpledyg/model.hpp"
#include "simpledyg/rng.hpp"
#include "simpledyg/tokenizer.hpp"

namespace simpledyg {

struct TrainConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 16;
  int max_epochs = 100;
  int patience = 10;          // epochs without validation improvement
  int warmup_steps = 100;
  double clip_norm = 1.0;
  uint64_t seed = 0;
  bool loss_on_target_only = false;
  int val_every = 1;
  int threads = 1;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
      throw ConfigError("train: betas must be in (0,1)");
    }
    if (eps <= 0.0) throw ConfigError("train: eps must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0 (0 disables)");
    if (val_every < 1) throw ConfigError("train: val_every must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
  }
};

// Concatenation [x; y] + <|endoftext|>, per Algorithm 1.
struct TrainingInstance {
  std::vector<int> ids;
  int ego = -1;
  int input_len = 0;  // length of the x part, for target-only loss masking
};

// One encoded sequence per active ego per training target step. An ego is
// active for target k when it interacts at step k, mirroring the evaluation
// protocol (egos with empty ground truth are excluded there as well).
inline std::vector<TokenSequence> build_training_sequences(const SegmentedGraph& seg,
                                                           const Vocabulary& vocab,
                                                           const DatasetSplit& split,
                                                           TokenVariant variant,
                                                           int context_length) {
  std::vector<TokenSequence> out;
  // reserve one slot for the trailing <|endoftext|>
  const int budget = context_length - 1;
  for (int k = split.train_min_target; k <= split.train_max_target; ++k) {
    for (int ego : active_egos_upto(seg, k)) {
      auto events = extract_ego_history(seg, ego, k);
      std::vector<EgoEvent> history, target;
      for (auto& ev : events) {
        (ev.step == k ? target : history).push_back(ev);
      }
      if (target.empty()) continue;
      out.push_back(encode_instance(vocab, ego, std::move(history), std::move(target), k, variant,
                                    budget));
    }
  }
  return out;
}

inline std::vector<TrainingInstance> make_instances(const std::vector<TokenSequence>& sequences,
                                                    const Vocabulary& vocab) {
  if (sequences.empty()) throw DataError("trainer: empty training set");
  std::vector<TrainingInstance> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    TrainingInstance inst;
    inst.ego = seq.ego;
    inst.input_len = static_cast<int>(seq.input_ids.size());
    inst.ids = seq.input_ids;
    inst.ids.insert(inst.ids.end(), seq.target_ids.begin(), seq.target_ids.end());
    inst.ids.push_back(vocab.endoftext());
    out.push_back(std::move(inst));
  }
  return out;
}

// Right-padded id matrix plus next-token targets; pad positions (and, when
// target_only is set, history positions) carry the pad id so the loss
// ignores them.
struct Batch {
  std::vector<std::vector<int>> rows;          // width ids each
  std::vector<std::vector<int>> loss_targets;  // width-1 ids each
  int width = 0;
};

inline Batch batch_and_mask(std::span<const TrainingInstance> instances, const Vocabulary& vocab,
                            bool target_only = false) {
  if (instances.empty()) throw DataError("batch: empty batch");
  Batch b;
  for (const auto& inst : instances) {
    b.width = std::max(b.width, static_cast<int>(inst.ids.size()));
  }
  const int pad = vocab.pad();
  for (const auto& inst : instances) {
    std::vector<int> row = inst.ids;
    row.resize(b.width, pad);
    std::vector<int> targets(b.width - 1, pad);
    const int n = static_cast<int>(inst.ids.size());
    for (int j = 1; j < n; ++j) {
      if (target_only && j < inst.input_len) continue;
      targets[j - 1] = inst.ids[j];
    }
    b.rows.push_back(std::move(row));
    b.loss_targets.push_back(std::move(targets));
  }
  return b;
}

inline std::vector<Matrix*> tensor_list(ModelParams& p) {
  std::vector<Matrix*> out;
  p.for_each_named([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

inline void zero_params(ModelParams& p) {
  p.for_each_named([](const std::string&, Matrix& m) { m.fill(0.0); });
}

inline double global_norm(ModelParams& grads) {
  double sq = 0.0;
  grads.for_each_named([&](const std::string&, const Matrix& m) {
    for (double v : m.data) sq += v * v;
  });
  return std::sqrt(sq);
}

struct AdamState {
  ModelParams m, v;
  long t = 0;

  explicit AdamState(const ModelParams& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

// Standard Adam with bias correction. Deterministic given inputs.
inline void adam_step(ModelParams& params, ModelParams& grads, AdamState& state,
                      const TrainConfig& cfg, double lr_t) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  for (size_t i = 0; i < ps.size(); ++i) {
    Matrix& p = *ps[i];
    const Matrix& g = *gs[i];
    Matrix& m = *ms[i];
    Matrix& v = *vs[i];
    for (size_t e = 0; e < p.size(); ++e) {
      m.data[e] = cfg.beta1 * m.data[e] + (1.0 - cfg.beta1) * g.data[e];
      v.data[e] = cfg.beta2 * v.data[e] + (1.0 - cfg.beta2) * g.data[e] * g.data[e];
      const double mhat = m.data[e] / bc1;
      const double vhat = v.data[e] / bc2;
      p.data[e] -= lr_t * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

struct ValMetrics {
  double ndcg5 = 0.0;
  double jaccard = 0.0;
};

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double val_ndcg5 = 0.0;
  double val_jaccard = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams best_params;
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_ndcg5 = 0.0;
  long steps = 0;
};

using ValCallback = std::function<ValMetrics(const ModelParams&)>;
using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

// Forward/backward for one padded row; returns the mean per-token loss.
// Gradients are scaled by `weight` and accumulated into `grads`.
inline double instance_pass(const ModelParams& params, ModelParams* grads,
                            const std::vector<int>& row, const std::vector<int>& targets,
                            int pad_id, const Matrix& keep_mask, double weight,
                            Rng* drop_rng) {
  Tape tape(grads != nullptr);
  BoundModel bm = bind_model(tape, params, grads);
  std::vector<int> inputs(row.begin(), row.end() - 1);
  const Tape::Var logits = forward_logits(tape, bm, params.config, inputs, keep_mask, drop_rng);
  const Tape::Var loss = tape.cross_entropy_next_token(logits, targets, pad_id);
  const double loss_value = tape.value(loss)(0, 0);
  if (grads != nullptr) {
    tape.backward(tape.scale(loss, weight));
  }
  return loss_value;
}

}  // namespace detail

// Algorithm-1 training loop: shuffled epochs over [x;y] instances, masked
// next-token cross entropy, global-norm clipping, Adam with linear warmup,
// early stopping on validation NDCG@5. Returns the best-validation
// checkpoint, never the last one.
inline TrainResult train(const std::vector<TrainingInstance>& corpus, ModelParams model,
                         const TrainConfig& cfg, const Vocabulary& vocab,
                         const ValCallback& validate, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (corpus.empty()) throw DataError("trainer: empty training set");
  for (const auto& inst : corpus) {
    if (static_cast<int>(inst.ids.size()) > model.config.context_length) {
      throw std::logic_error("trainer: instance exceeds context_length after tokenization");
    }
  }

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  ModelParams grads = model.zeros_like();
  AdamState adam(model);

  TrainResult result;
  result.best_params = model;
  result.best_val_ndcg5 = -1.0;

  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  long global_step = 0;
  int since_best = 0;
  ValMetrics last_val;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    double lr_t = cfg.lr;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<TrainingInstance> chunk;
      chunk.reserve(end - start);
      for (size_t i = start; i < end; ++i) chunk.push_back(corpus[order[i]]);
      Batch batch = batch_and_mask(chunk, vocab, cfg.loss_on_target_only);

      zero_params(grads);
      const Matrix keep_mask = causal_keep_mask(batch.width - 1);
      const double weight = 1.0 / static_cast<double>(batch.rows.size());
      double batch_loss = 0.0;
      Rng* drop = model.config.dropout > 0.0 ? &dropout_rng : nullptr;

      if (cfg.threads <= 1 || batch.rows.size() <= 1 || drop != nullptr) {
        for (size_t r = 0; r < batch.rows.size(); ++r) {
          batch_loss += detail::instance_pass(model, &grads, batch.rows[r],
                                              batch.loss_targets[r], vocab.pad(), keep_mask,
                                              weight, drop);
        }
      } else {
        // Deterministic for a fixed thread count: contiguous chunks, reduced
        // in chunk order.
        const int nthreads = std::min<int>(cfg.threads, static_cast<int>(batch.rows.size()));
        std::vector<std::future<std::pair<double, ModelParams>>> futures;
        for (int t = 0; t < nthreads; ++t) {
          const size_t lo = batch.rows.size() * t / nthreads;
          const size_t hi = batch.rows.size() * (t + 1) / nthreads;
          futures.push_back(std::async(std::launch::async, [&, lo, hi]() {
            ModelParams local = model.zeros_like();
            double loss_sum = 0.0;
            for (size_t r = lo; r < hi; ++r) {
              loss_sum += detail::instance_pass(model, &local, batch.rows[r],
                                                batch.loss_targets[r], vocab.pad(), keep_mask,
                                                weight, nullptr);
            }
            return std::make_pair(loss_sum, std::move(local));
          }));
        }
        auto gl = tensor_list(grads);
        for (auto& fut : futures) {
          auto [loss_sum, local] = fut.get();
          batch_loss += loss_sum;
          auto ll = tensor_list(local);
          for (size_t i = 0; i < gl.size(); ++i) add_inplace(*gl[i], *ll[i]);
        }
      }
      batch_loss /= static_cast<double>(batch.rows.size());

      const double grad_norm = global_norm(grads);
      lr_t = cfg.warmup_steps > 0
                 ? cfg.lr * std::min(1.0, static_cast<double>(global_step + 1) / cfg.warmup_steps)
                 : cfg.lr;
      if (!std::isfinite(batch_loss) || !std::isfinite(grad_norm)) {
        throw DataError("trainer: non-finite loss at step " + std::to_string(global_step) +
                        " (lr=" + std::to_string(lr_t) + ", grad_norm=" + std::to_string(grad_norm) +
                        ")");
      }
      if (cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm) {
        const double scale = cfg.clip_norm / grad_norm;
        grads.for_each_named([&](const std::string&, Matrix& m) {
          for (double& v : m.data) v *= scale;
        });
      }
      adam_step(model, grads, adam, cfg, lr_t);
      ++global_step;
      epoch_loss += batch_loss;
      ++epoch_batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.step = global_step;
    log.loss = epoch_batches > 0 ? epoch_loss / epoch_batches : 0.0;
    log.lr = lr_t;

    const bool do_val = validate && (epoch % cfg.val_every == 0 || epoch == cfg.max_epochs);
    if (do_val) {
      last_val = validate(model);
      log.val_ndcg5 = last_val.ndcg5;
      log.val_jaccard = last_val.jaccard;
      if (last_val.ndcg5 > result.best_val_ndcg5) {
        result.best_val_ndcg5 = last_val.ndcg5;
        result.best_params = model;
        result.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      log.val_ndcg5 = last_val.ndcg5;
      log.val_jaccard = last_val.jaccard;
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (validate && since_best >= cfg.patience) break;
  }
  if (!validate) result.best_params = model;  // no validation: keep the last state
  result.steps = global_step;
  return result;
}

}  // namespace simpledyg
