#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "simpledyg/generator.hpp"
#include "simpledyg/graph.hpp"
#include "simpledyg/metrics.hpp"
#include "simpledyg/trainer.hpp"

namespace simpledyg {

// Egos with nonempty ground truth at `step`; metrics are undefined otherwise.
inline std::vector<int> eval_egos(const SegmentedGraph& seg, int step) {
  std::vector<int> out;
  for (int ego = 0; ego < static_cast<int>(seg.graph.nodes.size()); ++ego) {
    if (!ego_neighbors_at_step(seg, ego, step).empty()) out.push_back(ego);
  }
  return out;
}

struct StepEval {
  double ndcg5 = 0.0;
  double jaccard = 0.0;
  int num_egos = 0;
  std::vector<std::pair<int, std::pair<double, double>>> per_ego;  // ego -> (ndcg5, jaccard)
};

// Generative evaluation of one step: mean NDCG@5 and plain Jaccard between
// the generated set and the realized neighbors.
inline StepEval evaluate_step(const ModelParams& model, const Vocabulary& vocab,
                              const SegmentedGraph& seg, int step, const PredictOptions& opt,
                              const std::vector<int>* egos = nullptr) {
  const std::vector<int> all = egos != nullptr ? *egos : eval_egos(seg, step);
  StepEval ev;
  for (int ego : all) {
    const auto truth_list = ego_neighbors_at_step(seg, ego, step);
    if (truth_list.empty()) continue;
    const std::set<int> truth(truth_list.begin(), truth_list.end());
    const RankedPrediction pred = predict_step(model, vocab, seg, ego, step, opt);
    const double n = ndcg_at_k(pred.nodes, truth, 5);
    const double j = jaccard(std::set<int>(pred.nodes.begin(), pred.nodes.end()), truth);
    ev.ndcg5 += n;
    ev.jaccard += j;
    ev.per_ego.push_back({ego, {n, j}});
    ++ev.num_egos;
  }
  if (ev.num_egos > 0) {
    ev.ndcg5 /= ev.num_egos;
    ev.jaccard /= ev.num_egos;
  }
  return ev;
}

// Frequency/recency comparator on the same egos; NDCG@5 over the ranking and
// max-over-k Jaccard (the baseline cannot halt by itself).
inline StepEval evaluate_baseline(const SegmentedGraph& seg, int step,
                                  const std::vector<int>* egos = nullptr) {
  const std::vector<int> all = egos != nullptr ? *egos : eval_egos(seg, step);
  StepEval ev;
  for (int ego : all) {
    const auto truth_list = ego_neighbors_at_step(seg, ego, step);
    if (truth_list.empty()) continue;
    const std::set<int> truth(truth_list.begin(), truth_list.end());
    const auto ranked = recency_frequency_baseline(extract_ego_history(seg, ego, step - 1));
    const double n = ndcg_at_k(ranked, truth, 5);
    const double j = jaccard_max_over_k(ranked, truth);
    ev.ndcg5 += n;
    ev.jaccard += j;
    ev.per_ego.push_back({ego, {n, j}});
    ++ev.num_egos;
  }
  if (ev.num_egos > 0) {
    ev.ndcg5 /= ev.num_egos;
    ev.jaccard /= ev.num_egos;
  }
  return ev;
}

struct MetricReport {
  double ndcg5_mean = 0.0, ndcg5_std = 0.0;
  double jaccard_mean = 0.0, jaccard_std = 0.0;
  double baseline_ndcg5 = 0.0, baseline_jaccard = 0.0;
  int runs = 0;
  int num_egos = 0;
  std::vector<double> run_ndcg5, run_jaccard;
  std::vector<std::pair<std::string, std::pair<double, double>>> per_ego;  // from the first run
};

struct ExperimentSetup {
  ModelConfig model_config;
  TrainConfig train_config;
  PredictOptions predict;
  int runs = 1;
  const NodeFeatureInit* features = nullptr;
};

// Builds the standard validation callback: generative NDCG@5/Jaccard on the
// validation step.
inline ValCallback make_val_callback(const Vocabulary& vocab, const SegmentedGraph& seg,
                                     const DatasetSplit& split, const PredictOptions& opt) {
  const std::vector<int> egos = eval_egos(seg, split.val_step);
  return [&vocab, &seg, split, opt, egos](const ModelParams& params) {
    const StepEval ev = evaluate_step(params, vocab, seg, split.val_step, opt, &egos);
    return ValMetrics{ev.ndcg5, ev.jaccard};
  };
}

struct RunArtifacts {
  TrainResult train_result;
  StepEval test_eval;
};

// Trains one seeded model on the sliding-target corpus and evaluates the
// best-validation checkpoint on the test step.
inline RunArtifacts run_single(const SegmentedGraph& seg, const Vocabulary& vocab,
                               const ExperimentSetup& setup, uint64_t run_seed,
                               const EpochCallback& on_epoch = {}) {
  const DatasetSplit split = split_dataset(seg.grid);
  if (split.train_max_target < split.train_min_target) {
    throw ConfigError("experiment: no training targets (need T >= 4)");
  }
  ModelConfig mc = setup.model_config;
  mc.vocab_size = vocab.size();
  mc.seed = run_seed;
  TrainConfig tc = setup.train_config;
  tc.seed = run_seed;

  const auto sequences = build_training_sequences(seg, vocab, split, setup.predict.variant,
                                                  mc.context_length);
  const auto corpus = make_instances(sequences, vocab);
  ModelParams init = init_model(mc, setup.features);
  RunArtifacts art;
  art.train_result = train(corpus, std::move(init), tc, vocab,
                           make_val_callback(vocab, seg, split, setup.predict), on_epoch);
  art.test_eval = evaluate_step(art.train_result.best_params, vocab, seg, split.test_step,
                                setup.predict);
  return art;
}

// Repeated-runs protocol: N seeded runs, mean over egos within a run, then
// mean and (population) standard deviation across runs.
inline MetricReport run_experiment(const SegmentedGraph& seg, const Vocabulary& vocab,
                                   const ExperimentSetup& setup,
                                   const EpochCallback& on_epoch = {}) {
  if (setup.runs < 1) throw ConfigError("experiment: runs must be >= 1");
  const DatasetSplit split = split_dataset(seg.grid);
  MetricReport rep;
  rep.runs = setup.runs;
  for (int r = 0; r < setup.runs; ++r) {
    const uint64_t seed = setup.train_config.seed + static_cast<uint64_t>(r);
    RunArtifacts art = run_single(seg, vocab, setup, seed, on_epoch);
    rep.run_ndcg5.push_back(art.test_eval.ndcg5);
    rep.run_jaccard.push_back(art.test_eval.jaccard);
    if (r == 0) {
      rep.num_egos = art.test_eval.num_egos;
      for (const auto& [ego, nj] : art.test_eval.per_ego) {
        rep.per_ego.push_back({seg.graph.nodes[ego], nj});
      }
    }
  }
  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();  // population; a single run reports std 0
    return std::make_pair(mean, std::sqrt(var));
  };
  std::tie(rep.ndcg5_mean, rep.ndcg5_std) = mean_std(rep.run_ndcg5);
  std::tie(rep.jaccard_mean, rep.jaccard_std) = mean_std(rep.run_jaccard);
  const StepEval base = evaluate_baseline(seg, split.test_step);
  rep.baseline_ndcg5 = base.ndcg5;
  rep.baseline_jaccard = base.jaccard;
  return rep;
}

inline std::string report_csv(const MetricReport& rep) {
  std::ostringstream out;
  out << "ndcg5_mean,ndcg5_std,jaccard_mean,jaccard_std,method\n";
  out << std::setprecision(6) << std::fixed;
  out << rep.ndcg5_mean << "," << rep.ndcg5_std << "," << rep.jaccard_mean << ","
      << rep.jaccard_std << ",simpledyg\n";
  out << rep.baseline_ndcg5 << ",0.000000," << rep.baseline_jaccard << ",0.000000"
      << ",recency_frequency\n";
  return out.str();
}

inline std::string report_table(const MetricReport& rep) {
  std::ostringstream out;
  out << std::setprecision(3) << std::fixed;
  out << std::left << std::setw(20) << "method" << std::right << std::setw(16) << "NDCG@5"
      << std::setw(16) << "Jaccard" << "\n";
  auto row = [&](const std::string& name, double nm, double ns, double jm, double js) {
    std::ostringstream n1, n2;
    n1 << std::setprecision(3) << std::fixed << nm << "+-" << ns;
    n2 << std::setprecision(3) << std::fixed << jm << "+-" << js;
    out << std::left << std::setw(20) << name << std::right << std::setw(16) << n1.str()
        << std::setw(16) << n2.str() << "\n";
  };
  row("simpledyg", rep.ndcg5_mean, rep.ndcg5_std, rep.jaccard_mean, rep.jaccard_std);
  row("recency_frequency", rep.baseline_ndcg5, 0.0, rep.baseline_jaccard, 0.0);
  out << "runs=" << rep.runs << " egos=" << rep.num_egos << "\n";
  return out.str();
}

// One line per ego: ego<TAB>step<TAB>node:score,...<TAB>halted
inline std::string prediction_dump_line(const Vocabulary& vocab, const RankedPrediction& pred) {
  std::ostringstream out;
  out << vocab.symbol(pred.ego) << "\t" << pred.step << "\t";
  for (size_t i = 0; i < pred.nodes.size(); ++i) {
    if (i > 0) out << ",";
    out << vocab.symbol(pred.nodes[i]) << ":" << std::setprecision(6) << std::fixed
        << pred.scores[i];
  }
  out << "\t" << (pred.halted ? "true" : "false");
  return out.str();
}

inline std::string training_log_csv(const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out << "epoch,step,loss,val_ndcg5,val_jaccard,lr\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& row : history) {
    out << row.epoch << "," << row.step << "," << row.loss << "," << row.val_ndcg5 << ","
        << row.val_jaccard << "," << row.lr << "\n";
  }
  return out.str();
}

inline std::string stats_csv(const std::vector<StatsBin>& bins) {
  std::ostringstream out;
  out << "bin_start,bin_end,mean_rate\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& b : bins) {
    out << b.bin_start << "," << b.bin_end << "," << b.mean_rate << "\n";
  }
  return out.str();
}

}  // namespace simpledyg
