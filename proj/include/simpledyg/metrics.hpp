#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/tokenizer.hpp"

namespace simpledyg {

// NDCG@k with binary relevance:
//   DCG  = sum_{i=1..min(k,|pred|)} [pred_i in truth] / log2(i+1)
//   IDCG = sum_{i=1..min(k,|truth|)} 1 / log2(i+1)
inline double ndcg_at_k(const std::vector<int>& pred, const std::set<int>& truth, int k) {
  if (k < 1) throw ConfigError("ndcg: k must be >= 1");
  if (truth.empty()) throw DataError("ndcg: empty ground truth (exclude such egos upstream)");
  double dcg = 0.0;
  const int pn = std::min<int>(k, static_cast<int>(pred.size()));
  for (int i = 1; i <= pn; ++i) {
    if (truth.count(pred[i - 1])) dcg += 1.0 / std::log2(i + 1.0);
  }
  double idcg = 0.0;
  const int tn = std::min<int>(k, static_cast<int>(truth.size()));
  for (int i = 1; i <= tn; ++i) idcg += 1.0 / std::log2(i + 1.0);
  return dcg / idcg;
}

inline double jaccard(const std::set<int>& a, const std::set<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  size_t inter = 0;
  for (int x : a) inter += b.count(x);
  const size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Baselines emit a full ranking instead of a self-terminated set; take the
// best Jaccard over top-k cuts.
inline double jaccard_max_over_k(const std::vector<int>& ranked, const std::set<int>& truth,
                                 const std::vector<int>& ks = {1, 5, 10, 20}) {
  double best = 0.0;
  for (int k : ks) {
    std::set<int> top;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(ranked.size())); ++i) {
      top.insert(ranked[i]);
    }
    best = std::max(best, jaccard(top, truth));
  }
  return best;
}

// Sanity comparator: neighbors ranked by interaction count (desc), then last
// interaction time (desc), then node id (asc).
inline std::vector<int> recency_frequency_baseline(const std::vector<EgoEvent>& history) {
  std::map<int, std::pair<int, double>> acc;  // node -> (count, last time)
  for (const auto& ev : history) {
    auto& [count, last] = acc[ev.neighbor];
    count += 1;
    last = std::max(count == 1 ? ev.time : last, ev.time);
  }
  std::vector<int> nodes;
  nodes.reserve(acc.size());
  for (const auto& [node, _] : acc) nodes.push_back(node);
  std::sort(nodes.begin(), nodes.end(), [&](int a, int b) {
    const auto& [ca, ta] = acc[a];
    const auto& [cb, tb] = acc[b];
    if (ca != cb) return ca > cb;
    if (ta != tb) return ta > tb;
    return a < b;
  });
  return nodes;
}

}  // namespace simpledyg
