#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/matrix.hpp"

namespace simpledyg {

// Reverse-mode autodiff over dense matrices. A Tape records one forward pass
// as a sequence of primitive applications and replays it backwards exactly
// once. Parameter nodes borrow their value from external storage and
// accumulate gradients into an external sink, so several tapes can share one
// parameter set across training steps.
//
// All kernels accumulate in a fixed index order; a tape replayed on the same
// inputs produces bit-identical values and gradients.
class Tape {
 public:
  using Var = int;

  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return track_; }

  const Matrix& value(Var v) const { return *nodes_[v].val; }

  // Gradient of a node; valid after backward().
  const Matrix& grad(Var v) const {
    if (nodes_[v].grad == nullptr) throw std::logic_error("tape: node has no gradient slot");
    return *nodes_[v].grad;
  }

  // Leaf whose value lives outside the tape. grad_sink may be null (frozen).
  Var parameter(const Matrix& value, Matrix* grad_sink) {
    return push(&value, grad_sink, nullptr);
  }

  // Leaf owned by the tape (test inputs, masks lifted to values, ...).
  Var constant(Matrix value) {
    const Matrix* v = own(std::move(value));
    return push(v, alloc_grad(*v), nullptr);
  }

  // out = H*W (+ bias broadcast to every row). bias is 1 x W.cols.
  Var affine(Var h, Var w, std::optional<Var> bias = std::nullopt) {
    const Matrix& hv = value(h);
    const Matrix& wv = value(w);
    check_shape(hv.cols == wv.rows, "affine", hv, wv);
    Matrix out(hv.rows, wv.cols);
    mm_acc(hv, wv, out);
    if (bias) {
      const Matrix& bv = value(*bias);
      check_shape(bv.rows == 1 && bv.cols == wv.cols, "affine bias", bv, wv);
      for (int i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (int j = 0; j < out.cols; ++j) r[j] += bv.data[j];
      }
    }
    return make(std::move(out), [h, w, bias](Tape& t, const Node& n) {
      const Matrix& g = *n.grad;
      if (Matrix* dh = t.nodes_[h].grad) mm_nt_acc(g, t.value(w), *dh);
      if (Matrix* dw = t.nodes_[w].grad) mm_tn_acc(t.value(h), g, *dw);
      if (bias) {
        if (Matrix* db = t.nodes_[*bias].grad) {
          for (int i = 0; i < g.rows; ++i) {
            const double* r = g.row(i);
            for (int j = 0; j < g.cols; ++j) db->data[j] += r[j];
          }
        }
      }
    });
  }

  // out = A * B^T
  Var matmul_nt(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_shape(av.cols == bv.cols, "matmul_nt", av, bv);
    Matrix out(av.rows, bv.rows);
    mm_nt_acc(av, bv, out);
    return make(std::move(out), [a, b](Tape& t, const Node& n) {
      const Matrix& g = *n.grad;
      if (Matrix* da = t.nodes_[a].grad) mm_acc(g, t.value(b), *da);
      if (Matrix* db = t.nodes_[b].grad) mm_tn_acc(g, t.value(a), *db);
    });
  }

  Var add(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_shape(av.same_shape(bv), "add", av, bv);
    Matrix out = av;
    add_inplace(out, bv);
    return make(std::move(out), [a, b](Tape& t, const Node& n) {
      if (Matrix* da = t.nodes_[a].grad) add_inplace(*da, *n.grad);
      if (Matrix* db = t.nodes_[b].grad) add_inplace(*db, *n.grad);
    });
  }

  Var scale(Var a, double c) {
    Matrix out = value(a);
    for (double& x : out.data) x *= c;
    return make(std::move(out), [a, c](Tape& t, const Node& n) {
      if (Matrix* da = t.nodes_[a].grad) axpy_inplace(*da, c, *n.grad);
    });
  }

  // Row-wise softmax. keep, when given, has the same shape with entries
  // 0 (masked) / 1 (kept); masked entries come out exactly 0. Masking is an
  // additive -inf sentinel before the stabilized exponentiation.
  Var softmax_rows(Var s, const Matrix* keep = nullptr) {
    const Matrix& sv = value(s);
    if (keep != nullptr) check_shape(sv.same_shape(*keep), "softmax_rows mask", sv, *keep);
    Matrix out(sv.rows, sv.cols);
    constexpr double kMaskSentinel = -1e300;
    for (int i = 0; i < sv.rows; ++i) {
      const double* x = sv.row(i);
      double* p = out.row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < sv.cols; ++j) {
        const double xj = (keep && (*keep)(i, j) == 0.0) ? kMaskSentinel : x[j];
        if (xj > mx) mx = xj;
      }
      if (mx <= kMaskSentinel) {
        throw DataError("softmax_rows: fully masked row " + std::to_string(i));
      }
      double sum = 0.0;
      for (int j = 0; j < sv.cols; ++j) {
        const double xj = (keep && (*keep)(i, j) == 0.0) ? kMaskSentinel : x[j];
        p[j] = std::exp(xj - mx);
        sum += p[j];
      }
      const double inv = 1.0 / sum;
      for (int j = 0; j < sv.cols; ++j) p[j] *= inv;
    }
    return make(std::move(out), [s](Tape& t, const Node& n) {
      Matrix* ds = t.nodes_[s].grad;
      if (ds == nullptr) return;
      const Matrix& p = *n.val;
      const Matrix& gp = *n.grad;
      for (int i = 0; i < p.rows; ++i) {
        const double* pr = p.row(i);
        const double* gr = gp.row(i);
        double dot = 0.0;
        for (int j = 0; j < p.cols; ++j) dot += gr[j] * pr[j];
        double* dr = ds->row(i);
        for (int j = 0; j < p.cols; ++j) dr[j] += pr[j] * (gr[j] - dot);
      }
    });
  }

  // Per-row layer norm with population variance: (x-mean)/sqrt(var+eps)*gain+bias.
  Var layer_norm_rows(Var h, Var gain, Var bias, double eps) {
    const Matrix& hv = value(h);
    const Matrix& gv = value(gain);
    const Matrix& bv = value(bias);
    check_shape(gv.rows == 1 && gv.cols == hv.cols, "layer_norm gain", gv, hv);
    check_shape(bv.rows == 1 && bv.cols == hv.cols, "layer_norm bias", bv, hv);
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
    const int n = hv.cols;
    Matrix out(hv.rows, n);
    Matrix* xhat = own_mut(Matrix(hv.rows, n));
    Matrix* inv_std = own_mut(Matrix(hv.rows, 1));
    for (int i = 0; i < hv.rows; ++i) {
      const double* x = hv.row(i);
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += x[j];
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = x[j] - mean;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std->data[i] = inv;
      double* xh = xhat->row(i);
      double* o = out.row(i);
      for (int j = 0; j < n; ++j) {
        xh[j] = (x[j] - mean) * inv;
        o[j] = xh[j] * gv.data[j] + bv.data[j];
      }
    }
    return make(std::move(out), [h, gain, bias, xhat, inv_std](Tape& t, const Node& nd) {
      const Matrix& gy = *nd.grad;
      const Matrix& gv = t.value(gain);
      const int n = gy.cols;
      if (Matrix* dg = t.nodes_[gain].grad) {
        for (int i = 0; i < gy.rows; ++i) {
          const double* gr = gy.row(i);
          const double* xh = xhat->row(i);
          for (int j = 0; j < n; ++j) dg->data[j] += gr[j] * xh[j];
        }
      }
      if (Matrix* db = t.nodes_[bias].grad) {
        for (int i = 0; i < gy.rows; ++i) {
          const double* gr = gy.row(i);
          for (int j = 0; j < n; ++j) db->data[j] += gr[j];
        }
      }
      if (Matrix* dh = t.nodes_[h].grad) {
        for (int i = 0; i < gy.rows; ++i) {
          const double* gr = gy.row(i);
          const double* xh = xhat->row(i);
          const double inv = inv_std->data[i];
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < n; ++j) {
            const double w = gr[j] * gv.data[j];
            m1 += w;
            m2 += w * xh[j];
          }
          m1 /= n;
          m2 /= n;
          double* dr = dh->row(i);
          for (int j = 0; j < n; ++j) {
            const double w = gr[j] * gv.data[j];
            dr[j] += (w - m1 - xh[j] * m2) * inv;
          }
        }
      }
    });
  }

  Var gelu(Var a) {
    const Matrix& av = value(a);
    Matrix out(av.rows, av.cols);
    for (size_t i = 0; i < av.size(); ++i) out.data[i] = gelu_scalar(av.data[i]);
    return make(std::move(out), [a](Tape& t, const Node& n) {
      Matrix* da = t.nodes_[a].grad;
      if (da == nullptr) return;
      const Matrix& x = t.value(a);
      const Matrix& g = *n.grad;
      for (size_t i = 0; i < x.size(); ++i) da->data[i] += g.data[i] * gelu_grad_scalar(x.data[i]);
    });
  }

  // Elementwise multiply by a fixed mask (dropout with pre-scaled mask).
  Var hadamard_mask(Var a, Matrix mask) {
    const Matrix& av = value(a);
    check_shape(av.same_shape(mask), "hadamard_mask", av, mask);
    const Matrix* m = own(std::move(mask));
    Matrix out(av.rows, av.cols);
    for (size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] * m->data[i];
    return make(std::move(out), [a, m](Tape& t, const Node& n) {
      Matrix* da = t.nodes_[a].grad;
      if (da == nullptr) return;
      const Matrix& g = *n.grad;
      for (size_t i = 0; i < g.size(); ++i) da->data[i] += g.data[i] * m->data[i];
    });
  }

  // out row k = E row ids[k]; backward scatter-adds into dE in k order.
  Var gather_rows(const std::vector<int>& ids, Var e) {
    const Matrix& ev = value(e);
    for (int id : ids) {
      if (id < 0 || id >= ev.rows) {
        throw DataError("gather_rows: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(ev.rows) + ")");
      }
    }
    Matrix out(static_cast<int>(ids.size()), ev.cols);
    for (size_t k = 0; k < ids.size(); ++k) {
      const double* src = ev.row(ids[k]);
      double* dst = out.row(static_cast<int>(k));
      std::copy(src, src + ev.cols, dst);
    }
    return make(std::move(out), [ids, e](Tape& t, const Node& n) {
      Matrix* de = t.nodes_[e].grad;
      if (de == nullptr) return;
      const Matrix& g = *n.grad;
      for (size_t k = 0; k < ids.size(); ++k) {
        const double* src = g.row(static_cast<int>(k));
        double* dst = de->row(ids[k]);
        for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
      }
    });
  }

  // out = A[:, c0:c1)
  Var slice_cols(Var a, int c0, int c1) {
    const Matrix& av = value(a);
    if (c0 < 0 || c1 > av.cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Matrix out(av.rows, c1 - c0);
    for (int i = 0; i < av.rows; ++i) {
      const double* src = av.row(i) + c0;
      std::copy(src, src + (c1 - c0), out.row(i));
    }
    return make(std::move(out), [a, c0](Tape& t, const Node& n) {
      Matrix* da = t.nodes_[a].grad;
      if (da == nullptr) return;
      const Matrix& g = *n.grad;
      for (int i = 0; i < g.rows; ++i) {
        const double* src = g.row(i);
        double* dst = da->row(i) + c0;
        for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    for (Var p : parts) {
      check_shape(value(p).rows == rows, "concat_cols", value(p), value(parts[0]));
      cols += value(p).cols;
    }
    Matrix out(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Matrix& pv = value(p);
      for (int i = 0; i < rows; ++i) {
        std::copy(pv.row(i), pv.row(i) + pv.cols, out.row(i) + off);
      }
      off += pv.cols;
    }
    return make(std::move(out), [parts](Tape& t, const Node& n) {
      const Matrix& g = *n.grad;
      int off = 0;
      for (Var p : parts) {
        const Matrix& pv = t.value(p);
        if (Matrix* dp = t.nodes_[p].grad) {
          for (int i = 0; i < g.rows; ++i) {
            const double* src = g.row(i) + off;
            double* dst = dp->row(i);
            for (int j = 0; j < pv.cols; ++j) dst[j] += src[j];
          }
        }
        off += pv.cols;
      }
    });
  }

  // out = sum of all entries, as a 1x1 node.
  Var sum_all(Var a) {
    const Matrix& av = value(a);
    Matrix out(1, 1);
    double s = 0.0;
    for (double v : av.data) s += v;
    out.data[0] = s;
    return make(std::move(out), [a](Tape& t, const Node& n) {
      Matrix* da = t.nodes_[a].grad;
      if (da == nullptr) return;
      const double up = n.grad->data[0];
      for (double& v : da->data) v += up;
    });
  }

  // Mean over non-ignored positions of -log softmax(logits_i)[targets_i].
  // Positions whose target equals ignore_id contribute nothing, exactly.
  // Returns a 1x1 node.
  Var cross_entropy_next_token(Var logits, const std::vector<int>& targets, int ignore_id) {
    const Matrix& lv = value(logits);
    if (static_cast<int>(targets.size()) != lv.rows) {
      throw std::invalid_argument("cross_entropy: |targets|=" + std::to_string(targets.size()) +
                                  " but logits rows=" + std::to_string(lv.rows));
    }
    int counted = 0;
    for (int tgt : targets) {
      if (tgt == ignore_id) continue;
      if (tgt < 0 || tgt >= lv.cols) {
        throw DataError("cross_entropy: target id " + std::to_string(tgt) + " out of range [0," +
                        std::to_string(lv.cols) + ")");
      }
      ++counted;
    }
    Matrix* probs = own_mut(Matrix(lv.rows, lv.cols));
    double loss = 0.0;
    for (int i = 0; i < lv.rows; ++i) {
      if (targets[i] == ignore_id) continue;
      const double* x = lv.row(i);
      double mx = x[0];
      for (int j = 1; j < lv.cols; ++j) mx = std::max(mx, x[j]);
      double sum = 0.0;
      double* p = probs->row(i);
      for (int j = 0; j < lv.cols; ++j) {
        p[j] = std::exp(x[j] - mx);
        sum += p[j];
      }
      const double inv = 1.0 / sum;
      for (int j = 0; j < lv.cols; ++j) p[j] *= inv;
      loss += mx + std::log(sum) - x[targets[i]];
    }
    if (counted > 0) loss /= counted;
    Matrix out(1, 1);
    out.data[0] = loss;
    return make(std::move(out),
                [logits, targets, ignore_id, counted, probs](Tape& t, const Node& n) {
                  Matrix* dl = t.nodes_[logits].grad;
                  if (dl == nullptr || counted == 0) return;
                  const double up = n.grad->data[0] / counted;
                  for (int i = 0; i < dl->rows; ++i) {
                    if (targets[i] == ignore_id) continue;
                    const double* p = probs->row(i);
                    double* d = dl->row(i);
                    for (int j = 0; j < dl->cols; ++j) d[j] += up * p[j];
                    d[targets[i]] -= up;
                  }
                });
  }

  // Seed d(root)=1 and replay the recorded primitives in reverse. The tape
  // is consumed: a second call is an error.
  void backward(Var root) {
    if (!track_) throw std::logic_error("tape: backward on non-tracking tape");
    if (replayed_) throw std::logic_error("tape: backward already replayed");
    replayed_ = true;
    const Matrix& rv = value(root);
    if (rv.rows != 1 || rv.cols != 1) throw std::logic_error("tape: backward root must be 1x1");
    if (nodes_[root].grad == nullptr) throw std::logic_error("tape: backward root has no gradient");
    nodes_[root].grad->data[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i]);
    }
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    const Matrix* val = nullptr;
    Matrix* grad = nullptr;
    std::function<void(Tape&, const Node&)> back;
  };

  const Matrix* own(Matrix m) {
    owned_.push_back(std::move(m));
    return &owned_.back();
  }

  Matrix* own_mut(Matrix m) {
    owned_.push_back(std::move(m));
    return &owned_.back();
  }

  Matrix* alloc_grad(const Matrix& like) {
    if (!track_) return nullptr;
    owned_.emplace_back(like.rows, like.cols);
    return &owned_.back();
  }

  Var push(const Matrix* val, Matrix* grad, std::function<void(Tape&, const Node&)> back) {
    nodes_.push_back(Node{val, grad, std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var make(Matrix out, std::function<void(Tape&, const Node&)> back) {
    const Matrix* v = own(std::move(out));
    Matrix* g = alloc_grad(*v);
    return push(v, g, track_ ? std::move(back) : nullptr);
  }

  bool track_;
  bool replayed_ = false;
  std::deque<Matrix> owned_;
  std::vector<Node> nodes_;
};

}  // namespace simpledyg
