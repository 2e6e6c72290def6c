#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/matrix.hpp"
#include "simpledyg/rng.hpp"
#include "simpledyg/tape.hpp"

namespace simpledyg {

inline constexpr double kInitStd = 0.02;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int layers = 2;
  int heads = 2;
  int dim = 64;
  int ffn_dim = 0;  // 0 means 4*dim
  int context_length = 1024;
  int vocab_size = 0;
  double dropout = 0.0;
  uint64_t seed = 0;

  int head_dim() const { return dim / heads; }
  int ffn_dim_or_default() const { return ffn_dim > 0 ? ffn_dim : 4 * dim; }

  void validate() const {
    if (layers < 1) throw ConfigError("model: layers must be >= 1");
    if (heads < 1) throw ConfigError("model: heads must be >= 1");
    if (dim < 1 || dim % heads != 0) throw ConfigError("model: dim must be a positive multiple of heads");
    if (context_length < 8) throw ConfigError("model: context_length must be >= 8");
    if (vocab_size < 1) throw ConfigError("model: vocab_size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  }
};

struct LayerParams {
  Matrix w_q, w_k, w_v, w_o;        // d x d, head-packed column blocks
  Matrix ffn_w1, ffn_b1;            // d x d_ff, 1 x d_ff
  Matrix ffn_w2, ffn_b2;            // d_ff x d, 1 x d
  Matrix ln1_gain, ln1_bias;        // 1 x d
  Matrix ln2_gain, ln2_bias;        // 1 x d
};

struct ModelParams {
  ModelConfig config;
  Matrix tok_embed;                 // V x d
  Matrix pos_embed;                 // context_length x d
  std::vector<LayerParams> layers;
  Matrix final_ln_gain, final_ln_bias;  // 1 x d
  Matrix vocab_head;                // d x V

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("tok_embed", self.tok_embed);
    f("pos_embed", self.pos_embed);
    for (size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& lp = self.layers[l];
      f(p + "w_q", lp.w_q);
      f(p + "w_k", lp.w_k);
      f(p + "w_v", lp.w_v);
      f(p + "w_o", lp.w_o);
      f(p + "ffn_w1", lp.ffn_w1);
      f(p + "ffn_b1", lp.ffn_b1);
      f(p + "ffn_w2", lp.ffn_w2);
      f(p + "ffn_b2", lp.ffn_b2);
      f(p + "ln1_gain", lp.ln1_gain);
      f(p + "ln1_bias", lp.ln1_bias);
      f(p + "ln2_gain", lp.ln2_gain);
      f(p + "ln2_bias", lp.ln2_bias);
    }
    f("final_ln_gain", self.final_ln_gain);
    f("final_ln_bias", self.final_ln_bias);
    f("vocab_head", self.vocab_head);
  }

  template <class F>
  void for_each_named(F&& f) { visit(*this, f); }
  template <class F>
  void for_each_named(F&& f) const { visit(*this, f); }

  size_t num_scalars() const {
    size_t n = 0;
    for_each_named([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

  // Same shapes, all zeros; used for gradient accumulators and Adam moments.
  ModelParams zeros_like() const {
    ModelParams z;
    z.config = config;
    z.tok_embed = Matrix(tok_embed.rows, tok_embed.cols);
    z.pos_embed = Matrix(pos_embed.rows, pos_embed.cols);
    z.layers.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
      const LayerParams& s = layers[l];
      LayerParams& d = z.layers[l];
      d.w_q = Matrix(s.w_q.rows, s.w_q.cols);
      d.w_k = Matrix(s.w_k.rows, s.w_k.cols);
      d.w_v = Matrix(s.w_v.rows, s.w_v.cols);
      d.w_o = Matrix(s.w_o.rows, s.w_o.cols);
      d.ffn_w1 = Matrix(s.ffn_w1.rows, s.ffn_w1.cols);
      d.ffn_b1 = Matrix(s.ffn_b1.rows, s.ffn_b1.cols);
      d.ffn_w2 = Matrix(s.ffn_w2.rows, s.ffn_w2.cols);
      d.ffn_b2 = Matrix(s.ffn_b2.rows, s.ffn_b2.cols);
      d.ln1_gain = Matrix(s.ln1_gain.rows, s.ln1_gain.cols);
      d.ln1_bias = Matrix(s.ln1_bias.rows, s.ln1_bias.cols);
      d.ln2_gain = Matrix(s.ln2_gain.rows, s.ln2_gain.cols);
      d.ln2_bias = Matrix(s.ln2_bias.rows, s.ln2_bias.cols);
    }
    z.final_ln_gain = Matrix(final_ln_gain.rows, final_ln_gain.cols);
    z.final_ln_bias = Matrix(final_ln_bias.rows, final_ln_bias.cols);
    z.vocab_head = Matrix(vocab_head.rows, vocab_head.cols);
    return z;
  }
};

// Optional feature-based initialization of node-token embedding rows.
struct NodeFeatureInit {
  int feature_dim = 0;
  // (token id, feature vector); tokens not listed keep the random init
  std::vector<std::pair<int, std::vector<double>>> rows;
};

inline ModelParams make_empty_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  const int d = cfg.dim;
  const int dff = cfg.ffn_dim_or_default();
  p.tok_embed = Matrix(cfg.vocab_size, d);
  p.pos_embed = Matrix(cfg.context_length, d);
  p.layers.resize(cfg.layers);
  for (auto& lp : p.layers) {
    lp.w_q = Matrix(d, d);
    lp.w_k = Matrix(d, d);
    lp.w_v = Matrix(d, d);
    lp.w_o = Matrix(d, d);
    lp.ffn_w1 = Matrix(d, dff);
    lp.ffn_b1 = Matrix(1, dff);
    lp.ffn_w2 = Matrix(dff, d);
    lp.ffn_b2 = Matrix(1, d);
    lp.ln1_gain = Matrix(1, d);
    lp.ln1_bias = Matrix(1, d);
    lp.ln2_gain = Matrix(1, d);
    lp.ln2_bias = Matrix(1, d);
  }
  p.final_ln_gain = Matrix(1, d);
  p.final_ln_bias = Matrix(1, d);
  p.vocab_head = Matrix(d, cfg.vocab_size);
  return p;
}

// Seeded init: weights ~ N(0, 0.02^2), LN gains 1, every bias 0. Node feature
// rows, when given, replace the corresponding tok_embed rows with a seeded
// random projection of the unit-normalized feature vector.
inline ModelParams init_model(const ModelConfig& cfg,
                              const NodeFeatureInit* features = nullptr) {
  ModelParams p = make_empty_params(cfg);
  Rng rng(cfg.seed);
  p.for_each_named([&](const std::string& name, Matrix& m) {
    const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
    const bool is_bias = (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) ||
                         name.find("ffn_b") != std::string::npos;
    if (is_gain) {
      m.fill(1.0);
    } else if (is_bias) {
      m.fill(0.0);
    } else {
      for (double& v : m.data) v = rng.normal(0.0, kInitStd);
    }
  });
  if (features != nullptr && !features->rows.empty()) {
    const int f_dim = features->feature_dim;
    if (f_dim < 1) throw ConfigError("feature init: feature_dim must be >= 1");
    Rng proj_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Matrix proj(f_dim, cfg.dim);
    for (double& v : proj.data) v = proj_rng.normal(0.0, kInitStd);
    for (const auto& [tok, feat] : features->rows) {
      if (static_cast<int>(feat.size()) != f_dim) {
        throw ConfigError("feature init: vector for token " + std::to_string(tok) + " has dim " +
                          std::to_string(feat.size()) + ", expected " + std::to_string(f_dim));
      }
      if (tok < 0 || tok >= cfg.vocab_size) {
        throw ConfigError("feature init: token id out of range");
      }
      double norm = 0.0;
      for (double v : feat) norm += v * v;
      norm = std::sqrt(norm);
      const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
      double* row = p.tok_embed.row(tok);
      for (int j = 0; j < cfg.dim; ++j) {
        double acc = 0.0;
        for (int k = 0; k < f_dim; ++k) acc += feat[k] * inv * proj(k, j);
        row[j] = acc;
      }
    }
  }
  return p;
}

// Tape-bound views of every parameter tensor.
struct BoundLayer {
  Tape::Var w_q, w_k, w_v, w_o;
  Tape::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tape::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct BoundModel {
  Tape::Var tok_embed, pos_embed;
  std::vector<BoundLayer> layers;
  Tape::Var final_ln_gain, final_ln_bias;
  Tape::Var vocab_head;
};

inline BoundModel bind_model(Tape& tape, const ModelParams& p, ModelParams* grads) {
  BoundModel b;
  auto reg = [&](const Matrix& v, Matrix* g) { return tape.parameter(v, g); };
  b.tok_embed = reg(p.tok_embed, grads ? &grads->tok_embed : nullptr);
  b.pos_embed = reg(p.pos_embed, grads ? &grads->pos_embed : nullptr);
  b.layers.resize(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& lp = p.layers[l];
    LayerParams* gl = grads ? &grads->layers[l] : nullptr;
    BoundLayer& bl = b.layers[l];
    bl.w_q = reg(lp.w_q, gl ? &gl->w_q : nullptr);
    bl.w_k = reg(lp.w_k, gl ? &gl->w_k : nullptr);
    bl.w_v = reg(lp.w_v, gl ? &gl->w_v : nullptr);
    bl.w_o = reg(lp.w_o, gl ? &gl->w_o : nullptr);
    bl.ffn_w1 = reg(lp.ffn_w1, gl ? &gl->ffn_w1 : nullptr);
    bl.ffn_b1 = reg(lp.ffn_b1, gl ? &gl->ffn_b1 : nullptr);
    bl.ffn_w2 = reg(lp.ffn_w2, gl ? &gl->ffn_w2 : nullptr);
    bl.ffn_b2 = reg(lp.ffn_b2, gl ? &gl->ffn_b2 : nullptr);
    bl.ln1_gain = reg(lp.ln1_gain, gl ? &gl->ln1_gain : nullptr);
    bl.ln1_bias = reg(lp.ln1_bias, gl ? &gl->ln1_bias : nullptr);
    bl.ln2_gain = reg(lp.ln2_gain, gl ? &gl->ln2_gain : nullptr);
    bl.ln2_bias = reg(lp.ln2_bias, gl ? &gl->ln2_bias : nullptr);
  }
  b.final_ln_gain = reg(p.final_ln_gain, grads ? &grads->final_ln_gain : nullptr);
  b.final_ln_bias = reg(p.final_ln_bias, grads ? &grads->final_ln_bias : nullptr);
  b.vocab_head = reg(p.vocab_head, grads ? &grads->vocab_head : nullptr);
  return b;
}

inline Matrix causal_keep_mask(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) m(i, j) = 1.0;
  }
  return m;
}

// Multi-head self-attention with causal masking, Concat(head_1..head_H)*W_O.
inline Tape::Var attention_layer(Tape& tape, Tape::Var h, const BoundLayer& lp,
                                 const ModelConfig& cfg, const Matrix& keep_mask) {
  const int dk = cfg.head_dim();
  const Tape::Var q = tape.affine(h, lp.w_q);
  const Tape::Var k = tape.affine(h, lp.w_k);
  const Tape::Var v = tape.affine(h, lp.w_v);
  std::vector<Tape::Var> heads;
  heads.reserve(cfg.heads);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int hd = 0; hd < cfg.heads; ++hd) {
    const int c0 = hd * dk;
    const int c1 = c0 + dk;
    const Tape::Var qh = tape.slice_cols(q, c0, c1);
    const Tape::Var kh = tape.slice_cols(k, c0, c1);
    const Tape::Var vh = tape.slice_cols(v, c0, c1);
    const Tape::Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dk);
    const Tape::Var probs = tape.softmax_rows(scores, &keep_mask);
    heads.push_back(tape.affine(probs, vh));
  }
  const Tape::Var cat = cfg.heads == 1 ? heads[0] : tape.concat_cols(heads);
  return tape.affine(cat, lp.w_o);
}

inline Matrix dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : m.data) v = rng.uniform01() < rate ? 0.0 : keep_scale;
  return m;
}

// One decoder block, post-LN residual order:
//   Hhat = LN1(Hin + MHA(Hin)); Hout = LN2(Hhat + FFN(Hhat))
inline Tape::Var block(Tape& tape, Tape::Var h, const BoundLayer& lp, const ModelConfig& cfg,
                       const Matrix& keep_mask, Rng* drop_rng = nullptr) {
  Tape::Var attn = attention_layer(tape, h, lp, cfg, keep_mask);
  if (drop_rng != nullptr && cfg.dropout > 0.0) {
    const Matrix& av = tape.value(attn);
    attn = tape.hadamard_mask(attn, dropout_mask(av.rows, av.cols, cfg.dropout, *drop_rng));
  }
  const Tape::Var hhat = tape.layer_norm_rows(tape.add(h, attn), lp.ln1_gain, lp.ln1_bias,
                                              kLayerNormEps);
  Tape::Var f = tape.affine(hhat, lp.ffn_w1, lp.ffn_b1);
  f = tape.gelu(f);
  f = tape.affine(f, lp.ffn_w2, lp.ffn_b2);
  if (drop_rng != nullptr && cfg.dropout > 0.0) {
    const Matrix& fv = tape.value(f);
    f = tape.hadamard_mask(f, dropout_mask(fv.rows, fv.cols, cfg.dropout, *drop_rng));
  }
  return tape.layer_norm_rows(tape.add(hhat, f), lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
}

// Full forward pass: logits row i is the pre-softmax distribution for the
// token following position i.
inline Tape::Var forward_logits(Tape& tape, const BoundModel& bm, const ModelConfig& cfg,
                                const std::vector<int>& ids, const Matrix& keep_mask,
                                Rng* drop_rng = nullptr) {
  if (ids.empty()) throw std::invalid_argument("forward: empty id sequence");
  if (static_cast<int>(ids.size()) > cfg.context_length) {
    throw DataError("forward: sequence length " + std::to_string(ids.size()) +
                    " exceeds context_length " + std::to_string(cfg.context_length));
  }
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tape::Var h = tape.add(tape.gather_rows(ids, bm.tok_embed),
                         tape.gather_rows(positions, bm.pos_embed));
  if (drop_rng != nullptr && cfg.dropout > 0.0) {
    const Matrix& hv = tape.value(h);
    h = tape.hadamard_mask(h, dropout_mask(hv.rows, hv.cols, cfg.dropout, *drop_rng));
  }
  for (const BoundLayer& lp : bm.layers) {
    h = block(tape, h, lp, cfg, keep_mask, drop_rng);
  }
  h = tape.layer_norm_rows(h, bm.final_ln_gain, bm.final_ln_bias, kLayerNormEps);
  return tape.affine(h, bm.vocab_head);
}

// Convenience wrapper: fresh tape, no gradients; returns the logits matrix.
inline Matrix forward_inference(const ModelParams& p, const std::vector<int>& ids) {
  Tape tape(false);
  BoundModel bm = bind_model(tape, p, nullptr);
  const Matrix mask = causal_keep_mask(static_cast<int>(ids.size()));
  return tape.value(forward_logits(tape, bm, p.config, ids, mask));
}

// Incremental decoding with a per-layer key/value cache. step() consumes one
// token, advances the position, and returns the logits row for the next
// token. Row arithmetic matches the tape kernels' accumulation order, so the
// logits agree bit-for-bit with forward_inference on the same prefix.
class DecodeSession {
 public:
  explicit DecodeSession(const ModelParams& params)
      : p_(params),
        cfg_(params.config),
        k_cache_(cfg_.layers, Matrix(cfg_.context_length, cfg_.dim)),
        v_cache_(cfg_.layers, Matrix(cfg_.context_length, cfg_.dim)) {}

  int length() const { return len_; }
  bool full() const { return len_ >= cfg_.context_length; }

  std::vector<double> step(int token_id) {
    if (full()) throw DataError("decode: context_length exhausted");
    if (token_id < 0 || token_id >= cfg_.vocab_size) {
      throw DataError("decode: token id " + std::to_string(token_id) + " out of range");
    }
    const int d = cfg_.dim;
    const int dk = cfg_.head_dim();
    const int dff = cfg_.ffn_dim_or_default();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const int pos = len_;

    std::vector<double> x(d), tmp(d), q(d), scores(pos + 1), attn(d), f(dff);
    const double* te = p_.tok_embed.row(token_id);
    const double* pe = p_.pos_embed.row(pos);
    for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j];

    for (int l = 0; l < cfg_.layers; ++l) {
      const LayerParams& lp = p_.layers[l];
      double* krow = k_cache_[l].row(pos);
      double* vrow = v_cache_[l].row(pos);
      row_times(x.data(), lp.w_q, q.data());
      row_times(x.data(), lp.w_k, krow);
      row_times(x.data(), lp.w_v, vrow);

      std::fill(attn.begin(), attn.end(), 0.0);
      for (int hd = 0; hd < cfg_.heads; ++hd) {
        const int c0 = hd * dk;
        for (int t = 0; t <= pos; ++t) {
          const double* kt = k_cache_[l].row(t) + c0;
          double acc = 0.0;
          for (int j = 0; j < dk; ++j) acc += q[c0 + j] * kt[j];
          scores[t] = acc * inv_sqrt_dk;
        }
        softmax_inplace(scores.data(), pos + 1);
        for (int t = 0; t <= pos; ++t) {
          const double w = scores[t];
          const double* vt = v_cache_[l].row(t) + c0;
          for (int j = 0; j < dk; ++j) attn[c0 + j] += w * vt[j];
        }
      }
      row_times(attn.data(), lp.w_o, tmp.data());
      for (int j = 0; j < d; ++j) tmp[j] += x[j];
      ln_row(tmp.data(), d, lp.ln1_gain.data.data(), lp.ln1_bias.data.data(), x.data());

      row_times_bias(x.data(), lp.ffn_w1, lp.ffn_b1, f.data());
      for (int j = 0; j < dff; ++j) f[j] = gelu_scalar(f[j]);
      row_times_bias(f.data(), lp.ffn_w2, lp.ffn_b2, tmp.data());
      for (int j = 0; j < d; ++j) tmp[j] += x[j];
      ln_row(tmp.data(), d, lp.ln2_gain.data.data(), lp.ln2_bias.data.data(), x.data());
    }

    ln_row(x.data(), d, p_.final_ln_gain.data.data(), p_.final_ln_bias.data.data(), tmp.data());
    std::vector<double> logits(cfg_.vocab_size, 0.0);
    for (int k = 0; k < d; ++k) {
      const double xv = tmp[k];
      const double* wr = p_.vocab_head.row(k);
      for (int j = 0; j < cfg_.vocab_size; ++j) logits[j] += xv * wr[j];
    }
    ++len_;
    return logits;
  }

 private:
  static void softmax_inplace(double* x, int n) {
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      x[j] = std::exp(x[j] - mx);
      sum += x[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) x[j] *= inv;
  }

  // out = x * W, accumulated over k in index order (matches mm_acc).
  void row_times(const double* x, const Matrix& w, double* out) const {
    std::fill(out, out + w.cols, 0.0);
    for (int k = 0; k < w.rows; ++k) {
      const double xv = x[k];
      const double* wr = w.row(k);
      for (int j = 0; j < w.cols; ++j) out[j] += xv * wr[j];
    }
  }

  void row_times_bias(const double* x, const Matrix& w, const Matrix& b, double* out) const {
    row_times(x, w, out);
    for (int j = 0; j < w.cols; ++j) out[j] += b.data[j];
  }

  // Matches the tape layer_norm_rows arithmetic exactly.
  static void ln_row(const double* x, int n, const double* gain, const double* bias, double* out) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double dv = x[j] - mean;
      var += dv * dv;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < n; ++j) out[j] = (x[j] - mean) * inv * gain[j] + bias[j];
  }

  const ModelParams& p_;
  ModelConfig cfg_;
  int len_ = 0;
  std::vector<Matrix> k_cache_, v_cache_;
};

}  // namespace simpledyg
