#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "fd_check.hpp"
#include "simpledyg/model.hpp"

using namespace simpledyg;
using fdtest::random_matrix;

namespace {

ModelConfig tiny_config(int vocab = 11, int dim = 8, int layers = 1, int heads = 2) {
  ModelConfig cfg;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.dim = dim;
  cfg.context_length = 16;
  cfg.vocab_size = vocab;
  cfg.seed = 99;
  return cfg;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  bool ok = true;
  a.for_each_named([&](const std::string& name, const Matrix& m) {
    const Matrix* other = nullptr;
    b.for_each_named([&](const std::string& n2, const Matrix& m2) {
      if (n2 == name) other = &m2;
    });
    if (other == nullptr || other->data.size() != m.data.size() ||
        std::memcmp(m.data.data(), other->data.data(), m.data.size() * sizeof(double)) != 0) {
      ok = false;
    }
  });
  return ok;
}

}  // namespace

TEST_CASE("init_model is seeded and reproducible") {
  auto cfg = tiny_config();
  auto p1 = init_model(cfg);
  auto p2 = init_model(cfg);
  REQUIRE(bitwise_equal(p1, p2));
  for (double v : p1.layers[0].ln1_gain.data) REQUIRE(v == 1.0);
  for (double v : p1.final_ln_gain.data) REQUIRE(v == 1.0);
  for (double v : p1.layers[0].ffn_b1.data) REQUIRE(v == 0.0);

  cfg.seed = 100;
  auto p3 = init_model(cfg);
  REQUIRE_FALSE(bitwise_equal(p1, p3));
}

TEST_CASE("feature-initialized embedding rows are reproducible projections") {
  auto cfg = tiny_config();
  NodeFeatureInit feats;
  feats.feature_dim = 8;
  Rng frng(1234);
  std::vector<double> f(8);
  for (double& v : f) v = frng.normal();
  feats.rows.emplace_back(3, f);
  auto p1 = init_model(cfg, &feats);
  auto p2 = init_model(cfg, &feats);
  for (int j = 0; j < cfg.dim; ++j) REQUIRE(p1.tok_embed(3, j) == p2.tok_embed(3, j));
  // other rows keep the plain random init
  auto base = init_model(cfg);
  for (int j = 0; j < cfg.dim; ++j) REQUIRE(p1.tok_embed(5, j) == base.tok_embed(5, j));
  // and the projected row differs from it
  bool differs = false;
  for (int j = 0; j < cfg.dim; ++j) differs |= p1.tok_embed(3, j) != base.tok_embed(3, j);
  REQUIRE(differs);

  NodeFeatureInit bad = feats;
  bad.rows[0].second.pop_back();
  REQUIRE_THROWS_AS(init_model(cfg, &bad), ConfigError);
}

TEST_CASE("single-token attention reduces to (x Wv) Wo") {
  auto cfg = tiny_config(11, 8, 1, 2);
  auto p = init_model(cfg);
  Rng rng(5);
  Matrix x = random_matrix(1, cfg.dim, rng);

  Tape tape;
  auto bm = bind_model(tape, p, nullptr);
  const Matrix mask = causal_keep_mask(1);
  auto out = tape.value(attention_layer(tape, tape.constant(x), bm.layers[0], cfg, mask));

  Matrix expect = mm(mm(x, p.layers[0].w_v), p.layers[0].w_o);
  for (int j = 0; j < cfg.dim; ++j) REQUIRE(out(0, j) == Catch::Approx(expect(0, j)).margin(1e-12));
}

TEST_CASE("two-token single-head attention matches a hand evaluation") {
  // d = 2, H = 1: work the projections, scaled scores, masked softmax and
  // weighted value sum with plain scalars.
  ModelConfig cfg = tiny_config(5, 2, 1, 1);
  auto p = init_model(cfg);
  auto& lp = p.layers[0];
  const double x[2][2] = {{0.3, -1.1}, {0.7, 0.4}};

  auto dotcol = [](const double* v, const Matrix& w, int col) {
    return v[0] * w(0, col) + v[1] * w(1, col);
  };
  double q[2][2], k[2][2], vv[2][2];
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 2; ++c) {
      q[i][c] = dotcol(x[i], lp.w_q, c);
      k[i][c] = dotcol(x[i], lp.w_k, c);
      vv[i][c] = dotcol(x[i], lp.w_v, c);
    }
  }
  const double inv_sqrt = 1.0 / std::sqrt(2.0);
  // row 0 attends only to itself; row 1 attends to both
  const double s10 = (q[1][0] * k[0][0] + q[1][1] * k[0][1]) * inv_sqrt;
  const double s11 = (q[1][0] * k[1][0] + q[1][1] * k[1][1]) * inv_sqrt;
  const double mx = std::max(s10, s11);
  const double e0 = std::exp(s10 - mx), e1 = std::exp(s11 - mx);
  const double p10 = e0 / (e0 + e1), p11 = e1 / (e0 + e1);
  double head[2][2];
  head[0][0] = vv[0][0];
  head[0][1] = vv[0][1];
  head[1][0] = p10 * vv[0][0] + p11 * vv[1][0];
  head[1][1] = p10 * vv[0][1] + p11 * vv[1][1];
  double expect[2][2];
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 2; ++c) expect[i][c] = dotcol(head[i], lp.w_o, c);
  }

  Matrix xin(2, 2, {x[0][0], x[0][1], x[1][0], x[1][1]});
  Tape tape;
  auto bm = bind_model(tape, p, nullptr);
  const Matrix mask = causal_keep_mask(2);
  auto out = tape.value(attention_layer(tape, tape.constant(xin), bm.layers[0], cfg, mask));
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 2; ++c) REQUIRE(out(i, c) == Catch::Approx(expect[i][c]).margin(1e-12));
  }
}

TEST_CASE("multi-head with H=1 equals the unsliced single-head computation") {
  ModelConfig cfg = tiny_config(7, 6, 1, 1);
  auto p = init_model(cfg);
  Rng rng(77);
  Matrix x = random_matrix(3, cfg.dim, rng);
  const Matrix mask = causal_keep_mask(3);

  Tape t1;
  auto bm = bind_model(t1, p, nullptr);
  auto via_layer = t1.value(attention_layer(t1, t1.constant(x), bm.layers[0], cfg, mask));

  Tape t2;
  auto xv = t2.constant(x);
  auto q = t2.affine(xv, t2.constant(p.layers[0].w_q));
  auto k = t2.affine(xv, t2.constant(p.layers[0].w_k));
  auto v = t2.affine(xv, t2.constant(p.layers[0].w_v));
  auto scores = t2.scale(t2.matmul_nt(q, k), 1.0 / std::sqrt(6.0));
  auto probs = t2.softmax_rows(scores, &mask);
  auto direct = t2.value(t2.affine(t2.affine(probs, v), t2.constant(p.layers[0].w_o)));

  REQUIRE(via_layer.data == direct.data);
}

TEST_CASE("block with zeroed weights collapses to LN(LN(H))") {
  ModelConfig cfg = tiny_config(7, 8, 1, 2);
  auto p = init_model(cfg);
  auto& lp = p.layers[0];
  lp.w_v.fill(0.0);
  lp.w_o.fill(0.0);
  lp.ffn_w2.fill(0.0);
  lp.ffn_b2.fill(0.0);

  Rng rng(8);
  Matrix x = random_matrix(4, cfg.dim, rng);
  const Matrix mask = causal_keep_mask(4);
  Tape tape;
  auto bm = bind_model(tape, p, nullptr);
  auto hout = tape.value(block(tape, tape.constant(x), bm.layers[0], cfg, mask));

  Tape ref;
  auto g = ref.constant(lp.ln1_gain);
  auto b = ref.constant(lp.ln1_bias);
  auto inner = ref.layer_norm_rows(ref.constant(x), g, b, kLayerNormEps);
  auto expect = ref.value(ref.layer_norm_rows(inner, g, b, kLayerNormEps));
  for (size_t i = 0; i < hout.size(); ++i) {
    REQUIRE(hout.data[i] == Catch::Approx(expect.data[i]).margin(1e-12));
  }
}

TEST_CASE("block output rows have layer-norm statistics") {
  ModelConfig cfg = tiny_config(7, 8, 1, 2);
  auto p = init_model(cfg);
  Rng rng(10);
  Matrix x = random_matrix(5, cfg.dim, rng);
  const Matrix mask = causal_keep_mask(5);
  Tape tape;
  auto bm = bind_model(tape, p, nullptr);
  auto hout = tape.value(block(tape, tape.constant(x), bm.layers[0], cfg, mask));
  // gain=1, bias=0 at init, so the post-LN rows have mean ~0
  for (int i = 0; i < hout.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < hout.cols; ++j) mean += hout(i, j);
    mean /= hout.cols;
    REQUIRE(std::abs(mean) < 1e-10);
  }
}

TEST_CASE("block gradient w.r.t. input passes finite differences") {
  ModelConfig cfg = tiny_config(7, 8, 1, 2);
  auto p = init_model(cfg);
  Rng rng(21);
  Matrix x = random_matrix(4, cfg.dim, rng);
  Matrix wsum = random_matrix(4, cfg.dim, rng);
  const Matrix mask = causal_keep_mask(4);
  auto rep = fdtest::fd_check({x}, [&](Tape& t, const std::vector<Tape::Var>& v) {
    auto bm = bind_model(t, p, nullptr);
    return t.sum_all(t.hadamard_mask(block(t, v[0], bm.layers[0], cfg, mask), wsum));
  });
  REQUIRE(rep.max_err <= 1.0);
}

TEST_CASE("causality: perturbing token k leaves earlier logit rows unchanged") {
  ModelConfig cfg = tiny_config(13, 8, 2, 2);
  auto p = init_model(cfg);
  std::vector<int> ids{1, 4, 7, 2, 9, 3};
  Matrix base = forward_inference(p, ids);
  for (size_t k = 1; k < ids.size(); ++k) {
    auto mutated = ids;
    mutated[k] = (mutated[k] + 5) % cfg.vocab_size;
    Matrix out = forward_inference(p, mutated);
    for (size_t i = 0; i < k; ++i) {
      for (int j = 0; j < out.cols; ++j) {
        REQUIRE(out(static_cast<int>(i), j) == base(static_cast<int>(i), j));
      }
    }
  }
}

TEST_CASE("autoregressive consistency: prefix logits equal prefix rows") {
  ModelConfig cfg = tiny_config(13, 8, 2, 2);
  auto p = init_model(cfg);
  std::vector<int> ids{5, 1, 12, 3, 7};
  Matrix full = forward_inference(p, ids);
  for (size_t n = 1; n <= ids.size(); ++n) {
    std::vector<int> prefix(ids.begin(), ids.begin() + n);
    Matrix part = forward_inference(p, prefix);
    for (size_t i = 0; i < n; ++i) {
      for (int j = 0; j < part.cols; ++j) {
        REQUIRE(part(static_cast<int>(i), j) == full(static_cast<int>(i), j));
      }
    }
  }
}

TEST_CASE("softmax over a logits row sums to one") {
  ModelConfig cfg = tiny_config();
  auto p = init_model(cfg);
  Matrix logits = forward_inference(p, {1, 2, 3});
  Tape t;
  Matrix row(1, logits.cols);
  for (int j = 0; j < logits.cols; ++j) row(0, j) = logits(2, j);
  auto probs = t.value(t.softmax_rows(t.constant(row)));
  double sum = 0.0;
  for (double v : probs.data) sum += v;
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("seeded untrained forward replays bit-identically") {
  ModelConfig cfg = tiny_config(13, 8, 2, 2);
  auto p1 = init_model(cfg);
  auto p2 = init_model(cfg);
  std::vector<int> ids{0, 3, 11, 6};
  Matrix a = forward_inference(p1, ids);
  Matrix b = forward_inference(p2, ids);
  REQUIRE(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("forward rejects out-of-range ids and over-long input") {
  ModelConfig cfg = tiny_config();
  auto p = init_model(cfg);
  REQUIRE_THROWS_AS(forward_inference(p, {cfg.vocab_size}), DataError);
  std::vector<int> too_long(cfg.context_length + 1, 0);
  REQUIRE_THROWS_AS(forward_inference(p, too_long), DataError);
}

TEST_CASE("decode session matches full forward bit-for-bit") {
  ModelConfig cfg = tiny_config(13, 8, 2, 2);
  cfg.heads = 2;
  auto p = init_model(cfg);
  std::vector<int> ids{2, 9, 4, 4, 0, 12, 7};
  Matrix full = forward_inference(p, ids);
  DecodeSession session(p);
  for (size_t i = 0; i < ids.size(); ++i) {
    auto row = session.step(ids[i]);
    REQUIRE(static_cast<int>(row.size()) == cfg.vocab_size);
    for (int j = 0; j < cfg.vocab_size; ++j) {
      REQUIRE(row[j] == full(static_cast<int>(i), j));
    }
  }
}

TEST_CASE("end-to-end gradient check on a d=8 single-layer model") {
  ModelConfig cfg = tiny_config(9, 8, 1, 2);
  auto p = init_model(cfg);
  std::vector<int> ids{1, 5, 2, 8, 0, 3};
  std::vector<int> targets{5, 2, 8, 0, 3, 7};
  const Matrix mask = causal_keep_mask(static_cast<int>(ids.size()));

  ModelParams grads = p.zeros_like();
  Tape tape;
  auto bm = bind_model(tape, p, &grads);
  auto loss = tape.cross_entropy_next_token(forward_logits(tape, bm, cfg, ids, mask), targets, -1);
  tape.backward(loss);

  // numeric check on a few entries of every parameter tensor
  Rng pick(3);
  p.for_each_named([&](const std::string& name, Matrix& m) {
    const Matrix* g = nullptr;
    grads.for_each_named([&](const std::string& n2, const Matrix& gm) {
      if (n2 == name) g = &gm;
    });
    REQUIRE(g != nullptr);
    for (int trial = 0; trial < 3; ++trial) {
      const size_t e = static_cast<size_t>(pick.uniform_int(static_cast<int>(m.size())));
      const double orig = m.data[e];
      const double h = 1e-5;
      auto eval = [&]() {
        Tape t(false);
        auto b2 = bind_model(t, p, nullptr);
        return t.value(t.cross_entropy_next_token(forward_logits(t, b2, cfg, ids, mask),
                                                  targets, -1))(0, 0);
      };
      m.data[e] = orig + h;
      const double up = eval();
      m.data[e] = orig - h;
      const double down = eval();
      m.data[e] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g->data[e];
      const double err = std::abs(analytic - numeric) /
                         (1e-7 + 1e-4 * std::max(std::abs(analytic), std::abs(numeric)));
      INFO(name << "[" << e << "] analytic=" << analytic << " numeric=" << numeric);
      REQUIRE(err <= 1.0);
    }
  });
}
