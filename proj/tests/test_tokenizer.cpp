#include <catch2/catch_amalgamated.hpp>

#include "grammar_check.hpp"
#include "simpledyg/rng.hpp"
#include "simpledyg/synth.hpp"
#include "simpledyg/tokenizer.hpp"

using namespace simpledyg;

namespace {

TemporalGraph toy_graph() {
  // a interacts with b (step1), c and d (step2), e (step3) under T=3
  return normalize_times(parse_edge_list_text("a b 0.0\na c 0.4\na d 0.45\na e 0.9\n"));
}

std::vector<std::string> symbols(const TokenSequence& seq, const Vocabulary& vocab) {
  auto all = seq.input_ids;
  all.insert(all.end(), seq.target_ids.begin(), seq.target_ids.end());
  return decode_tokens(all, vocab);
}

}  // namespace

TEST_CASE("vocabulary size and id layout") {
  auto g = toy_graph();  // nodes a,b,c,d,e
  auto vocab = Vocabulary::build(g, 4);
  REQUIRE(vocab.size() == 5 + 7 + 4);
  REQUIRE(vocab.num_nodes() == 5);
  REQUIRE(vocab.symbol(0) == "a");
  REQUIRE(vocab.symbol(vocab.hist()) == "<|hist|>");
  REQUIRE(vocab.symbol(vocab.pad()) == "[pad]");
  REQUIRE(vocab.symbol(vocab.time_token(1)) == "<|time1|>");
  REQUIRE(vocab.symbol(vocab.time_token(4)) == "<|time4|>");
  REQUIRE_THROWS_AS(vocab.time_token(5), ConfigError);

  // deterministic: same graph parsed twice gives identical vocabularies
  auto vocab2 = Vocabulary::build(toy_graph(), 4);
  for (int i = 0; i < vocab.size(); ++i) REQUIRE(vocab.symbol(i) == vocab2.symbol(i));
  REQUIRE(vocab.fingerprint() == vocab2.fingerprint());

  // three nodes, T=4 -> 3 + 7 + 4
  auto small = Vocabulary::build(parse_edge_list_text("x y 0\nx z 1\n"), 4);
  REQUIRE(small.size() == 14);

  // reserved steps extend the temporal range
  auto wide = Vocabulary::build(g, 4, 2);
  REQUIRE(wide.size() == 5 + 7 + 6);
  REQUIRE(wide.symbol(wide.time_token(6)) == "<|time6|>");
}

TEST_CASE("vocabulary size formula at UCI scale") {
  std::string text;
  for (int i = 0; i + 1 < 1781; i += 2) {
    text += "p" + std::to_string(i) + " p" + std::to_string(i + 1) + " " + std::to_string(i) + "\n";
  }
  text += "p0 p1780 99999\n";
  auto g = parse_edge_list_text(text);
  REQUIRE(g.nodes.size() == 1781);
  auto vocab = Vocabulary::build(g, 13);
  REQUIRE(vocab.size() == 1801);
}

TEST_CASE("vocab rejects node names that collide with reserved symbols") {
  auto g = parse_edge_list_text("<|hist|> b 0\nb c 1\n");
  REQUIRE_THROWS_WITH(Vocabulary::build(g, 3), Catch::Matchers::ContainsSubstring("collides"));
}

TEST_CASE("ego history is undirected and ordered") {
  auto seg = segment_time(toy_graph(), 3);
  auto g2 = segment_time(normalize_times(parse_edge_list_text("a b 0.1\nc a 0.2\n")), 2);
  const int a2 = g2.graph.node_id("a");
  auto hist = extract_ego_history(g2, a2, 2);
  REQUIRE(hist.size() == 2);
  REQUIRE(hist[0].neighbor == g2.graph.node_id("b"));
  REQUIRE(hist[1].neighbor == g2.graph.node_id("c"));

  // no interactions -> empty list
  auto lonely = extract_ego_history(seg, seg.graph.node_id("e"), 2);
  REQUIRE(lonely.empty());

  REQUIRE_THROWS_AS(extract_ego_history(seg, 99, 2), DataError);

  // a long history is returned complete (truncation happens downstream)
  std::string text;
  for (int i = 0; i < 2000; ++i) {
    text += "hub n" + std::to_string(i) + " " + std::to_string(i * 1e-4) + "\n";
  }
  auto big = segment_time(normalize_times(parse_edge_list_text(text)), 5);
  auto bighist = extract_ego_history(big, big.graph.node_id("hub"), 5);
  REQUIRE(bighist.size() == 2000);
}

TEST_CASE("encode_instance lays out the canonical sequence") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int a = seg.graph.node_id("a");
  auto hist = extract_ego_history(seg, a, 2);
  std::vector<EgoEvent> target;
  for (const auto& ev : extract_ego_history(seg, a, 3)) {
    if (ev.step == 3) target.push_back(ev);
  }
  auto seq = encode_instance(vocab, a, hist, target, 3, TokenVariant{}, 1024);
  REQUIRE(symbols(seq, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "<|time1|>", "b", "<|time2|>", "c", "d",
                                   "<|endofhist|>", "<|pred|>", "<|time3|>", "e", "<|endofpred|>"});
  REQUIRE_FALSE(grammar::validate_sequence(seq, vocab).has_value());
}

TEST_CASE("empty steps still emit their temporal token") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int b = seg.graph.node_id("b");
  auto seq = encode_instance(vocab, b, {}, {{seg.graph.node_id("a"), 3, 0.9, false}}, 3,
                             TokenVariant{}, 1024);
  REQUIRE(symbols(seq, vocab) ==
          std::vector<std::string>{"<|hist|>", "b", "<|time1|>", "<|time2|>", "<|endofhist|>",
                                   "<|pred|>", "<|time3|>", "a", "<|endofpred|>"});
  // empty target is legal too
  auto seq2 = encode_instance(vocab, b, {}, {}, 3, TokenVariant{}, 1024);
  REQUIRE(decode_tokens(seq2.target_ids, vocab) ==
          std::vector<std::string>{"<|pred|>", "<|time3|>", "<|endofpred|>"});
}

TEST_CASE("deletion events encode as [del] node") {
  ParseOptions opt;
  opt.allow_deletions = true;
  auto g = normalize_times(parse_edge_list_text("a b 0.0\na b 0.5 del\na c 0.9\n", opt));
  auto seg = segment_time(g, 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int a = seg.graph.node_id("a");
  auto hist = extract_ego_history(seg, a, 2);
  auto seq = encode_instance(vocab, a, hist, {}, 3, TokenVariant{}, 1024);
  REQUIRE(decode_tokens(seq.input_ids, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "<|time1|>", "b", "<|time2|>", "[del]", "b",
                                   "<|endofhist|>"});
  REQUIRE_FALSE(grammar::validate_sequence(seq, vocab).has_value());
}

TEST_CASE("variants change the layout as specified") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int a = seg.graph.node_id("a");
  auto hist = extract_ego_history(seg, a, 2);
  std::vector<EgoEvent> target{{seg.graph.node_id("e"), 3, 0.9, false}};

  TokenVariant same_special{SpecialVariant::SameForInOut, TemporalVariant::Distinct};
  auto s1 = encode_instance(vocab, a, hist, target, 3, same_special, 1024);
  REQUIRE(decode_tokens(s1.target_ids, vocab) ==
          std::vector<std::string>{"<|hist|>", "<|time3|>", "e", "<|endofhist|>"});
  REQUIRE_FALSE(grammar::validate_sequence(s1, vocab).has_value());

  TokenVariant no_special{SpecialVariant::None, TemporalVariant::Distinct};
  auto s2 = encode_instance(vocab, a, hist, target, 3, no_special, 1024);
  REQUIRE(decode_tokens(s2.input_ids, vocab) ==
          std::vector<std::string>{"a", "<|time1|>", "b", "<|time2|>", "c", "d"});
  REQUIRE(decode_tokens(s2.target_ids, vocab) == std::vector<std::string>{"<|time3|>", "e"});
  REQUIRE_FALSE(grammar::validate_sequence(s2, vocab).has_value());

  TokenVariant same_time{SpecialVariant::Distinct, TemporalVariant::SameToken};
  auto s3 = encode_instance(vocab, a, hist, target, 3, same_time, 1024);
  REQUIRE(decode_tokens(s3.input_ids, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "<|time1|>", "b", "<|time1|>", "c", "d",
                                   "<|endofhist|>"});
  REQUIRE_FALSE(grammar::validate_sequence(s3, vocab).has_value());

  TokenVariant no_time{SpecialVariant::Distinct, TemporalVariant::None};
  auto s4 = encode_instance(vocab, a, hist, target, 3, no_time, 1024);
  REQUIRE(decode_tokens(s4.input_ids, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "b", "c", "d", "<|endofhist|>"});
  REQUIRE_FALSE(grammar::validate_sequence(s4, vocab).has_value());
}

TEST_CASE("truncation drops oldest node tokens but never structure") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int a = seg.graph.node_id("a");
  auto hist = extract_ego_history(seg, a, 2);  // b, c, d
  std::vector<EgoEvent> target{{seg.graph.node_id("e"), 3, 0.9, false}};

  // full length is 12; squeeze to 10 -> b and c dropped
  auto seq = encode_instance(vocab, a, hist, target, 3, TokenVariant{}, 10);
  REQUIRE(seq.total_length() == 10);
  REQUIRE(symbols(seq, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "<|time1|>", "<|time2|>", "d", "<|endofhist|>",
                                   "<|pred|>", "<|time3|>", "e", "<|endofpred|>"});

  // squeeze to the structural minimum: every node token except ego goes
  auto seq2 = encode_instance(vocab, a, hist, target, 3, TokenVariant{}, 8);
  REQUIRE(seq2.total_length() == 8);
  REQUIRE(seq2.input_ids[1] == a);
  REQUIRE_FALSE(grammar::validate_sequence(seq2, vocab).has_value());

  REQUIRE_THROWS_AS(encode_instance(vocab, a, hist, target, 3, TokenVariant{}, 7), ConfigError);
  REQUIRE_THROWS_AS(encode_instance(vocab, a, hist, target, 1, TokenVariant{}, 1024), ConfigError);
}

TEST_CASE("chronology: node tokens appear in non-decreasing time order") {
  SynthSpec spec;
  spec.num_egos = 6;
  spec.neighbors = 5;
  spec.period = 3;
  spec.num_steps = 8;
  spec.noise = 0.2;
  spec.seed = 5;
  auto res = gen_cyclic(spec);
  auto seg = segment_time(normalize_times(res.graph), 8);
  auto vocab = Vocabulary::build(seg.graph, 8);
  for (int ego = 0; ego < 6; ++ego) {
    const int id = seg.graph.node_id(synth_ego_name(ego));
    auto hist = extract_ego_history(seg, id, 7);
    auto seq = encode_instance(vocab, id, hist, {}, 8, TokenVariant{}, 1024);
    // strip non-node tokens (skipping the leading ego) and compare with the
    // chronological neighbor list
    std::vector<int> got;
    for (size_t i = 2; i < seq.input_ids.size(); ++i) {
      if (vocab.is_node(seq.input_ids[i])) got.push_back(seq.input_ids[i]);
    }
    std::vector<int> expect;
    for (const auto& ev : hist) expect.push_back(ev.neighbor);
    REQUIRE(got == expect);
  }
}

TEST_CASE("decode round-trips and rejects bad ids") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  REQUIRE(decode_tokens({vocab.pad()}, vocab) == std::vector<std::string>{"[pad]"});
  REQUIRE_THROWS_AS(decode_tokens({vocab.size()}, vocab), DataError);

  // random id sequences round-trip through symbols
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids(100);
    for (int& id : ids) id = rng.uniform_int(vocab.size());
    auto syms = decode_tokens(ids, vocab);
    std::vector<int> back;
    for (const auto& s : syms) back.push_back(vocab.id_of(s));
    REQUIRE(back == ids);
  }
}

TEST_CASE("prediction prefix is the input plus the target opening") {
  auto seg = segment_time(toy_graph(), 3);
  auto vocab = Vocabulary::build(seg.graph, 3);
  const int a = seg.graph.node_id("a");
  auto hist = extract_ego_history(seg, a, 2);
  auto prefix = prediction_prefix(vocab, a, hist, 3, TokenVariant{}, 1024);
  REQUIRE(decode_tokens(prefix, vocab) ==
          std::vector<std::string>{"<|hist|>", "a", "<|time1|>", "b", "<|time2|>", "c", "d",
                                   "<|endofhist|>", "<|pred|>", "<|time3|>"});

  TokenVariant none{SpecialVariant::None, TemporalVariant::None};
  auto p2 = prediction_prefix(vocab, a, hist, 3, none, 1024);
  REQUIRE(decode_tokens(p2, vocab) == std::vector<std::string>{"a", "b", "c", "d"});
}

TEST_CASE("random synth instances satisfy the grammar for every variant") {
  SynthSpec spec;
  spec.num_egos = 10;
  spec.neighbors = 6;
  spec.period = 3;
  spec.num_steps = 9;
  spec.noise = 0.3;
  spec.seed = 123;
  auto res = gen_cyclic(spec);
  auto seg = segment_time(normalize_times(res.graph), spec.num_steps);
  auto vocab = Vocabulary::build(seg.graph, spec.num_steps);
  Rng rng(7);
  const SpecialVariant sv[] = {SpecialVariant::Distinct, SpecialVariant::SameForInOut,
                               SpecialVariant::None};
  const TemporalVariant tv[] = {TemporalVariant::Distinct, TemporalVariant::SameToken,
                                TemporalVariant::None};
  for (int trial = 0; trial < 200; ++trial) {
    const int ego = seg.graph.node_id(synth_ego_name(rng.uniform_int(spec.num_egos)));
    const int k = 2 + rng.uniform_int(spec.num_steps - 1);
    TokenVariant variant{sv[rng.uniform_int(3)], tv[rng.uniform_int(3)]};
    auto hist = extract_ego_history(seg, ego, k - 1);
    std::vector<EgoEvent> target;
    for (const auto& ev : extract_ego_history(seg, ego, k)) {
      if (ev.step == k) target.push_back(ev);
    }
    auto seq = encode_instance(vocab, ego, hist, target, k, variant, 1024);
    auto err = grammar::validate_sequence(seq, vocab);
    INFO(err.value_or(""));
    REQUIRE_FALSE(err.has_value());
    REQUIRE(seq.total_length() <= 1024);
  }
}
