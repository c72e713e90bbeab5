#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "corpus.hpp"
#include "toy_corpus.hpp"

using namespace ef;

namespace {

const std::string kTmp = EF_TEST_TMP;

EmotionSet full_set() {
  return EmotionSet::from_names(EmotionSet::default_names());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

}  // namespace

TEST_CASE("tokenizer") {
  SUBCASE("clitics and punctuation") {
    CHECK(tokenize("I'm SO happy!") ==
          std::vector<std::string>{"i", "'m", "so", "happy", "!"});
    CHECK(tokenize("don't stop") == std::vector<std::string>{"do", "n't", "stop"});
    CHECK(tokenize("the kids' toys") ==
          std::vector<std::string>{"the", "kids", "'", "toys"});
    CHECK(tokenize("it's o'clock, she'll've...") ==
          std::vector<std::string>{"it", "'s", "o'clock", ",", "she", "'ll",
                                   "'ve", ".", ".", "."});
  }
  SUBCASE("idempotent on its own output") {
    for (const char* s : {"I'm SO happy!", "Wasn't that great?!",
                          "He said -- wait, really? -- yes."}) {
      auto once = tokenize(s);
      CHECK(tokenize(join_tokens(once)) == once);
    }
  }
  SUBCASE("empty and whitespace") {
    CHECK(tokenize("").empty());
    CHECK(tokenize("   \t\n ").empty());
  }
}

TEST_CASE("emotion manifest") {
  EmotionSet set = full_set();
  CHECK(set.size() == 32);
  CHECK(set.by_name("terrified").id == 9);
  CHECK(set.by_id(9).name == "terrified");
  CHECK_THROWS(set.by_name("bogus"));
  CHECK_THROWS(EmotionSet::from_names({"joyful", "sad"}));  // must be 32

  const std::string path = kTmp + "/manifest.json";
  set.save_manifest(path);
  EmotionSet loaded = EmotionSet::load_manifest(path);
  CHECK(loaded.size() == 32);
  CHECK(loaded.by_id(31).name == set.by_id(31).name);
}

TEST_CASE("load_dialogues") {
  EmotionSet set = full_set();
  SUBCASE("happy path with two dialogues") {
    const std::string path = kTmp + "/two.jsonl";
    write_file(path,
      R"({"dialogue_id":"d1","emotion":"joyful","utterances":[{"speaker":"USER","text":"I won!"},{"speaker":"AGENT","text":"Congrats!"}]})" "\n"
      R"({"dialogue_id":"d2","emotion":"sad","utterances":[{"speaker":"USER","text":"I lost."},{"speaker":"AGENT","text":"So sorry."}]})" "\n");
    auto ds = load_dialogues(path, set);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].dialogue_id == "d1");
    CHECK(ds[0].emotion.name == "joyful");
    CHECK(ds[0].utterances[0].tokens == std::vector<std::string>{"i", "won", "!"});
    CHECK(ds[1].utterances[1].speaker == Speaker::kAgent);
  }
  SUBCASE("alternation violation names the dialogue") {
    const std::string path = kTmp + "/alt.jsonl";
    write_file(path,
      R"({"dialogue_id":"bad7","emotion":"sad","utterances":[{"speaker":"USER","text":"a"},{"speaker":"USER","text":"b"}]})" "\n");
    CHECK_THROWS_WITH_AS(load_dialogues(path, set),
                         doctest::Contains("bad7"), std::runtime_error);
  }
  SUBCASE("malformed line reports line number") {
    const std::string path = kTmp + "/mal.jsonl";
    write_file(path,
      R"({"dialogue_id":"d1","emotion":"joyful","utterances":[{"speaker":"USER","text":"hi"},{"speaker":"AGENT","text":"hey"}]})" "\n"
      "{not json\n");
    CHECK_THROWS_WITH_AS(load_dialogues(path, set),
                         doctest::Contains("line 2"), std::runtime_error);
  }
  SUBCASE("unknown emotion rejected") {
    const std::string path = kTmp + "/emo.jsonl";
    write_file(path,
      R"({"dialogue_id":"d1","emotion":"wistful","utterances":[{"speaker":"USER","text":"hi"},{"speaker":"AGENT","text":"hey"}]})" "\n");
    CHECK_THROWS_WITH_AS(load_dialogues(path, set),
                         doctest::Contains("unknown emotion"), std::runtime_error);
  }
}

TEST_CASE("dialogue round trip") {
  EmotionSet set = full_set();
  ToyCorpusParams params;
  params.dialogues = 25;
  auto dialogues = generate_toy_corpus(params, set);
  const std::string path = kTmp + "/roundtrip.jsonl";
  save_dialogues(path, dialogues);
  auto loaded = load_dialogues(path, set);
  REQUIRE(loaded.size() == dialogues.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].dialogue_id == dialogues[i].dialogue_id);
    CHECK(loaded[i].emotion == dialogues[i].emotion);
    REQUIRE(loaded[i].utterances.size() == dialogues[i].utterances.size());
    for (std::size_t u = 0; u < loaded[i].utterances.size(); ++u) {
      CHECK(loaded[i].utterances[u].tokens == dialogues[i].utterances[u].tokens);
      CHECK(loaded[i].utterances[u].speaker == dialogues[i].utterances[u].speaker);
      CHECK(loaded[i].utterances[u].index == dialogues[i].utterances[u].index);
    }
  }
}

TEST_CASE("make_training_pairs") {
  EmotionSet set = full_set();
  auto mk = [&](std::size_t turns) {
    Dialogue d;
    d.dialogue_id = "d";
    d.emotion = set.by_id(0);
    for (std::size_t t = 0; t < turns; ++t) {
      Utterance u;
      u.tokens = {"tok" + std::to_string(t)};
      u.speaker = t % 2 ? Speaker::kAgent : Speaker::kUser;
      u.index = t + 1;
      d.utterances.push_back(u);
    }
    return d;
  };
  SUBCASE("counts per agent turn") {
    CHECK(make_training_pairs(mk(2)).size() == 1);
    auto p4 = make_training_pairs(mk(4));
    REQUIRE(p4.size() == 2);
    CHECK(p4[0].context.size() == 1);
    CHECK(p4[1].context.size() == 3);
    auto p6 = make_training_pairs(mk(6));
    REQUIRE(p6.size() == 3);
    // enumeration oracle: context lengths 1, 3, 5
    CHECK(p6[0].context.size() == 1);
    CHECK(p6[1].context.size() == 3);
    CHECK(p6[2].context.size() == 5);
    for (const auto& p : p6) {
      CHECK(p.context.size() % 2 == 1);
      CHECK(p.context.back().speaker == Speaker::kUser);
      CHECK(p.response.speaker == Speaker::kAgent);
      CHECK(p.response.index == p.context.size() + 1);
    }
  }
  SUBCASE("pair count equals agent turn count over a corpus") {
    auto dialogues = generate_toy_corpus({.dialogues = 40}, set);
    std::size_t agent_turns = 0;
    for (const auto& d : dialogues)
      for (const auto& u : d.utterances)
        if (u.speaker == Speaker::kAgent) ++agent_turns;
    CHECK(make_training_pairs(dialogues).size() == agent_turns);
  }
}

TEST_CASE("build_dpr_samples") {
  EmotionSet set = full_set();
  ToyCorpusParams params;
  params.dialogues = 30;
  params.emotions = 2;
  auto pairs = make_training_pairs(generate_toy_corpus(params, set));

  SUBCASE("negatives always cross emotion and cross dialogue") {
    auto samples = build_dpr_samples(pairs, 1, 7);
    REQUIRE(samples.size() == pairs.size());
    for (const auto& s : samples) {
      REQUIRE(s.negatives.size() == 1);
      CHECK(s.negatives[0].emotion.id != s.pair.emotion.id);
      CHECK(s.negatives[0].source_dialogue_id != s.pair.source_dialogue_id);
    }
  }
  SUBCASE("deterministic for a fixed seed") {
    auto a = build_dpr_samples(pairs, 3, 99);
    auto b = build_dpr_samples(pairs, 3, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].negatives.size() == b[i].negatives.size());
      for (std::size_t j = 0; j < a[i].negatives.size(); ++j)
        CHECK(a[i].negatives[j].tokens == b[i].negatives[j].tokens);
    }
  }
  SUBCASE("n_neg 7 gives 8 candidates per sample") {
    auto samples = build_dpr_samples(pairs, 7, 1);
    for (const auto& s : samples) CHECK(s.negatives.size() + 1 == 8);
  }
  SUBCASE("insufficient cross-emotion pool is an error") {
    auto few = std::vector<ContextResponsePair>(pairs.begin(), pairs.begin() + 3);
    CHECK_THROWS_AS(build_dpr_samples(few, 50, 1), std::runtime_error);
  }
  SUBCASE("negatives within one sample are drawn without replacement") {
    auto samples = build_dpr_samples(pairs, 5, 3);
    for (const auto& s : samples) {
      std::set<std::string> seen;
      for (const auto& n : s.negatives) seen.insert(n.source_pair_id);
      CHECK(seen.size() == s.negatives.size());
    }
  }
}

TEST_CASE("split_corpus") {
  EmotionSet set = full_set();
  SUBCASE("exact ratios") {
    auto d10 = generate_toy_corpus({.dialogues = 10}, set);
    auto s = split_corpus(d10, 5);
    CHECK(s.train.size() == 8);
    CHECK(s.valid.size() == 1);
    CHECK(s.test.size() == 1);
    auto d100 = generate_toy_corpus({.dialogues = 100}, set);
    auto s2 = split_corpus(d100, 5);
    CHECK(s2.train.size() == 80);
    CHECK(s2.valid.size() == 10);
    CHECK(s2.test.size() == 10);
  }
  SUBCASE("disjoint exact partition") {
    auto d = generate_toy_corpus({.dialogues = 57}, set);
    auto s = split_corpus(d, 11);
    std::set<std::string> all;
    for (const auto& id : s.train) all.insert(id);
    for (const auto& id : s.valid) all.insert(id);
    for (const auto& id : s.test) all.insert(id);
    CHECK(all.size() == 57);
    CHECK(s.train.size() + s.valid.size() + s.test.size() == 57);
  }
  SUBCASE("too few dialogues") {
    auto d = generate_toy_corpus({.dialogues = 9}, set);
    CHECK_THROWS_AS(split_corpus(d, 1), std::invalid_argument);
  }
  SUBCASE("pairs of one dialogue land in one split") {
    auto d = generate_toy_corpus({.dialogues = 20}, set);
    auto s = split_corpus(d, 3);
    for (const auto& dia : d) {
      const int where = int(s.in_train(dia.dialogue_id)) +
                        int(s.in_valid(dia.dialogue_id)) +
                        int(s.in_test(dia.dialogue_id));
      CHECK(where == 1);
      // every pair carries the dialogue id, so membership is inherited
      for (const auto& p : make_training_pairs(dia))
        CHECK(p.source_dialogue_id == dia.dialogue_id);
    }
  }
}

TEST_CASE("embedding file") {
  SUBCASE("format") {
    const std::string path = kTmp + "/emb1.txt";
    write_file(path, "the 0.1 0.2\ncat -1 2.5\n");
    auto table = load_embedding_file(path, 2);
    CHECK(table.vectors.at("the") == std::vector<double>{0.1, 0.2});
    CHECK(table.vectors.at("cat") == std::vector<double>{-1.0, 2.5});
  }
  SUBCASE("dimension mismatch reports the line") {
    const std::string path = kTmp + "/emb2.txt";
    write_file(path, "the 0.1 0.2\ncat 1 2 3\n");
    CHECK_THROWS_WITH_AS(load_embedding_file(path, 2),
                         doctest::Contains("line 2"), std::runtime_error);
  }
  SUBCASE("coverage report is the set difference") {
    // oracle: gaps == vocab \ file tokens, in vocab order
    const std::string path = kTmp + "/emb3.txt";
    std::string content;
    std::vector<std::string> file_tokens;
    for (int i = 0; i < 50; ++i) {
      file_tokens.push_back("w" + std::to_string(i));
      content += file_tokens.back() + " 0.5\n";
    }
    write_file(path, content);
    auto table = load_embedding_file(path, 1);
    std::vector<std::string> vocab = {"w3", "zz", "w10", "qq", "w49"};
    CHECK(embedding_coverage_gaps(table, vocab) ==
          std::vector<std::string>{"zz", "qq"});
  }
}

TEST_CASE("vocabulary") {
  EmotionSet set = full_set();
  auto dialogues = generate_toy_corpus({.dialogues = 12}, set);
  Vocabulary v = Vocabulary::build(dialogues);
  SUBCASE("reserved specials") {
    CHECK(v.id("<pad>") == Vocabulary::kPad);
    CHECK(v.id("<unk>") == Vocabulary::kUnk);
    CHECK(v.id("<start>") == Vocabulary::kStart);
    CHECK(v.id("<eos>") == Vocabulary::kEos);
    CHECK(v.id("never-seen-token") == Vocabulary::kUnk);
  }
  SUBCASE("round trip through a file") {
    const std::string path = kTmp + "/vocab.txt";
    v.save(path);
    Vocabulary w = Vocabulary::load(path);
    CHECK(w.size() == v.size());
    CHECK(w.digest() == v.digest());
    CHECK(w.id("oh") == v.id("oh"));
  }
  SUBCASE("embedding filter drops uncovered tokens") {
    const std::string path = kTmp + "/emb4.txt";
    write_file(path, "oh 0.1\nthat 0.2\nsounds 0.3\n");
    auto table = load_embedding_file(path, 1);
    Vocabulary filtered = Vocabulary::build(dialogues, &table);
    CHECK(filtered.size() == 7);  // 4 specials + 3 covered words
    CHECK(filtered.id("oh") != Vocabulary::kUnk);
    CHECK(filtered.id("happy") == Vocabulary::kUnk);
  }
}
