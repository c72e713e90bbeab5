#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "adam.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "toy_corpus.hpp"

using namespace ef;

namespace {

const std::string kTmp = EF_TEST_TMP;

Vocabulary tiny_vocab() {
  Vocabulary v;
  for (const char* w : {"i", "am", "so", "happy", "sad", "my", "dog", "ran",
                        "away", "oh", "no", "that", "sounds", "bad", "ok",
                        "did", "he", "come", "back", "?", ".", "!", ","})
    v.add(w);
  return v;
}

ModelConfig tiny_cfg(std::size_t vocab, bool exemplars = true) {
  ModelConfig c = ModelConfig::desk(vocab);
  c.n_emb = 16;
  c.ffn_width = 32;
  c.n_heads = 4;
  c.use_exemplars = exemplars;
  c.exemplar_count = 4;
  return c;
}

Utterance utt(const std::string& text, Speaker sp, std::size_t index) {
  return {tokenize(text), sp, index};
}

ContextResponsePair sample_pair() {
  ContextResponsePair p;
  p.context = {utt("i am so sad", Speaker::kUser, 1),
               utt("oh no", Speaker::kAgent, 2),
               utt("my dog ran away", Speaker::kUser, 3)};
  p.response = utt("did he come back ?", Speaker::kAgent, 4);
  p.emotion = {4, "sad"};
  p.source_dialogue_id = "d0";
  p.pair_id = "d0#3";
  return p;
}

std::vector<std::vector<std::string>> sample_exemplars() {
  return {tokenize("oh no that sounds bad"), tokenize("did he come back ?")};
}

}  // namespace

TEST_CASE("embed_context") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  Parameter& words = model.params().at("embeddings.word");
  Parameter& speakers = model.params().at("embeddings.speaker");

  SUBCASE("zeroed speaker table leaves word embeddings") {
    std::fill(speakers.value.begin(), speakers.value.end(), 0.0);
    Tape t;
    ContextEmbedding e = model.embed_context(t, sample_pair());
    for (std::size_t i = 0; i < e.token_ids.size(); ++i)
      for (std::size_t j = 0; j < 16; ++j)
        CHECK(e.matrix.value()[i * 16 + j] ==
              words.value[static_cast<std::size_t>(e.token_ids[i]) * 16 + j]);
  }
  SUBCASE("additivity is exact") {
    Tape t;
    ContextEmbedding e = model.embed_context(t, sample_pair());
    for (std::size_t i = 0; i < e.token_ids.size(); ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const double want =
            words.value[static_cast<std::size_t>(e.token_ids[i]) * 16 + j] +
            speakers.value[static_cast<std::size_t>(e.speaker_ids[i]) * 16 + j];
        CHECK(e.matrix.value()[i * 16 + j] == want);  // bitwise
      }
  }
  SUBCASE("single token with constructed vectors") {
    std::fill(words.value.begin(), words.value.end(), 0.0);
    std::fill(speakers.value.begin(), speakers.value.end(), 0.0);
    const auto id = static_cast<std::size_t>(model.vocab().id("happy"));
    words.value[id * 16 + 0] = 1.0;     // word vec [1,0,...]
    speakers.value[0 * 16 + 1] = 1.0;   // USER speaker vec [0,1,0,...]
    ContextResponsePair p;
    p.context = {utt("happy", Speaker::kUser, 1)};
    p.response = utt("ok", Speaker::kAgent, 2);
    Tape t;
    ContextEmbedding e = model.embed_context(t, p);
    CHECK(e.matrix.value()[0] == 1.0);
    CHECK(e.matrix.value()[1] == 1.0);
    for (std::size_t j = 2; j < 16; ++j) CHECK(e.matrix.value()[j] == 0.0);
  }
  SUBCASE("k equals the total token count across utterances") {
    Tape t;
    ContextEmbedding e = model.embed_context(t, sample_pair());
    std::size_t total = 0;
    for (const auto& u : sample_pair().context) total += u.tokens.size();
    CHECK(e.matrix.shape()[0] == total);
    CHECK(e.token_ids.size() == total);
  }
  SUBCASE("empty context is an error") {
    ContextResponsePair p;
    p.response = utt("ok", Speaker::kAgent, 2);
    Tape t;
    CHECK_THROWS_AS(model.embed_context(t, p), std::invalid_argument);
  }
}

TEST_CASE("encode_context") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  SUBCASE("shape and determinism") {
    Tape t1, t2;
    Tensor z1 = model.encode_context(t1, model.embed_context(t1, sample_pair()));
    Tensor z2 = model.encode_context(t2, model.embed_context(t2, sample_pair()));
    CHECK(z1.shape() == Shape{10, 16});
    CHECK(z1.value() == z2.value());
  }
  SUBCASE("permuting two distinct tokens changes z") {
    ContextResponsePair a = sample_pair();
    ContextResponsePair b = a;
    std::swap(b.context[0].tokens[0], b.context[0].tokens[3]);  // i <-> sad
    Tape t1, t2;
    Tensor za = model.encode_context(t1, model.embed_context(t1, a));
    Tensor zb = model.encode_context(t2, model.embed_context(t2, b));
    CHECK(za.value() != zb.value());
  }
}

TEST_CASE("encode_exemplars") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  SUBCASE("chi is exactly the mean of the pooled vectors") {
    Tape t;
    ExemplarEncoding x = model.encode_exemplars(t, sample_exemplars());
    REQUIRE(x.pooled.size() == 2);
    for (std::size_t j = 0; j < 16; ++j) {
      const double want =
          (x.pooled[0].value()[j] + x.pooled[1].value()[j]) / 2.0;
      CHECK(std::fabs(x.aggregate.value()[j] - want) < 1e-12);
    }
  }
  SUBCASE("one exemplar: chi equals psi") {
    Tape t;
    ExemplarEncoding x =
        model.encode_exemplars(t, {tokenize("oh no that sounds bad")});
    CHECK(x.aggregate.value() == x.pooled[0].value());
  }
  SUBCASE("identical exemplars: chi equals psi_1") {
    Tape t;
    auto e = tokenize("did he come back ?");
    ExemplarEncoding x = model.encode_exemplars(t, {e, e, e, e});
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(std::fabs(x.aggregate.value()[j] - x.pooled[0].value()[j]) < 1e-12);
  }
  SUBCASE("zero exemplars while enabled is an error") {
    Tape t;
    CHECK_THROWS_AS(model.encode_exemplars(t, {}), std::invalid_argument);
  }
}

TEST_CASE("fuse_exemplars") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  SUBCASE("constructed identity weights reproduce z exactly") {
    Parameter& w = model.params().at("fusion.fc_exl.w");
    Parameter& b = model.params().at("fusion.fc_exl.b");
    std::fill(w.value.begin(), w.value.end(), 0.0);
    std::fill(b.value.begin(), b.value.end(), 0.0);
    for (std::size_t i = 0; i < 16; ++i) w.value[i * 16 + i] = 1.0;  // [I | 0]
    Tape t;
    Tensor z = model.encode_context(t, model.embed_context(t, sample_pair()));
    ExemplarEncoding x = model.encode_exemplars(t, sample_exemplars());
    Tensor fused = model.fuse_exemplars(t, z, &x);
    CHECK(fused.value() == z.value());  // bitwise
  }
  SUBCASE("output keeps the (k, n_emb) shape") {
    Tape t;
    Tensor z = model.encode_context(t, model.embed_context(t, sample_pair()));
    ExemplarEncoding x = model.encode_exemplars(t, sample_exemplars());
    CHECK(model.fuse_exemplars(t, z, &x).shape() == z.shape());
  }
  SUBCASE("absent exemplars bypass fusion") {
    Tape t;
    Tensor z = model.encode_context(t, model.embed_context(t, sample_pair()));
    Tensor fused = model.fuse_exemplars(t, z, nullptr);
    CHECK(fused.id() == z.id());  // the same node, untouched
  }
}

TEST_CASE("build_memory requires exemplars when enabled") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  Tape t;
  CHECK_THROWS_AS(model.build_memory(t, sample_pair(), nullptr),
                  std::invalid_argument);
}

TEST_CASE("decode and generate") {
  auto ex = sample_exemplars();
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  const auto pair = sample_pair();

  SUBCASE("probs rows sum to 1 and loss is near log V for zeroed head") {
    Parameter& head = model.params().at("decoder.lm_head");
    std::fill(head.value.begin(), head.value.end(), 0.0);
    Tape t;
    Tensor mem = model.build_memory(t, pair, &ex);
    DecoderOutput out = model.decode_teacher_forced(t, mem, pair.response.tokens);
    const std::size_t rows = out.probs.shape()[0];
    const std::size_t v = out.probs.shape()[1];
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < v; ++j) s += out.probs.value()[i * v + j];
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
    CHECK(out.loss.scalar() == doctest::Approx(std::log(27.0)).epsilon(1e-12));
  }
  SUBCASE("random init stays within half a nat of log V") {
    Tape t;
    Tensor mem = model.build_memory(t, pair, &ex);
    DecoderOutput out = model.decode_teacher_forced(t, mem, pair.response.tokens);
    CHECK(std::fabs(out.loss.scalar() - std::log(27.0)) < 0.5);
  }
  SUBCASE("gold longer than max_len is rejected") {
    ModelConfig c = tiny_cfg(23);
    c.max_len = 3;
    GeneratorModel m2(c, tiny_vocab(), 11);
    Tape t;
    Tensor mem = m2.build_memory(t, pair, &ex);
    CHECK_THROWS_AS(m2.decode_teacher_forced(t, mem, pair.response.tokens),
                    std::invalid_argument);
  }
  SUBCASE("causality: changing gold token j leaves earlier probs rows alone") {
    Tape t1, t2;
    auto gold2 = pair.response.tokens;
    gold2[2] = "ok";  // position 2 changes
    Tensor m1 = model.build_memory(t1, pair, &ex);
    Tensor m2 = model.build_memory(t2, pair, &ex);
    DecoderOutput a = model.decode_teacher_forced(t1, m1, pair.response.tokens);
    DecoderOutput b = model.decode_teacher_forced(t2, m2, gold2);
    const std::size_t v = a.probs.shape()[1];
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < v; ++j)
        CHECK(a.probs.value()[i * v + j] == b.probs.value()[i * v + j]);
  }
  SUBCASE("greedy generation is deterministic and capped") {
    auto g1 = model.generate(pair, &ex, GenMode::kGreedy, 0);
    auto g2 = model.generate(pair, &ex, GenMode::kGreedy, 99);
    CHECK(g1 == g2);  // seed is irrelevant for greedy
    CHECK(g1.size() <= model.config().max_len);
  }
  SUBCASE("top-k generation is deterministic under a fixed seed") {
    auto g1 = model.generate(pair, &ex, GenMode::kTopK, 5);
    auto g2 = model.generate(pair, &ex, GenMode::kTopK, 5);
    CHECK(g1 == g2);
    CHECK(g1.size() <= model.config().max_len);
  }
}

TEST_CASE("overfit a single pair reproduces it") {
  auto ex = sample_exemplars();
  const auto pair = sample_pair();
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  Adam opt({.learning_rate = 1e-2});
  auto params = model.generative_params();
  double loss = 0;
  for (int step = 0; step < 300; ++step) {
    Tape t;
    Tensor mem = model.build_memory(t, pair, &ex);
    DecoderOutput out = model.decode_teacher_forced(t, mem, pair.response.tokens);
    loss = out.loss.scalar();
    if (loss < 0.05) break;
    t.backward(out.loss);
    opt.step(params);
  }
  CHECK(loss < 0.1);
  CHECK(model.generate(pair, &ex, GenMode::kGreedy, 0) == pair.response.tokens);
}

TEST_CASE("predict_aux") {
  GeneratorModel model(tiny_cfg(23), tiny_vocab(), 11);
  auto ex = sample_exemplars();
  const auto pair = sample_pair();

  SUBCASE("zero weights give uniform classes and zero sentiment") {
    for (const char* name :
         {"heads.fc_ep.w", "heads.fc_int.w", "heads.fc_exp.w",
          "heads.fc_sent.w"}) {
      Parameter& p = model.params().at(name);
      std::fill(p.value.begin(), p.value.end(), 0.0);
    }
    Tape t;
    Tensor mem = model.build_memory(t, pair, &ex);
    DecoderOutput out = model.decode_teacher_forced(t, mem, pair.response.tokens);
    AuxPrediction aux = model.predict_aux(t, out.hidden);
    for (const Tensor& p : {aux.p_ep, aux.p_int, aux.p_exp})
      for (double v : p.value())
        CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(aux.sentiment.value()[0] == 0.0);
  }
  SUBCASE("class vectors sum to one; sentiment bounded over random trials") {
    Rng rng(123);
    Parameter& w = model.params().at("heads.fc_sent.w");
    for (int trial = 0; trial < 1000; ++trial) {
      for (auto& v : w.value) v = rng.uniform(-0.25, 0.25);
      Tape t;
      Tensor hidden = t.input({1, 16}, [&] {
        std::vector<double> h(16);
        for (auto& x : h) x = rng.uniform(-2.0, 2.0);
        return h;
      }());
      AuxPrediction aux = model.predict_aux(t, hidden);
      double s = 0;
      for (double v : aux.p_ep.value()) s += v;
      CHECK(std::fabs(s - 1.0) < 1e-9);
      CHECK(aux.sentiment.value()[0] > -1.0);
      CHECK(aux.sentiment.value()[0] < 1.0);
    }
  }
}

TEST_CASE("ablation identity: disabled exemplars reduce to the base encoder-decoder") {
  // the ablated configuration must match an independently assembled plain
  // encoder-decoder, weight for weight, bit for bit
  Vocabulary vocab = tiny_vocab();
  ModelConfig cfg = tiny_cfg(vocab.size(), /*exemplars=*/false);
  GeneratorModel model(cfg, vocab, 21);
  const auto pair = sample_pair();

  Tape t;
  Tensor mem = model.build_memory(t, pair, nullptr);
  DecoderOutput got = model.decode_teacher_forced(t, mem, pair.response.tokens);

  // independent assembly sharing the same weights
  ParameterStore base;
  TransformerStack enc(base, "encoder", cfg, TransformerStack::Kind::kEncoder);
  TransformerStack dec(base, "decoder", cfg, TransformerStack::Kind::kDecoder);
  Parameter& word = base.add("embeddings.word", {vocab.size(), cfg.n_emb});
  Parameter& speaker = base.add("embeddings.speaker", {2, cfg.n_emb});
  Parameter& head = base.add("decoder.lm_head", {cfg.n_emb, vocab.size()});
  for (Parameter* p : base.all())
    p->value = model.params().at(p->name).value;

  Tape t2;
  std::vector<int> tok_ids, spk_ids;
  for (const auto& u : pair.context)
    for (const auto& tok : u.tokens) {
      tok_ids.push_back(vocab.id(tok));
      spk_ids.push_back(u.speaker == Speaker::kUser ? 0 : 1);
    }
  Tensor emb = t2.add(t2.embedding(t2.param(word), tok_ids),
                      t2.embedding(t2.param(speaker), spk_ids));
  Tensor z = enc.apply(t2, emb);
  std::vector<int> in_ids = {Vocabulary::kStart};
  std::vector<int> tgt_ids;
  for (const auto& tok : pair.response.tokens) {
    in_ids.push_back(vocab.id(tok));
    tgt_ids.push_back(vocab.id(tok));
  }
  tgt_ids.push_back(Vocabulary::kEos);
  Tensor hidden = dec.apply(t2, t2.embedding(t2.param(word), in_ids), z);
  Tensor logits = t2.matmul(hidden, t2.param(head));
  Tensor want_loss = t2.cross_entropy(logits, tgt_ids, Vocabulary::kPad);
  Tensor want_probs = t2.softmax(logits, 1);

  CHECK(got.loss.scalar() == want_loss.scalar());      // bitwise
  CHECK(got.probs.value() == want_probs.value());      // bitwise
  CHECK(got.hidden.value() == hidden.value());
}

TEST_CASE("end-to-end objective gradient passes finite differences") {
  Vocabulary vocab = tiny_vocab();
  GeneratorModel model(tiny_cfg(vocab.size()), vocab, 31);
  const auto pair = sample_pair();
  auto ex = sample_exemplars();
  const int gold_ep = 1, gold_int = 0, gold_exp = 2;
  const double gold_sent = -0.3;

  auto total_on = [&](Tape& t) {
    Tensor mem = model.build_memory(t, pair, &ex);
    DecoderOutput out = model.decode_teacher_forced(t, mem, pair.response.tokens);
    AuxLogits aux = model.aux_logits(t, out.hidden);
    return t.weighted_sum({{1.0, out.loss},
                           {0.1, t.cross_entropy(aux.ep, {gold_ep})},
                           {0.1, t.cross_entropy(aux.intr, {gold_int})},
                           {0.1, t.cross_entropy(aux.exp, {gold_exp})},
                           {0.1, t.mse(aux.sentiment, gold_sent)}});
  };
  Rng rng(7);
  auto rep = finite_difference_check_params(
      [&] {
        Tape t;
        return total_on(t).scalar();
      },
      [&] {
        Tape t;
        t.backward(total_on(t));
      },
      model.all_params(), 3, rng);
  INFO("worst ", rep.worst.where, "[", rep.worst.index, "] analytic ",
       rep.worst.analytic, " numeric ", rep.worst.numeric);
  CHECK(rep.passed(1e-3));
}

TEST_CASE("pretrained word vectors initialize the embedding table") {
  Vocabulary vocab = tiny_vocab();
  EmbeddingTable table;
  table.dim = 16;
  for (const char* w : {"happy", "sad", "dog"}) {
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = 0.01 * double(i) + (w[0] - 'a');
    table.vectors[w] = v;
  }
  GeneratorModel model(tiny_cfg(vocab.size()), vocab, 11, &table);
  const Parameter& words = model.params().at("embeddings.word");
  for (const char* w : {"happy", "sad", "dog"}) {
    const auto id = static_cast<std::size_t>(vocab.id(w));
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(words.value[id * 16 + j] == table.vectors.at(w)[j]);
  }
  // uncovered tokens keep their seeded random initialization
  const auto other = static_cast<std::size_t>(vocab.id("ran"));
  bool nonzero = false;
  for (std::size_t j = 0; j < 16; ++j)
    if (words.value[other * 16 + j] != 0.0) nonzero = true;
  CHECK(nonzero);
  SUBCASE("width mismatch is rejected") {
    EmbeddingTable bad;
    bad.dim = 7;
    CHECK_THROWS_AS(GeneratorModel(tiny_cfg(vocab.size()), vocab, 11, &bad),
                    std::invalid_argument);
  }
}

TEST_CASE("model save and load round trip") {
  Vocabulary vocab = tiny_vocab();
  GeneratorModel model(tiny_cfg(vocab.size()), vocab, 41);
  const std::string dir = kTmp + "/model_roundtrip";
  model.save(dir);
  GeneratorModel loaded = GeneratorModel::load(dir);
  CHECK(loaded.config() == model.config());
  const auto pair = sample_pair();
  auto ex = sample_exemplars();
  CHECK(loaded.generate(pair, &ex, GenMode::kGreedy, 0) ==
        model.generate(pair, &ex, GenMode::kGreedy, 0));
  Tape t1, t2;
  Tensor m1 = model.build_memory(t1, pair, &ex);
  Tensor m2 = loaded.build_memory(t2, pair, &ex);
  CHECK(m1.value() == m2.value());
}
