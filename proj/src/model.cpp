#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace ef {

namespace fs = std::filesystem;

GeneratorModel::GeneratorModel(ModelConfig cfg, Vocabulary vocab,
                               std::uint64_t seed,
                               const EmbeddingTable* pretrained)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (cfg_.vocab_size != vocab_.size()) {
    cfg_.vocab_size = vocab_.size();
    cfg_.validate();
  }
  const std::size_t d = cfg_.n_emb;
  const std::size_t v = cfg_.vocab_size;

  word_emb_ = &store_.add("embeddings.word", {v, d});
  speaker_emb_ = &store_.add("embeddings.speaker", {2, d});
  encoder_.emplace(store_, "encoder", cfg_, TransformerStack::Kind::kEncoder);
  if (cfg_.use_exemplars) {
    exemplar_encoder_.emplace(store_, "exemplar_encoder", cfg_,
                              TransformerStack::Kind::kEncoder);
    fc_exl_w_ = &store_.add("fusion.fc_exl.w", {2 * d, d});
    fc_exl_b_ = &store_.add("fusion.fc_exl.b", {d});
  }
  decoder_.emplace(store_, "decoder", cfg_, TransformerStack::Kind::kDecoder);
  lm_head_ = &store_.add("decoder.lm_head", {d, v});
  fc_ep_w_ = &store_.add("heads.fc_ep.w", {d, 3});
  fc_ep_b_ = &store_.add("heads.fc_ep.b", {3});
  fc_int_w_ = &store_.add("heads.fc_int.w", {d, 3});
  fc_int_b_ = &store_.add("heads.fc_int.b", {3});
  fc_exp_w_ = &store_.add("heads.fc_exp.w", {d, 3});
  fc_exp_b_ = &store_.add("heads.fc_exp.b", {3});
  fc_sent_w_ = &store_.add("heads.fc_sent.w", {d, 1});
  fc_sent_b_ = &store_.add("heads.fc_sent.b", {1});

  Rng rng(Rng::mix(seed, 0x6e0de1));
  init_uniform_fan_in(*word_emb_, d, rng);
  init_uniform_fan_in(*speaker_emb_, d, rng);
  encoder_->init(rng);
  if (cfg_.use_exemplars) {
    exemplar_encoder_->init(rng);
    init_uniform_fan_in(*fc_exl_w_, 2 * d, rng);
  }
  decoder_->init(rng);
  init_uniform_fan_in(*lm_head_, d, rng);
  for (Parameter* w : {fc_ep_w_, fc_int_w_, fc_exp_w_, fc_sent_w_})
    init_uniform_fan_in(*w, d, rng);
  // biases stay zero

  if (pretrained != nullptr) {
    if (pretrained->dim != d)
      throw std::invalid_argument(
          "pretrained embedding width " + std::to_string(pretrained->dim) +
          " does not match n_emb " + std::to_string(d));
    for (std::size_t id = 0; id < vocab_.size(); ++id) {
      auto it = pretrained->vectors.find(vocab_.token(static_cast<int>(id)));
      if (it == pretrained->vectors.end()) continue;
      std::copy(it->second.begin(), it->second.end(),
                word_emb_->value.begin() + id * d);
    }
  }
}

ContextEmbedding GeneratorModel::embed_context(
    Tape& t, const ContextResponsePair& pair) const {
  if (pair.context.empty())
    throw std::invalid_argument("embed_context: empty context");
  ContextEmbedding e;
  for (const Utterance& u : pair.context) {
    for (const auto& tok : u.tokens) {
      e.token_ids.push_back(vocab_.id(tok));
      e.speaker_ids.push_back(u.speaker == Speaker::kUser ? 0 : 1);
    }
  }
  Tensor words = t.embedding(t.param(*word_emb_), e.token_ids);
  Tensor speakers = t.embedding(t.param(*speaker_emb_), e.speaker_ids);
  e.matrix = t.add(words, speakers);
  return e;
}

Tensor GeneratorModel::encode_context(Tape& t,
                                      const ContextEmbedding& e) const {
  return encoder_->apply(t, e.matrix);
}

ExemplarEncoding GeneratorModel::encode_exemplars(
    Tape& t, const std::vector<std::vector<std::string>>& exemplars) const {
  if (!cfg_.use_exemplars)
    throw std::logic_error("encode_exemplars: exemplars disabled in config");
  if (exemplars.empty())
    throw std::invalid_argument(
        "encode_exemplars: no exemplars while use_exemplars is on");
  if (exemplars.size() > cfg_.exemplar_count)
    throw std::invalid_argument("encode_exemplars: more than q exemplars");
  ExemplarEncoding out;
  for (const auto& tokens : exemplars) {
    if (tokens.empty())
      throw std::invalid_argument("encode_exemplars: empty exemplar");
    Tensor emb = t.embedding(t.param(*word_emb_), vocab_.encode(tokens));
    Tensor enc = exemplar_encoder_->apply(t, emb);
    out.pooled.push_back(t.mean(enc, 0));
  }
  if (out.pooled.size() == 1) {
    out.aggregate = out.pooled[0];
  } else {
    std::vector<Tensor> rows;
    rows.reserve(out.pooled.size());
    for (Tensor p : out.pooled)
      rows.push_back(t.reshape(p, {1, cfg_.n_emb}));
    out.aggregate = t.mean(t.concat(rows, 0), 0);
  }
  return out;
}

Tensor GeneratorModel::fuse_exemplars(Tape& t, Tensor z,
                                      const ExemplarEncoding* x) const {
  if (!cfg_.use_exemplars || x == nullptr) return z;  // ablation bypass
  const std::size_t k = z.shape()[0];
  if (x->aggregate.size() != cfg_.n_emb)
    throw std::invalid_argument("fuse_exemplars: width mismatch");
  // [Z_i ; chi] per row, then one fully-connected layer
  std::vector<Tensor> chi_rows(k, t.reshape(x->aggregate, {1, cfg_.n_emb}));
  Tensor chi_mat = k == 1 ? chi_rows[0] : t.concat(chi_rows, 0);
  Tensor cat = t.concat({z, chi_mat}, 1);
  return t.add_row(t.matmul(cat, t.param(*fc_exl_w_)), t.param(*fc_exl_b_));
}

Tensor GeneratorModel::build_memory(
    Tape& t, const ContextResponsePair& pair,
    const std::vector<std::vector<std::string>>* exemplars,
    Rng* dropout_rng) const {
  ContextEmbedding e = embed_context(t, pair);
  Tensor z = encoder_->apply(t, e.matrix, {}, dropout_rng);
  if (!cfg_.use_exemplars) return z;
  if (exemplars == nullptr || exemplars->empty())
    throw std::invalid_argument(
        "build_memory: exemplars required while use_exemplars is on");
  ExemplarEncoding x = encode_exemplars(t, *exemplars);
  return fuse_exemplars(t, z, &x);
}

Tensor GeneratorModel::decode_hidden(Tape& t, Tensor memory,
                                     const std::vector<int>& input_ids,
                                     Rng* dropout_rng) const {
  Tensor emb = t.embedding(t.param(*word_emb_), input_ids);
  return decoder_->apply(t, emb, memory, dropout_rng);
}

DecoderOutput GeneratorModel::decode_teacher_forced(
    Tape& t, Tensor memory, const std::vector<std::string>& gold,
    Rng* dropout_rng) const {
  if (gold.empty())
    throw std::invalid_argument("decode_teacher_forced: empty gold response");
  if (gold.size() + 1 > cfg_.max_len)
    throw std::invalid_argument("decode_teacher_forced: gold response longer "
                                "than max_len");
  std::vector<int> gold_ids = vocab_.encode(gold);
  std::vector<int> input_ids;
  input_ids.push_back(Vocabulary::kStart);
  input_ids.insert(input_ids.end(), gold_ids.begin(), gold_ids.end());
  DecoderOutput out;
  out.target_ids = gold_ids;
  out.target_ids.push_back(Vocabulary::kEos);
  out.hidden = decode_hidden(t, memory, input_ids, dropout_rng);
  Tensor logits = t.matmul(out.hidden, t.param(*lm_head_));
  out.probs = t.softmax(logits, 1);
  out.loss = t.cross_entropy(logits, out.target_ids, Vocabulary::kPad);
  return out;
}

AuxLogits GeneratorModel::aux_logits(Tape& t, Tensor hidden) const {
  if (hidden.shape().empty() || hidden.shape()[0] == 0)
    throw std::invalid_argument("aux heads: empty hidden states");
  Tensor start = t.row(hidden, 0);
  auto head = [&](Parameter* w, Parameter* b) {
    return t.add_row(t.matmul(start, t.param(*w)), t.param(*b));
  };
  AuxLogits out;
  out.ep = head(fc_ep_w_, fc_ep_b_);
  out.intr = head(fc_int_w_, fc_int_b_);
  out.exp = head(fc_exp_w_, fc_exp_b_);
  out.sentiment = t.tanh_op(head(fc_sent_w_, fc_sent_b_));
  return out;
}

AuxPrediction GeneratorModel::predict_aux(Tape& t, Tensor hidden) const {
  AuxLogits logits = aux_logits(t, hidden);
  AuxPrediction out;
  out.p_ep = t.softmax(logits.ep, 1);
  out.p_int = t.softmax(logits.intr, 1);
  out.p_exp = t.softmax(logits.exp, 1);
  out.sentiment = logits.sentiment;
  return out;
}

std::vector<std::string> GeneratorModel::generate(
    const ContextResponsePair& pair,
    const std::vector<std::vector<std::string>>* exemplars, GenMode mode,
    std::uint64_t seed) const {
  Rng rng(Rng::mix(seed, 0x9e4));
  Tape t;
  Tensor memory = build_memory(t, pair, exemplars);
  std::vector<int> ids = {Vocabulary::kStart};
  std::vector<int> out_ids;
  while (out_ids.size() < cfg_.max_len) {
    Tensor hidden = decode_hidden(t, memory, ids, nullptr);
    Tensor logits = t.matmul(t.row(hidden, hidden.shape()[0] - 1),
                             t.param(*lm_head_));
    const auto& lv = logits.value();
    int next = 0;
    if (mode == GenMode::kGreedy) {
      for (std::size_t i = 1; i < lv.size(); ++i)
        if (lv[i] > lv[static_cast<std::size_t>(next)])
          next = static_cast<int>(i);
    } else {
      // top-k=5 sampling over renormalized probabilities
      const std::size_t k = std::min<std::size_t>(5, lv.size());
      std::vector<int> order(lv.size());
      for (std::size_t i = 0; i < lv.size(); ++i) order[i] = static_cast<int>(i);
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&](int a, int b) {
                          if (lv[a] != lv[b]) return lv[a] > lv[b];
                          return a < b;
                        });
      double mx = lv[order[0]];
      std::vector<double> w(k);
      double z = 0;
      for (std::size_t i = 0; i < k; ++i) {
        w[i] = std::exp(lv[order[i]] - mx);
        z += w[i];
      }
      double u = rng.uniform() * z, acc = 0;
      next = order[k - 1];
      for (std::size_t i = 0; i < k; ++i) {
        acc += w[i];
        if (u < acc) {
          next = order[i];
          break;
        }
      }
    }
    if (next == Vocabulary::kEos) break;
    out_ids.push_back(next);
    ids.push_back(next);
  }
  return vocab_.decode(out_ids);
}

std::vector<Parameter*> GeneratorModel::generative_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all())
    if (!p->name.starts_with("heads.")) out.push_back(p);
  return out;
}

std::vector<Parameter*> GeneratorModel::aux_head_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : store_.all())
    if (p->name.starts_with("heads.")) out.push_back(p);
  return out;
}

std::uint64_t GeneratorModel::checkpoint_digest() const {
  return fnv1a(cfg_.to_json() + "#" + std::to_string(vocab_.digest()));
}

void GeneratorModel::save(const std::string& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/config.json");
    if (!os) throw std::runtime_error("cannot write model config in " + dir);
    os << cfg_.to_json() << "\n";
  }
  vocab_.save(dir + "/vocab.txt");
  save_checkpoint(dir + "/model.ckpt", store_, checkpoint_digest());
}

GeneratorModel GeneratorModel::load(const std::string& dir) {
  std::ifstream is(dir + "/config.json");
  if (!is) throw std::runtime_error("cannot read model config in " + dir);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  ModelConfig cfg = ModelConfig::from_json(text);
  Vocabulary vocab = Vocabulary::load(dir + "/vocab.txt");
  GeneratorModel model(cfg, std::move(vocab), 0);
  load_checkpoint(dir + "/model.ckpt", model.store_, model.checkpoint_digest());
  return model;
}

}  // namespace ef
