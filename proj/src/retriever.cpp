#include "retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ef {

namespace fs = std::filesystem;

double dpr_similarity(const std::vector<double>& c,
                      const std::vector<double>& r) {
  if (c.size() != r.size())
    throw std::invalid_argument("dpr_similarity: width mismatch " +
                                std::to_string(c.size()) + " vs " +
                                std::to_string(r.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * r[i];
  return s;
}

BiEncoder::BiEncoder(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.vocab_size != vocab_.size()) cfg_.vocab_size = vocab_.size();
  cfg_.validate();
  const std::size_t d = cfg_.n_emb;
  q_word_ = &store_.add("query.embeddings.word", {cfg_.vocab_size, d});
  q_speaker_ = &store_.add("query.embeddings.speaker", {2, d});
  q_stack_.emplace(store_, "query.encoder", cfg_,
                   TransformerStack::Kind::kEncoder);
  c_word_ = &store_.add("candidate.embeddings.word", {cfg_.vocab_size, d});
  c_stack_.emplace(store_, "candidate.encoder", cfg_,
                   TransformerStack::Kind::kEncoder);

  Rng rng(Rng::mix(seed, 0xd9c0de));
  init_uniform_fan_in(*q_word_, d, rng);
  init_uniform_fan_in(*q_speaker_, d, rng);
  q_stack_->init(rng);
  init_uniform_fan_in(*c_word_, d, rng);
  c_stack_->init(rng);
}

Tensor BiEncoder::pool(Tape& t, Tensor encoded) const {
  return t.scale(t.mean(encoded, 0),
                 1.0 / std::sqrt(static_cast<double>(cfg_.n_emb)));
}

Tensor BiEncoder::encode_query(Tape& t,
                               const std::vector<Utterance>& context) const {
  if (context.empty())
    throw std::invalid_argument("encode_query: empty context");
  std::vector<int> token_ids, speaker_ids;
  for (const auto& u : context)
    for (const auto& tok : u.tokens) {
      token_ids.push_back(vocab_.id(tok));
      speaker_ids.push_back(u.speaker == Speaker::kUser ? 0 : 1);
    }
  Tensor emb = t.add(t.embedding(t.param(*q_word_), token_ids),
                     t.embedding(t.param(*q_speaker_), speaker_ids));
  return pool(t, q_stack_->apply(t, emb));
}

Tensor BiEncoder::encode_candidate(Tape& t,
                                   const std::vector<std::string>& tokens) const {
  if (tokens.empty())
    throw std::invalid_argument("encode_candidate: empty response");
  Tensor emb = t.embedding(t.param(*c_word_), vocab_.encode(tokens));
  return pool(t, c_stack_->apply(t, emb));
}

std::vector<double> BiEncoder::encode_candidate_values(
    const std::vector<std::string>& tokens) const {
  Tape t;
  return encode_candidate(t, tokens).value();
}

std::vector<double> BiEncoder::encode_query_values(
    const std::vector<Utterance>& context) const {
  Tape t;
  return encode_query(t, context).value();
}

std::uint64_t BiEncoder::checkpoint_digest() const {
  return fnv1a(cfg_.to_json() + "#dpr#" + std::to_string(vocab_.digest()));
}

void BiEncoder::save(const std::string& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/config.json");
    if (!os) throw std::runtime_error("cannot write retriever config in " + dir);
    os << cfg_.to_json() << "\n";
  }
  vocab_.save(dir + "/vocab.txt");
  save_checkpoint(dir + "/retriever.ckpt", store_, checkpoint_digest());
}

BiEncoder BiEncoder::load(const std::string& dir) {
  std::ifstream is(dir + "/config.json");
  if (!is) throw std::runtime_error("cannot read retriever config in " + dir);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  BiEncoder enc(ModelConfig::from_json(text), Vocabulary::load(dir + "/vocab.txt"), 0);
  load_checkpoint(dir + "/retriever.ckpt", enc.store_, enc.checkpoint_digest());
  return enc;
}

Tensor dpr_loss(Tape& t, Tensor query_vec, Tensor positive_vec,
                const std::vector<Tensor>& negative_vecs) {
  if (negative_vecs.empty())
    throw std::invalid_argument("dpr_loss: need at least one negative");
  const std::size_t d = query_vec.size();
  if (positive_vec.size() != d)
    throw std::invalid_argument("dpr_loss: width mismatch");
  Tensor q = t.reshape(query_vec, {1, d});
  std::vector<Tensor> sims;
  sims.push_back(t.matmul(q, t.reshape(positive_vec, {d, 1})));
  for (Tensor n : negative_vecs) {
    if (n.size() != d) throw std::invalid_argument("dpr_loss: width mismatch");
    sims.push_back(t.matmul(q, t.reshape(n, {d, 1})));
  }
  Tensor logits = t.concat(sims, 1);  // (1, 1 + n_neg)
  return t.cross_entropy(logits, {0});
}

namespace {

double sample_loss(Tape& t, const BiEncoder& enc, const DprSample& s,
                   Tensor* out_loss) {
  Tensor q = enc.encode_query(t, s.pair.context);
  Tensor pos = enc.encode_candidate(t, s.pair.response.tokens);
  std::vector<Tensor> negs;
  negs.reserve(s.negatives.size());
  for (const auto& n : s.negatives)
    negs.push_back(enc.encode_candidate(t, n.tokens));
  Tensor loss = dpr_loss(t, q, pos, negs);
  if (out_loss) *out_loss = loss;
  return loss.scalar();
}

double mean_loss(const BiEncoder& enc, const std::vector<DprSample>& samples) {
  double acc = 0.0;
  for (const auto& s : samples) {
    Tape t;
    acc += sample_loss(t, enc, s, nullptr);
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace

DprHistory train_retriever(const std::vector<DprSample>& samples,
                           BiEncoder& encoder, const DprSchedule& schedule,
                           const std::vector<DprSample>* validation) {
  if (samples.empty())
    throw std::invalid_argument("train_retriever: no samples");
  Adam opt({.learning_rate = schedule.learning_rate});
  auto params = encoder.params().all();
  Rng order_rng(Rng::mix(schedule.seed, 0x0d9));
  DprHistory hist;
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    order_rng.shuffle(idx);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < idx.size()) {
      const std::size_t batch =
          std::min(schedule.batch_size, idx.size() - done);
      try {
        for (std::size_t b = 0; b < batch; ++b) {
          Tape t;
          Tensor loss;
          epoch_loss += sample_loss(t, encoder, samples[idx[done + b]], &loss);
          t.backward(loss, 1.0 / static_cast<double>(batch));
        }
        opt.step(params);
      } catch (const NumericError& e) {
        throw NumericError("train_retriever: diverged at epoch " +
                           std::to_string(epoch + 1) + ": " + e.what());
      }
      done += batch;
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(idx.size()));
    hist.epochs_run = epoch + 1;
    if (validation != nullptr && !validation->empty()) {
      const double v = mean_loss(encoder, *validation);
      hist.valid_loss.push_back(v);
      if (v < best_valid) {
        best_valid = v;
        since_best = 0;
      } else if (++since_best >= schedule.patience) {
        hist.early_stopped = true;
        break;
      }
    }
  }
  return hist;
}

PoolBuildResult build_pools(const std::vector<Dialogue>& train_dialogues,
                            const BiEncoder& encoder,
                            const EmotionSet& emotions) {
  PoolBuildResult out;
  std::vector<CandidatePool> by_id(emotions.size());
  for (std::size_t e = 0; e < emotions.size(); ++e)
    by_id[e].emotion = emotions.by_id(static_cast<int>(e));
  for (const auto& d : train_dialogues) {
    for (const auto& u : d.utterances) {
      if (u.speaker != Speaker::kAgent) continue;
      PoolEntry entry;
      entry.tokens = u.tokens;
      entry.dialogue_id = d.dialogue_id;
      entry.vec = encoder.encode_candidate_values(u.tokens);
      by_id[static_cast<std::size_t>(d.emotion.id)].entries.push_back(
          std::move(entry));
    }
  }
  for (auto& pool : by_id) {
    if (pool.entries.empty()) {
      out.warnings.push_back("no responses for emotion '" + pool.emotion.name +
                             "'; pool omitted");
      continue;
    }
    out.pools.push_back(std::move(pool));
  }
  return out;
}

namespace {

constexpr char kPoolMagic[4] = {'E', 'F', 'P', 'L'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

double get_f64(std::istream& is) {
  std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  std::string s(get_u64(is), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

}  // namespace

void save_pools(const std::string& path,
                const std::vector<CandidatePool>& pools,
                const BiEncoder& encoder) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write pools: " + path);
  os.write(kPoolMagic, 4);
  put_u64(os, 1);  // version
  put_u64(os, encoder.vocab().digest());
  put_u64(os, pools.size());
  for (const auto& pool : pools) {
    put_u64(os, static_cast<std::uint64_t>(pool.emotion.id));
    put_u64(os, pool.entries.size());
    put_u64(os, encoder.config().n_emb);
    for (const auto& e : pool.entries) {
      put_str(os, e.dialogue_id);
      put_u64(os, e.tokens.size());
      for (const auto& tok : e.tokens)
        put_u64(os, static_cast<std::uint64_t>(encoder.vocab().id(tok)));
      for (double v : e.vec) put_f64(os, v);
    }
  }
  if (!os) throw std::runtime_error("pool write failed: " + path);
}

std::vector<CandidatePool> load_pools(const std::string& path,
                                      const BiEncoder& encoder,
                                      const EmotionSet& emotions) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read pools: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kPoolMagic, 4) != 0)
    throw std::runtime_error("bad pool file magic in " + path);
  if (get_u64(is) != 1)
    throw std::runtime_error("unsupported pool file version in " + path);
  if (get_u64(is) != encoder.vocab().digest())
    throw std::runtime_error("pool file vocabulary mismatch in " + path);
  std::vector<CandidatePool> pools(get_u64(is));
  for (auto& pool : pools) {
    pool.emotion = emotions.by_id(static_cast<int>(get_u64(is)));
    pool.entries.resize(get_u64(is));
    const std::uint64_t width = get_u64(is);
    for (auto& e : pool.entries) {
      e.dialogue_id = get_str(is);
      e.tokens.resize(get_u64(is));
      for (auto& tok : e.tokens)
        tok = encoder.vocab().token(static_cast<int>(get_u64(is)));
      e.vec.resize(width);
      for (auto& v : e.vec) v = get_f64(is);
    }
  }
  if (!is) throw std::runtime_error("truncated pool file: " + path);
  return pools;
}

RetrievalResult retrieve_exemplars(const ContextResponsePair& pair,
                                   const BiEncoder& encoder,
                                   const std::vector<CandidatePool>& pools,
                                   std::size_t q) {
  const CandidatePool* pool = nullptr;
  for (const auto& p : pools)
    if (p.emotion.id == pair.emotion.id) {
      pool = &p;
      break;
    }
  if (pool == nullptr)
    throw std::runtime_error("retrieve_exemplars: no candidate pool for "
                             "emotion '" + pair.emotion.name + "'");
  const std::vector<double> qv = encoder.encode_query_values(pair.context);

  struct Scored {
    double score;
    const PoolEntry* entry;
  };
  std::vector<Scored> scored;
  scored.reserve(pool->entries.size());
  for (const auto& e : pool->entries) {
    if (e.dialogue_id == pair.source_dialogue_id) continue;
    scored.push_back({dpr_similarity(qv, e.vec), &e});
  }
  // total order keeps the result invariant to pool permutation
  auto before = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.entry->dialogue_id != b.entry->dialogue_id)
      return a.entry->dialogue_id < b.entry->dialogue_id;
    return a.entry->tokens < b.entry->tokens;
  };
  RetrievalResult out;
  out.shortfall = scored.size() < q;
  const std::size_t take = std::min(q, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    before);
  for (std::size_t i = 0; i < take; ++i)
    out.exemplars.push_back({scored[i].entry->tokens, scored[i].score,
                             scored[i].entry->dialogue_id});
  return out;
}

}  // namespace ef
