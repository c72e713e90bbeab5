#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adam.hpp"
#include "corpus.hpp"
#include "model.hpp"
#include "transformer.hpp"

namespace ef {

// Dot product of two encoded vectors; the one similarity the retriever uses.
double dpr_similarity(const std::vector<double>& c, const std::vector<double>& r);

// Two disjoint encoder stacks with mean-pooled sentence vectors. The pooled
// vector is scaled by 1/sqrt(n_emb) so random-init similarities start near
// zero rather than growing with the width.
class BiEncoder {
 public:
  BiEncoder(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return store_; }

  Tensor encode_query(Tape& t, const std::vector<Utterance>& context) const;
  Tensor encode_candidate(Tape& t,
                          const std::vector<std::string>& tokens) const;
  std::vector<double> encode_candidate_values(
      const std::vector<std::string>& tokens) const;
  std::vector<double> encode_query_values(
      const std::vector<Utterance>& context) const;

  std::uint64_t checkpoint_digest() const;
  void save(const std::string& dir) const;
  static BiEncoder load(const std::string& dir);

 private:
  Tensor pool(Tape& t, Tensor encoded) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  ParameterStore store_;
  Parameter* q_word_;
  Parameter* q_speaker_;
  Parameter* c_word_;
  std::optional<TransformerStack> q_stack_;
  std::optional<TransformerStack> c_stack_;
};

// Softmax NLL of the positive among [positive, negatives], all similarities
// as dot products in-graph.
Tensor dpr_loss(Tape& t, Tensor query_vec, Tensor positive_vec,
                const std::vector<Tensor>& negative_vecs);

struct DprSchedule {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  std::size_t patience = 5;
  std::uint64_t seed = 29;
};

struct DprHistory {
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> valid_loss;  // empty when no validation set
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

// Adam over the mean sample loss; early stopping on validation loss when a
// validation set is supplied. NaN losses abort with diagnostics.
DprHistory train_retriever(const std::vector<DprSample>& samples,
                           BiEncoder& encoder, const DprSchedule& schedule,
                           const std::vector<DprSample>* validation = nullptr);

struct PoolEntry {
  std::vector<std::string> tokens;
  std::string dialogue_id;
  std::vector<double> vec;
};

struct CandidatePool {
  EmotionLabel emotion;
  std::vector<PoolEntry> entries;
};

struct PoolBuildResult {
  std::vector<CandidatePool> pools;
  std::vector<std::string> warnings;  // emotions with no responses
};

// Encodes every agent response of the training dialogues once, filed under
// the dialogue's emotion. Emotions without responses are omitted.
PoolBuildResult build_pools(const std::vector<Dialogue>& train_dialogues,
                            const BiEncoder& encoder,
                            const EmotionSet& emotions);

void save_pools(const std::string& path,
                const std::vector<CandidatePool>& pools,
                const BiEncoder& encoder);
std::vector<CandidatePool> load_pools(const std::string& path,
                                      const BiEncoder& encoder,
                                      const EmotionSet& emotions);

struct RetrievedExemplar {
  std::vector<std::string> tokens;
  double score;
  std::string dialogue_id;
};

struct RetrievalResult {
  std::vector<RetrievedExemplar> exemplars;  // scores non-increasing
  bool shortfall = false;  // fewer than q available after exclusion
};

// Exact top-q by dot product over the pool matching the pair's emotion,
// never returning anything from the pair's own dialogue.
RetrievalResult retrieve_exemplars(const ContextResponsePair& pair,
                                   const BiEncoder& encoder,
                                   const std::vector<CandidatePool>& pools,
                                   std::size_t q);

}  // namespace ef
