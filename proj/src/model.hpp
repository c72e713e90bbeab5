#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "transformer.hpp"

namespace ef {

enum class GenMode { kGreedy, kTopK };

struct ContextEmbedding {
  Tensor matrix;  // (k, n_emb), word + speaker rows
  std::vector<int> speaker_ids;
  std::vector<int> token_ids;
};

struct ExemplarEncoding {
  std::vector<Tensor> pooled;  // one vector per exemplar
  Tensor aggregate;            // elementwise mean of pooled
};

struct DecoderOutput {
  Tensor probs;   // (t, |V|), rows sum to 1
  Tensor hidden;  // (t, n_emb), decoder final states
  Tensor loss;    // mean token NLL of the gold response
  std::vector<int> target_ids;
};

struct AuxPrediction {
  Tensor p_ep, p_int, p_exp;  // (1,3) softmax outputs
  Tensor sentiment;           // (1,1) tanh output
};

struct AuxLogits {
  Tensor ep, intr, exp;  // (1,3) raw logits for the cross-entropy losses
  Tensor sentiment;      // (1,1) tanh output
};

// Context encoder with word+speaker embeddings, optional exemplar encoder
// and fusion layer, autoregressive decoder, and the four auxiliary heads.
class GeneratorModel {
 public:
  GeneratorModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed,
                 const EmbeddingTable* pretrained = nullptr);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  ContextEmbedding embed_context(Tape& t,
                                 const ContextResponsePair& pair) const;
  Tensor encode_context(Tape& t, const ContextEmbedding& e) const;
  ExemplarEncoding encode_exemplars(
      Tape& t, const std::vector<std::vector<std::string>>& exemplars) const;
  // Row-wise FC over [z_i ; chi]; identity bypass when exemplars are off.
  Tensor fuse_exemplars(Tape& t, Tensor z, const ExemplarEncoding* x) const;

  // embed -> encode -> (encode exemplars -> fuse); the one entry point the
  // training loop and generation use.
  Tensor build_memory(Tape& t, const ContextResponsePair& pair,
                      const std::vector<std::vector<std::string>>* exemplars,
                      Rng* dropout_rng = nullptr) const;

  DecoderOutput decode_teacher_forced(Tape& t, Tensor memory,
                                      const std::vector<std::string>& gold,
                                      Rng* dropout_rng = nullptr) const;
  AuxPrediction predict_aux(Tape& t, Tensor hidden) const;
  AuxLogits aux_logits(Tape& t, Tensor hidden) const;

  std::vector<std::string> generate(
      const ContextResponsePair& pair,
      const std::vector<std::vector<std::string>>* exemplars, GenMode mode,
      std::uint64_t seed) const;

  // Parameter subsets per objective, so the optimizer only sees weights the
  // current loss actually reaches.
  std::vector<Parameter*> generative_params();
  std::vector<Parameter*> aux_head_params();
  std::vector<Parameter*> all_params() { return store_.all(); }

  std::uint64_t checkpoint_digest() const;
  void save(const std::string& dir) const;
  static GeneratorModel load(const std::string& dir);

 private:
  Tensor decode_hidden(Tape& t, Tensor memory, const std::vector<int>& input_ids,
                       Rng* dropout_rng) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  ParameterStore store_;
  Parameter* word_emb_;
  Parameter* speaker_emb_;
  std::optional<TransformerStack> encoder_;
  std::optional<TransformerStack> exemplar_encoder_;
  Parameter* fc_exl_w_ = nullptr;
  Parameter* fc_exl_b_ = nullptr;
  std::optional<TransformerStack> decoder_;
  Parameter* lm_head_;
  Parameter* fc_ep_w_;
  Parameter* fc_ep_b_;
  Parameter* fc_int_w_;
  Parameter* fc_int_b_;
  Parameter* fc_exp_w_;
  Parameter* fc_exp_b_;
  Parameter* fc_sent_w_;
  Parameter* fc_sent_b_;
};

}  // namespace ef
