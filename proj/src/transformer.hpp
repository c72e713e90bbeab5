#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "tensor.hpp"

namespace ef {

struct ModelConfig {
  std::size_t n_emb = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_width = 256;
  std::size_t vocab_size = 4;
  std::size_t max_len = 40;
  std::size_t rel_pos_buckets = 32;
  std::size_t rel_pos_max_distance = 128;
  std::size_t max_positions = 512;
  bool use_exemplars = true;
  std::size_t exemplar_count = 10;  // q
  NormKind norm_kind = NormKind::kScaleOnly;
  double dropout = 0.0;  // off by default; runs stay deterministic

  // 2 layers, width 64: the configuration the test suites exercise.
  static ModelConfig desk(std::size_t vocab);
  // 6 layers, width 512: the full-size shape; built but not exercised by the
  // desk-scale test suites.
  static ModelConfig full_size(std::size_t vocab);

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  std::uint64_t digest() const;
  bool operator==(const ModelConfig&) const = default;
};

// T5-style bucketing of the key/query offset: exact buckets near zero, then
// logarithmic up to max_distance. Bidirectional stacks split buckets between
// negative and positive offsets; causal stacks only look back.
int relative_position_bucket(std::size_t query_pos, std::size_t key_pos,
                             bool bidirectional, std::size_t n_buckets,
                             std::size_t max_distance);

// Pre-norm transformer stack with one relative-position bias table shared by
// all of its layers. Decoder stacks add causal masking and cross-attention.
class TransformerStack {
 public:
  enum class Kind { kEncoder, kDecoder };

  TransformerStack(ParameterStore& store, const std::string& prefix,
                   const ModelConfig& cfg, Kind kind);
  void init(Rng& rng);

  // x: (len, n_emb); memory required for decoder stacks.
  Tensor apply(Tape& t, Tensor x, std::optional<Tensor> memory = {},
               Rng* dropout_rng = nullptr) const;

  const std::string& prefix() const { return prefix_; }

 private:
  struct Layer {
    Parameter *wq, *wk, *wv, *wo, *attn_gamma, *attn_beta;
    Parameter *cq, *ck, *cv, *co, *cross_gamma, *cross_beta;  // decoder only
    Parameter *w1, *w2, *ffn_gamma, *ffn_beta;
  };

  Tensor norm(Tape& t, Tensor x, Parameter* gamma, Parameter* beta) const;
  Tensor attention(Tape& t, Tensor q_in, Tensor kv_in, Parameter* wq,
                   Parameter* wk, Parameter* wv, Parameter* wo,
                   const std::vector<Tensor>* bias, bool causal) const;
  Tensor dropout(Tape& t, Tensor x, Rng* rng) const;

  ModelConfig cfg_;
  Kind kind_;
  std::string prefix_;
  std::vector<Layer> layers_;
  Parameter* rel_bias_;  // (rel_pos_buckets, n_heads)
  Parameter* final_gamma_;
  Parameter* final_beta_;
};

}  // namespace ef
