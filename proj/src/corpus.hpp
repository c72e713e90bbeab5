#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rng.hpp"

namespace ef {

enum class Speaker { kUser, kAgent };

const char* speaker_name(Speaker s);
Speaker speaker_from(const std::string& name);  // "USER" / "AGENT"

// Lowercasing word tokenizer: splits on whitespace, isolates punctuation,
// detaches clitics ('s 'm 're 've 'll 'd n't). Idempotent on its output.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

struct EmotionLabel {
  int id = -1;
  std::string name;
  bool operator==(const EmotionLabel&) const = default;
};

// The corpus manifest names exactly 32 emotions; ids are list positions.
class EmotionSet {
 public:
  static EmotionSet from_names(std::vector<std::string> names);
  static EmotionSet load_manifest(const std::string& path);
  void save_manifest(const std::string& path) const;
  static const std::vector<std::string>& default_names();

  const EmotionLabel& by_name(const std::string& name) const;
  const EmotionLabel& by_id(int id) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return labels_.size(); }

 private:
  std::vector<EmotionLabel> labels_;
  std::unordered_map<std::string, int> index_;
};

struct Utterance {
  std::vector<std::string> tokens;
  Speaker speaker = Speaker::kUser;
  std::size_t index = 0;  // 1-based turn position
};

struct Dialogue {
  std::string dialogue_id;
  EmotionLabel emotion;
  std::vector<Utterance> utterances;
};

struct ContextResponsePair {
  std::vector<Utterance> context;  // turns 1..n, n odd, last speaker USER
  Utterance response;              // gold AGENT turn n+1
  EmotionLabel emotion;
  std::string source_dialogue_id;
  std::string pair_id;  // "<dialogue_id>#<n>"

  std::vector<std::string> context_tokens() const;  // u_1 + ... + u_n
};

struct DprNegative {
  std::vector<std::string> tokens;
  EmotionLabel emotion;
  std::string source_dialogue_id;
  std::string source_pair_id;
};

struct DprSample {
  ContextResponsePair pair;  // pair.response is the positive
  std::vector<DprNegative> negatives;
};

struct SplitSpec {
  std::vector<std::string> train, valid, test;

  bool in_train(const std::string& id) const;
  bool in_valid(const std::string& id) const;
  bool in_test(const std::string& id) const;
};

// One JSON object per line: {dialogue_id, emotion, utterances:[{speaker,text}]}.
// Malformed lines and invariant violations raise with the line number or
// dialogue id.
std::vector<Dialogue> load_dialogues(const std::string& path,
                                     const EmotionSet& emotions);
void save_dialogues(const std::string& path,
                    const std::vector<Dialogue>& dialogues);

// One pair per AGENT turn: context = turns 1..n, response = turn n+1.
std::vector<ContextResponsePair> make_training_pairs(const Dialogue& d);
std::vector<ContextResponsePair> make_training_pairs(
    const std::vector<Dialogue>& dialogues);

// Negatives are drawn uniformly without replacement from agent responses of
// other dialogues with a different emotion.
std::vector<DprSample> build_dpr_samples(
    const std::vector<ContextResponsePair>& pairs, std::size_t n_neg,
    std::uint64_t seed);

// Seeded shuffle then an 8:1:1 partition by dialogue id.
SplitSpec split_corpus(const std::vector<Dialogue>& dialogues,
                       std::uint64_t seed);

struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;

  bool has(const std::string& token) const { return vectors.count(token) != 0; }
};

// Plain text, one token followed by `expected_dim` floats per line.
EmbeddingTable load_embedding_file(const std::string& path,
                                   std::size_t expected_dim);
// Tokens from `vocab_tokens` that have no vector in the table.
std::vector<std::string> embedding_coverage_gaps(
    const EmbeddingTable& table, const std::vector<std::string>& vocab_tokens);

// Token ids; 0..3 are reserved for <pad>, <unk>, <start>, <eos>.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kStart = 2;
  static constexpr int kEos = 3;

  Vocabulary();
  // First-occurrence order over the dialogues. When an embedding table is
  // given, tokens missing from it are left out and fall back to <unk>.
  static Vocabulary build(const std::vector<Dialogue>& dialogues,
                          const EmbeddingTable* table = nullptr);

  int add(const std::string& token);
  int id(const std::string& token) const;  // <unk> when absent
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::uint64_t digest() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ef
