#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "corpus.hpp"
#include "model.hpp"

namespace ef {

struct EmpathyLabels {
  int emotional_presence = 0;  // 0/1/2
  int interpretation = 0;      // 0/1/2
  int exploration = 0;         // 0/1/2
  double sentiment = 0.0;      // [-1, 1]
};

struct SentimentLexicon {
  std::unordered_map<std::string, double> valence;
  std::unordered_set<std::string> negations;
  std::unordered_map<std::string, double> intensifiers;
};

// Versioned marker-phrase tables backing the deterministic rule labeler.
struct RuleTables {
  std::vector<std::string> negations;
  std::unordered_map<std::string, double> intensifiers;
  std::unordered_set<std::string> emotion_words;
  std::vector<std::vector<std::string>> addressee_patterns;
  std::vector<std::vector<std::string>> self_experience_markers;
  std::vector<std::vector<std::string>> understanding_markers;
  std::unordered_set<std::string> stopwords;

  static RuleTables load(const std::string& path);
  std::uint64_t digest() const { return digest_; }

 private:
  std::uint64_t digest_ = 0;
};

// token<TAB>valence lines; negations and intensifiers come from the tables.
SentimentLexicon load_sentiment_lexicon(const std::string& valence_path,
                                        const RuleTables& tables);
std::uint64_t lexicon_digest(const std::string& valence_path);

// Sum of token valences (negation within the previous 3 tokens flips the
// sign, an intensifier scales the next hit), squashed by t/sqrt(t^2+15).
double sentiment_score(const std::vector<std::string>& tokens,
                       const SentimentLexicon& lexicon);

// Deterministic three-attribute labeling of a response against its context.
EmpathyLabels rule_label(const std::vector<std::string>& response_tokens,
                         const std::vector<std::string>& context_tokens,
                         const SentimentLexicon& lexicon,
                         const RuleTables& tables);

// rule_label for the discrete part plus the sentiment score.
EmpathyLabels label_response(const std::vector<std::string>& response_tokens,
                             const std::vector<std::string>& context_tokens,
                             const SentimentLexicon& lexicon,
                             const RuleTables& tables);

std::vector<EmpathyLabels> synthesize_corpus_labels(
    const std::vector<ContextResponsePair>& pairs,
    const SentimentLexicon& lexicon, const RuleTables& tables);

// Encoder + linear head classifying one empathy attribute from the
// start-token state of the concatenated context and response.
struct LabelerTriplet {
  std::vector<std::string> context;
  std::vector<std::string> response;
  int label = 0;  // 0/1/2
};

struct LabelerReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::size_t train_size = 0;
  std::size_t valid_size = 0;
  std::vector<double> loss_curve;
};

class LabelerModel {
 public:
  LabelerModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed);
  int predict(const std::vector<std::string>& context,
              const std::vector<std::string>& response) const;
  ParameterStore& params() { return store_; }
  const ModelConfig& config() const { return cfg_; }

  Tensor class_logits(Tape& t, const std::vector<std::string>& context,
                      const std::vector<std::string>& response) const;

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParameterStore store_;
  Parameter* word_emb_;
  Parameter* head_w_;
  Parameter* head_b_;
  std::optional<TransformerStack> encoder_;
};

struct LabelerTrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 41;
};

// Trains on 80% of the triplets, reports accuracy and weighted-F1 on the
// held-out 20%. A class absent from the training portion is an error.
LabelerReport train_stand_in_labeler(const std::vector<LabelerTriplet>& triplets,
                                     LabelerModel& model,
                                     const LabelerTrainConfig& cfg);

}  // namespace ef
