#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "model.hpp"
#include "retriever.hpp"
#include "signals.hpp"
#include "toy_corpus.hpp"

namespace ef {

struct TrainingObjective {
  double alpha_gen = 1.0;
  double alpha_ep = 0.1;
  double alpha_int = 0.1;
  double alpha_exp = 0.1;
  double alpha_sent = 0.1;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  double learning_rate = 1e-5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 17;

  void validate() const;
};

struct LossRecord {
  double gen = 0, ep = 0, intr = 0, exp = 0, sent = 0, total = 0;

  double weighted_sum(const TrainingObjective& o) const {
    return o.alpha_gen * gen + o.alpha_ep * ep + o.alpha_int * intr +
           o.alpha_exp * exp + o.alpha_sent * sent;
  }
};

struct EpochRecord {
  LossRecord train;
  LossRecord valid;
};

struct TrainHistory {
  std::vector<LossRecord> steps;   // one per optimizer step
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 = none
  bool early_stopped = false;

  std::string to_json() const;
  static TrainHistory from_json(const std::string& text);
};

// Synthetic label store: JSONL of {pair_id, ep, int, exp, sentiment} plus a
// sidecar carrying the labeler fingerprint.
struct LabelFile {
  std::map<std::string, EmpathyLabels> labels;
  std::string labeler_kind = "rule";
  std::uint64_t labeler_digest = 0;

  void save(const std::string& path) const;  // writes path and path.meta.json
  static LabelFile load(const std::string& path);
  std::map<int, std::size_t> distribution(char attribute) const;  // 'e','i','x'
};

std::uint64_t rule_labeler_digest(const std::string& lexicon_path,
                                  const RuleTables& tables);

// Frozen-retriever exemplar lookup for a batch of pairs.
std::vector<std::vector<std::vector<std::string>>> retrieve_for_pairs(
    const std::vector<ContextResponsePair>& pairs, const BiEncoder& retriever,
    const std::vector<CandidatePool>& pools, std::size_t q);

// Combined objective: alpha_gen L_gen + alpha_* (three cross-entropies
// against the synthetic labels) + alpha_sent MSE against the sentiment
// score. Early stopping on validation total loss; the model keeps the
// best-validation weights when training ends.
TrainHistory train_generator(GeneratorModel& model,
                             const std::vector<ContextResponsePair>& train_pairs,
                             const std::vector<ContextResponsePair>& valid_pairs,
                             const BiEncoder* retriever,
                             const std::vector<CandidatePool>* pools,
                             std::size_t q, const LabelFile& labels,
                             const TrainingObjective& objective);

using GenerationMap = std::map<std::string, std::vector<std::string>>;

void save_generations(const std::string& path, const GenerationMap& gens);
GenerationMap load_generations(const std::string& path);

struct AutoEvalResult {
  MetricsReport report;
  GenerationMap generations;
};

// Greedy generations scored with BLEU and Distinct-n against the gold
// responses; perplexity from the teacher-forced pooled token NLL.
AutoEvalResult evaluate_automatic(const GeneratorModel& model,
                                  const std::vector<ContextResponsePair>& pairs,
                                  const BiEncoder* retriever,
                                  const std::vector<CandidatePool>* pools,
                                  std::size_t q,
                                  const GenerationMap* generations = nullptr);

struct SynthEvalResult {
  double f1_ep = 0, f1_int = 0, f1_exp = 0, sent_mae = 0;
  std::size_t evaluated = 0;
};

SynthEvalResult evaluate_synthetic(const GenerationMap& generations,
                                   const std::vector<ContextResponsePair>& pairs,
                                   const LabelFile& gold,
                                   const SentimentLexicon& lexicon,
                                   const RuleTables& tables,
                                   std::uint64_t live_labeler_digest);

struct RatingRecord {
  std::string sample_id;
  std::string annotator_id;
  int empathy = 1, relevance = 1, fluency = 1;  // 1..5
  int ep = 0, intr = 0, exp = 0;                // 0..2
};

std::vector<RatingRecord> load_ratings_csv(const std::string& path);

struct RatingSummary {
  double empathy = 0, relevance = 0, fluency = 0, ep = 0, intr = 0, exp = 0;
  std::size_t samples = 0;
  std::size_t annotators = 0;
  std::size_t records = 0;

  std::string to_json() const;
};

RatingSummary aggregate_ratings(const std::vector<RatingRecord>& records);

enum class AbChoice { kA, kB, kTie };

struct AbVote {
  std::string sample_id;
  std::vector<AbChoice> votes;       // exactly 3
  std::optional<AbChoice> tiebreak;  // present iff the 3 are pairwise distinct
};

std::vector<AbVote> load_ab_votes_csv(const std::string& path);

struct AbResult {
  double win = 0, loss = 0, tie = 0;  // percentages over samples

  std::string to_json() const;
};

AbResult ab_aggregate(const std::vector<AbVote>& votes);

// Rendering helpers mirroring the report tables.
std::string render_auto_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string render_synth_table(
    const std::vector<std::pair<std::string, SynthEvalResult>>& rows);
std::string render_ab_table(const std::string& a, const std::string& b,
                            const AbResult& r);

// Experiment configuration: one JSON file, environment overrides EF_CONFIG
// (path) and EF_SEED (seed).
struct ExperimentConfig {
  std::uint64_t seed = 17;
  std::string preset = "desk";  // "desk" or "full"
  // nonzero values override the preset dimensions
  std::size_t n_emb = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t ffn_width = 0;
  bool use_exemplars = true;
  std::size_t q = 10;
  std::size_t n_neg = 7;
  std::size_t max_len = 40;
  TrainingObjective objective;
  DprSchedule dpr;
  ToyCorpusParams toy;
  std::string lexicon_path;
  std::string rules_path;
  std::string embedding_file;  // optional word-vector init
  std::string gen_mode = "greedy";  // or "top_k"

  ModelConfig model_config(std::size_t vocab) const;
  GenMode generation_mode() const;

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  // cli_path > EF_CONFIG > defaults; EF_SEED overrides the seed either way.
  static ExperimentConfig resolve(const std::string& cli_path);
};

// One function per CLI subcommand; each returns a JSON summary.
namespace commands {

std::string gen_toy_corpus(const ExperimentConfig& cfg,
                           const std::string& out_dir);
std::string train_dpr(const ExperimentConfig& cfg,
                      const std::string& corpus_dir,
                      const std::string& out_dir);
std::string build_pools_cmd(const ExperimentConfig& cfg,
                            const std::string& corpus_dir,
                            const std::string& retriever_dir,
                            const std::string& out_path);
std::string retrieve(const ExperimentConfig& cfg,
                     const std::string& retriever_dir,
                     const std::string& pools_path,
                     const std::string& context_file, std::size_t q);
std::string label_synth(const ExperimentConfig& cfg,
                        const std::string& corpus_dir,
                        const std::string& out_path);
std::string train_gen(const ExperimentConfig& cfg,
                      const std::string& corpus_dir,
                      const std::string& retriever_dir,
                      const std::string& pools_path,
                      const std::string& labels_path,
                      const std::string& out_dir);
std::string generate(const ExperimentConfig& cfg, const std::string& model_dir,
                     const std::string& corpus_dir,
                     const std::string& retriever_dir,
                     const std::string& pools_path, const std::string& split,
                     const std::string& out_path);
std::string eval_auto(const ExperimentConfig& cfg, const std::string& model_dir,
                      const std::string& corpus_dir,
                      const std::string& retriever_dir,
                      const std::string& pools_path,
                      const std::string& generations_path,
                      const std::string& out_path);
std::string eval_synth(const ExperimentConfig& cfg,
                       const std::string& corpus_dir,
                       const std::string& generations_path,
                       const std::string& labels_path,
                       const std::string& out_path);
std::string ratings_aggregate(const std::string& csv_path,
                              const std::string& out_path);
std::string ab_aggregate_cmd(const std::string& csv_path,
                             const std::string& out_path);
std::string ablate(const ExperimentConfig& cfg, const std::string& corpus_dir,
                   const std::string& retriever_dir,
                   const std::string& pools_path,
                   const std::string& labels_path,
                   const std::string& out_dir);

}  // namespace commands

}  // namespace ef
