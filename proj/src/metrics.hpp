#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ef {

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU-4 with clipped counts, brevity penalty, and 1e-9
// smoothing on zero match counts. Orders with no candidate n-grams anywhere
// drop out of the geometric mean, so identical corpora score 100 even when
// every sentence is short. Scaled to [0, 100].
double corpus_bleu(const std::vector<TokenSeq>& candidates,
                   const std::vector<TokenSeq>& references);

// e to the mean token negative log-likelihood.
double perplexity(double mean_token_nll);

// Unique n-grams over the pooled responses divided by total token count,
// as a percentage. Bigrams never cross sentence boundaries. The flag
// switches the denominator to the total n-gram count instead.
double distinct_n(const std::vector<TokenSeq>& responses, std::size_t n,
                  bool ngram_denominator = false);

// Unweighted mean of per-class F1 over `classes`; absent classes score 0.
double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                const std::vector<int>& classes);

// (accuracy %, support-weighted F1 %).
std::pair<double, double> weighted_f1_and_accuracy(
    const std::vector<int>& gold, const std::vector<int>& pred,
    const std::vector<int>& classes);

double mae_score(const std::vector<double>& gold,
                 const std::vector<double>& pred);

struct MetricsReport {
  std::optional<double> bleu;
  std::optional<double> ppl;
  std::optional<double> distinct1;
  std::optional<double> distinct2;
  std::optional<double> f1_ep;
  std::optional<double> f1_int;
  std::optional<double> f1_exp;
  std::optional<double> sent_mae;
  std::optional<double> labeler_acc;
  std::optional<double> labeler_wf1;

  // JSON with 2-decimal rendering (3 for the sentiment MAE).
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

// Two-decimal rounding used everywhere a report is rendered.
double round2(double v);
double round3(double v);

}  // namespace ef
