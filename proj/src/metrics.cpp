#include "metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace ef {

using nlohmann::json;

namespace {

constexpr double kBleuEps = 1e-9;
constexpr std::size_t kBleuOrder = 4;

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts ngrams(const TokenSeq& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += tokens[i + j];
    }
    ++out[key];
  }
  return out;
}

}  // namespace

double corpus_bleu(const std::vector<TokenSeq>& candidates,
                   const std::vector<TokenSeq>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: candidate/reference count "
                                "mismatch");
  if (candidates.empty())
    throw std::invalid_argument("corpus_bleu: empty corpus");
  double cand_len = 0, ref_len = 0;
  std::size_t matches[kBleuOrder] = {0, 0, 0, 0};
  std::size_t totals[kBleuOrder] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      const NgramCounts c = ngrams(candidates[i], n);
      const NgramCounts r = ngrams(references[i], n);
      for (const auto& [gram, count] : c) {
        totals[n - 1] += count;
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_precision = 0.0;
  std::size_t used_orders = 0;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    if (totals[n] == 0) continue;  // no n-grams of this order exist at all
    ++used_orders;
    const double m =
        matches[n] > 0 ? static_cast<double>(matches[n]) : kBleuEps;
    log_precision += std::log(m / static_cast<double>(totals[n]));
  }
  if (used_orders == 0) return 0.0;
  log_precision /= static_cast<double>(used_orders);
  double bp = 1.0;
  if (cand_len <= ref_len && cand_len > 0)
    bp = std::exp(1.0 - ref_len / cand_len);
  if (cand_len == 0) bp = 0.0;
  return 100.0 * bp * std::exp(log_precision);
}

double perplexity(double mean_token_nll) {
  if (mean_token_nll < 0)
    throw std::invalid_argument("perplexity: negative mean NLL");
  return std::exp(mean_token_nll);
}

double distinct_n(const std::vector<TokenSeq>& responses, std::size_t n,
                  bool ngram_denominator) {
  if (n != 1 && n != 2)
    throw std::invalid_argument("distinct_n: n must be 1 or 2");
  std::size_t total_tokens = 0;
  std::size_t total_ngrams = 0;
  NgramCounts unique;
  for (const auto& r : responses) {
    total_tokens += r.size();
    for (auto& [gram, count] : ngrams(r, n)) {
      unique[gram] += count;
      total_ngrams += count;
    }
  }
  if (total_tokens == 0)
    throw std::invalid_argument("distinct_n: no tokens in response set");
  const double denom = static_cast<double>(
      ngram_denominator ? total_ngrams : total_tokens);
  if (denom == 0) return 0.0;
  return 100.0 * static_cast<double>(unique.size()) / denom;
}

namespace {

struct PerClass {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const {
    const double denom = static_cast<double>(2 * tp + fp + fn);
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / denom;
  }
  std::size_t support() const { return tp + fn; }
};

std::map<int, PerClass> tally(const std::vector<int>& gold,
                              const std::vector<int>& pred,
                              const std::vector<int>& classes) {
  if (gold.size() != pred.size())
    throw std::invalid_argument("f1: gold/pred length mismatch");
  if (gold.empty()) throw std::invalid_argument("f1: empty label lists");
  std::map<int, PerClass> out;
  for (int c : classes) out[c];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++out[gold[i]].tp;
    } else {
      ++out[gold[i]].fn;
      ++out[pred[i]].fp;
    }
  }
  return out;
}

}  // namespace

double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                const std::vector<int>& classes) {
  if (classes.empty()) throw std::invalid_argument("macro_f1: no classes");
  auto t = tally(gold, pred, classes);
  double sum = 0.0;
  for (int c : classes) sum += t[c].f1();
  return 100.0 * sum / static_cast<double>(classes.size());
}

std::pair<double, double> weighted_f1_and_accuracy(
    const std::vector<int>& gold, const std::vector<int>& pred,
    const std::vector<int>& classes) {
  auto t = tally(gold, pred, classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (gold[i] == pred[i]) ++correct;
  const double acc =
      100.0 * static_cast<double>(correct) / static_cast<double>(gold.size());
  double weighted = 0.0;
  std::size_t total_support = 0;
  for (int c : classes) {
    weighted += t[c].f1() * static_cast<double>(t[c].support());
    total_support += t[c].support();
  }
  if (total_support == 0)
    throw std::invalid_argument("weighted_f1: no gold labels in class set");
  return {acc, 100.0 * weighted / static_cast<double>(total_support)};
}

double mae_score(const std::vector<double>& gold,
                 const std::vector<double>& pred) {
  if (gold.size() != pred.size())
    throw std::invalid_argument("mae: length mismatch");
  if (gold.empty()) throw std::invalid_argument("mae: empty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    acc += std::fabs(gold[i] - pred[i]);
  return acc / static_cast<double>(gold.size());
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }
double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string MetricsReport::to_json() const {
  json j;
  auto put2 = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = round2(*v);
  };
  put2("bleu", bleu);
  put2("ppl", ppl);
  put2("distinct1", distinct1);
  put2("distinct2", distinct2);
  put2("f1_ep", f1_ep);
  put2("f1_int", f1_int);
  put2("f1_exp", f1_exp);
  if (sent_mae) j["sent_mae"] = round3(*sent_mae);
  put2("labeler_acc", labeler_acc);
  put2("labeler_wf1", labeler_wf1);
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport r;
  auto get = [&](const char* key) -> std::optional<double> {
    if (j.contains(key)) return j[key].get<double>();
    return std::nullopt;
  };
  r.bleu = get("bleu");
  r.ppl = get("ppl");
  r.distinct1 = get("distinct1");
  r.distinct2 = get("distinct2");
  r.f1_ep = get("f1_ep");
  r.f1_int = get("f1_int");
  r.f1_exp = get("f1_exp");
  r.sent_mae = get("sent_mae");
  r.labeler_acc = get("labeler_acc");
  r.labeler_wf1 = get("labeler_wf1");
  return r;
}

}  // namespace ef
