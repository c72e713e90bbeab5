#include "signals.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adam.hpp"
#include "metrics.hpp"

namespace ef {

using nlohmann::json;

RuleTables RuleTables::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open rule tables: " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  json j = json::parse(text);
  RuleTables t;
  t.digest_ = fnv1a(text);
  for (const auto& n : j.at("negations")) t.negations.push_back(n);
  for (const auto& [k, v] : j.at("intensifiers").items())
    t.intensifiers[k] = v.get<double>();
  for (const auto& w : j.at("emotion_words"))
    t.emotion_words.insert(w.get<std::string>());
  auto phrases = [&](const char* key) {
    std::vector<std::vector<std::string>> out;
    for (const auto& p : j.at(key)) out.push_back(tokenize(p.get<std::string>()));
    return out;
  };
  t.addressee_patterns = phrases("addressee_patterns");
  t.self_experience_markers = phrases("self_experience_markers");
  t.understanding_markers = phrases("understanding_markers");
  for (const auto& w : j.at("stopwords"))
    t.stopwords.insert(w.get<std::string>());
  return t;
}

SentimentLexicon load_sentiment_lexicon(const std::string& valence_path,
                                        const RuleTables& tables) {
  std::ifstream is(valence_path);
  if (!is)
    throw std::runtime_error("cannot open sentiment lexicon: " + valence_path);
  SentimentLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                               ": expected token<TAB>valence");
    const std::string token = line.substr(0, tab);
    try {
      lex.valence[token] = std::stod(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                               ": bad valence");
    }
    if (!std::isfinite(lex.valence[token]))
      throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                               ": non-finite valence");
  }
  lex.negations.insert(tables.negations.begin(), tables.negations.end());
  for (const auto& [k, v] : tables.intensifiers) {
    if (v <= 0) throw std::runtime_error("intensifier multiplier must be > 0");
    lex.intensifiers[k] = v;
  }
  return lex;
}

std::uint64_t lexicon_digest(const std::string& valence_path) {
  std::ifstream is(valence_path);
  if (!is)
    throw std::runtime_error("cannot open sentiment lexicon: " + valence_path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return fnv1a(text);
}

double sentiment_score(const std::vector<std::string>& tokens,
                       const SentimentLexicon& lexicon) {
  double total = 0.0;
  double pending_mult = 1.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto intens = lexicon.intensifiers.find(tokens[i]);
    if (intens != lexicon.intensifiers.end()) {
      pending_mult *= intens->second;
      continue;
    }
    auto val = lexicon.valence.find(tokens[i]);
    if (val == lexicon.valence.end()) continue;
    double eff = val->second * pending_mult;
    pending_mult = 1.0;
    for (std::size_t back = 1; back <= 3 && back <= i; ++back) {
      if (lexicon.negations.count(tokens[i - back])) {
        eff = -eff;
        break;
      }
    }
    total += eff;
  }
  return total / std::sqrt(total * total + 15.0);
}

namespace {

bool contains_subsequence(const std::vector<std::string>& tokens,
                          const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < phrase.size(); ++j)
      if (tokens[i + j] != phrase[j]) {
        ok = false;
        break;
      }
    if (ok) return true;
  }
  return false;
}

bool is_content_token(const std::string& tok, const RuleTables& tables) {
  if (tables.stopwords.count(tok)) return false;
  return std::any_of(tok.begin(), tok.end(),
                     [](unsigned char c) { return std::isalpha(c); });
}

int exploration_label(const std::vector<std::string>& response,
                      const std::vector<std::string>& context,
                      const RuleTables& tables) {
  bool any_question = false;
  bool specific = false;
  std::unordered_set<std::string> context_content;
  for (const auto& t : context)
    if (is_content_token(t, tables)) context_content.insert(t);
  std::vector<std::string> clause;
  for (const auto& tok : response) {
    if (tok == "?") {
      any_question = true;
      for (const auto& t : clause)
        if (is_content_token(t, tables) && context_content.count(t))
          specific = true;
      clause.clear();
    } else if (tok == "." || tok == "!") {
      clause.clear();
    } else {
      clause.push_back(tok);
    }
  }
  if (!any_question) return 0;
  return specific ? 2 : 1;
}

int emotional_presence_label(const std::vector<std::string>& response,
                             const RuleTables& tables) {
  bool has_emotion = false;
  for (const auto& t : response)
    if (tables.emotion_words.count(t)) {
      has_emotion = true;
      break;
    }
  if (!has_emotion) return 0;
  for (const auto& p : tables.addressee_patterns)
    if (contains_subsequence(response, p)) return 2;
  return 1;
}

int interpretation_label(const std::vector<std::string>& response,
                         const RuleTables& tables) {
  for (const auto& p : tables.self_experience_markers)
    if (contains_subsequence(response, p)) return 2;
  for (const auto& p : tables.understanding_markers)
    if (contains_subsequence(response, p)) return 1;
  return 0;
}

}  // namespace

EmpathyLabels rule_label(const std::vector<std::string>& response_tokens,
                         const std::vector<std::string>& context_tokens,
                         const SentimentLexicon& lexicon,
                         const RuleTables& tables) {
  (void)lexicon;
  EmpathyLabels out;
  out.exploration = exploration_label(response_tokens, context_tokens, tables);
  out.emotional_presence = emotional_presence_label(response_tokens, tables);
  out.interpretation = interpretation_label(response_tokens, tables);
  return out;
}

EmpathyLabels label_response(const std::vector<std::string>& response_tokens,
                             const std::vector<std::string>& context_tokens,
                             const SentimentLexicon& lexicon,
                             const RuleTables& tables) {
  EmpathyLabels out =
      rule_label(response_tokens, context_tokens, lexicon, tables);
  out.sentiment = sentiment_score(response_tokens, lexicon);
  return out;
}

std::vector<EmpathyLabels> synthesize_corpus_labels(
    const std::vector<ContextResponsePair>& pairs,
    const SentimentLexicon& lexicon, const RuleTables& tables) {
  std::vector<EmpathyLabels> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back(label_response(p.response.tokens, p.context_tokens(),
                                 lexicon, tables));
  return out;
}

LabelerModel::LabelerModel(ModelConfig cfg, Vocabulary vocab,
                           std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.vocab_size != vocab_.size()) cfg_.vocab_size = vocab_.size();
  cfg_.validate();
  word_emb_ = &store_.add("labeler.embeddings.word",
                          {cfg_.vocab_size, cfg_.n_emb});
  encoder_.emplace(store_, "labeler.encoder", cfg_,
                   TransformerStack::Kind::kEncoder);
  head_w_ = &store_.add("labeler.head.w", {cfg_.n_emb, 3});
  head_b_ = &store_.add("labeler.head.b", {3});
  Rng rng(Rng::mix(seed, 0x1abe1));
  init_uniform_fan_in(*word_emb_, cfg_.n_emb, rng);
  encoder_->init(rng);
  init_uniform_fan_in(*head_w_, cfg_.n_emb, rng);
}

Tensor LabelerModel::class_logits(Tape& t,
                                  const std::vector<std::string>& context,
                                  const std::vector<std::string>& response) const {
  std::vector<int> ids = {Vocabulary::kStart};
  for (const auto& tok : context) ids.push_back(vocab_.id(tok));
  for (const auto& tok : response) ids.push_back(vocab_.id(tok));
  Tensor enc = encoder_->apply(t, t.embedding(t.param(*word_emb_), ids));
  return t.add_row(t.matmul(t.row(enc, 0), t.param(*head_w_)),
                   t.param(*head_b_));
}

int LabelerModel::predict(const std::vector<std::string>& context,
                          const std::vector<std::string>& response) const {
  Tape t;
  const auto& lv = class_logits(t, context, response).value();
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (lv[static_cast<std::size_t>(i)] > lv[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

LabelerReport train_stand_in_labeler(const std::vector<LabelerTriplet>& triplets,
                                     LabelerModel& model,
                                     const LabelerTrainConfig& cfg) {
  if (triplets.size() < 50)
    throw std::invalid_argument("train_stand_in_labeler: need at least 50 "
                                "labeled triplets, got " +
                                std::to_string(triplets.size()));
  std::vector<std::size_t> idx(triplets.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng split_rng(Rng::mix(cfg.seed, 0x511));
  split_rng.shuffle(idx);
  const std::size_t n_valid = idx.size() / 5;  // the 20% validation split
  std::vector<std::size_t> valid_idx(idx.begin(), idx.begin() + n_valid);
  std::vector<std::size_t> train_idx(idx.begin() + n_valid, idx.end());

  std::array<bool, 3> seen{};
  for (std::size_t i : train_idx) {
    const int label = triplets[i].label;
    if (label < 0 || label > 2)
      throw std::invalid_argument("labeler: label out of {0,1,2}");
    seen[static_cast<std::size_t>(label)] = true;
  }
  for (int c = 0; c < 3; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      throw std::invalid_argument("labeler: class " + std::to_string(c) +
                                  " missing from training data");

  Adam opt({.learning_rate = cfg.learning_rate});
  auto params = model.params().all();
  Rng order_rng(Rng::mix(cfg.seed, 0x0e1));
  LabelerReport report;
  report.train_size = train_idx.size();
  report.valid_size = valid_idx.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < train_idx.size()) {
      const std::size_t batch =
          std::min(cfg.batch_size, train_idx.size() - done);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& tr = triplets[train_idx[done + b]];
        Tape t;
        Tensor logits = model.class_logits(t, tr.context, tr.response);
        Tensor loss = t.cross_entropy(logits, {tr.label});
        epoch_loss += loss.scalar();
        t.backward(loss, 1.0 / static_cast<double>(batch));
      }
      opt.step(params);
      done += batch;
    }
    report.loss_curve.push_back(epoch_loss /
                                static_cast<double>(train_idx.size()));
  }

  std::vector<int> gold, pred;
  for (std::size_t i : valid_idx) {
    gold.push_back(triplets[i].label);
    pred.push_back(model.predict(triplets[i].context, triplets[i].response));
  }
  if (!gold.empty()) {
    const auto wa = weighted_f1_and_accuracy(gold, pred, {0, 1, 2});
    report.accuracy = wa.first;
    report.weighted_f1 = wa.second;
  }
  return report;
}

}  // namespace ef
