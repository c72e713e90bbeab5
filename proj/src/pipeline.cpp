#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "adam.hpp"

namespace ef {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainingObjective::validate() const {
  for (double a : {alpha_gen, alpha_ep, alpha_int, alpha_exp, alpha_sent})
    if (a < 0 || !std::isfinite(a))
      throw std::invalid_argument("objective: alphas must be >= 0");
  if (epochs == 0) throw std::invalid_argument("objective: epochs must be > 0");
  if (batch_size == 0)
    throw std::invalid_argument("objective: batch size must be > 0");
  if (learning_rate <= 0)
    throw std::invalid_argument("objective: learning rate must be > 0");
}

namespace {

json loss_to_json(const LossRecord& r) {
  return json{{"gen", r.gen},   {"ep", r.ep},     {"int", r.intr},
              {"exp", r.exp},   {"sent", r.sent}, {"total", r.total}};
}

LossRecord loss_from_json(const json& j) {
  LossRecord r;
  r.gen = j.at("gen");
  r.ep = j.at("ep");
  r.intr = j.at("int");
  r.exp = j.at("exp");
  r.sent = j.at("sent");
  r.total = j.at("total");
  return r;
}

}  // namespace

std::string TrainHistory::to_json() const {
  json j;
  j["steps"] = json::array();
  for (const auto& s : steps) j["steps"].push_back(loss_to_json(s));
  j["epochs"] = json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back(
        {{"train", loss_to_json(e.train)}, {"valid", loss_to_json(e.valid)}});
  j["best_epoch"] = best_epoch;
  j["early_stopped"] = early_stopped;
  return j.dump(2);
}

TrainHistory TrainHistory::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainHistory h;
  for (const auto& s : j.at("steps")) h.steps.push_back(loss_from_json(s));
  for (const auto& e : j.at("epochs"))
    h.epochs.push_back(
        {loss_from_json(e.at("train")), loss_from_json(e.at("valid"))});
  h.best_epoch = j.at("best_epoch");
  h.early_stopped = j.at("early_stopped");
  return h;
}

void LabelFile::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write label file: " + path);
  for (const auto& [pair_id, l] : labels) {
    json j{{"pair_id", pair_id},
           {"ep", l.emotional_presence},
           {"int", l.interpretation},
           {"exp", l.exploration},
           {"sentiment", l.sentiment}};
    os << j.dump() << "\n";
  }
  json meta{{"labeler", labeler_kind}, {"digest", labeler_digest}};
  std::ofstream ms(path + ".meta.json");
  if (!ms) throw std::runtime_error("cannot write label meta: " + path);
  ms << meta.dump(2) << "\n";
}

LabelFile LabelFile::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open label file: " + path);
  LabelFile out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("label file line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    EmpathyLabels l;
    l.emotional_presence = j.at("ep");
    l.interpretation = j.at("int");
    l.exploration = j.at("exp");
    l.sentiment = j.at("sentiment");
    for (int v : {l.emotional_presence, l.interpretation, l.exploration})
      if (v < 0 || v > 2)
        throw std::runtime_error("label file line " + std::to_string(lineno) +
                                 ": label outside {0,1,2}");
    if (l.sentiment < -1.0 || l.sentiment > 1.0)
      throw std::runtime_error("label file line " + std::to_string(lineno) +
                               ": sentiment outside [-1,1]");
    out.labels[j.at("pair_id").get<std::string>()] = l;
  }
  std::ifstream ms(path + ".meta.json");
  if (ms) {
    json meta = json::parse(ms);
    out.labeler_kind = meta.at("labeler").get<std::string>();
    out.labeler_digest = meta.at("digest").get<std::uint64_t>();
  }
  return out;
}

std::map<int, std::size_t> LabelFile::distribution(char attribute) const {
  std::map<int, std::size_t> out{{0, 0}, {1, 0}, {2, 0}};
  for (const auto& [_, l] : labels) {
    switch (attribute) {
      case 'e': ++out[l.emotional_presence]; break;
      case 'i': ++out[l.interpretation]; break;
      case 'x': ++out[l.exploration]; break;
      default: throw std::invalid_argument("distribution: unknown attribute");
    }
  }
  return out;
}

std::uint64_t rule_labeler_digest(const std::string& lexicon_path,
                                  const RuleTables& tables) {
  return fnv1a("rule#" + std::to_string(lexicon_digest(lexicon_path)) + "#" +
               std::to_string(tables.digest()));
}

std::vector<std::vector<std::vector<std::string>>> retrieve_for_pairs(
    const std::vector<ContextResponsePair>& pairs, const BiEncoder& retriever,
    const std::vector<CandidatePool>& pools, std::size_t q) {
  std::vector<std::vector<std::vector<std::string>>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    RetrievalResult r = retrieve_exemplars(p, retriever, pools, q);
    std::vector<std::vector<std::string>> toks;
    toks.reserve(r.exemplars.size());
    for (auto& e : r.exemplars) toks.push_back(e.tokens);
    out.push_back(std::move(toks));
  }
  return out;
}

namespace {

std::vector<Parameter*> params_for(GeneratorModel& model,
                                   const TrainingObjective& o) {
  std::vector<Parameter*> out;
  for (Parameter* p : model.generative_params()) {
    if (p->name == "decoder.lm_head" && o.alpha_gen == 0) continue;
    out.push_back(p);
  }
  for (Parameter* p : model.aux_head_params()) {
    const bool keep = (p->name.starts_with("heads.fc_ep.") && o.alpha_ep > 0) ||
                      (p->name.starts_with("heads.fc_int.") && o.alpha_int > 0) ||
                      (p->name.starts_with("heads.fc_exp.") && o.alpha_exp > 0) ||
                      (p->name.starts_with("heads.fc_sent.") && o.alpha_sent > 0);
    if (keep) out.push_back(p);
  }
  return out;
}

// Forward (and optionally backward) for one pair under the combined
// objective; returns the unweighted component values.
LossRecord pair_losses(GeneratorModel& model, const ContextResponsePair& pair,
                       const std::vector<std::vector<std::string>>* exemplars,
                       const LabelFile& labels, const TrainingObjective& o,
                       bool backprop, double grad_scale,
                       Rng* dropout_rng = nullptr) {
  Tape t;
  Tensor memory = model.build_memory(t, pair, exemplars, dropout_rng);
  DecoderOutput dec = model.decode_teacher_forced(t, memory,
                                                  pair.response.tokens,
                                                  dropout_rng);
  LossRecord rec;
  rec.gen = dec.loss.scalar();
  std::vector<std::pair<double, Tensor>> terms{{o.alpha_gen, dec.loss}};
  const bool any_aux =
      o.alpha_ep > 0 || o.alpha_int > 0 || o.alpha_exp > 0 || o.alpha_sent > 0;
  if (any_aux) {
    auto it = labels.labels.find(pair.pair_id);
    if (it == labels.labels.end())
      throw std::runtime_error("missing synthetic label for pair " +
                               pair.pair_id);
    const EmpathyLabels& lab = it->second;
    AuxLogits aux = model.aux_logits(t, dec.hidden);
    if (o.alpha_ep > 0) {
      Tensor l = t.cross_entropy(aux.ep, {lab.emotional_presence});
      rec.ep = l.scalar();
      terms.emplace_back(o.alpha_ep, l);
    }
    if (o.alpha_int > 0) {
      Tensor l = t.cross_entropy(aux.intr, {lab.interpretation});
      rec.intr = l.scalar();
      terms.emplace_back(o.alpha_int, l);
    }
    if (o.alpha_exp > 0) {
      Tensor l = t.cross_entropy(aux.exp, {lab.exploration});
      rec.exp = l.scalar();
      terms.emplace_back(o.alpha_exp, l);
    }
    if (o.alpha_sent > 0) {
      Tensor l = t.mse(aux.sentiment, lab.sentiment);
      rec.sent = l.scalar();
      terms.emplace_back(o.alpha_sent, l);
    }
  }
  Tensor total = t.weighted_sum(terms);
  rec.total = total.scalar();
  if (backprop) t.backward(total, grad_scale);
  return rec;
}

LossRecord mean_losses(GeneratorModel& model,
                       const std::vector<ContextResponsePair>& pairs,
                       const std::vector<std::vector<std::vector<std::string>>>* exemplars,
                       const LabelFile& labels, const TrainingObjective& o) {
  LossRecord acc;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    LossRecord r = pair_losses(model, pairs[i],
                               exemplars ? &(*exemplars)[i] : nullptr, labels,
                               o, false, 0.0);
    acc.gen += r.gen;
    acc.ep += r.ep;
    acc.intr += r.intr;
    acc.exp += r.exp;
    acc.sent += r.sent;
    acc.total += r.total;
  }
  const double n = static_cast<double>(pairs.size());
  acc.gen /= n;
  acc.ep /= n;
  acc.intr /= n;
  acc.exp /= n;
  acc.sent /= n;
  acc.total /= n;
  return acc;
}

std::vector<std::vector<double>> snapshot_values(GeneratorModel& model) {
  std::vector<std::vector<double>> out;
  for (Parameter* p : model.all_params()) out.push_back(p->value);
  return out;
}

void restore_values(GeneratorModel& model,
                    const std::vector<std::vector<double>>& snap) {
  auto params = model.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace

TrainHistory train_generator(GeneratorModel& model,
                             const std::vector<ContextResponsePair>& train_pairs,
                             const std::vector<ContextResponsePair>& valid_pairs,
                             const BiEncoder* retriever,
                             const std::vector<CandidatePool>* pools,
                             std::size_t q, const LabelFile& labels,
                             const TrainingObjective& objective) {
  objective.validate();
  if (train_pairs.empty())
    throw std::invalid_argument("train_generator: no training pairs");
  const bool use_ex = model.config().use_exemplars;
  if (use_ex && (retriever == nullptr || pools == nullptr || pools->empty()))
    throw std::invalid_argument("train_generator: exemplar pools required "
                                "while use_exemplars is on");
  // every pair must be labeled before training starts
  for (const auto& p : train_pairs)
    if (!labels.labels.count(p.pair_id))
      throw std::runtime_error("train_generator: missing synthetic label for "
                               "pair " + p.pair_id);
  for (const auto& p : valid_pairs)
    if (!labels.labels.count(p.pair_id))
      throw std::runtime_error("train_generator: missing synthetic label for "
                               "pair " + p.pair_id);

  Adam opt({.learning_rate = objective.learning_rate});
  auto params = params_for(model, objective);
  Rng order_rng(Rng::mix(objective.seed, 0x9e0));
  Rng dropout_rng(Rng::mix(objective.seed, 0xd12));  // drawn only if enabled
  TrainHistory hist;
  std::vector<std::size_t> idx(train_pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::vector<double>> best_snapshot;

  for (std::size_t epoch = 0; epoch < objective.epochs; ++epoch) {
    // frozen retriever: exemplars fetched once per epoch
    std::vector<std::vector<std::vector<std::string>>> train_ex, valid_ex;
    if (use_ex) {
      train_ex = retrieve_for_pairs(train_pairs, *retriever, *pools, q);
      valid_ex = retrieve_for_pairs(valid_pairs, *retriever, *pools, q);
    }
    order_rng.shuffle(idx);
    LossRecord epoch_acc;
    try {
      std::size_t done = 0;
      while (done < idx.size()) {
        const std::size_t batch =
            std::min(objective.batch_size, idx.size() - done);
        LossRecord step_acc;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t i = idx[done + b];
          LossRecord r = pair_losses(
              model, train_pairs[i], use_ex ? &train_ex[i] : nullptr, labels,
              objective, true, 1.0 / static_cast<double>(batch),
              model.config().dropout > 0 ? &dropout_rng : nullptr);
          step_acc.gen += r.gen;
          step_acc.ep += r.ep;
          step_acc.intr += r.intr;
          step_acc.exp += r.exp;
          step_acc.sent += r.sent;
          step_acc.total += r.total;
        }
        opt.step(params);
        const double bn = static_cast<double>(batch);
        step_acc.gen /= bn;
        step_acc.ep /= bn;
        step_acc.intr /= bn;
        step_acc.exp /= bn;
        step_acc.sent /= bn;
        step_acc.total /= bn;
        hist.steps.push_back(step_acc);
        epoch_acc.gen += step_acc.gen * bn;
        epoch_acc.ep += step_acc.ep * bn;
        epoch_acc.intr += step_acc.intr * bn;
        epoch_acc.exp += step_acc.exp * bn;
        epoch_acc.sent += step_acc.sent * bn;
        epoch_acc.total += step_acc.total * bn;
        done += batch;
      }
    } catch (const NumericError& e) {
      if (!best_snapshot.empty()) restore_values(model, best_snapshot);
      throw NumericError("train_generator: aborted at epoch " +
                         std::to_string(epoch + 1) +
                         " (model restored to last good state): " + e.what());
    }
    const double n = static_cast<double>(idx.size());
    epoch_acc.gen /= n;
    epoch_acc.ep /= n;
    epoch_acc.intr /= n;
    epoch_acc.exp /= n;
    epoch_acc.sent /= n;
    epoch_acc.total /= n;

    EpochRecord er;
    er.train = epoch_acc;
    if (!valid_pairs.empty())
      er.valid = mean_losses(model, valid_pairs, use_ex ? &valid_ex : nullptr,
                             labels, objective);
    hist.epochs.push_back(er);

    if (!valid_pairs.empty()) {
      if (er.valid.total < best_valid) {
        best_valid = er.valid.total;
        hist.best_epoch = epoch + 1;
        since_best = 0;
        best_snapshot = snapshot_values(model);
      } else if (++since_best >= objective.patience) {
        hist.early_stopped = true;
        break;
      }
    } else {
      hist.best_epoch = epoch + 1;
    }
  }
  if (!best_snapshot.empty()) restore_values(model, best_snapshot);
  return hist;
}

void save_generations(const std::string& path, const GenerationMap& gens) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write generations: " + path);
  for (const auto& [pair_id, tokens] : gens) {
    json j{{"pair_id", pair_id}, {"tokens", tokens}};
    os << j.dump() << "\n";
  }
}

GenerationMap load_generations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open generations: " + path);
  GenerationMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("generation file line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    out[j.at("pair_id").get<std::string>()] =
        j.at("tokens").get<std::vector<std::string>>();
  }
  return out;
}

AutoEvalResult evaluate_automatic(const GeneratorModel& model,
                                  const std::vector<ContextResponsePair>& pairs,
                                  const BiEncoder* retriever,
                                  const std::vector<CandidatePool>* pools,
                                  std::size_t q,
                                  const GenerationMap* generations) {
  if (pairs.empty())
    throw std::invalid_argument("evaluate_automatic: no pairs");
  const bool use_ex = model.config().use_exemplars;
  AutoEvalResult out;

  std::vector<std::vector<std::vector<std::string>>> exemplars;
  if (use_ex) {
    if (retriever == nullptr || pools == nullptr)
      throw std::invalid_argument("evaluate_automatic: pools required");
    exemplars = retrieve_for_pairs(pairs, *retriever, *pools, q);
  }

  std::vector<TokenSeq> cands, refs;
  double nll_sum = 0.0;
  double token_count = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    std::vector<std::string> gen;
    if (generations != nullptr) {
      auto it = generations->find(pair.pair_id);
      if (it == generations->end())
        throw std::runtime_error("evaluate_automatic: no generation for pair " +
                                 pair.pair_id);
      gen = it->second;
    } else {
      gen = model.generate(pair, use_ex ? &exemplars[i] : nullptr,
                           GenMode::kGreedy, 0);
    }
    out.generations[pair.pair_id] = gen;
    cands.push_back(gen);
    refs.push_back(pair.response.tokens);

    Tape t;
    Tensor memory =
        model.build_memory(t, pair, use_ex ? &exemplars[i] : nullptr);
    DecoderOutput dec =
        model.decode_teacher_forced(t, memory, pair.response.tokens);
    const double steps = static_cast<double>(dec.target_ids.size());
    nll_sum += dec.loss.scalar() * steps;
    token_count += steps;
  }
  out.report.bleu = corpus_bleu(cands, refs);
  out.report.ppl = perplexity(nll_sum / token_count);
  out.report.distinct1 = distinct_n(cands, 1);
  out.report.distinct2 = distinct_n(cands, 2);
  return out;
}

SynthEvalResult evaluate_synthetic(const GenerationMap& generations,
                                   const std::vector<ContextResponsePair>& pairs,
                                   const LabelFile& gold,
                                   const SentimentLexicon& lexicon,
                                   const RuleTables& tables,
                                   std::uint64_t live_labeler_digest) {
  if (gold.labeler_digest != 0 && live_labeler_digest != 0 &&
      gold.labeler_digest != live_labeler_digest)
    throw std::runtime_error(
        "evaluate_synthetic: labeler digest mismatch (labels were produced "
        "by a different labeler or rule tables)");
  std::map<std::string, const ContextResponsePair*> by_id;
  for (const auto& p : pairs) by_id[p.pair_id] = &p;

  std::vector<int> gold_ep, gold_int, gold_exp, pred_ep, pred_int, pred_exp;
  std::vector<double> gold_sent, pred_sent;
  for (const auto& [pair_id, tokens] : generations) {
    auto pit = by_id.find(pair_id);
    if (pit == by_id.end())
      throw std::runtime_error("evaluate_synthetic: unknown pair " + pair_id);
    auto git = gold.labels.find(pair_id);
    if (git == gold.labels.end())
      throw std::runtime_error("evaluate_synthetic: no gold label for pair " +
                               pair_id);
    const EmpathyLabels pred = label_response(
        tokens, pit->second->context_tokens(), lexicon, tables);
    gold_ep.push_back(git->second.emotional_presence);
    gold_int.push_back(git->second.interpretation);
    gold_exp.push_back(git->second.exploration);
    gold_sent.push_back(git->second.sentiment);
    pred_ep.push_back(pred.emotional_presence);
    pred_int.push_back(pred.interpretation);
    pred_exp.push_back(pred.exploration);
    pred_sent.push_back(pred.sentiment);
  }
  if (gold_ep.empty())
    throw std::invalid_argument("evaluate_synthetic: no generations");
  SynthEvalResult out;
  const std::vector<int> classes{0, 1, 2};
  out.f1_ep = macro_f1(gold_ep, pred_ep, classes);
  out.f1_int = macro_f1(gold_int, pred_int, classes);
  out.f1_exp = macro_f1(gold_exp, pred_exp, classes);
  out.sent_mae = mae_score(gold_sent, pred_sent);
  out.evaluated = gold_ep.size();
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

int parse_score(const std::string& s, int lo, int hi, const std::string& what,
                std::size_t lineno) {
  int v;
  try {
    v = std::stoi(s);
  } catch (const std::exception&) {
    throw std::runtime_error("ratings line " + std::to_string(lineno) +
                             ": bad " + what + " value '" + s + "'");
  }
  if (v < lo || v > hi)
    throw std::runtime_error("ratings line " + std::to_string(lineno) + ": " +
                             what + " " + std::to_string(v) +
                             " outside [" + std::to_string(lo) + "," +
                             std::to_string(hi) + "]");
  return v;
}

}  // namespace

std::vector<RatingRecord> load_ratings_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open ratings file: " + path);
  std::vector<RatingRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (lineno == 1 && !f.empty() && f[0] == "sample_id") continue;  // header
    if (f.size() != 8)
      throw std::runtime_error("ratings line " + std::to_string(lineno) +
                               ": expected 8 fields, got " +
                               std::to_string(f.size()));
    RatingRecord r;
    r.sample_id = f[0];
    r.annotator_id = f[1];
    r.empathy = parse_score(f[2], 1, 5, "empathy", lineno);
    r.relevance = parse_score(f[3], 1, 5, "relevance", lineno);
    r.fluency = parse_score(f[4], 1, 5, "fluency", lineno);
    r.ep = parse_score(f[5], 0, 2, "ep", lineno);
    r.intr = parse_score(f[6], 0, 2, "int", lineno);
    r.exp = parse_score(f[7], 0, 2, "exp", lineno);
    out.push_back(std::move(r));
  }
  return out;
}

RatingSummary aggregate_ratings(const std::vector<RatingRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("aggregate_ratings: no records");
  RatingSummary s;
  std::set<std::string> samples, annotators;
  for (const auto& r : records) {
    s.empathy += r.empathy;
    s.relevance += r.relevance;
    s.fluency += r.fluency;
    s.ep += r.ep;
    s.intr += r.intr;
    s.exp += r.exp;
    samples.insert(r.sample_id);
    annotators.insert(r.annotator_id);
  }
  const double n = static_cast<double>(records.size());
  s.empathy /= n;
  s.relevance /= n;
  s.fluency /= n;
  s.ep /= n;
  s.intr /= n;
  s.exp /= n;
  s.samples = samples.size();
  s.annotators = annotators.size();
  s.records = records.size();
  return s;
}

std::string RatingSummary::to_json() const {
  json j{{"empathy", round2(empathy)},   {"relevance", round2(relevance)},
         {"fluency", round2(fluency)},   {"ep", round2(ep)},
         {"int", round2(intr)},          {"exp", round2(exp)},
         {"samples", samples},           {"annotators", annotators},
         {"records", records}};
  return j.dump(2);
}

namespace {

AbChoice ab_choice(const std::string& s, std::size_t lineno) {
  if (s == "A") return AbChoice::kA;
  if (s == "B") return AbChoice::kB;
  if (s == "TIE") return AbChoice::kTie;
  throw std::runtime_error("votes line " + std::to_string(lineno) +
                           ": expected A, B, or TIE, got '" + s + "'");
}

}  // namespace

std::vector<AbVote> load_ab_votes_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open votes file: " + path);
  std::vector<AbVote> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (lineno == 1 && !f.empty() && f[0] == "sample_id") continue;
    if (f.size() != 4 && f.size() != 5)
      throw std::runtime_error("votes line " + std::to_string(lineno) +
                               ": expected 4 or 5 fields");
    AbVote v;
    v.sample_id = f[0];
    for (std::size_t i = 1; i <= 3; ++i)
      v.votes.push_back(ab_choice(f[i], lineno));
    if (f.size() == 5) v.tiebreak = ab_choice(f[4], lineno);
    out.push_back(std::move(v));
  }
  return out;
}

AbResult ab_aggregate(const std::vector<AbVote>& votes) {
  if (votes.empty()) throw std::invalid_argument("ab_aggregate: no votes");
  std::size_t win = 0, loss = 0, tie = 0;
  for (const auto& v : votes) {
    if (v.votes.size() != 3)
      throw std::runtime_error("sample " + v.sample_id +
                               ": expected exactly 3 votes");
    std::size_t counts[3] = {0, 0, 0};
    for (AbChoice c : v.votes) ++counts[static_cast<std::size_t>(c)];
    const bool distinct = counts[0] == 1 && counts[1] == 1 && counts[2] == 1;
    if (distinct && !v.tiebreak.has_value())
      throw std::runtime_error("sample " + v.sample_id +
                               ": three distinct votes need a tie-break");
    if (!distinct && v.tiebreak.has_value())
      throw std::runtime_error("sample " + v.sample_id +
                               ": unexpected tie-break vote");
    AbChoice outcome;
    if (distinct) {
      outcome = *v.tiebreak;
    } else {
      outcome = AbChoice::kA;
      for (std::size_t c = 0; c < 3; ++c)
        if (counts[c] >= 2) outcome = static_cast<AbChoice>(c);
    }
    switch (outcome) {
      case AbChoice::kA: ++win; break;
      case AbChoice::kB: ++loss; break;
      case AbChoice::kTie: ++tie; break;
    }
  }
  const double n = static_cast<double>(votes.size());
  return {100.0 * static_cast<double>(win) / n,
          100.0 * static_cast<double>(loss) / n,
          100.0 * static_cast<double>(tie) / n};
}

std::string AbResult::to_json() const {
  json j{{"win", round2(win)}, {"loss", round2(loss)}, {"tie", round2(tie)}};
  return j.dump(2);
}

namespace {

std::string fmt2(const std::optional<double>& v) {
  if (!v) return "--";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void put_row(std::ostringstream& os, const std::vector<std::string>& cells,
             const std::vector<int>& widths) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    os << (i ? "  " : "");
    const int w = widths[i];
    if (i == 0)
      os << cells[i] << std::string(
          cells[i].size() < static_cast<std::size_t>(w)
              ? static_cast<std::size_t>(w) - cells[i].size() : 0, ' ');
    else
      os << std::string(
          cells[i].size() < static_cast<std::size_t>(w)
              ? static_cast<std::size_t>(w) - cells[i].size() : 0, ' ')
         << cells[i];
  }
  os << "\n";
}

}  // namespace

std::string render_auto_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  std::vector<int> w{36, 8, 10, 10, 10};
  put_row(os, {"Method", "BLEU", "PPL", "Distinct-1", "Distinct-2"}, w);
  for (const auto& [name, r] : rows)
    put_row(os, {name, fmt2(r.bleu), fmt2(r.ppl), fmt2(r.distinct1),
                 fmt2(r.distinct2)}, w);
  return os.str();
}

std::string render_synth_table(
    const std::vector<std::pair<std::string, SynthEvalResult>>& rows) {
  std::ostringstream os;
  std::vector<int> w{36, 12, 14, 12, 10};
  put_row(os, {"Method", "EmoPres(F1)", "Interpret(F1)", "Explore(F1)",
               "Sent(mae)"}, w);
  for (const auto& [name, r] : rows)
    put_row(os, {name, fmt2(r.f1_ep), fmt2(r.f1_int), fmt2(r.f1_exp),
                 fmt3(r.sent_mae)}, w);
  return os.str();
}

std::string render_ab_table(const std::string& a, const std::string& b,
                            const AbResult& r) {
  std::ostringstream os;
  std::vector<int> w{20, 20, 8, 8, 8};
  put_row(os, {"Model A", "Model B", "WIN%", "LOSS%", "TIE%"}, w);
  put_row(os, {a, b, fmt2(r.win), fmt2(r.loss), fmt2(r.tie)}, w);
  return os.str();
}

ModelConfig ExperimentConfig::model_config(std::size_t vocab) const {
  ModelConfig m = preset == "full" ? ModelConfig::full_size(vocab)
                                          : ModelConfig::desk(vocab);
  if (n_emb) m.n_emb = n_emb;
  if (n_layers) m.n_layers = n_layers;
  if (n_heads) m.n_heads = n_heads;
  if (ffn_width) m.ffn_width = ffn_width;
  m.use_exemplars = use_exemplars;
  m.exemplar_count = q;
  m.max_len = max_len;
  return m;
}

GenMode ExperimentConfig::generation_mode() const {
  if (gen_mode == "greedy") return GenMode::kGreedy;
  if (gen_mode == "top_k") return GenMode::kTopK;
  throw std::invalid_argument("unknown generation mode: " + gen_mode);
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["preset"] = preset;
  j["n_emb"] = n_emb;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_width"] = ffn_width;
  j["use_exemplars"] = use_exemplars;
  j["q"] = q;
  j["n_neg"] = n_neg;
  j["max_len"] = max_len;
  j["objective"] = {{"alpha_gen", objective.alpha_gen},
                    {"alpha_ep", objective.alpha_ep},
                    {"alpha_int", objective.alpha_int},
                    {"alpha_exp", objective.alpha_exp},
                    {"alpha_sent", objective.alpha_sent},
                    {"epochs", objective.epochs},
                    {"patience", objective.patience},
                    {"learning_rate", objective.learning_rate},
                    {"batch_size", objective.batch_size},
                    {"seed", objective.seed}};
  j["dpr"] = {{"learning_rate", dpr.learning_rate},
              {"epochs", dpr.epochs},
              {"batch_size", dpr.batch_size},
              {"patience", dpr.patience},
              {"seed", dpr.seed}};
  j["toy"] = {{"dialogues", toy.dialogues},
              {"emotions", toy.emotions},
              {"filler_vocab", toy.filler_vocab},
              {"min_turns", toy.min_turns},
              {"max_turns", toy.max_turns},
              {"agent_template_skew", toy.agent_template_skew},
              {"seed", toy.seed}};
  j["lexicon_path"] = lexicon_path;
  j["rules_path"] = rules_path;
  j["embedding_file"] = embedding_file;
  j["gen_mode"] = gen_mode;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.preset = j.value("preset", c.preset);
  c.n_emb = j.value("n_emb", c.n_emb);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.use_exemplars = j.value("use_exemplars", c.use_exemplars);
  c.q = j.value("q", c.q);
  c.n_neg = j.value("n_neg", c.n_neg);
  c.max_len = j.value("max_len", c.max_len);
  // stage seeds follow the master seed unless the file pins them
  c.objective.seed = c.seed;
  c.dpr.seed = Rng::mix(c.seed, 1);
  c.toy.seed = Rng::mix(c.seed, 2);
  if (j.contains("objective")) {
    const json& o = j["objective"];
    c.objective.alpha_gen = o.value("alpha_gen", c.objective.alpha_gen);
    c.objective.alpha_ep = o.value("alpha_ep", c.objective.alpha_ep);
    c.objective.alpha_int = o.value("alpha_int", c.objective.alpha_int);
    c.objective.alpha_exp = o.value("alpha_exp", c.objective.alpha_exp);
    c.objective.alpha_sent = o.value("alpha_sent", c.objective.alpha_sent);
    c.objective.epochs = o.value("epochs", c.objective.epochs);
    c.objective.patience = o.value("patience", c.objective.patience);
    c.objective.learning_rate =
        o.value("learning_rate", c.objective.learning_rate);
    c.objective.batch_size = o.value("batch_size", c.objective.batch_size);
    c.objective.seed = o.value("seed", c.objective.seed);
  }
  if (j.contains("dpr")) {
    const json& d = j["dpr"];
    c.dpr.learning_rate = d.value("learning_rate", c.dpr.learning_rate);
    c.dpr.epochs = d.value("epochs", c.dpr.epochs);
    c.dpr.batch_size = d.value("batch_size", c.dpr.batch_size);
    c.dpr.patience = d.value("patience", c.dpr.patience);
    c.dpr.seed = d.value("seed", c.dpr.seed);
  }
  if (j.contains("toy")) {
    const json& t = j["toy"];
    c.toy.dialogues = t.value("dialogues", c.toy.dialogues);
    c.toy.emotions = t.value("emotions", c.toy.emotions);
    c.toy.filler_vocab = t.value("filler_vocab", c.toy.filler_vocab);
    c.toy.min_turns = t.value("min_turns", c.toy.min_turns);
    c.toy.max_turns = t.value("max_turns", c.toy.max_turns);
    c.toy.agent_template_skew =
        t.value("agent_template_skew", c.toy.agent_template_skew);
    c.toy.seed = t.value("seed", c.toy.seed);
  }
  c.lexicon_path = j.value("lexicon_path", c.lexicon_path);
  c.rules_path = j.value("rules_path", c.rules_path);
  c.embedding_file = j.value("embedding_file", c.embedding_file);
  c.gen_mode = j.value("gen_mode", c.gen_mode);
  return c;
}

ExperimentConfig ExperimentConfig::resolve(const std::string& cli_path) {
  std::string path = cli_path;
  if (path.empty()) {
    if (const char* env = std::getenv("EF_CONFIG")) path = env;
  }
  ExperimentConfig c;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    c = from_json(text);
  } else {
    c.objective.seed = c.seed;
    c.dpr.seed = Rng::mix(c.seed, 1);
    c.toy.seed = Rng::mix(c.seed, 2);
  }
  if (c.lexicon_path.empty()) c.lexicon_path = "data/sentiment_lexicon.tsv";
  if (c.rules_path.empty()) c.rules_path = "data/rule_tables.json";
  if (const char* env = std::getenv("EF_SEED")) {
    c.seed = std::strtoull(env, nullptr, 10);
    c.objective.seed = c.seed;
    c.dpr.seed = Rng::mix(c.seed, 1);
    c.toy.seed = Rng::mix(c.seed, 2);
  }
  return c;
}

namespace commands {

namespace {

struct LoadedCorpus {
  EmotionSet emotions;
  std::vector<Dialogue> dialogues;
  SplitSpec split;
  std::vector<Dialogue> train_dialogues;
  std::vector<ContextResponsePair> train_pairs, valid_pairs, test_pairs,
      all_pairs;
};

LoadedCorpus load_corpus_dir(const ExperimentConfig& cfg,
                             const std::string& dir) {
  LoadedCorpus out{EmotionSet::load_manifest(dir + "/manifest.json"),
                   {}, {}, {}, {}, {}, {}, {}};
  out.dialogues = load_dialogues(dir + "/dialogues.jsonl", out.emotions);
  out.split = split_corpus(out.dialogues, cfg.seed);
  for (const auto& d : out.dialogues) {
    auto pairs = make_training_pairs(d);
    out.all_pairs.insert(out.all_pairs.end(), pairs.begin(), pairs.end());
    if (out.split.in_train(d.dialogue_id)) {
      out.train_dialogues.push_back(d);
      out.train_pairs.insert(out.train_pairs.end(), pairs.begin(), pairs.end());
    } else if (out.split.in_valid(d.dialogue_id)) {
      out.valid_pairs.insert(out.valid_pairs.end(), pairs.begin(), pairs.end());
    } else {
      out.test_pairs.insert(out.test_pairs.end(), pairs.begin(), pairs.end());
    }
  }
  return out;
}

struct VocabWithCoverage {
  Vocabulary vocab;
  std::vector<std::string> gaps;  // corpus tokens with no pretrained vector
};

VocabWithCoverage train_vocab(const ExperimentConfig& cfg,
                              const LoadedCorpus& c) {
  if (!cfg.embedding_file.empty()) {
    EmbeddingTable table = load_embedding_file(cfg.embedding_file,
                                               cfg.model_config(4).n_emb);
    Vocabulary full = Vocabulary::build(c.train_dialogues);
    std::vector<std::string> tokens;
    for (std::size_t i = 4; i < full.size(); ++i)
      tokens.push_back(full.token(static_cast<int>(i)));
    return {Vocabulary::build(c.train_dialogues, &table),
            embedding_coverage_gaps(table, tokens)};
  }
  return {Vocabulary::build(c.train_dialogues), {}};
}

const std::vector<ContextResponsePair>& pairs_for_split(
    const LoadedCorpus& c, const std::string& split) {
  if (split == "train") return c.train_pairs;
  if (split == "valid") return c.valid_pairs;
  if (split == "test") return c.test_pairs;
  throw std::invalid_argument("unknown split: " + split);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (text.empty() || text.back() != '\n') os << "\n";
}

}  // namespace

std::string gen_toy_corpus(const ExperimentConfig& cfg,
                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  EmotionSet emotions = EmotionSet::from_names(EmotionSet::default_names());
  auto dialogues = generate_toy_corpus(cfg.toy, emotions);
  emotions.save_manifest(out_dir + "/manifest.json");
  save_dialogues(out_dir + "/dialogues.jsonl", dialogues);
  Vocabulary vocab = Vocabulary::build(dialogues);
  std::vector<std::string> tokens;
  for (std::size_t i = 4; i < vocab.size(); ++i)
    tokens.push_back(vocab.token(static_cast<int>(i)));
  write_toy_embeddings(out_dir + "/embeddings.txt", tokens,
                       cfg.model_config(vocab.size()).n_emb, cfg.seed);
  std::size_t pairs = 0;
  for (const auto& d : dialogues) pairs += make_training_pairs(d).size();
  json j{{"dialogues", dialogues.size()},
         {"pairs", pairs},
         {"vocab", vocab.size()},
         {"out_dir", out_dir}};
  return j.dump(2);
}

std::string train_dpr(const ExperimentConfig& cfg,
                      const std::string& corpus_dir,
                      const std::string& out_dir) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  auto [vocab, coverage_gaps] = train_vocab(cfg, c);
  auto train_samples = build_dpr_samples(c.train_pairs, cfg.n_neg, cfg.dpr.seed);
  std::vector<DprSample> valid_samples;
  if (!c.valid_pairs.empty()) {
    // negatives for validation come from the training response set
    auto mixed = c.train_pairs;
    const std::size_t valid_at = mixed.size();
    mixed.insert(mixed.end(), c.valid_pairs.begin(), c.valid_pairs.end());
    auto all = build_dpr_samples(mixed, cfg.n_neg, Rng::mix(cfg.dpr.seed, 3));
    valid_samples.assign(all.begin() + static_cast<std::ptrdiff_t>(valid_at),
                         all.end());
  }
  BiEncoder encoder(cfg.model_config(vocab.size()), vocab, cfg.dpr.seed);
  DprHistory hist = train_retriever(train_samples, encoder, cfg.dpr,
                                    valid_samples.empty() ? nullptr
                                                          : &valid_samples);
  encoder.save(out_dir);
  json hj;
  hj["train_loss"] = hist.train_loss;
  hj["valid_loss"] = hist.valid_loss;
  hj["epochs_run"] = hist.epochs_run;
  hj["early_stopped"] = hist.early_stopped;
  write_text(out_dir + "/dpr_history.json", hj.dump(2));
  json j{{"samples", train_samples.size()},
         {"validation_samples", valid_samples.size()},
         {"epochs_run", hist.epochs_run},
         {"early_stopped", hist.early_stopped},
         {"final_train_loss", hist.train_loss.back()},
         {"out_dir", out_dir}};
  if (!cfg.embedding_file.empty())
    j["embedding_coverage_gaps"] = coverage_gaps;
  return j.dump(2);
}

std::string build_pools_cmd(const ExperimentConfig& cfg,
                            const std::string& corpus_dir,
                            const std::string& retriever_dir,
                            const std::string& out_path) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  BiEncoder encoder = BiEncoder::load(retriever_dir);
  PoolBuildResult res = build_pools(c.train_dialogues, encoder, c.emotions);
  save_pools(out_path, res.pools, encoder);
  std::size_t entries = 0;
  for (const auto& p : res.pools) entries += p.entries.size();
  json j{{"pools", res.pools.size()},
         {"entries", entries},
         {"warnings", res.warnings},
         {"out_path", out_path}};
  return j.dump(2);
}

std::string retrieve(const ExperimentConfig& cfg,
                     const std::string& retriever_dir,
                     const std::string& pools_path,
                     const std::string& context_file, std::size_t q) {
  BiEncoder encoder = BiEncoder::load(retriever_dir);
  EmotionSet emotions = EmotionSet::from_names(EmotionSet::default_names());
  auto pools = load_pools(pools_path, encoder, emotions);

  std::ifstream is(context_file);
  if (!is) throw std::runtime_error("cannot open context file: " + context_file);
  json cj = json::parse(is);
  ContextResponsePair pair;
  pair.emotion = emotions.by_name(cj.at("emotion").get<std::string>());
  pair.source_dialogue_id = cj.value("dialogue_id", std::string("query"));
  std::size_t idx = 0;
  for (const auto& ju : cj.at("utterances")) {
    Utterance u;
    u.speaker = speaker_from(ju.at("speaker").get<std::string>());
    u.tokens = tokenize(ju.at("text").get<std::string>());
    u.index = ++idx;
    pair.context.push_back(std::move(u));
  }
  if (pair.context.empty())
    throw std::invalid_argument("retrieve: empty context");
  RetrievalResult r = retrieve_exemplars(pair, encoder, pools,
                                         q ? q : cfg.q);
  json j;
  j["emotion"] = pair.emotion.name;
  j["shortfall"] = r.shortfall;
  j["exemplars"] = json::array();
  for (const auto& e : r.exemplars)
    j["exemplars"].push_back({{"tokens", e.tokens},
                              {"score", e.score},
                              {"dialogue_id", e.dialogue_id}});
  return j.dump(2);
}

std::string label_synth(const ExperimentConfig& cfg,
                        const std::string& corpus_dir,
                        const std::string& out_path) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  RuleTables tables = RuleTables::load(cfg.rules_path);
  SentimentLexicon lexicon = load_sentiment_lexicon(cfg.lexicon_path, tables);
  LabelFile file;
  file.labeler_kind = "rule";
  file.labeler_digest = rule_labeler_digest(cfg.lexicon_path, tables);
  for (const auto& p : c.all_pairs)
    file.labels[p.pair_id] =
        label_response(p.response.tokens, p.context_tokens(), lexicon, tables);
  file.save(out_path);
  auto dist_json = [&](char a) {
    json d;
    for (const auto& [k, v] : file.distribution(a))
      d[std::to_string(k)] = v;
    return d;
  };
  json j{{"pairs", file.labels.size()},
         {"distribution",
          {{"ep", dist_json('e')}, {"int", dist_json('i')},
           {"exp", dist_json('x')}}},
         {"out_path", out_path}};
  return j.dump(2);
}

std::string train_gen(const ExperimentConfig& cfg,
                      const std::string& corpus_dir,
                      const std::string& retriever_dir,
                      const std::string& pools_path,
                      const std::string& labels_path,
                      const std::string& out_dir) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  auto [vocab, coverage_gaps] = train_vocab(cfg, c);
  LabelFile labels = LabelFile::load(labels_path);

  std::optional<BiEncoder> retriever;
  std::vector<CandidatePool> pools;
  if (cfg.use_exemplars) {
    retriever.emplace(BiEncoder::load(retriever_dir));
    pools = load_pools(pools_path, *retriever, c.emotions);
  }

  std::optional<EmbeddingTable> table;
  if (!cfg.embedding_file.empty())
    table = load_embedding_file(cfg.embedding_file,
                                cfg.model_config(vocab.size()).n_emb);
  GeneratorModel model(cfg.model_config(vocab.size()), vocab, cfg.seed,
                       table ? &*table : nullptr);
  TrainHistory hist = train_generator(
      model, c.train_pairs, c.valid_pairs,
      retriever ? &*retriever : nullptr, cfg.use_exemplars ? &pools : nullptr,
      cfg.q, labels, cfg.objective);
  model.save(out_dir);
  write_text(out_dir + "/history.json", hist.to_json());
  json j{{"train_pairs", c.train_pairs.size()},
         {"valid_pairs", c.valid_pairs.size()},
         {"epochs_run", hist.epochs.size()},
         {"best_epoch", hist.best_epoch},
         {"early_stopped", hist.early_stopped},
         {"final_train_gen_loss", hist.epochs.back().train.gen},
         {"out_dir", out_dir}};
  if (!cfg.embedding_file.empty())
    j["embedding_coverage_gaps"] = coverage_gaps;
  return j.dump(2);
}

std::string generate(const ExperimentConfig& cfg, const std::string& model_dir,
                     const std::string& corpus_dir,
                     const std::string& retriever_dir,
                     const std::string& pools_path, const std::string& split,
                     const std::string& out_path) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  GeneratorModel model = GeneratorModel::load(model_dir);
  const auto& pairs = pairs_for_split(c, split);

  std::optional<BiEncoder> retriever;
  std::vector<CandidatePool> pools;
  std::vector<std::vector<std::vector<std::string>>> exemplars;
  if (model.config().use_exemplars) {
    retriever.emplace(BiEncoder::load(retriever_dir));
    pools = load_pools(pools_path, *retriever, c.emotions);
    exemplars = retrieve_for_pairs(pairs, *retriever, pools, cfg.q);
  }
  GenerationMap gens;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    gens[pairs[i].pair_id] = model.generate(
        pairs[i], model.config().use_exemplars ? &exemplars[i] : nullptr,
        cfg.generation_mode(), Rng::mix(cfg.seed, i));
  save_generations(out_path, gens);
  json j{{"split", split}, {"generations", gens.size()}, {"out_path", out_path}};
  return j.dump(2);
}

std::string eval_auto(const ExperimentConfig& cfg, const std::string& model_dir,
                      const std::string& corpus_dir,
                      const std::string& retriever_dir,
                      const std::string& pools_path,
                      const std::string& generations_path,
                      const std::string& out_path) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  GeneratorModel model = GeneratorModel::load(model_dir);
  std::optional<BiEncoder> retriever;
  std::vector<CandidatePool> pools;
  if (model.config().use_exemplars) {
    retriever.emplace(BiEncoder::load(retriever_dir));
    pools = load_pools(pools_path, *retriever, c.emotions);
  }
  std::optional<GenerationMap> gens;
  if (!generations_path.empty()) gens = load_generations(generations_path);
  AutoEvalResult res = evaluate_automatic(
      model, c.test_pairs, retriever ? &*retriever : nullptr,
      model.config().use_exemplars ? &pools : nullptr, cfg.q,
      gens ? &*gens : nullptr);
  write_text(out_path, res.report.to_json());
  write_text(out_path + ".txt", render_auto_table({{"model", res.report}}));
  return res.report.to_json();
}

std::string eval_synth(const ExperimentConfig& cfg,
                       const std::string& corpus_dir,
                       const std::string& generations_path,
                       const std::string& labels_path,
                       const std::string& out_path) {
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  RuleTables tables = RuleTables::load(cfg.rules_path);
  SentimentLexicon lexicon = load_sentiment_lexicon(cfg.lexicon_path, tables);
  LabelFile gold = LabelFile::load(labels_path);
  GenerationMap gens = load_generations(generations_path);
  SynthEvalResult res =
      evaluate_synthetic(gens, c.all_pairs, gold, lexicon, tables,
                         rule_labeler_digest(cfg.lexicon_path, tables));
  json j{{"f1_ep", round2(res.f1_ep)},
         {"f1_int", round2(res.f1_int)},
         {"f1_exp", round2(res.f1_exp)},
         {"sent_mae", round3(res.sent_mae)},
         {"evaluated", res.evaluated}};
  write_text(out_path, j.dump(2));
  write_text(out_path + ".txt", render_synth_table({{"model", res}}));
  return j.dump(2);
}

std::string ratings_aggregate(const std::string& csv_path,
                              const std::string& out_path) {
  RatingSummary s = aggregate_ratings(load_ratings_csv(csv_path));
  if (!out_path.empty()) write_text(out_path, s.to_json());
  return s.to_json();
}

std::string ab_aggregate_cmd(const std::string& csv_path,
                             const std::string& out_path) {
  AbResult r = ab_aggregate(load_ab_votes_csv(csv_path));
  if (!out_path.empty()) write_text(out_path, r.to_json());
  return r.to_json();
}

std::string ablate(const ExperimentConfig& cfg, const std::string& corpus_dir,
                   const std::string& retriever_dir,
                   const std::string& pools_path,
                   const std::string& labels_path,
                   const std::string& out_dir) {
  fs::create_directories(out_dir);
  LoadedCorpus c = load_corpus_dir(cfg, corpus_dir);
  auto [vocab, coverage_gaps] = train_vocab(cfg, c);
  LabelFile labels = LabelFile::load(labels_path);
  BiEncoder retriever = BiEncoder::load(retriever_dir);
  auto pools = load_pools(pools_path, retriever, c.emotions);
  RuleTables tables = RuleTables::load(cfg.rules_path);
  SentimentLexicon lexicon = load_sentiment_lexicon(cfg.lexicon_path, tables);
  const std::uint64_t labeler_digest =
      rule_labeler_digest(cfg.lexicon_path, tables);

  struct Variant {
    std::string name;
    bool exemplars;
    bool emp_losses;
  };
  // fixed row order: base model first, then exemplars only, then the full
  // configuration
  const std::vector<Variant> variants = {
      {"w/o Exemplars, w/o Emp. Losses", false, false},
      {"w/o Emp. Losses", true, false},
      {"full", true, true},
  };

  std::vector<std::pair<std::string, MetricsReport>> auto_rows;
  std::vector<std::pair<std::string, SynthEvalResult>> synth_rows;
  json out;
  for (const auto& v : variants) {
    ExperimentConfig vc = cfg;
    vc.use_exemplars = v.exemplars;
    TrainingObjective obj = cfg.objective;
    if (!v.emp_losses) {
      obj.alpha_ep = 0;
      obj.alpha_int = 0;
      obj.alpha_exp = 0;
      obj.alpha_sent = 0;
    }
    GeneratorModel model(vc.model_config(vocab.size()), vocab, cfg.seed);
    TrainHistory hist = train_generator(
        model, c.train_pairs, c.valid_pairs,
        v.exemplars ? &retriever : nullptr, v.exemplars ? &pools : nullptr,
        cfg.q, labels, obj);
    AutoEvalResult auto_res = evaluate_automatic(
        model, c.test_pairs, v.exemplars ? &retriever : nullptr,
        v.exemplars ? &pools : nullptr, cfg.q);
    SynthEvalResult synth_res =
        evaluate_synthetic(auto_res.generations, c.all_pairs, labels, lexicon,
                           tables, labeler_digest);
    auto_rows.emplace_back(v.name, auto_res.report);
    synth_rows.emplace_back(v.name, synth_res);
    json row;
    row["name"] = v.name;
    row["auto"] = json::parse(auto_res.report.to_json());
    row["synthetic"] = {{"f1_ep", round2(synth_res.f1_ep)},
                        {"f1_int", round2(synth_res.f1_int)},
                        {"f1_exp", round2(synth_res.f1_exp)},
                        {"sent_mae", round3(synth_res.sent_mae)}};
    row["epochs_run"] = hist.epochs.size();
    row["final_train_gen_loss"] = hist.epochs.back().train.gen;
    out["rows"].push_back(row);
  }
  const std::string table =
      render_auto_table(auto_rows) + "\n" + render_synth_table(synth_rows);
  write_text(out_dir + "/ablation.json", out.dump(2));
  write_text(out_dir + "/ablation.txt", table);
  return out.dump(2);
}

}  // namespace commands

}  // namespace ef
