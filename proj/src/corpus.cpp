#include "corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "checkpoint.hpp"  // fnv1a

namespace ef {

using nlohmann::json;

const char* speaker_name(Speaker s) {
  return s == Speaker::kUser ? "USER" : "AGENT";
}

Speaker speaker_from(const std::string& name) {
  if (name == "USER") return Speaker::kUser;
  if (name == "AGENT") return Speaker::kAgent;
  throw std::invalid_argument("unknown speaker: " + name);
}

namespace {

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c >= 0x80;
}

const std::vector<std::string>& clitics() {
  static const std::vector<std::string> kClitics = {"'s", "'m",  "'re", "'ve",
                                                    "'ll", "'d", "n't"};
  return kClitics;
}

void emit_word(const std::string& w, std::vector<std::string>& out) {
  if (w.empty()) return;
  for (const auto& c : clitics()) {
    if (w == c) {
      out.push_back(w);
      return;
    }
  }
  if (w.size() > 3 && w.ends_with("n't")) {
    emit_word(w.substr(0, w.size() - 3), out);
    out.push_back("n't");
    return;
  }
  const auto apo = w.rfind('\'');
  if (apo != std::string::npos && apo > 0) {
    const std::string suffix = w.substr(apo);
    for (const auto& c : clitics()) {
      if (suffix == c) {
        emit_word(w.substr(0, apo), out);
        out.push_back(suffix);
        return;
      }
    }
    if (apo == w.size() - 1) {  // trailing bare apostrophe: kids'
      emit_word(w.substr(0, apo), out);
      out.push_back("'");
      return;
    }
  }
  out.push_back(w);
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      emit_word(word, out);
      word.clear();
    } else if (is_word_char(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      emit_word(word, out);
      word.clear();
      out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  emit_word(word, out);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

EmotionSet EmotionSet::from_names(std::vector<std::string> names) {
  EmotionSet set;
  for (auto& n : names) {
    if (set.index_.count(n))
      throw std::invalid_argument("duplicate emotion name: " + n);
    const int id = static_cast<int>(set.labels_.size());
    set.index_[n] = id;
    set.labels_.push_back({id, n});
  }
  if (set.labels_.size() != 32)
    throw std::invalid_argument("corpus manifest must list exactly 32 "
                                "emotions, got " +
                                std::to_string(set.labels_.size()));
  return set;
}

EmotionSet EmotionSet::load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  json j = json::parse(is);
  std::vector<std::string> names;
  for (const auto& n : j.at("emotions")) names.push_back(n.get<std::string>());
  return from_names(std::move(names));
}

void EmotionSet::save_manifest(const std::string& path) const {
  json j;
  for (const auto& l : labels_) j["emotions"].push_back(l.name);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

const std::vector<std::string>& EmotionSet::default_names() {
  static const std::vector<std::string> kNames = {
      "surprised",  "excited",      "angry",     "proud",       "sad",
      "annoyed",    "grateful",     "lonely",    "afraid",      "terrified",
      "guilty",     "impressed",    "disgusted", "hopeful",     "confident",
      "furious",    "anxious",      "anticipating", "joyful",   "nostalgic",
      "disappointed", "prepared",   "jealous",   "content",     "devastated",
      "embarrassed", "sentimental", "caring",    "trusting",    "ashamed",
      "apprehensive", "faithful"};
  return kNames;
}

const EmotionLabel& EmotionSet::by_name(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("unknown emotion name: " + name);
  return labels_[static_cast<std::size_t>(it->second)];
}

const EmotionLabel& EmotionSet::by_id(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size())
    throw std::invalid_argument("unknown emotion id: " + std::to_string(id));
  return labels_[static_cast<std::size_t>(id)];
}

bool EmotionSet::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

std::vector<std::string> ContextResponsePair::context_tokens() const {
  std::vector<std::string> out;
  for (const auto& u : context)
    out.insert(out.end(), u.tokens.begin(), u.tokens.end());
  return out;
}

namespace {

void validate_dialogue(const Dialogue& d) {
  if (d.utterances.size() < 2)
    throw std::invalid_argument("dialogue " + d.dialogue_id +
                                " has fewer than 2 utterances");
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    const Utterance& u = d.utterances[i];
    const Speaker want = (i % 2 == 0) ? Speaker::kUser : Speaker::kAgent;
    if (u.speaker != want)
      throw std::invalid_argument("dialogue " + d.dialogue_id +
                                  ": speakers must alternate starting with "
                                  "USER (violation at turn " +
                                  std::to_string(i + 1) + ")");
    if (u.tokens.empty())
      throw std::invalid_argument("dialogue " + d.dialogue_id +
                                  ": empty utterance at turn " +
                                  std::to_string(i + 1));
  }
}

}  // namespace

std::vector<Dialogue> load_dialogues(const std::string& path,
                                     const EmotionSet& emotions) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dialogue file: " + path);
  std::vector<Dialogue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": malformed JSON: " + e.what());
    }
    try {
      Dialogue d;
      d.dialogue_id = j.at("dialogue_id").get<std::string>();
      const std::string emo = j.at("emotion").get<std::string>();
      if (!emotions.contains(emo))
        throw std::invalid_argument("unknown emotion name: " + emo);
      d.emotion = emotions.by_name(emo);
      std::size_t idx = 0;
      for (const auto& ju : j.at("utterances")) {
        Utterance u;
        u.speaker = speaker_from(ju.at("speaker").get<std::string>());
        u.tokens = tokenize(ju.at("text").get<std::string>());
        u.index = ++idx;
        d.utterances.push_back(std::move(u));
      }
      validate_dialogue(d);
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": bad dialogue record: " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return out;
}

void save_dialogues(const std::string& path,
                    const std::vector<Dialogue>& dialogues) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dialogue file: " + path);
  for (const auto& d : dialogues) {
    json j;
    j["dialogue_id"] = d.dialogue_id;
    j["emotion"] = d.emotion.name;
    j["utterances"] = json::array();
    for (const auto& u : d.utterances) {
      j["utterances"].push_back(
          {{"speaker", speaker_name(u.speaker)}, {"text", join_tokens(u.tokens)}});
    }
    os << j.dump() << "\n";
  }
}

std::vector<ContextResponsePair> make_training_pairs(const Dialogue& d) {
  validate_dialogue(d);
  std::vector<ContextResponsePair> out;
  for (std::size_t i = 1; i < d.utterances.size(); i += 2) {
    ContextResponsePair p;
    p.context.assign(d.utterances.begin(), d.utterances.begin() + i);
    p.response = d.utterances[i];
    p.emotion = d.emotion;
    p.source_dialogue_id = d.dialogue_id;
    p.pair_id = d.dialogue_id + "#" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ContextResponsePair> make_training_pairs(
    const std::vector<Dialogue>& dialogues) {
  std::vector<ContextResponsePair> out;
  for (const auto& d : dialogues) {
    auto pairs = make_training_pairs(d);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return out;
}

std::vector<DprSample> build_dpr_samples(
    const std::vector<ContextResponsePair>& pairs, std::size_t n_neg,
    std::uint64_t seed) {
  if (n_neg == 0) throw std::invalid_argument("build_dpr_samples: n_neg == 0");
  Rng rng(Rng::mix(seed, 0xd9));
  std::vector<DprSample> out;
  out.reserve(pairs.size());
  std::vector<std::size_t> eligible;
  for (const auto& p : pairs) {
    eligible.clear();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].emotion.id == p.emotion.id) continue;
      if (pairs[i].source_dialogue_id == p.source_dialogue_id) continue;
      eligible.push_back(i);
    }
    if (eligible.size() < n_neg)
      throw std::runtime_error(
          "build_dpr_samples: only " + std::to_string(eligible.size()) +
          " cross-emotion responses available for pair " + p.pair_id +
          " but n_neg=" + std::to_string(n_neg));
    // partial Fisher-Yates draw without replacement
    DprSample s;
    s.pair = p;
    for (std::size_t k = 0; k < n_neg; ++k) {
      const std::size_t j = k + rng.index(eligible.size() - k);
      std::swap(eligible[k], eligible[j]);
      const auto& src = pairs[eligible[k]];
      s.negatives.push_back(
          {src.response.tokens, src.emotion, src.source_dialogue_id,
           src.pair_id});
    }
    out.push_back(std::move(s));
  }
  return out;
}

bool SplitSpec::in_train(const std::string& id) const {
  return std::find(train.begin(), train.end(), id) != train.end();
}
bool SplitSpec::in_valid(const std::string& id) const {
  return std::find(valid.begin(), valid.end(), id) != valid.end();
}
bool SplitSpec::in_test(const std::string& id) const {
  return std::find(test.begin(), test.end(), id) != test.end();
}

SplitSpec split_corpus(const std::vector<Dialogue>& dialogues,
                       std::uint64_t seed) {
  if (dialogues.size() < 10)
    throw std::invalid_argument("split_corpus: need at least 10 dialogues, got " +
                                std::to_string(dialogues.size()));
  std::vector<std::string> ids;
  ids.reserve(dialogues.size());
  for (const auto& d : dialogues) ids.push_back(d.dialogue_id);
  Rng rng(Rng::mix(seed, 0x57));
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  const std::size_t n_valid = n / 10;
  const std::size_t n_test = n / 10;
  SplitSpec spec;
  spec.valid.assign(ids.begin(), ids.begin() + n_valid);
  spec.test.assign(ids.begin() + n_valid, ids.begin() + n_valid + n_test);
  spec.train.assign(ids.begin() + n_valid + n_test, ids.end());
  return spec;
}

EmbeddingTable load_embedding_file(const std::string& path,
                                   std::size_t expected_dim) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open embedding file: " + path);
  EmbeddingTable table;
  table.dim = expected_dim;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> vec;
    double v;
    while (ls >> v) vec.push_back(v);
    if (vec.size() != expected_dim)
      throw std::runtime_error("embedding file line " + std::to_string(lineno) +
                               ": expected " + std::to_string(expected_dim) +
                               " floats, got " + std::to_string(vec.size()));
    table.vectors[token] = std::move(vec);
  }
  return table;
}

std::vector<std::string> embedding_coverage_gaps(
    const EmbeddingTable& table, const std::vector<std::string>& vocab_tokens) {
  std::vector<std::string> missing;
  for (const auto& t : vocab_tokens)
    if (!table.has(t)) missing.push_back(t);
  return missing;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<unk>", "<start>", "<eos>"}) add(t);
}

Vocabulary Vocabulary::build(const std::vector<Dialogue>& dialogues,
                             const EmbeddingTable* table) {
  Vocabulary v;
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances)
      for (const auto& t : u.tokens) {
        if (table != nullptr && !table->has(t)) continue;
        v.add(t);
      }
  return v;
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::invalid_argument("vocabulary id out of range: " +
                                std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(
    const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : tokens_) os << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocabulary: " + path);
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno <= 4) {
      if (line != v.tokens_[lineno - 1])
        throw std::runtime_error("vocabulary file must start with the four "
                                 "reserved tokens");
      continue;
    }
    v.add(line);
  }
  return v;
}

std::uint64_t Vocabulary::digest() const {
  std::string all;
  for (const auto& t : tokens_) {
    all += t;
    all += '\n';
  }
  return fnv1a(all);
}

}  // namespace ef
