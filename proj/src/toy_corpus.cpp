#include "toy_corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ef {

namespace {

const std::vector<std::string>& base_nouns() {
  static const std::vector<std::string> kNouns = {
      "dog",  "cat",   "car",    "house",  "job",    "boss",  "friend",
      "team", "exam",  "trip",   "bike",   "garden", "phone", "sister",
      "kid",  "plant", "guitar", "cake",   "letter", "game",  "coach",
      "boat", "piano", "roof",   "wallet", "shirt"};
  return kNouns;
}

const std::vector<std::string>& base_verbs() {
  static const std::vector<std::string> kVerbs = {
      "broke",   "barked", "won",    "failed", "moved",  "crashed", "helped",
      "called",  "slept",  "jumped", "changed", "stopped", "arrived", "sang"};
  return kVerbs;
}

std::vector<std::string> fillers(std::size_t want, bool nouns) {
  const auto& base = nouns ? base_nouns() : base_verbs();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < want; ++i) {
    if (i < base.size())
      out.push_back(base[i]);
    else
      out.push_back((nouns ? "noun" : "verb") + std::to_string(i));
  }
  return out;
}

std::string fill(std::string tmpl, const std::string& emo,
                 const std::string& noun, const std::string& verb) {
  auto replace = [&](const std::string& key, const std::string& val) {
    for (auto pos = tmpl.find(key); pos != std::string::npos;
         pos = tmpl.find(key))
      tmpl.replace(pos, key.size(), val);
  };
  replace("{emo}", emo);
  replace("{noun}", noun);
  replace("{verb}", verb);
  return tmpl;
}

const std::vector<std::string>& user_openers() {
  static const std::vector<std::string> kT = {
      "i felt {emo} when my {noun} {verb} .",
      "my {noun} {verb} and i felt so {emo} .",
      "i am feeling {emo} because my {noun} {verb} .",
  };
  return kT;
}

const std::vector<std::string>& user_followups() {
  static const std::vector<std::string> kT = {
      "yes , my {noun} really {verb} .",
      "it was very {emo} for me .",
      "i hope my {noun} will be fine .",
      "thanks for asking about my {noun} .",
  };
  return kT;
}

// The first entry is the dominant reply shape; the rest keep the agent side
// varied enough to exercise the empathy labelers.
const std::vector<std::string>& agent_templates() {
  static const std::vector<std::string> kT = {
      "oh , that sounds {emo} .",
      "wow , you must have felt {emo} .",
      "did your {noun} {verb} again ?",
      "i understand , that must be {emo} .",
      "that happened to me once with my {noun} .",
      "i am sorry to hear about your {noun} .",
      "that is {emo} news , i am happy for you !",
      "what did your {noun} do ?",
      "how are you now ?",
  };
  return kT;
}

}  // namespace

std::vector<Dialogue> generate_toy_corpus(const ToyCorpusParams& params,
                                          const EmotionSet& emotions) {
  if (params.emotions < 2 || params.emotions > emotions.size())
    throw std::invalid_argument("toy corpus: emotions must be in [2, 32]");
  if (params.min_turns < 2 || params.max_turns < params.min_turns)
    throw std::invalid_argument("toy corpus: bad turn bounds");
  Rng rng(Rng::mix(params.seed, 0x70c));
  const std::size_t n_nouns = (params.filler_vocab * 2 + 1) / 3;
  const auto nouns = fillers(std::max<std::size_t>(n_nouns, 2), true);
  const auto verbs =
      fillers(std::max<std::size_t>(params.filler_vocab - n_nouns, 2), false);

  std::vector<Dialogue> out;
  out.reserve(params.dialogues);
  for (std::size_t di = 0; di < params.dialogues; ++di) {
    Dialogue d;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "toy%05zu", di);
    d.dialogue_id = idbuf;
    d.emotion = emotions.by_id(static_cast<int>(di % params.emotions));
    const std::string& emo = d.emotion.name;
    const std::string& noun = nouns[rng.index(nouns.size())];
    const std::string& verb = verbs[rng.index(verbs.size())];

    std::size_t turns =
        params.min_turns + rng.index(params.max_turns - params.min_turns + 1);
    if (turns % 2) ++turns;

    for (std::size_t t = 0; t < turns; ++t) {
      std::string text;
      if (t % 2 == 0) {
        const auto& pool = (t == 0) ? user_openers() : user_followups();
        text = fill(pool[rng.index(pool.size())], emo, noun, verb);
      } else {
        const auto& pool = agent_templates();
        std::size_t ti = 0;
        if (rng.uniform() >= params.agent_template_skew)
          ti = 1 + rng.index(pool.size() - 1);
        text = fill(pool[ti], emo, noun, verb);
      }
      Utterance u;
      u.tokens = tokenize(text);
      u.speaker = (t % 2 == 0) ? Speaker::kUser : Speaker::kAgent;
      u.index = t + 1;
      d.utterances.push_back(std::move(u));
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_toy_embeddings(const std::string& path,
                          const std::vector<std::string>& tokens,
                          std::size_t dim, std::uint64_t seed) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write embedding file: " + path);
  Rng rng(Rng::mix(seed, 0xe3b));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  os.precision(8);
  for (const auto& t : tokens) {
    os << t;
    for (std::size_t i = 0; i < dim; ++i) os << ' ' << rng.uniform(-bound, bound);
    os << "\n";
  }
}

}  // namespace ef
