#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace ef {

// Deterministic synthetic corpus so every test and demo runs without any
// external data. Agent turns are heavily templated; contexts carry the
// emotion word and a per-dialogue topic so both the retriever and the
// generator have learnable structure.
struct ToyCorpusParams {
  std::size_t dialogues = 200;
  std::size_t emotions = 8;      // first K labels of the manifest
  std::size_t filler_vocab = 40; // nouns + verbs available to templates
  std::size_t min_turns = 4;     // total turns, forced even
  std::size_t max_turns = 8;
  double agent_template_skew = 0.6;  // weight of the dominant reply shape
  std::uint64_t seed = 13;
};

std::vector<Dialogue> generate_toy_corpus(const ToyCorpusParams& params,
                                          const EmotionSet& emotions);

// Word-vector text file covering the corpus vocabulary, for the pretrained
// embedding pathway. Values are seeded uniforms in +-1/sqrt(dim).
void write_toy_embeddings(const std::string& path,
                          const std::vector<std::string>& tokens,
                          std::size_t dim, std::uint64_t seed);

}  // namespace ef
