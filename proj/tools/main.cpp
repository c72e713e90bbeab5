// Command-line front end. Talks to the core exclusively through the
// empathyforge C API.
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "empathyforge.h"

namespace {

struct SessionGuard {
  ef_session* s = nullptr;
  ~SessionGuard() { ef_session_destroy(s); }
};

int finish(ef_session* s, ef_status status, char** json) {
  if (status != EF_OK) {
    std::fprintf(stderr, "error: %s\n", ef_session_last_error(s));
    return static_cast<int>(status);
  }
  if (*json != nullptr) {
    std::printf("%s\n", *json);
    ef_string_free(*json);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exemplar-guided empathetic response generation"};
  app.require_subcommand(1);

  std::string config;
  app.add_option("--config", config,
                 "experiment config JSON (default: $EF_CONFIG)");

  std::string corpus_dir, out_dir, out_path, retriever_dir, pools_path;
  std::string labels_path, model_dir, generations_path, context_file;
  std::string split = "test", csv_path;
  std::size_t q = 0;

  auto* c_toy = app.add_subcommand("gen-toy-corpus",
                                   "write a deterministic synthetic corpus");
  c_toy->add_option("--out", out_dir)->required();

  auto* c_dpr = app.add_subcommand("train-dpr", "train the bi-encoder retriever");
  c_dpr->add_option("--corpus", corpus_dir)->required();
  c_dpr->add_option("--out", out_dir)->required();

  auto* c_pools = app.add_subcommand("build-pools",
                                     "encode per-emotion candidate pools");
  c_pools->add_option("--corpus", corpus_dir)->required();
  c_pools->add_option("--retriever", retriever_dir)->required();
  c_pools->add_option("--out", out_path)->required();

  auto* c_retr = app.add_subcommand("retrieve", "top-q exemplars for a context");
  c_retr->add_option("--retriever", retriever_dir)->required();
  c_retr->add_option("--pools", pools_path)->required();
  c_retr->add_option("--context-file", context_file)->required();
  c_retr->add_option("--q", q);

  auto* c_label = app.add_subcommand("label-synth",
                                     "synthesize empathy labels for a corpus");
  c_label->add_option("--corpus", corpus_dir)->required();
  c_label->add_option("--out", out_path)->required();

  auto* c_train = app.add_subcommand("train-gen", "train the generator");
  c_train->add_option("--corpus", corpus_dir)->required();
  c_train->add_option("--retriever", retriever_dir);
  c_train->add_option("--pools", pools_path);
  c_train->add_option("--labels", labels_path)->required();
  c_train->add_option("--out", out_dir)->required();

  auto* c_gen = app.add_subcommand("generate", "decode responses for a split");
  c_gen->add_option("--model", model_dir)->required();
  c_gen->add_option("--corpus", corpus_dir)->required();
  c_gen->add_option("--retriever", retriever_dir);
  c_gen->add_option("--pools", pools_path);
  c_gen->add_option("--split", split)->check(CLI::IsMember({"train", "valid", "test"}));
  c_gen->add_option("--out", out_path)->required();

  auto* c_eauto = app.add_subcommand("eval-auto",
                                     "BLEU / PPL / Distinct-n on the test split");
  c_eauto->add_option("--model", model_dir)->required();
  c_eauto->add_option("--corpus", corpus_dir)->required();
  c_eauto->add_option("--retriever", retriever_dir);
  c_eauto->add_option("--pools", pools_path);
  c_eauto->add_option("--generations", generations_path);
  c_eauto->add_option("--out", out_path)->required();

  auto* c_esynth = app.add_subcommand("eval-synth",
                                      "macro-F1 / MAE against synthetic labels");
  c_esynth->add_option("--corpus", corpus_dir)->required();
  c_esynth->add_option("--generations", generations_path)->required();
  c_esynth->add_option("--labels", labels_path)->required();
  c_esynth->add_option("--out", out_path)->required();

  auto* c_rat = app.add_subcommand("ratings-aggregate",
                                   "mean human ratings per attribute");
  c_rat->add_option("--in", csv_path)->required();
  c_rat->add_option("--out", out_path);

  auto* c_ab = app.add_subcommand("ab-aggregate",
                                  "majority-vote WIN/LOSS/TIE percentages");
  c_ab->add_option("--in", csv_path)->required();
  c_ab->add_option("--out", out_path);

  auto* c_abl = app.add_subcommand("ablate",
                                   "train and compare the three ablation rows");
  c_abl->add_option("--corpus", corpus_dir)->required();
  c_abl->add_option("--retriever", retriever_dir)->required();
  c_abl->add_option("--pools", pools_path)->required();
  c_abl->add_option("--labels", labels_path)->required();
  c_abl->add_option("--out", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  SessionGuard guard;
  if (ef_session_create(config.empty() ? nullptr : config.c_str(), &guard.s) !=
      EF_OK) {
    std::fprintf(stderr, "error: cannot load config\n");
    return 1;
  }
  ef_session* s = guard.s;
  char* json = nullptr;

  if (c_toy->parsed())
    return finish(s, ef_gen_toy_corpus(s, out_dir.c_str(), &json), &json);
  if (c_dpr->parsed())
    return finish(s, ef_train_dpr(s, corpus_dir.c_str(), out_dir.c_str(), &json),
                  &json);
  if (c_pools->parsed())
    return finish(s, ef_build_pools(s, corpus_dir.c_str(),
                                    retriever_dir.c_str(), out_path.c_str(),
                                    &json), &json);
  if (c_retr->parsed())
    return finish(s, ef_retrieve(s, retriever_dir.c_str(), pools_path.c_str(),
                                 context_file.c_str(), q, &json), &json);
  if (c_label->parsed())
    return finish(s, ef_label_synth(s, corpus_dir.c_str(), out_path.c_str(),
                                    &json), &json);
  if (c_train->parsed())
    return finish(s, ef_train_gen(s, corpus_dir.c_str(), retriever_dir.c_str(),
                                  pools_path.c_str(), labels_path.c_str(),
                                  out_dir.c_str(), &json), &json);
  if (c_gen->parsed())
    return finish(s, ef_generate(s, model_dir.c_str(), corpus_dir.c_str(),
                                 retriever_dir.c_str(), pools_path.c_str(),
                                 split.c_str(), out_path.c_str(), &json), &json);
  if (c_eauto->parsed())
    return finish(s, ef_eval_auto(s, model_dir.c_str(), corpus_dir.c_str(),
                                  retriever_dir.c_str(), pools_path.c_str(),
                                  generations_path.c_str(), out_path.c_str(),
                                  &json), &json);
  if (c_esynth->parsed())
    return finish(s, ef_eval_synth(s, corpus_dir.c_str(),
                                   generations_path.c_str(),
                                   labels_path.c_str(), out_path.c_str(),
                                   &json), &json);
  if (c_rat->parsed())
    return finish(s, ef_ratings_aggregate(s, csv_path.c_str(),
                                          out_path.c_str(), &json), &json);
  if (c_ab->parsed())
    return finish(s, ef_ab_aggregate(s, csv_path.c_str(), out_path.c_str(),
                                     &json), &json);
  if (c_abl->parsed())
    return finish(s, ef_ablate(s, corpus_dir.c_str(), retriever_dir.c_str(),
                               pools_path.c_str(), labels_path.c_str(),
                               out_dir.c_str(), &json), &json);
  return 1;
}
