// Exercises the full pipeline through the shared-library C surface.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "empathyforge.h"

using nlohmann::json;

namespace {

const std::string kTmp = std::string(EF_TEST_TMP) + "/capi";
const std::string kData = EF_DATA_DIR;

std::string write_config() {
  json j;
  j["seed"] = 21;
  j["n_emb"] = 16;
  j["n_layers"] = 1;
  j["n_heads"] = 4;
  j["ffn_width"] = 32;
  j["q"] = 3;
  j["n_neg"] = 4;
  j["objective"] = {{"epochs", 2}, {"learning_rate", 1e-3}, {"batch_size", 8}};
  j["dpr"] = {{"epochs", 4}, {"learning_rate", 3e-3}, {"batch_size", 8}};
  j["toy"] = {{"dialogues", 16}, {"emotions", 3}};
  j["lexicon_path"] = kData + "/sentiment_lexicon.tsv";
  j["rules_path"] = kData + "/rule_tables.json";
  std::filesystem::create_directories(kTmp);
  const std::string path = kTmp + "/config.json";
  std::ofstream os(path);
  os << j.dump(2);
  return path;
}

struct Session {
  ef_session* s = nullptr;
  ~Session() { ef_session_destroy(s); }
};

json run_ok(ef_status status, ef_session* s, char** out) {
  INFO("last error: ", std::string(ef_session_last_error(s)));
  REQUIRE(status == EF_OK);
  REQUIRE(*out != nullptr);
  json j = json::parse(*out);
  ef_string_free(*out);
  *out = nullptr;
  return j;
}

}  // namespace

TEST_CASE("whole pipeline through the C API") {
  const std::string cfg = write_config();
  Session guard;
  REQUIRE(ef_session_create(cfg.c_str(), &guard.s) == EF_OK);
  ef_session* s = guard.s;
  char* out = nullptr;

  const std::string corpus = kTmp + "/corpus";
  const std::string retriever = kTmp + "/retriever";
  const std::string pools = kTmp + "/pools.bin";
  const std::string labels = kTmp + "/labels.jsonl";
  const std::string model = kTmp + "/model";
  const std::string gens = kTmp + "/gens.jsonl";

  json j = run_ok(ef_gen_toy_corpus(s, corpus.c_str(), &out), s, &out);
  CHECK(j["dialogues"] == 16);
  CHECK(j["pairs"].get<int>() > 16);

  j = run_ok(ef_train_dpr(s, corpus.c_str(), retriever.c_str(), &out), s, &out);
  CHECK(j["epochs_run"].get<int>() >= 1);

  j = run_ok(ef_build_pools(s, corpus.c_str(), retriever.c_str(),
                            pools.c_str(), &out), s, &out);
  CHECK(j["pools"].get<int>() == 3);
  CHECK(j["entries"].get<int>() > 0);

  // retrieval for a hand-written context
  const std::string ctx = kTmp + "/context.json";
  {
    std::ofstream os(ctx);
    os << R"({"emotion":"surprised","utterances":[{"speaker":"USER",)"
       << R"("text":"i felt surprised when my dog barked ."}]})";
  }
  j = run_ok(ef_retrieve(s, retriever.c_str(), pools.c_str(), ctx.c_str(), 2,
                         &out), s, &out);
  CHECK(j["exemplars"].size() <= 2);
  CHECK(j["emotion"] == "surprised");

  j = run_ok(ef_label_synth(s, corpus.c_str(), labels.c_str(), &out), s, &out);
  CHECK(j["pairs"].get<int>() > 16);
  CHECK(j["distribution"].contains("exp"));

  j = run_ok(ef_train_gen(s, corpus.c_str(), retriever.c_str(), pools.c_str(),
                          labels.c_str(), model.c_str(), &out), s, &out);
  CHECK(j["epochs_run"].get<int>() == 2);

  j = run_ok(ef_generate(s, model.c_str(), corpus.c_str(), retriever.c_str(),
                         pools.c_str(), "test", gens.c_str(), &out), s, &out);
  CHECK(j["generations"].get<int>() >= 1);

  j = run_ok(ef_eval_auto(s, model.c_str(), corpus.c_str(), retriever.c_str(),
                          pools.c_str(), gens.c_str(),
                          (kTmp + "/auto.json").c_str(), &out), s, &out);
  CHECK(j.contains("bleu"));
  CHECK(j.contains("ppl"));
  CHECK(j.contains("distinct1"));

  j = run_ok(ef_eval_synth(s, corpus.c_str(), gens.c_str(), labels.c_str(),
                           (kTmp + "/synth.json").c_str(), &out), s, &out);
  CHECK(j.contains("f1_ep"));
  CHECK(j.contains("sent_mae"));

  // aggregation inputs
  const std::string ratings = kTmp + "/ratings.csv";
  {
    std::ofstream os(ratings);
    os << "sample_id,annotator_id,empathy,relevance,fluency,ep,int,exp\n";
    os << "s0,a0,4,5,4,2,1,0\n"
       << "s0,a1,3,4,5,1,1,1\n";
  }
  j = run_ok(ef_ratings_aggregate(s, ratings.c_str(), "", &out), s, &out);
  CHECK(j["empathy"].get<double>() == 3.5);
  CHECK(j["samples"].get<int>() == 1);
  CHECK(j["annotators"].get<int>() == 2);

  const std::string votes = kTmp + "/votes.csv";
  {
    std::ofstream os(votes);
    os << "s1,A,A,B\ns2,TIE,TIE,A\ns3,A,B,TIE,B\n";
  }
  j = run_ok(ef_ab_aggregate(s, votes.c_str(), "", &out), s, &out);
  CHECK(j["win"].get<double>() == 33.33);
  CHECK(j["loss"].get<double>() == 33.33);
  CHECK(j["tie"].get<double>() == 33.33);

  // the three-row ablation table, smallest possible runs
  j = run_ok(ef_ablate(s, corpus.c_str(), retriever.c_str(), pools.c_str(),
                       labels.c_str(), (kTmp + "/ablation").c_str(), &out),
             s, &out);
  REQUIRE(j["rows"].size() == 3);
  CHECK(j["rows"][0]["name"] == "w/o Exemplars, w/o Emp. Losses");
  CHECK(j["rows"][1]["name"] == "w/o Emp. Losses");
  CHECK(j["rows"][2]["name"] == "full");
  std::ifstream table(kTmp + "/ablation/ablation.txt");
  CHECK(table.good());
}

TEST_CASE("error paths set codes and messages") {
  Session guard;
  REQUIRE(ef_session_create(nullptr, &guard.s) == EF_OK);
  ef_session* s = guard.s;

  CHECK(ef_train_dpr(s, "/definitely/not/here", "/tmp/x", nullptr) !=
        EF_OK);
  CHECK(std::strlen(ef_session_last_error(s)) > 0);

  char* out = nullptr;
  CHECK(ef_ab_aggregate(s, "/missing.csv", "", &out) == EF_ERROR_RUNTIME);
  CHECK(std::string(ef_session_last_error(s)).find("votes") !=
        std::string::npos);
}

TEST_CASE("session guards against null arguments") {
  CHECK(ef_session_create(nullptr, nullptr) == EF_ERROR_INVALID_ARGUMENT);
  CHECK(ef_gen_toy_corpus(nullptr, "x", nullptr) == EF_ERROR_INVALID_ARGUMENT);
  CHECK(std::string(ef_session_last_error(nullptr)).empty());
  ef_session_destroy(nullptr);  // harmless
  ef_string_free(nullptr);
}
