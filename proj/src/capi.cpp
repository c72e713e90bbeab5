#include "../include/empathyforge.h"

#include <cstdlib>
#include <cstring>
#include <functional>
#include <new>
#include <string>

#include "pipeline.hpp"

struct ef_session {
  ef::ExperimentConfig config;
  std::string last_error;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const char* or_empty(const char* s) { return s == nullptr ? "" : s; }

ef_status run(ef_session* s, char** out_json,
              const std::function<std::string()>& fn) {
  if (s == nullptr) return EF_ERROR_INVALID_ARGUMENT;
  s->last_error.clear();
  try {
    std::string summary = fn();
    if (out_json != nullptr) *out_json = dup_string(summary);
    return EF_OK;
  } catch (const ef::NumericError& e) {
    s->last_error = e.what();
    return EF_ERROR_NUMERIC;
  } catch (const std::invalid_argument& e) {
    s->last_error = e.what();
    return EF_ERROR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    s->last_error = e.what();
    return EF_ERROR_RUNTIME;
  }
}

}  // namespace

extern "C" {

ef_status ef_session_create(const char* config_path, ef_session** out) {
  if (out == nullptr) return EF_ERROR_INVALID_ARGUMENT;
  *out = nullptr;
  auto* s = new (std::nothrow) ef_session;
  if (s == nullptr) return EF_ERROR_RUNTIME;
  try {
    s->config = ef::ExperimentConfig::resolve(or_empty(config_path));
  } catch (const std::exception&) {
    delete s;
    return EF_ERROR_RUNTIME;
  }
  *out = s;
  return EF_OK;
}

void ef_session_destroy(ef_session* s) { delete s; }

const char* ef_session_last_error(const ef_session* s) {
  return s == nullptr ? "" : s->last_error.c_str();
}

void ef_string_free(char* s) { std::free(s); }

ef_status ef_gen_toy_corpus(ef_session* s, const char* out_dir,
                            char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::gen_toy_corpus(s->config, or_empty(out_dir));
  });
}

ef_status ef_train_dpr(ef_session* s, const char* corpus_dir,
                       const char* out_dir, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::train_dpr(s->config, or_empty(corpus_dir),
                                   or_empty(out_dir));
  });
}

ef_status ef_build_pools(ef_session* s, const char* corpus_dir,
                         const char* retriever_dir, const char* out_path,
                         char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::build_pools_cmd(s->config, or_empty(corpus_dir),
                                         or_empty(retriever_dir),
                                         or_empty(out_path));
  });
}

ef_status ef_retrieve(ef_session* s, const char* retriever_dir,
                      const char* pools_path, const char* context_file,
                      size_t q, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::retrieve(s->config, or_empty(retriever_dir),
                                  or_empty(pools_path),
                                  or_empty(context_file), q);
  });
}

ef_status ef_label_synth(ef_session* s, const char* corpus_dir,
                         const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::label_synth(s->config, or_empty(corpus_dir),
                                     or_empty(out_path));
  });
}

ef_status ef_train_gen(ef_session* s, const char* corpus_dir,
                       const char* retriever_dir, const char* pools_path,
                       const char* labels_path, const char* out_dir,
                       char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::train_gen(s->config, or_empty(corpus_dir),
                                   or_empty(retriever_dir),
                                   or_empty(pools_path), or_empty(labels_path),
                                   or_empty(out_dir));
  });
}

ef_status ef_generate(ef_session* s, const char* model_dir,
                      const char* corpus_dir, const char* retriever_dir,
                      const char* pools_path, const char* split,
                      const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::generate(s->config, or_empty(model_dir),
                                  or_empty(corpus_dir),
                                  or_empty(retriever_dir),
                                  or_empty(pools_path), or_empty(split),
                                  or_empty(out_path));
  });
}

ef_status ef_eval_auto(ef_session* s, const char* model_dir,
                       const char* corpus_dir, const char* retriever_dir,
                       const char* pools_path, const char* generations_path,
                       const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::eval_auto(s->config, or_empty(model_dir),
                                   or_empty(corpus_dir),
                                   or_empty(retriever_dir),
                                   or_empty(pools_path),
                                   or_empty(generations_path),
                                   or_empty(out_path));
  });
}

ef_status ef_eval_synth(ef_session* s, const char* corpus_dir,
                        const char* generations_path, const char* labels_path,
                        const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::eval_synth(s->config, or_empty(corpus_dir),
                                    or_empty(generations_path),
                                    or_empty(labels_path), or_empty(out_path));
  });
}

ef_status ef_ratings_aggregate(ef_session* s, const char* csv_path,
                               const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::ratings_aggregate(or_empty(csv_path),
                                           or_empty(out_path));
  });
}

ef_status ef_ab_aggregate(ef_session* s, const char* csv_path,
                          const char* out_path, char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::ab_aggregate_cmd(or_empty(csv_path),
                                          or_empty(out_path));
  });
}

ef_status ef_ablate(ef_session* s, const char* corpus_dir,
                    const char* retriever_dir, const char* pools_path,
                    const char* labels_path, const char* out_dir,
                    char** out_json) {
  return run(s, out_json, [&] {
    return ef::commands::ablate(s->config, or_empty(corpus_dir),
                                or_empty(retriever_dir), or_empty(pools_path),
                                or_empty(labels_path), or_empty(out_dir));
  });
}

}  // extern "C"
