/* EmpathyForge C API: exemplar-guided empathetic response generation.
 *
 * All functions are synchronous. A session carries the experiment
 * configuration and the last error message. Commands return EF_OK or an
 * error code; on error, ef_session_last_error() describes what failed.
 * Out-parameters of type char** receive a JSON summary that the caller
 * frees with ef_string_free(); pass NULL when only the side effects are
 * wanted.
 */
#ifndef EMPATHYFORGE_H
#define EMPATHYFORGE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ef_session ef_session;

typedef enum ef_status {
  EF_OK = 0,
  EF_ERROR_INVALID_ARGUMENT = 1,
  EF_ERROR_RUNTIME = 2,
  EF_ERROR_NUMERIC = 3
} ef_status;

/* config_path may be NULL; the EF_CONFIG and EF_SEED environment variables
 * are honored either way. */
ef_status ef_session_create(const char* config_path, ef_session** out);
void ef_session_destroy(ef_session* s);
const char* ef_session_last_error(const ef_session* s);
void ef_string_free(char* s);

ef_status ef_gen_toy_corpus(ef_session* s, const char* out_dir,
                            char** out_json);
ef_status ef_train_dpr(ef_session* s, const char* corpus_dir,
                       const char* out_dir, char** out_json);
ef_status ef_build_pools(ef_session* s, const char* corpus_dir,
                         const char* retriever_dir, const char* out_path,
                         char** out_json);
ef_status ef_retrieve(ef_session* s, const char* retriever_dir,
                      const char* pools_path, const char* context_file,
                      size_t q, char** out_json);
ef_status ef_label_synth(ef_session* s, const char* corpus_dir,
                         const char* out_path, char** out_json);
ef_status ef_train_gen(ef_session* s, const char* corpus_dir,
                       const char* retriever_dir, const char* pools_path,
                       const char* labels_path, const char* out_dir,
                       char** out_json);
ef_status ef_generate(ef_session* s, const char* model_dir,
                      const char* corpus_dir, const char* retriever_dir,
                      const char* pools_path, const char* split,
                      const char* out_path, char** out_json);
ef_status ef_eval_auto(ef_session* s, const char* model_dir,
                       const char* corpus_dir, const char* retriever_dir,
                       const char* pools_path, const char* generations_path,
                       const char* out_path, char** out_json);
ef_status ef_eval_synth(ef_session* s, const char* corpus_dir,
                        const char* generations_path, const char* labels_path,
                        const char* out_path, char** out_json);
ef_status ef_ratings_aggregate(ef_session* s, const char* csv_path,
                               const char* out_path, char** out_json);
ef_status ef_ab_aggregate(ef_session* s, const char* csv_path,
                          const char* out_path, char** out_json);
ef_status ef_ablate(ef_session* s, const char* corpus_dir,
                    const char* retriever_dir, const char* pools_path,
                    const char* labels_path, const char* out_dir,
                    char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* EMPATHYFORGE_H */
