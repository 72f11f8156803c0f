#ifndef SDT_SDT_H
#define SDT_SDT_H

/* C interface to the gesture synthesis library.
 *
 * Every call returns an sdt_status. On failure the message is available from
 * sdt_last_error() until the next call on the same thread. Strings returned
 * through char** out-parameters are heap allocated; release them with
 * sdt_string_free(). Handles are not thread-safe; distinct handles may be
 * used from different threads. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sdt_status {
  SDT_OK = 0,
  SDT_ERR_USAGE = 2,
  SDT_ERR_DATA = 3,
  SDT_ERR_NUMERIC = 4,
  SDT_ERR_INTERNAL = 5
} sdt_status;

typedef struct sdt_model sdt_model; /* trained generator + templates */
typedef struct sdt_vae sdt_vae;     /* gesture VAE */

const char* sdt_version(void);
const char* sdt_last_error(void);
void sdt_string_free(char* s);

/* Caps internal parallelism; 0 reads SDT_THREADS (default: hardware). */
void sdt_set_threads(int n);

/* Synthetic dataset under out_dir. summary: JSON with manifest path and
 * per-mode counts. */
sdt_status sdt_data_synth(const char* out_dir, int clips, int modes, uint64_t seed, int frames,
                          char** summary);

/* Pre-extracted keypoints (<id>.json) + audio (<id>.wav) to a normalized
 * dataset. summary: JSON ingest report. */
sdt_status sdt_data_ingest(const char* keypoints_dir, const char* audio_dir, const char* layout,
                           const char* out_dir, double shoulder_width, int min_frames,
                           char** summary);

/* Train from a JSON config file. variant may be NULL; overrides are
 * "dotted.key=value" strings. summary: JSON with the final losses. */
sdt_status sdt_train(const char* config_path, const char* variant, const char* const* overrides,
                     size_t n_overrides, char** summary);
sdt_status sdt_train_vae(const char* config_path, const char* const* overrides,
                         size_t n_overrides, char** summary);

sdt_status sdt_model_load(const char* path, sdt_model** out);
void sdt_model_free(sdt_model* m);
/* JSON: variant, layout, template bank summary, config. */
sdt_status sdt_model_info(const sdt_model* m, char** info);

/* template_spec: "sample:SEED" | "id:CLIP" | "zero" | "file:PATH".
 * warning (may be NULL) receives a message or NULL. */
sdt_status sdt_infer(sdt_model* m, const char* wav_path, const char* template_spec,
                     int windowed, const char* out_path, char** warning);

sdt_status sdt_vae_load(const char* path, sdt_vae** out);
void sdt_vae_free(sdt_vae* v);

/* Metrics over one split of a manifest. With oracle != 0 the ground truth
 * is scored against itself and m may be NULL. report: MetricsReport JSON. */
sdt_status sdt_evaluate(sdt_model* m, const char* manifest, const char* split, sdt_vae* vae,
                        uint64_t seed, int oracle, char** report);

/* Analysis outputs, each writing <out_prefix>.json and <out_prefix>.svg.
 * templates: PCA of the model's clip templates, or of VAE templates of the
 *   split's ground truth (and model predictions when m is given).
 * factor: top decoder direction and its opposite decodings.
 * interp: sweep between two clip templates (VAE when wav_path is NULL,
 *   otherwise the generator on that audio). */
sdt_status sdt_viz_templates(sdt_model* m, sdt_vae* vae, const char* manifest, const char* split,
                             uint64_t seed, const char* out_prefix);
sdt_status sdt_viz_factor(sdt_vae* vae, double magnitude, const char* out_prefix);
sdt_status sdt_viz_interp(sdt_model* m, sdt_vae* vae, const char* manifest, const char* wav_path,
                          const char* from_clip, const char* to_clip, int steps,
                          const char* out_prefix);

#ifdef __cplusplus
}
#endif

#endif
