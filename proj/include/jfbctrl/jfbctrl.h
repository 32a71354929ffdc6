#ifndef JFBCTRL_H
#define JFBCTRL_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by the functions below. Zero is success; one is a
 * runtime failure (numeric breakdown, i/o, exhausted budget); two is a
 * rejected configuration. Callers forward these as process exit codes. */
#define JFBCTRL_OK 0
#define JFBCTRL_ERR_RUNTIME 1
#define JFBCTRL_ERR_CONFIG 2

typedef struct jfbctrl_experiment jfbctrl_experiment;

/* Parse and validate a config file. Returns NULL on failure; the reason is
 * available through jfbctrl_last_error. */
jfbctrl_experiment* jfbctrl_open(const char* config_path);

void jfbctrl_close(jfbctrl_experiment* exp);

/* Overrides layered on top of the parsed file. Apply before jfbctrl_run;
 * they participate in the config hash stamped into artifacts. */
int jfbctrl_set_seed(jfbctrl_experiment* exp, unsigned long long seed);
int jfbctrl_set_audit_every(jfbctrl_experiment* exp, size_t every);
int jfbctrl_set_output_dir(jfbctrl_experiment* exp, const char* dir);

/* Execute one command: train, compare, diagnose, oracle, or neighborhood. */
int jfbctrl_run(jfbctrl_experiment* exp, const char* command);

/* Canonical serialization and 16-hex-digit hash of the effective config,
 * overrides included. The pointer stays valid until the next call that
 * touches the same handle, or jfbctrl_close. */
const char* jfbctrl_config_text(jfbctrl_experiment* exp);
const char* jfbctrl_config_hash_hex(jfbctrl_experiment* exp);

/* Most recent failure message on the calling thread; "" if none. */
const char* jfbctrl_last_error(void);

/* Format version stamped into every artifact this library writes. */
int jfbctrl_format_version(void);

#ifdef __cplusplus
}
#endif

#endif /* JFBCTRL_H */
