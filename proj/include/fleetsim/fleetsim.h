#ifndef FLEETSIM_FLEETSIM_H
#define FLEETSIM_FLEETSIM_H

/* C interface to the fleet simulation core.
 *
 * Every call returns an fs_status. On failure, fs_last_error() describes the
 * problem; the message is thread-local and valid until the next failing call
 * on the same thread. Strings returned through char** are owned by the caller
 * and released with fs_string_free. Handles are not thread-safe. */

#include <stddef.h>
#include <stdint.h>

#if defined(FLEETSIM_BUILDING)
#define FS_API __attribute__((visibility("default")))
#else
#define FS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fs_status {
  FS_OK = 0,
  FS_INVALID_ARGUMENT = 1,
  FS_DEGENERATE_CONFIGURATION = 2,
  FS_ALIGNMENT_FAILURE = 3,
  FS_SCALE_INDETERMINATE = 4,
  FS_UNKNOWN_UAV = 5,
  FS_PARSE_ERROR = 6,
  FS_ENCODE_ERROR = 7,
  FS_IO_ERROR = 8,
  FS_MISSING_ALIGNMENT = 9,
  FS_STATE_ERROR = 10,
  FS_INTERNAL_ERROR = 99
} fs_status;

FS_API const char* fs_version(void);
FS_API const char* fs_last_error(void);
FS_API const char* fs_status_name(fs_status status);
FS_API void fs_string_free(char* s);

/* ---- protocol ---------------------------------------------------------- */

/* JSON message (as produced by fs_proto_decode) -> framed bytes as hex. */
FS_API fs_status fs_proto_encode(const char* message_json, char** hex_out);
/* Hex bytes (whitespace ignored) -> JSON array of every complete frame. */
FS_API fs_status fs_proto_decode(const char* hex, char** json_out);

/* ---- experiments ------------------------------------------------------- */

/* JSON array of experiment names. */
FS_API fs_status fs_experiment_names(char** json_out);
/* Runs `name` over `seeds` ("1..10", "1,3,5"). log_dir may be NULL or empty
 * to skip trajectory logs; threads 0 uses every core. */
FS_API fs_status fs_run_experiment(const char* name, const char* scenario_json, const char* seeds,
                                   const char* log_dir, unsigned threads, char** report_out);

/* ---- simulation -------------------------------------------------------- */

typedef struct fs_sim fs_sim;

FS_API fs_status fs_sim_create(const char* scenario_json, double dt, fs_sim** out);
FS_API void fs_sim_destroy(fs_sim* sim);
FS_API fs_status fs_sim_step(fs_sim* sim, uint32_t steps);
FS_API fs_status fs_sim_time(const fs_sim* sim, double* seconds);
FS_API fs_status fs_sim_uav_count(const fs_sim* sim, size_t* count);
/* Links UAV `index` to a ground station at "host:port". */
FS_API fs_status fs_sim_connect(fs_sim* sim, size_t index, const char* endpoint);
/* Delivers a Task message (JSON, type "task") straight to UAV `index`. */
FS_API fs_status fs_sim_send_task(fs_sim* sim, size_t index, const char* task_json);
/* JSON array with time, estimate, local truth, mode and clearance per UAV. */
FS_API fs_status fs_sim_state_json(const fs_sim* sim, char** json_out);
/* Trajectory log (CSV) of UAV `index`, sampled every fifth step. */
FS_API fs_status fs_sim_trajectory_csv(const fs_sim* sim, size_t index, char** csv_out);

/* ---- ground station ---------------------------------------------------- */

typedef struct fs_gcs fs_gcs;

/* scenario_json may be NULL. With a scenario, the ground station hosts the
 * simulated fleet in-process and fs_gcs_step advances it by dt; without one,
 * time follows the wall clock. */
FS_API fs_status fs_gcs_create(const char* scenario_json, double dt, fs_gcs** out);
FS_API void fs_gcs_destroy(fs_gcs* gcs);
/* Accepts UAV runtimes on "host:port"; port 0 picks one. */
FS_API fs_status fs_gcs_listen(fs_gcs* gcs, const char* endpoint, uint16_t* bound_port);
/* Serves the operator UI feed on "host:port". */
FS_API fs_status fs_gcs_ui_listen(fs_gcs* gcs, const char* endpoint, uint16_t* bound_port);
/* One cycle: accept, advance the hosted sim, tick, serve the UI. */
FS_API fs_status fs_gcs_step(fs_gcs* gcs, double* now_out);
/* Runs one UI command line; the ack line is returned. */
FS_API fs_status fs_gcs_command(fs_gcs* gcs, const char* command_json, char** ack_out);
FS_API fs_status fs_gcs_fleet_json(const fs_gcs* gcs, char** json_out);
/* Mission events with index >= since, as a JSON array. */
FS_API fs_status fs_gcs_events_json(const fs_gcs* gcs, size_t since, char** json_out);
FS_API fs_status fs_gcs_mission_log(const fs_gcs* gcs, char** jsonl_out);

#ifdef __cplusplus
}
#endif

#endif
