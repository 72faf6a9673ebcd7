/* Layout shared by the page-fault probe and the userspace collector.
 * All integers little-endian. */
#ifndef WSSE_PROBE_ABI_H
#define WSSE_PROBE_ABI_H

#define WSSE_ATTACH_SYMBOL "__handle_mm_fault"

#define WSSE_MAP_COUNTS "counts"       /* hash, u32 pid -> u64 count */
#define WSSE_MAP_FREQUENCY "frq"       /* per-CPU hash, u32 pid -> u64 */
#define WSSE_MAP_CONFIG "probe_config" /* array[1] of struct wsse_probe_config */
#define WSSE_MAP_DROPPED "dropped"     /* array[1] of u64 failed submissions */
#define WSSE_MAP_EVENTS "events"       /* perf event array of struct wsse_record */

#define WSSE_COUNTER_MAP_CAPACITY 10240
#define WSSE_COMM_LEN 16

struct wsse_record {
    __u32 pid;                  /* offset 0 */
    char comm[WSSE_COMM_LEN];   /* offset 4, NUL-padded */
    __u32 _pad;                 /* offset 20, zero */
    __u64 count;                /* offset 24 */
    __u64 kernel_ts_ns;         /* offset 32, CLOCK_MONOTONIC */
};                              /* size 40 */

struct wsse_probe_config {
    __u64 threshold;            /* offset 0 */
    char comm[WSSE_COMM_LEN];   /* offset 8, empty matches every task */
};                              /* size 24 */

#define WSSE_RECORD_SIZE 40
#define WSSE_PROBE_CONFIG_SIZE 24

_Static_assert(sizeof(struct wsse_record) == WSSE_RECORD_SIZE, "record size");
_Static_assert(sizeof(struct wsse_probe_config) == WSSE_PROBE_CONFIG_SIZE, "config size");

#endif
