#include <stdio.h>
#include <string.h>

#include "adetc.h"

static const char *CONFIG =
    "plant = example1\n"
    "x0 = -10\n"
    "rho = 4.1\n"
    "horizon = 30\n"
    "delay_mode = constant\n"
    "delta_tau = 0.002\n";

int main(void) {
    AdetcConfig *cfg = NULL;
    AdetcTrace *trace = NULL;
    double gap = 0.0;
    double x = 0.0;

    if (adetc_config_parse(CONFIG, &cfg) != ADETC_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", adetc_last_error());
        return 1;
    }
    if (adetc_run(cfg, &trace) != ADETC_STATUS_OK) {
        fprintf(stderr, "run: %s\n", adetc_last_error());
        return 1;
    }
    if (adetc_trace_min_gap(trace, &gap) != ADETC_STATUS_OK || gap < 0.04) {
        fprintf(stderr, "min gap %g\n", gap);
        return 1;
    }
    if (adetc_trace_final_state(trace, &x, 1) != ADETC_STATUS_OK) {
        return 1;
    }

    uint8_t buf[32];
    size_t written = 0;
    AdetcMessage msg = {ADETC_MESSAGE_EVENT, 0, 1, 1.5, 0.0};
    AdetcMessage back;
    if (adetc_wire_encode(&msg, buf, sizeof buf, &written) != ADETC_STATUS_OK || written != 12 ||
        adetc_wire_decode(buf, written, &back) != ADETC_STATUS_OK || back.bit != 1 || back.t != 1.5) {
        return 1;
    }

    adetc_config_free(cfg);
    if (adetc_config_parse("mu = 0.5\n", &cfg) != ADETC_STATUS_CONFIG || strlen(adetc_last_error()) == 0) {
        return 1;
    }

    printf("status=OK events=%zu epochs=%zu min_gap=%.6f final=%.3e\n", adetc_trace_event_count(trace),
           adetc_trace_epoch_count(trace), gap, x);
    adetc_trace_free(trace);
    return 0;
}
