/* cc golden.c -I../include -L../../../target/release -lgabp_ffi -lm -lpthread -ldl
   LD_LIBRARY_PATH=../../../target/release ./a.out */
#include <math.h>
#include <stdio.h>
#include "gabp.h"

static const char *GOLDEN =
    "{\"nodes\":["
    "{\"id\":1,\"dim\":1,\"W\":[[1]],\"R\":[[1]],\"y\":[0.7],\"A\":{\"1\":[[1]],\"2\":[[1]]}},"
    "{\"id\":2,\"dim\":1,\"W\":[[1]],\"R\":[[1]],\"y\":[-0.2],\"A\":{\"1\":[[1]],\"2\":[[1]]}}"
    "],\"edges\":[[1,2]]}";

int main(void) {
    GabpNetwork *net = NULL;
    GabpRun *run = NULL;
    double info = 0.0, mean = 0.0;

    if (gabp_network_from_json(GOLDEN, &net) != GABP_STATUS_OK) {
        fprintf(stderr, "load: %s\n", gabp_last_error());
        return 1;
    }
    if (gabp_run(net, NULL, &run) != GABP_STATUS_OK) {
        fprintf(stderr, "run: %s\n", gabp_last_error());
        gabp_network_free(net);
        return 1;
    }
    gabp_run_message_info(run, 0, &info, 1);
    gabp_run_belief_mean(run, 1, &mean, 1);
    printf("gabp %s: converged=%d iterations=%zu info=%.12f mean=%.12f\n", gabp_version(),
           gabp_run_converged(run), gabp_run_iterations(run), info, mean);
    gabp_run_free(run);
    gabp_network_free(net);
    return fabs(info - (sqrt(5.0) - 1.0) / 2.0) < 1e-9 ? 0 : 1;
}
