#include <stdio.h>
#include <string.h>

#include "leashed.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        LeashedStatus s_ = (call);                                         \
        if (s_ != LEASHED_STATUS_OK) {                                     \
            fprintf(stderr, "%s failed: %d %s\n", #call, (int)s_,          \
                    leashed_last_error());                                 \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    LeashedExperiment *exp = NULL;
    CHECK(leashed_experiment_new("leashed", 2, "tiny:8", "blobs:classes=3,dims=4,per_class=50", &exp));
    CHECK(leashed_experiment_set_step_size(exp, 0.05f));
    CHECK(leashed_experiment_set_batch_size(exp, 8));
    CHECK(leashed_experiment_set_max_updates(exp, 300));
    double eps[1] = {1e-9};
    CHECK(leashed_experiment_set_epsilons(exp, eps, 1));

    LeashedReport *report = NULL;
    CHECK(leashed_run(exp, NULL, &report));
    uint64_t published = 0;
    double f0 = 0.0;
    CHECK(leashed_report_summary(report, &f0, NULL, &published, NULL, NULL, NULL));
    if (published < 300 || f0 <= 0.0) {
        fprintf(stderr, "unexpected summary: %llu published, f0 %f\n", (unsigned long long)published, f0);
        return 1;
    }
    leashed_report_free(report);
    leashed_experiment_free(exp);

    LeashedSlot *slot = NULL;
    CHECK(leashed_slot_new(4, 0, &slot));
    float theta[4];
    uint64_t seq = 0;
    CHECK(leashed_slot_read(slot, theta, 4, &seq));
    bool ok = false;
    CHECK(leashed_slot_try_publish(slot, seq, theta, 4, &ok));
    CHECK(leashed_slot_read(slot, theta, 4, &seq));
    if (!ok || seq != 1) {
        fprintf(stderr, "publish failed\n");
        return 1;
    }
    leashed_slot_free(slot);

    if (leashed_slot_read(NULL, theta, 4, &seq) != LEASHED_STATUS_NULL_POINTER || strlen(leashed_last_error()) == 0) {
        fprintf(stderr, "null handle not rejected\n");
        return 1;
    }
    printf("ok %s\n", leashed_version());
    return 0;
}
