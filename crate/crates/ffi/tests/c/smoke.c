#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "sbmca.h"

#define CHECK(call)                                                              \
    do {                                                                         \
        SbmcaStatus s_ = (call);                                                 \
        if (s_ != SBMCA_STATUS_OK) {                                             \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_,              \
                    sbmca_last_error_message());                                 \
            return 1;                                                            \
        }                                                                        \
    } while (0)

int main(void) {
    SbmcaDataset *ds = NULL;
    CHECK(sbmca_dataset_generate(3, 0.0, 4000, &ds));
    size_t n = sbmca_dataset_len(ds);
    size_t m = sbmca_dataset_block_len(ds);
    double *x = malloc(n * sizeof(double));
    double *xp = malloc(n * sizeof(double));
    double *est = malloc(n * sizeof(double));
    CHECK(sbmca_dataset_copy_signal(ds, SBMCA_SIGNAL_MIXTURE, x, n));
    CHECK(sbmca_dataset_copy_signal(ds, SBMCA_SIGNAL_KNOWN, xp, n));

    SbmcaDictionary *d1 = NULL, *dct = NULL;
    CHECK(sbmca_dataset_known_dictionary(ds, 8, &d1));
    CHECK(sbmca_dictionary_dct(m, &dct));
    SbmcaResult *res = NULL;
    CHECK(sbmca_separate_mca(x, n, m, d1, dct, 0.03, &res));
    CHECK(sbmca_result_copy_known(res, est, n));
    double snr = 0.0;
    CHECK(sbmca_snr_db(xp, est, n, &snr));

    if (sbmca_dictionary_dct(0, &dct) != SBMCA_STATUS_INVALID_ARGUMENT) {
        return 1;
    }
    printf("snr %.3f\n", snr);

    sbmca_result_free(res);
    sbmca_dictionary_free(d1);
    sbmca_dictionary_free(dct);
    sbmca_dataset_free(ds);
    free(x);
    free(xp);
    free(est);
    return snr > 10.0 ? 0 : 1;
}
