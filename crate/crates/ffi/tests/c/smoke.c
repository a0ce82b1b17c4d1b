#include <stdio.h>
#include <string.h>
#include "phtplate.h"

int main(int argc, char **argv) {
    if (argc < 2) return 10;
    PhtModel *model = NULL;
    if (pht_model_load(argv[1], &model) != PHT_STATUS_OK) {
        fprintf(stderr, "load: %s\n", pht_last_error());
        return 11;
    }
    PhtSolution *sol = NULL;
    if (pht_solve(model, 4, &sol) != PHT_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", pht_last_error());
        return 12;
    }
    double f[8];
    size_t n = pht_solution_frequencies(sol, f, 8);
    printf("dofs %zu\n", pht_solution_num_dofs(sol));
    for (size_t i = 0; i < n; i++) printf("%.12e\n", f[i]);
    pht_solution_free(sol);

    PhtModel *bad = NULL;
    PhtStatus s = pht_model_parse("not = [valid", &bad);
    if (s != PHT_STATUS_INPUT || bad != NULL || strlen(pht_last_error()) == 0) return 13;
    pht_model_free(model);
    return 0;
}
