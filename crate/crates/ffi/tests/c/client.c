#include <stdio.h>
#include <string.h>

#include "von.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      const char *msg = von_last_error_message();                     \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,  \
              msg ? msg : "no message");                              \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(int argc, char **argv) {
  double coords[] = {0.0, 0.0, 3.0, 0.0, 1.0, 0.0, 2.0, 0.0};
  VonPointSet *ps = NULL;
  CHECK(von_point_set_new(coords, 4, 2, &ps) == VON_STATUS_OK);

  size_t order[4];
  double loss = -1.0;
  CHECK(von_baseline_order("brute", "tsp", ps, 0, order, 4, &loss) == VON_STATUS_OK);
  CHECK(loss == 3.0);

  double score = 0.0;
  CHECK(von_metric_score("tsp", ps, order, 4, &score) == VON_STATUS_OK);
  CHECK(score == loss);

  CHECK(von_baseline_order("nn", "nope", ps, 0, order, 4, NULL) == VON_STATUS_UNKNOWN_METRIC);
  CHECK(strstr(von_last_error_message(), "nope") != NULL);

  if (argc > 1) {
    VonModel *model = NULL;
    CHECK(von_model_load(argv[1], &model) == VON_STATUS_OK);
    char key[16];
    CHECK(von_model_metric(model, key, sizeof key) == VON_STATUS_OK);
    CHECK(strcmp(key, "tsp") == 0);
    CHECK(von_model_order(model, ps, order, 4, &loss) == VON_STATUS_OK);
    for (size_t i = 0; i < 4; i++) printf("%zu ", order[i]);
    printf("%.17g\n", loss);
    von_model_free(model);
  }
  von_point_set_free(ps);
  return 0;
}
