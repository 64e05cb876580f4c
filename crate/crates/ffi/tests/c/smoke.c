/* Links against the static library and exercises the C ABI end to end. */
#include <stdio.h>
#include <string.h>

#include "awgunet.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "check failed line %d: %s (%s)\n", __LINE__,    \
              #cond, awgu_last_error_message());                      \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(int argc, char **argv) {
  const char *ckpt = argc > 1 ? argv[1] : "smoke.ckpt";
  const char *cfg =
      "variant = iv\ninput_size = 32x32\ngrowth_rate = 4\n"
      "block_layers = 2,2,2,2\ndecoder_widths = 8,8,4,4,4\n"
      "bottleneck_width = 8\nwgcam_reduction = 4\n";
  AwguModel *model = NULL;
  CHECK(awgu_model_from_config(cfg, &model) == AWGU_STATUS_OK);

  size_t c = 0, h = 0, w = 0, count = 0;
  CHECK(awgu_model_input_size(model, &c, &h, &w) == AWGU_STATUS_OK);
  CHECK(c == 3 && h == 32 && w == 32);
  CHECK(awgu_model_param_count(model, &count) == AWGU_STATUS_OK && count > 0);

  static float image[3 * 32 * 32];
  static float prob[32 * 32];
  for (size_t i = 0; i < sizeof image / sizeof *image; i++) image[i] = (float)(i % 7) / 7.0f;
  CHECK(awgu_model_predict(model, image, 1, 3, 32, 32, prob, 32 * 32) == AWGU_STATUS_OK);
  for (size_t i = 0; i < 32 * 32; i++) CHECK(prob[i] > 0.0f && prob[i] < 1.0f);

  CHECK(awgu_model_predict(model, image, 1, 3, 16, 16, prob, 16 * 16) == AWGU_STATUS_SHAPE);
  CHECK(strlen(awgu_last_error_message()) > 0);

  CHECK(awgu_model_save(model, ckpt) == AWGU_STATUS_OK);
  AwguModel *loaded = NULL;
  CHECK(awgu_model_load(ckpt, &loaded) == AWGU_STATUS_OK);
  static float prob2[32 * 32];
  CHECK(awgu_model_predict(loaded, image, 1, 3, 32, 32, prob2, 32 * 32) == AWGU_STATUS_OK);
  CHECK(memcmp(prob, prob2, sizeof prob) == 0);

  float pred[4] = {0.9f, 0.8f, 0.1f, 0.2f};
  float target[4] = {1.0f, 0.0f, 1.0f, 0.0f};
  AwguMetrics m;
  CHECK(awgu_metrics_evaluate(pred, target, 4, 0.5, &m) == AWGU_STATUS_OK);
  CHECK(m.dice == 0.5 && m.precision == 0.5 && m.recall == 0.5);

  float block[4] = {1.0f, 2.0f, 3.0f, 4.0f};
  float bands[4];
  CHECK(awgu_haar_forward(block, 1, 1, 2, 2, bands, 4) == AWGU_STATUS_OK);
  CHECK(bands[0] == 5.0f && bands[1] == -1.0f && bands[2] == -2.0f && bands[3] == 0.0f);

  CHECK(awgu_model_load(NULL, &loaded) == AWGU_STATUS_NULL_POINTER);
  awgu_model_free(model);
  awgu_model_free(loaded);
  awgu_model_free(NULL);
  printf("ok %s\n", awgu_version());
  return 0;
}
