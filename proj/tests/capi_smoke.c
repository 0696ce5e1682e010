/* Compiled as C to keep the public header free of C++. */
#include <stdio.h>
#include <string.h>

#include "icelab/icelab.h"

int main(void) {
  icelab_config* config = NULL;
  if (icelab_config_create(&config) != ICELAB_OK) return 1;
  if (icelab_config_set(config, "lambda", "0.5") != ICELAB_OK) return 2;
  if (icelab_config_set(config, "bogus", "1") != ICELAB_ERR_CONFIG) return 3;
  if (strlen(icelab_last_error()) == 0) return 4;
  icelab_config_destroy(config);
  printf("icelab %s\n", icelab_version());
  return 0;
}
