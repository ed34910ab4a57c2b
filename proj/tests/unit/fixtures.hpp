#pragma once

// Shared test data: the default site and a small trained checkpoint.

#include "bridge/config.hpp"
#include "bridge/cvae.hpp"
#include "bridge/sampling.hpp"

namespace bridge::testing {

inline const ProjectConfig& default_config() {
  static const ProjectConfig cfg = load_config(BRIDGE_DEFAULT_CONFIG);
  return cfg;
}

inline const Dataset& small_dataset() {
  static const Dataset ds = generate_dataset(600, 11, default_config(), {});
  return ds;
}

inline CvaeConfig small_cvae_config() {
  CvaeConfig c;
  c.widths = {16, 32, 16};
  c.batch_size = 64;
  c.max_epochs = 25;
  c.seed = 3;
  return c;
}

inline const CvaeCheckpoint& small_checkpoint() {
  static const CvaeCheckpoint ckpt = train(small_dataset(), small_cvae_config());
  return ckpt;
}

inline DesignFeatures nominal_design() {
  DesignFeatures x;
  x.h_girder = 1.2;
  x.t_girder = 0.15;
  x.n_p = 4;
  x.h_p = 1.0;
  x.i = 2.0;
  x.w = 1.5;
  return x;
}

}  // namespace bridge::testing
