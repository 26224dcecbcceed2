#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "picpoint/dataset.hpp"
#include "picpoint/trainer.hpp"
#include "test_util.hpp"

namespace testutil {

// Synthetic datasets built once per test process and shared across cases.
inline const std::filesystem::path& synthetic_data(int objects, int views, int points, std::uint64_t seed = 1) {
  static std::mutex mutex;
  static std::map<std::string, std::unique_ptr<TempDir>> built;
  std::lock_guard lock(mutex);
  const std::string key = std::to_string(objects) + "_" + std::to_string(views) + "_" + std::to_string(points) + "_" +
                          std::to_string(seed);
  auto& slot = built[key];
  if (!slot) {
    slot = std::make_unique<TempDir>("data_" + key);
    picpoint::BuildOptions o;
    o.views = views;
    o.n_points = points;
    o.seed = seed;
    picpoint::build_synthetic_dataset(slot->path(), objects, o);
  }
  return slot->path();
}

// A configuration small enough for step-level tests.
inline picpoint::TrainConfig small_config(const std::filesystem::path& data, const std::filesystem::path& out) {
  picpoint::TrainConfig c;
  c.data = data.string();
  c.out = out.string();
  c.batch_size = 4;
  c.L = 16;
  c.d = 64;
  c.k = 10;
  c.epochs = 4;
  c.deterministic = true;
  return c;
}

}  // namespace testutil
