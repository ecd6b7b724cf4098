#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "badiff/model.hpp"
#include "badiff/rng.hpp"

namespace badiff {

class AdamState;

// RNG streams consumed by the training loop; their (seed, counter) pairs are
// checkpointed so a resumed run replays the exact draw sequence.
struct TrainerRng {
  RngStream data;      // batch composition
  RngStream timestep;  // t ~ U{1..T}
  RngStream noise;     // eps ~ N(0, I)
  RngStream budget;    // H_target ~ U(range)

  static TrainerRng from_seed(uint64_t seed) {
    RngStream base(seed);
    TrainerRng r;
    r.data = base.fork(11);
    r.timestep = base.fork(12);
    r.noise = base.fork(13);
    r.budget = base.fork(14);
    return r;
  }
};

// Binary snapshot: magic "BADC", format version, flat config text, iteration
// count, the four RNG stream states, named parameter tensors in registration
// order, Adam moments, and a trailing FNV-1a content hash. save -> load ->
// save is byte-identical.
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const Model& model, const AdamState& adam,
                     const TrainerRng& rng, int64_t iteration);

struct LoadedCheckpoint {
  std::string config_text;
  int64_t iteration = 0;
  TrainerRng rng;
  std::vector<std::pair<std::string, std::vector<double>>> adam_m;
  std::vector<std::pair<std::string, std::vector<double>>> adam_v;
  int64_t adam_step_count = 0;
};

// Restores parameter values into an already-constructed model (names and
// shapes must match); returns the bookkeeping needed to resume training.
LoadedCheckpoint load_checkpoint(const std::string& path, Model& model);

// Reads only the embedded config text (to construct the Model first).
std::string peek_checkpoint_config(const std::string& path);

uint64_t fnv1a64(const uint8_t* data, size_t size);

}  // namespace badiff
