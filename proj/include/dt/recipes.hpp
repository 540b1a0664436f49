#pragma once

// Named end-to-end setups shared by the CLI and the acceptance run, so both
// build bit-identical datasets and teachers from one seed.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dt/distill.hpp"
#include "dt/synth.hpp"

namespace dt {

struct SynthTrainingRecipe {
  int sequences = 20;
  int length = 30;
  int pairs = 200;
  std::uint64_t data_seed = 12345;  // offset by the run seed
  int out_size = 64;                // network input side
};

/// Training pairs drawn from seeded synthetic sequences: sequence seed is
/// data_seed + seed, pair sampling seed is seed + 1.
inline std::vector<TrainingPair> synthetic_training_pairs(std::uint64_t seed, const SynthTrainingRecipe& r = {}) {
  const auto seqs = synth_sequences(r.sequences, r.length, r.data_seed + seed);
  CropConfig crop;
  crop.out_size = r.out_size;
  return sample_pairs(seqs, r.pairs, crop, seed + 1);
}

/// Frozen teacher with seeded random weights for a profile.
inline Network random_teacher(Profile p, std::uint64_t seed) {
  const auto spec = teacher_spec(p);
  return Network{spec, init_weights(spec, seed)};
}

/// Sequences whose name starts with `prefix` ("plain", "distractor", ...).
inline std::vector<SequenceRecord> select_kind(const std::vector<SequenceRecord>& all, const std::string& prefix) {
  std::vector<SequenceRecord> out;
  for (const auto& s : all)
    if (s.name.rfind(prefix + "-", 0) == 0) out.push_back(s);
  return out;
}

}  // namespace dt
