#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "larc/config.hpp"
#include "larc/data.hpp"
#include "larc/model.hpp"
#include "larc/tensor.hpp"

// Binary checkpoint format:
//   magic "LARC"
//   format version, u32 little-endian
//   metadata length, u64 little-endian, then that many bytes of UTF-8 JSON
//     (training config, step, epoch, RNG stream states, vocabulary)
//   tensor table until EOF, per tensor:
//     name length u16, name bytes, rank u8, one u32 per dim, f32 payload
// All integers and floats are little-endian. Save followed by load is
// bit-exact; a version mismatch is rejected.

namespace larc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainingConfig config;
    long long step = 0;
    int epoch = 0;
    std::vector<std::string> vocab_tokens; // content tokens, ids 3.. in order
    std::map<std::string, std::array<std::uint64_t, 4>> rng_states;
    std::vector<std::pair<std::string, Tensor>> tensors; // registry order
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the vocabulary stored in a checkpoint.
Vocabulary vocab_from_checkpoint(const Checkpoint& ck);

// Reconstructs the model a checkpoint was saved from: modules are first
// initialized from the config seed (so branches that were disabled, and thus
// never saved, get the exact draws they had at save time), then every
// registered tensor is overwritten from the tensor table.
Model model_from_checkpoint(const Checkpoint& ck);

// Snapshot of a live model's registered parameters plus bookkeeping.
Checkpoint make_checkpoint(const Model& model, const TrainingConfig& cfg, long long step,
                           int epoch, const Vocabulary& vocab,
                           const std::map<std::string, std::array<std::uint64_t, 4>>& rng_states);

} // namespace larc
