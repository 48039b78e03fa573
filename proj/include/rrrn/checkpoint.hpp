#pragma once

#include <filesystem>
#include <vector>

#include "rrrn/config.hpp"
#include "rrrn/flow.hpp"
#include "rrrn/tensor.hpp"

namespace rrrn {

struct EpochStats {
    int epoch = 0;  // 1-based
    double cls = 0.0;
    double rb = 0.0;
    double cor = 0.0;
    double total = 0.0;
    double train_accuracy = 0.0;

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct Checkpoint {
    RunConfig config;
    int epoch = 0;
    ParameterSet params;
    ParameterSet adam_m;
    ParameterSet adam_v;
    long long adam_steps = 0;
    FlowNormalization normalization;
    std::vector<EpochStats> log;
};

/// Versioned little-endian binary: magic "RRCK", version, canonical config
/// text, epoch, normalization, optimizer step count, then the named float32
/// tensors (name, shape, values) of params and both Adam moments, then the
/// per-epoch log.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rounds every value to float32, the on-disk precision.
void round_to_storage(ParameterSet& set);

}  // namespace rrrn
