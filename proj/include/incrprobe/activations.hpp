#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "incrprobe/model.hpp"
#include "incrprobe/scan.hpp"

namespace incrprobe {

/// Encoder states of a model over a dataset, one trace per example.
struct ActivationDump {
  std::size_t hidden_dim = 0;
  std::vector<EncoderTrace> examples;

  std::size_t size() const noexcept { return examples.size(); }
};

ActivationDump dump_activations(const Checkpoint& ckpt, const std::vector<scan::Example>& data);

/// "INCA" + version byte + u32 example count + u32 hidden size, then per
/// example: u32 T, T int32 token indices, T·H doubles of h, T·H doubles of c
/// (little-endian).
std::vector<std::uint8_t> serialize_dump(const ActivationDump& dump);
ActivationDump deserialize_dump(std::span<const std::uint8_t> bytes);
void save_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump load_dump(const std::filesystem::path& path);

}  // namespace incrprobe
