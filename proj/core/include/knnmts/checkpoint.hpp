#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnmts/data.hpp"
#include "knnmts/encoder.hpp"

namespace knnmts {

using Fingerprint = std::array<unsigned char, 32>;

/// Everything needed to rebuild a trained encoder: shape config, weights,
/// the fixed transition matrices (if any) and the training-split normalizer.
struct Checkpoint {
  EncoderConfig config;
  ParameterSet params;
  std::optional<TransitionMatrices> graph;
  Normalizer normalizer;

  HstEncoder make_encoder() const;
};

Checkpoint make_checkpoint(const HstEncoder& encoder, const Normalizer& normalizer);

/// `kmtw` layout: "KMTW", u16 version, u32 config length + config JSON,
/// u32 tensor count, tensors as (u32 name length, name, u32 rank, u64 dims,
/// f64 payload), CRC32 footer. Fixed buffers are stored as tensors named
/// "buffer.*".
std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the encoded checkpoint bytes.
Fingerprint fingerprint_of(std::span<const unsigned char> bytes);
Fingerprint fingerprint_of(const Checkpoint& checkpoint);
std::string to_hex(const Fingerprint& fp);

}  // namespace knnmts
