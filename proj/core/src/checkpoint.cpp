#include "knnmts/checkpoint.hpp"

#include <openssl/sha.h>

#include <cstdio>

#include "binary_io.hpp"
#include "knnmts/errors.hpp"

namespace knnmts {

namespace {

constexpr std::string_view kMagic = "KMTW";
constexpr std::uint16_t kVersion = 1;

constexpr const char* kGraphForward = "buffer.graph.forward";
constexpr const char* kGraphBackward = "buffer.graph.backward";
constexpr const char* kNormMean = "buffer.norm.mean";
constexpr const char* kNormStd = "buffer.norm.std";

void put_tensor(detail::ByteWriter& w, const std::string& name, const Shape& shape, std::span<const double> data) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.put_bytes(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t dim : shape) w.put<std::uint64_t>(dim);
  w.put_array<double>(data);
}

}  // namespace

HstEncoder Checkpoint::make_encoder() const { return HstEncoder(config, params.clone(), graph); }

Checkpoint make_checkpoint(const HstEncoder& encoder, const Normalizer& normalizer) {
  return Checkpoint{encoder.config(), encoder.parameters().clone(), encoder.graph(), normalizer};
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint16_t>(kVersion);
  const std::string config = ck.config.to_json();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(config.size()));
  w.put_bytes(config);

  const std::size_t buffers = (ck.graph ? 2 : 0) + 2;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size() + buffers));
  for (const auto& [name, value] : ck.params) put_tensor(w, name, value.shape(), value.data());
  if (ck.graph) {
    put_tensor(w, kGraphForward, ck.graph->forward.shape(), ck.graph->forward.data());
    put_tensor(w, kGraphBackward, ck.graph->backward.shape(), ck.graph->backward.data());
  }
  const auto& mean = ck.normalizer.mean();
  const auto& sd = ck.normalizer.stddev();
  put_tensor(w, kNormMean, {mean.size()}, mean);
  put_tensor(w, kNormStd, {sd.size()}, sd);
  w.put_crc32();
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "kmtw");
  r.expect_magic(kMagic);
  r.verify_crc32();
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config = EncoderConfig::from_json(r.get_string(r.get<std::uint32_t>()));

  const auto count = r.get<std::uint32_t>();
  std::optional<Tensor> fwd, bwd;
  std::vector<double> mean, sd;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("tensor " + name + " has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& dim : shape) dim = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(double)) r.fail("tensor " + name + " runs past the end of the file");
    std::vector<double> data(n);
    r.get_array<double>(data);
    if (name == kGraphForward) {
      fwd = Tensor(shape, std::move(data));
    } else if (name == kGraphBackward) {
      bwd = Tensor(shape, std::move(data));
    } else if (name == kNormMean) {
      mean = std::move(data);
    } else if (name == kNormStd) {
      sd = std::move(data);
    } else {
      ck.params.add(name, Tensor(shape, std::move(data), true));
    }
  }
  r.expect_end();
  if (fwd.has_value() != bwd.has_value()) throw IoError("kmtw: incomplete graph buffers");
  if (fwd) ck.graph = TransitionMatrices{*fwd, *bwd};
  if (mean.empty() || mean.size() != sd.size()) throw IoError("kmtw: missing normalizer buffers");
  ck.normalizer = Normalizer(std::move(mean), std::move(sd));
  // Validates names and shapes against the config.
  (void)ck.make_encoder();
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

Fingerprint fingerprint_of(std::span<const unsigned char> bytes) {
  Fingerprint fp{};
  SHA256(bytes.data(), bytes.size(), fp.data());
  return fp;
}

Fingerprint fingerprint_of(const Checkpoint& checkpoint) { return fingerprint_of(encode_checkpoint(checkpoint)); }

std::string to_hex(const Fingerprint& fp) {
  std::string out;
  char buf[3];
  for (unsigned char b : fp) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

}  // namespace knnmts
