#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "olala/lattice.hpp"
#include "olala/sdq.hpp"

namespace olala {

enum class QuantizerKind { none, fixed_hex, fixed_a2, fixed_d2, static_global, static_per_user, olala };

std::string to_string(QuantizerKind kind);
/// Accepts the to_string() names. Throws UsageError otherwise.
QuantizerKind parse_quantizer_kind(const std::string& name);
bool is_fixed(QuantizerKind kind);
/// Unnormalized shape for the fixed kinds.
GeneratorMatrix fixed_shape(QuantizerKind kind);

/// What one client sends to the server in one round.
struct Payload {
  std::uint32_t client = 0;
  std::uint32_t round = 0;
  QuantizerKind kind = QuantizerKind::none;
  std::uint64_t size = 0;  // m
  // quantized kinds
  std::optional<GeneratorMatrix> gen;
  double zeta = 1.0;
  std::uint32_t padding = 0;
  std::vector<std::uint32_t> indices;
  // QuantizerKind::none
  Vector raw;
};

/// Header: magic "OLP1", client, round, kind (u32 each), m (u64). Quantized
/// body: generator (u32 L, L*L f64 row-major), zeta (f64), padding (u32),
/// index count (u64), indices (u32). Raw body: m f64 values. Little-endian.
std::vector<std::uint8_t> serialize_payload(const Payload& payload);
/// Throws ProtocolError on malformed or inconsistent input.
Payload deserialize_payload(std::span<const std::uint8_t> bytes);

/// ceil(m R) + 64 L^2 (+ 64 for zeta). Products within 1e-9 of an integer
/// are not rounded up.
std::int64_t bits_accounting(std::int64_t m, double rate, int dim, bool include_zeta);
/// 64 m, the cost of sending the update uncompressed.
std::int64_t raw_bits(std::int64_t m);

struct Encoded {
  Payload payload;
  Vector reconstruction;  // what the server will decode
  double distortion = 0.0;
  double overload = 0.0;
};

/// Client side of one transmission: SDQ-encodes `h` with dithers from
/// `dither_seed` and returns the payload and the local reconstruction.
Encoded encode_update(const Eigen::Ref<const Vector>& h, const SdqCodec& codec, std::uint64_t dither_seed,
                      std::uint32_t client, std::uint32_t round, QuantizerKind kind);
Encoded encode_raw(const Eigen::Ref<const Vector>& h, std::uint32_t client, std::uint32_t round);

/// Server side: rebuilds the codebook from the payload's generator and the
/// shared gamma, regenerates the dithers and decodes.
Vector decode_payload(const Payload& payload, double gamma, std::uint64_t dither_seed);

}  // namespace olala
