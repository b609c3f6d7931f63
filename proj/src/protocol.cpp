#include "olala/protocol.hpp"

#include <cmath>

#include "olala/dither.hpp"
#include "olala/error.hpp"

namespace olala {

namespace {

constexpr std::uint32_t kMagic = 0x31504C4F;  // "OLP1" read as little-endian u32
constexpr std::uint32_t kKindCount = 7;

}  // namespace

std::string to_string(QuantizerKind kind) {
  switch (kind) {
    case QuantizerKind::none: return "none";
    case QuantizerKind::fixed_hex: return "fixed_hex";
    case QuantizerKind::fixed_a2: return "fixed_a2";
    case QuantizerKind::fixed_d2: return "fixed_d2";
    case QuantizerKind::static_global: return "static_global";
    case QuantizerKind::static_per_user: return "static_per_user";
    case QuantizerKind::olala: return "olala";
  }
  return "?";
}

QuantizerKind parse_quantizer_kind(const std::string& name) {
  for (std::uint32_t k = 0; k < kKindCount; ++k) {
    const auto kind = static_cast<QuantizerKind>(k);
    if (to_string(kind) == name) return kind;
  }
  throw UsageError("unknown quantizer '" + name + "'");
}

bool is_fixed(QuantizerKind kind) {
  return kind == QuantizerKind::fixed_hex || kind == QuantizerKind::fixed_a2 || kind == QuantizerKind::fixed_d2;
}

GeneratorMatrix fixed_shape(QuantizerKind kind) {
  switch (kind) {
    case QuantizerKind::fixed_hex: return generators::hexagonal();
    case QuantizerKind::fixed_a2: return generators::a2();
    case QuantizerKind::fixed_d2: return generators::d2();
    default: throw UsageError("fixed_shape: " + to_string(kind) + " is not a fixed lattice");
  }
}

std::vector<std::uint8_t> serialize_payload(const Payload& p) {
  std::vector<std::uint8_t> out;
  put_u32(out, kMagic);
  put_u32(out, p.client);
  put_u32(out, p.round);
  put_u32(out, static_cast<std::uint32_t>(p.kind));
  put_u64(out, p.size);
  if (p.kind == QuantizerKind::none) {
    if (static_cast<std::uint64_t>(p.raw.size()) != p.size) throw ProtocolError("payload: raw length differs from m");
    for (double v : p.raw) put_f64(out, v);
    return out;
  }
  if (!p.gen) throw ProtocolError("payload: quantized payload without a generator");
  write_generator(out, *p.gen);
  put_f64(out, p.zeta);
  put_u32(out, p.padding);
  put_u64(out, static_cast<std::uint64_t>(p.indices.size()));
  for (std::uint32_t i : p.indices) put_u32(out, i);
  return out;
}

Payload deserialize_payload(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  if (get_u32(bytes, off) != kMagic) throw ProtocolError("payload: bad magic");
  Payload p;
  p.client = get_u32(bytes, off);
  p.round = get_u32(bytes, off);
  const std::uint32_t kind = get_u32(bytes, off);
  if (kind >= kKindCount) throw ProtocolError("payload: unknown quantizer kind " + std::to_string(kind));
  p.kind = static_cast<QuantizerKind>(kind);
  p.size = get_u64(bytes, off);
  if (p.kind == QuantizerKind::none) {
    if ((bytes.size() - off) / 8 != p.size || (bytes.size() - off) % 8 != 0) {
      throw ProtocolError("payload: raw body length does not match m");
    }
    p.raw.resize(static_cast<Eigen::Index>(p.size));
    for (auto& v : p.raw) v = get_f64(bytes, off);
    return p;
  }
  p.gen = read_generator(bytes, off);
  p.zeta = get_f64(bytes, off);
  if (!(p.zeta > 0.0) || !std::isfinite(p.zeta)) throw ProtocolError("payload: zeta must be positive");
  p.padding = get_u32(bytes, off);
  const std::uint64_t count = get_u64(bytes, off);
  if (count != (bytes.size() - off) / 4 || (bytes.size() - off) % 4 != 0) {
    throw ProtocolError("payload: index body length mismatch");
  }
  const auto dim = static_cast<std::uint64_t>(p.gen->dim());
  if (p.padding >= dim || count * dim != p.size + p.padding) {
    throw ProtocolError("payload: index count, padding and m are inconsistent");
  }
  p.indices.resize(static_cast<std::size_t>(count));
  for (auto& i : p.indices) i = get_u32(bytes, off);
  return p;
}

std::int64_t bits_accounting(std::int64_t m, double rate, int dim, bool include_zeta) {
  if (m < 1 || dim < 1 || !(rate > 0.0)) throw UsageError("bits_accounting: needs m, L >= 1 and R > 0");
  const double product = static_cast<double>(m) * rate;
  const double nearest = std::round(product);
  const double payload = std::abs(product - nearest) <= 1e-9 * std::max(1.0, product) ? nearest : std::ceil(product);
  return static_cast<std::int64_t>(payload) + 64LL * dim * dim + (include_zeta ? 64 : 0);
}

std::int64_t raw_bits(std::int64_t m) { return 64 * m; }

Encoded encode_update(const Eigen::Ref<const Vector>& h, const SdqCodec& codec, std::uint64_t dither_seed,
                      std::uint32_t client, std::uint32_t round, QuantizerKind kind) {
  if (kind == QuantizerKind::none) throw UsageError("encode_update: use encode_raw for the uncompressed path");
  DitherStream tx(dither_seed, codec.lattice.gen);
  const EncodedVector enc = sdq_encode_vector(codec, h, tx);
  DitherStream local(dither_seed, codec.lattice.gen);
  Encoded out;
  out.reconstruction = sdq_decode_vector(codec, enc, local);
  out.distortion = (out.reconstruction - h).squaredNorm();

  const SplitVector split = split_vector(h, codec.lattice.dim());
  DitherStream again(dither_seed, codec.lattice.gen);
  out.overload = overload_fraction(split.blocks, draw_dithers(again, split.count()), codec.zeta, codec.lattice.gamma);

  Payload& p = out.payload;
  p.client = client;
  p.round = round;
  p.kind = kind;
  p.size = static_cast<std::uint64_t>(h.size());
  p.gen = codec.lattice.gen;
  p.zeta = codec.zeta;
  p.padding = static_cast<std::uint32_t>(enc.padding);
  p.indices = enc.indices;
  return out;
}

Encoded encode_raw(const Eigen::Ref<const Vector>& h, std::uint32_t client, std::uint32_t round) {
  Encoded out;
  out.reconstruction = h;
  out.payload.client = client;
  out.payload.round = round;
  out.payload.kind = QuantizerKind::none;
  out.payload.size = static_cast<std::uint64_t>(h.size());
  out.payload.raw = h;
  return out;
}

Vector decode_payload(const Payload& payload, double gamma, std::uint64_t dither_seed) {
  if (payload.kind == QuantizerKind::none) return payload.raw;
  if (!payload.gen) throw ProtocolError("payload: missing generator");
  const SdqCodec codec(build_lattice(*payload.gen, gamma), payload.zeta);
  EncodedVector enc;
  enc.indices = payload.indices;
  enc.padding = static_cast<int>(payload.padding);
  enc.size = static_cast<Eigen::Index>(payload.size);
  DitherStream rx(dither_seed, *payload.gen);
  return sdq_decode_vector(codec, enc, rx);
}

}  // namespace olala
