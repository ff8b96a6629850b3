#pragma once

// Per-packet entropy coding with a frame-wide symbol model, and the wire
// format for packets.
//
// Datagram layout (little-endian), header 33 bytes:
//   magic u16 | version u8 | frame_index u32 | frame_kind u8 | packet_index u16 |
//   packet_count u16 | element_count u32 | map_seed u64 | level_id u8 |
//   model_digest u32 | checksum u32 | payload...
// The checksum is CRC-32 over the header (checksum field zeroed) and payload.

#include "dsv/codec.hpp"
#include "dsv/packetize.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace dsv {

inline constexpr int kAlphabetSize = 2 * kSymbolBound + 1;
inline constexpr std::uint32_t kMaxModelTotal = 65535;
inline constexpr std::size_t kMaxModelBytes = 512;
inline constexpr std::size_t kModelCarriers = 3;
inline constexpr std::size_t kMaxDatagramBytes = 1400;
inline constexpr std::size_t kHeaderBytes = 33;
inline constexpr std::uint16_t kWireMagic = 0x5344;
inline constexpr std::uint8_t kWireVersion = 1;

class SymbolModel {
 public:
  // Frequencies indexed by symbol + kSymbolBound; every entry must be >= 1.
  static SymbolModel from_frequencies(std::vector<std::uint32_t> freqs);
  static SymbolModel deserialize(std::span<const std::uint8_t> bytes);

  std::uint32_t total() const { return cum_.back(); }
  std::uint32_t freq(std::int32_t symbol) const { return freqs_[index(symbol)]; }
  std::uint32_t cum(std::int32_t symbol) const { return cum_[index(symbol)]; }
  const std::vector<std::uint32_t>& frequencies() const { return freqs_; }

  // Symbol whose cumulative interval contains `value`.
  std::int32_t lookup(std::uint32_t value) const;

  double bits(std::int32_t symbol) const;
  const std::vector<std::uint8_t>& serialized() const { return bytes_; }
  std::uint32_t digest() const { return digest_; }

  friend bool operator==(const SymbolModel& a, const SymbolModel& b) { return a.freqs_ == b.freqs_; }

 private:
  static std::size_t index(std::int32_t symbol) { return static_cast<std::size_t>(symbol + kSymbolBound); }

  std::vector<std::uint32_t> freqs_;
  std::vector<std::uint32_t> cum_;
  std::vector<std::uint8_t> bytes_;
  std::uint32_t digest_ = 0;
};

// Histogram with an escape floor of 1, scaled so the total stays below 2^16:
//   f(s) = 1 + floor(count(s) * (65535 - 2047) / n).
// If the serialized form exceeds 512 bytes, rare symbols are folded into the
// floor until it fits.
SymbolModel fit_model(std::span<const std::int32_t> symbols);
SymbolModel fit_model(const CodedTensor& tensor);

// Ideal code length of `values` under `model`, in bytes.
double shannon_bytes(std::span<const std::int32_t> values, const SymbolModel& model);

struct WireHeader {
  std::uint16_t magic = kWireMagic;
  std::uint8_t version = kWireVersion;
  std::uint32_t frame_index = 0;
  FrameKind frame_kind = FrameKind::I;
  std::uint16_t packet_index = 0;
  std::uint16_t packet_count = 0;
  std::uint32_t element_count = 0;
  std::uint64_t map_seed = 0;
  std::uint8_t level_id = 0;
  std::uint32_t model_digest = 0;
  std::uint32_t checksum = 0;

  friend bool operator==(const WireHeader&, const WireHeader&) = default;
};

struct WirePacket {
  WireHeader header;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size() const { return kHeaderBytes + payload.size(); }
  std::vector<std::uint8_t> serialize() const;
  static WirePacket parse(std::span<const std::uint8_t> bytes);
  friend bool operator==(const WirePacket&, const WirePacket&) = default;
};

std::array<std::uint8_t, kHeaderBytes> serialize_header(const WireHeader& h);
WireHeader parse_header(std::span<const std::uint8_t> bytes);
std::uint32_t compute_checksum(const WireHeader& h, std::span<const std::uint8_t> payload);
void seal(WirePacket& packet);

struct PacketFields {
  std::uint32_t frame_index = 0;
  FrameKind frame_kind = FrameKind::I;
  std::uint16_t packet_index = 0;
  std::uint16_t packet_count = 0;
  std::uint64_t map_seed = 0;
  std::uint8_t level_id = 0;
};

// Payload is the range-coded element list.
WirePacket encode_packet(const ElementList& elements, const SymbolModel& model, const PacketFields& fields);
ElementList decode_packet(const WirePacket& wire, const SymbolModel& model);

struct FrameFields {
  std::uint32_t frame_index = 0;
  std::uint64_t map_seed = 0;
};

// Packetizes, entropy-codes and fragments one frame. Each logical packet body
// is [flags u8][ipatch 4 x u16 if flagged][model_len u16][model][coded bytes];
// packets 0..2 carry the model. Bodies longer than one datagram are split into
// fragments whose payload starts with [fragment_index u8][fragment_count u8].
std::vector<WirePacket> frame_to_packets(const CodedTensor& tensor, const PacketizationMap& map,
                                         const SymbolModel& model, const FrameFields& fields);

// Models seen recently, so a frame whose model carriers were all lost can
// still be decoded when it reuses an earlier model.
class ModelStore {
 public:
  static constexpr std::size_t kCapacity = 4;
  void remember(const SymbolModel& model);
  const SymbolModel* find(std::uint32_t digest) const;

 private:
  std::deque<SymbolModel> models_;
};

struct ReceivedFrame {
  CodedTensor tensor;
  std::size_t packets_used = 0;   // logical packets whose elements were restored
  std::size_t packet_count = 0;   // k
  bool model_available = false;
};

// Reassembles whatever subset arrived. Incomplete fragment groups count as
// lost; a missing model zero-fills the whole frame.
ReceivedFrame packets_to_tensor(std::span<const WirePacket> datagrams, const TensorDims& dims,
                                const std::vector<QualityLevel>& levels, ModelStore& models);

}  // namespace dsv
