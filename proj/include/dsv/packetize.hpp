#pragma once

// Reversible pseudo-random spreading of tensor elements over k packets.
// Element i goes to position q = (i*p) mod N, which lands in packet q mod k at
// slot q div k. With p prime and coprime to N this is a bijection, so the
// receiver recovers every surviving element's position and zero-fills the rest.

#include "dsv/codec.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

namespace dsv {

class PacketizationMap {
 public:
  // Prime chosen as the first prime >= a seed-derived offset that does not
  // divide N.
  static PacketizationMap make(std::size_t num_elements, std::size_t num_packets, std::uint64_t seed);
  static PacketizationMap with_prime(std::size_t num_elements, std::size_t num_packets, std::uint64_t prime);

  std::size_t num_elements() const { return n_; }
  std::size_t num_packets() const { return k_; }
  std::uint64_t prime() const { return p_; }
  std::uint64_t prime_inverse() const { return p_inv_; }

  // Scrambled position q of element i, and its inverse.
  std::size_t scramble(std::size_t element) const;
  std::size_t unscramble(std::size_t position) const;

  std::size_t packet_of(std::size_t element) const { return scramble(element) % k_; }
  std::size_t slot_of(std::size_t element) const { return scramble(element) / k_; }
  std::size_t element_at(std::size_t packet, std::size_t slot) const { return unscramble(slot * k_ + packet); }
  std::size_t packet_size(std::size_t packet) const;

 private:
  std::size_t n_ = 0;
  std::size_t k_ = 0;
  std::uint64_t p_ = 0;
  std::uint64_t p_inv_ = 0;
};

struct ElementList {
  std::size_t packet_index = 0;
  std::vector<std::int32_t> values;

  std::size_t element_count() const { return values.size(); }
  friend bool operator==(const ElementList&, const ElementList&) = default;
};

std::vector<ElementList> packetize(std::span<const std::int32_t> symbols, const PacketizationMap& map);
std::vector<ElementList> packetize(const CodedTensor& tensor, const PacketizationMap& map);

// Zero-fills positions of absent packets. Duplicate packet indices are rejected.
std::vector<std::int32_t> depacketize(std::span<const ElementList> received, const PacketizationMap& map);

// Packet count policy by frame area: 8 up to 640x360, 16 up to 1280x720, 24 above.
std::size_t packets_for_frame(int width, int height);

std::uint64_t frame_map_seed(std::uint64_t session_seed, std::uint32_t frame_index);

}  // namespace dsv
