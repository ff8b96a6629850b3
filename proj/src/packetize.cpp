#include "dsv/packetize.hpp"

#include "dsv/error.hpp"

#include <numeric>
#include <string>

namespace dsv {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_prime(std::uint64_t v) {
  if (v < 2) return false;
  if (v % 2 == 0) return v == 2;
  for (std::uint64_t d = 3; d * d <= v; d += 2)
    if (v % d == 0) return false;
  return true;
}

// Inverse of a modulo n by the extended Euclidean algorithm; requires gcd = 1.
std::uint64_t mod_inverse(std::uint64_t a, std::uint64_t n) {
  if (n == 1) return 0;
  __int128 t = 0, new_t = 1;
  __int128 r = static_cast<__int128>(n), new_r = static_cast<__int128>(a % n);
  while (new_r != 0) {
    const __int128 q = r / new_r;
    t -= q * new_t;
    std::swap(t, new_t);
    r -= q * new_r;
    std::swap(r, new_r);
  }
  if (t < 0) t += n;
  return static_cast<std::uint64_t>(t);
}

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t n) {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(a) * b % n);
}

}  // namespace

PacketizationMap PacketizationMap::with_prime(std::size_t num_elements, std::size_t num_packets,
                                              std::uint64_t prime) {
  require(num_elements >= 1, ErrorKind::InvalidInput, "packetization map needs at least one element");
  require(num_packets >= 1 && num_packets <= num_elements, ErrorKind::InvalidInput,
          "packet count must lie in [1, N], got k=" + std::to_string(num_packets) +
              " N=" + std::to_string(num_elements));
  require(std::gcd<std::uint64_t>(prime, num_elements) == 1, ErrorKind::InvalidInput,
          "prime must be coprime with the element count");
  PacketizationMap m;
  m.n_ = num_elements;
  m.k_ = num_packets;
  m.p_ = prime;
  m.p_inv_ = mod_inverse(prime, num_elements);
  return m;
}

PacketizationMap PacketizationMap::make(std::size_t num_elements, std::size_t num_packets, std::uint64_t seed) {
  require(num_elements >= 1, ErrorKind::InvalidInput, "packetization map needs at least one element");
  // Offset in [N/4, 3N/4) keeps the stride far from 0 and N.
  const std::uint64_t n = num_elements;
  const std::uint64_t span = std::max<std::uint64_t>(1, n / 2);
  std::uint64_t p = std::max<std::uint64_t>(2, n / 4 + splitmix64(seed) % span);
  while (!is_prime(p) || std::gcd(p, n) != 1) ++p;
  return with_prime(num_elements, num_packets, p);
}

std::size_t PacketizationMap::scramble(std::size_t element) const { return mulmod(element, p_, n_); }

std::size_t PacketizationMap::unscramble(std::size_t position) const { return mulmod(position, p_inv_, n_); }

std::size_t PacketizationMap::packet_size(std::size_t packet) const {
  return packet < n_ % k_ ? n_ / k_ + 1 : n_ / k_;
}

std::vector<ElementList> packetize(std::span<const std::int32_t> symbols, const PacketizationMap& map) {
  require(symbols.size() == map.num_elements(), ErrorKind::InvalidInput,
          "tensor has " + std::to_string(symbols.size()) + " elements, map expects " +
              std::to_string(map.num_elements()));
  std::vector<ElementList> lists(map.num_packets());
  const auto k = static_cast<long>(map.num_packets());
#pragma omp parallel for schedule(static)
  for (long j = 0; j < k; ++j) {
    auto& list = lists[static_cast<std::size_t>(j)];
    list.packet_index = static_cast<std::size_t>(j);
    const std::size_t count = map.packet_size(list.packet_index);
    list.values.resize(count);
    for (std::size_t s = 0; s < count; ++s) list.values[s] = symbols[map.element_at(list.packet_index, s)];
  }
  return lists;
}

std::vector<ElementList> packetize(const CodedTensor& tensor, const PacketizationMap& map) {
  return packetize(std::span<const std::int32_t>(tensor.symbols), map);
}

std::vector<std::int32_t> depacketize(std::span<const ElementList> received, const PacketizationMap& map) {
  std::vector<std::int32_t> symbols(map.num_elements(), 0);
  std::vector<bool> seen(map.num_packets(), false);
  for (const auto& list : received) {
    require(list.packet_index < map.num_packets(), ErrorKind::InvalidInput, "packet index out of range");
    require(!seen[list.packet_index], ErrorKind::InvalidInput,
            "duplicate packet index " + std::to_string(list.packet_index));
    seen[list.packet_index] = true;
    require(list.values.size() == map.packet_size(list.packet_index), ErrorKind::InvalidInput,
            "element list size does not match the map");
    for (std::size_t s = 0; s < list.values.size(); ++s)
      symbols[map.element_at(list.packet_index, s)] = list.values[s];
  }
  return symbols;
}

std::size_t packets_for_frame(int width, int height) {
  const long area = static_cast<long>(width) * height;
  if (area <= 640L * 360) return 8;
  if (area <= 1280L * 720) return 16;
  return 24;
}

std::uint64_t frame_map_seed(std::uint64_t session_seed, std::uint32_t frame_index) {
  return session_seed ^ frame_index;
}

}  // namespace dsv
