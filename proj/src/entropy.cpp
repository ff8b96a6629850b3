#include "dsv/entropy.hpp"

#include "dsv/error.hpp"
#include "dsv/range_coder.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace dsv {
namespace {

void put_varint(std::vector<std::uint8_t>& out, std::uint32_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int shift = 0; shift < 35; shift += 7) {
    require(pos < in.size(), ErrorKind::Format, "truncated model description");
    const std::uint8_t b = in[pos++];
    v |= static_cast<std::uint32_t>(b & 0x7F) << shift;
    if ((b & 0x80) == 0) return v;
  }
  fail(ErrorKind::Format, "malformed varint in model description");
}

template <typename T>
void put_le(std::uint8_t* dst, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* src) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(src[i]) << (8 * i);
  return static_cast<T>(v);
}

std::uint32_t crc(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b = {}) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, a.data(), static_cast<uInt>(a.size()));
  if (!b.empty()) c = crc32(c, b.data(), static_cast<uInt>(b.size()));
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> serialize_freqs(const std::vector<std::uint32_t>& freqs) {
  std::vector<std::uint8_t> out(4, 0);
  std::size_t lo = freqs.size(), hi = 0;
  for (std::size_t i = 0; i < freqs.size(); ++i)
    if (freqs[i] > 1) {
      lo = std::min(lo, i);
      hi = i;
    }
  if (lo == freqs.size()) {
    put_le<std::uint16_t>(out.data(), 1);
    put_le<std::uint16_t>(out.data() + 2, 0);
    return out;
  }
  put_le<std::uint16_t>(out.data(), static_cast<std::uint16_t>(lo));
  put_le<std::uint16_t>(out.data() + 2, static_cast<std::uint16_t>(hi));
  for (std::size_t i = lo; i <= hi;) {
    const std::uint32_t v = freqs[i] - 1;
    put_varint(out, v);
    if (v != 0) {
      ++i;
      continue;
    }
    std::size_t run = 1;
    while (i + run <= hi && freqs[i + run] == 1) ++run;
    put_varint(out, static_cast<std::uint32_t>(run - 1));
    i += run;
  }
  return out;
}

std::vector<std::int32_t> decode_elements(std::span<const std::uint8_t> coded, std::size_t count,
                                          const SymbolModel& model) {
  std::vector<std::int32_t> values(count);
  RangeDecoder dec(coded);
  const std::uint32_t total = model.total();
  for (auto& v : values) {
    const std::uint32_t target = dec.get(total);
    v = model.lookup(target);
    dec.update(model.cum(v), model.freq(v));
  }
  return values;
}

void check_wire_header(const WireHeader& h) {
  require(h.magic == kWireMagic, ErrorKind::CorruptPacket, "bad packet magic");
  require(h.version == kWireVersion, ErrorKind::CorruptPacket, "unsupported packet version");
  require(h.packet_count >= 1 && h.packet_index < h.packet_count, ErrorKind::CorruptPacket,
          "packet index outside packet count");
}

}  // namespace

SymbolModel SymbolModel::from_frequencies(std::vector<std::uint32_t> freqs) {
  require(freqs.size() == static_cast<std::size_t>(kAlphabetSize), ErrorKind::InvalidInput,
          "model needs one frequency per alphabet symbol");
  SymbolModel m;
  m.cum_.assign(freqs.size() + 1, 0);
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    require(freqs[i] >= 1, ErrorKind::InvalidInput, "every symbol needs frequency >= 1");
    m.cum_[i + 1] = m.cum_[i] + freqs[i];
  }
  require(m.cum_.back() <= kMaxModelTotal, ErrorKind::InvalidInput, "model total must stay below 2^16");
  m.freqs_ = std::move(freqs);
  m.bytes_ = serialize_freqs(m.freqs_);
  m.digest_ = crc(m.bytes_);
  return m;
}

SymbolModel SymbolModel::deserialize(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 4, ErrorKind::Format, "model description too short");
  std::vector<std::uint32_t> freqs(kAlphabetSize, 1);
  const auto lo = get_le<std::uint16_t>(bytes.data());
  const auto hi = get_le<std::uint16_t>(bytes.data() + 2);
  std::size_t pos = 4;
  if (lo <= hi) {
    require(hi < kAlphabetSize, ErrorKind::Format, "model range outside alphabet");
    for (std::size_t i = lo; i <= hi;) {
      const std::uint32_t v = get_varint(bytes, pos);
      if (v != 0) {
        freqs[i++] = v + 1;
        continue;
      }
      const std::size_t run = get_varint(bytes, pos) + 1;
      require(i + run <= static_cast<std::size_t>(hi) + 1, ErrorKind::Format, "model run overflows range");
      i += run;
    }
  }
  require(pos == bytes.size(), ErrorKind::Format, "trailing bytes after model description");
  return from_frequencies(std::move(freqs));
}

std::int32_t SymbolModel::lookup(std::uint32_t value) const {
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), value);
  return static_cast<std::int32_t>(it - cum_.begin() - 1) - kSymbolBound;
}

double SymbolModel::bits(std::int32_t symbol) const {
  return -std::log2(static_cast<double>(freq(symbol)) / total());
}

SymbolModel fit_model(std::span<const std::int32_t> symbols) {
  require(!symbols.empty(), ErrorKind::InvalidInput, "cannot fit a model to an empty tensor");
  std::vector<std::uint64_t> counts(kAlphabetSize, 0);
  for (auto s : symbols) {
    require(s >= -kSymbolBound && s <= kSymbolBound, ErrorKind::InvalidInput, "symbol outside alphabet");
    ++counts[static_cast<std::size_t>(s + kSymbolBound)];
  }
  const std::uint64_t budget = kMaxModelTotal - kAlphabetSize;
  std::uint64_t threshold = 0;
  for (;;) {
    std::uint64_t kept = 0;
    for (auto c : counts)
      if (c >= threshold) kept += c;
    std::vector<std::uint32_t> freqs(kAlphabetSize, 1);
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (counts[i] >= threshold && kept > 0) freqs[i] += static_cast<std::uint32_t>(counts[i] * budget / kept);
    auto model = SymbolModel::from_frequencies(std::move(freqs));
    if (model.serialized().size() <= kMaxModelBytes) return model;
    threshold = std::max<std::uint64_t>(2, threshold * 2);
  }
}

SymbolModel fit_model(const CodedTensor& tensor) { return fit_model(std::span<const std::int32_t>(tensor.symbols)); }

double shannon_bytes(std::span<const std::int32_t> values, const SymbolModel& model) {
  double bits = 0.0;
  for (auto v : values) bits += model.bits(v);
  return bits / 8.0;
}

std::array<std::uint8_t, kHeaderBytes> serialize_header(const WireHeader& h) {
  std::array<std::uint8_t, kHeaderBytes> b{};
  std::uint8_t* p = b.data();
  put_le(p, h.magic);
  put_le(p + 2, h.version);
  put_le(p + 3, h.frame_index);
  put_le(p + 7, static_cast<std::uint8_t>(h.frame_kind));
  put_le(p + 8, h.packet_index);
  put_le(p + 10, h.packet_count);
  put_le(p + 12, h.element_count);
  put_le(p + 16, h.map_seed);
  put_le(p + 24, h.level_id);
  put_le(p + 25, h.model_digest);
  put_le(p + 29, h.checksum);
  return b;
}

WireHeader parse_header(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= kHeaderBytes, ErrorKind::CorruptPacket, "datagram shorter than the header");
  const std::uint8_t* p = bytes.data();
  WireHeader h;
  h.magic = get_le<std::uint16_t>(p);
  h.version = get_le<std::uint8_t>(p + 2);
  h.frame_index = get_le<std::uint32_t>(p + 3);
  const auto kind = get_le<std::uint8_t>(p + 7);
  require(kind <= 2, ErrorKind::CorruptPacket, "unknown frame kind");
  h.frame_kind = static_cast<FrameKind>(kind);
  h.packet_index = get_le<std::uint16_t>(p + 8);
  h.packet_count = get_le<std::uint16_t>(p + 10);
  h.element_count = get_le<std::uint32_t>(p + 12);
  h.map_seed = get_le<std::uint64_t>(p + 16);
  h.level_id = get_le<std::uint8_t>(p + 24);
  h.model_digest = get_le<std::uint32_t>(p + 25);
  h.checksum = get_le<std::uint32_t>(p + 29);
  return h;
}

std::uint32_t compute_checksum(const WireHeader& h, std::span<const std::uint8_t> payload) {
  WireHeader zeroed = h;
  zeroed.checksum = 0;
  const auto bytes = serialize_header(zeroed);
  return crc(bytes, payload);
}

void seal(WirePacket& packet) { packet.header.checksum = compute_checksum(packet.header, packet.payload); }

std::vector<std::uint8_t> WirePacket::serialize() const {
  const auto h = serialize_header(header);
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

WirePacket WirePacket::parse(std::span<const std::uint8_t> bytes) {
  WirePacket p;
  p.header = parse_header(bytes);
  p.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return p;
}

WirePacket encode_packet(const ElementList& elements, const SymbolModel& model, const PacketFields& fields) {
  RangeEncoder enc;
  const std::uint32_t total = model.total();
  for (auto v : elements.values) {
    require(v >= -kSymbolBound && v <= kSymbolBound, ErrorKind::InvalidInput,
            "element " + std::to_string(v) + " outside the alphabet");
    enc.encode(model.cum(v), model.freq(v), total);
  }
  WirePacket p;
  p.header.frame_index = fields.frame_index;
  p.header.frame_kind = fields.frame_kind;
  p.header.packet_index = fields.packet_index;
  p.header.packet_count = fields.packet_count;
  p.header.element_count = static_cast<std::uint32_t>(elements.values.size());
  p.header.map_seed = fields.map_seed;
  p.header.level_id = fields.level_id;
  p.header.model_digest = model.digest();
  p.payload = enc.finish();
  seal(p);
  return p;
}

ElementList decode_packet(const WirePacket& wire, const SymbolModel& model) {
  check_wire_header(wire.header);
  require(compute_checksum(wire.header, wire.payload) == wire.header.checksum, ErrorKind::CorruptPacket,
          "checksum mismatch on packet " + std::to_string(wire.header.packet_index));
  require(wire.header.model_digest == model.digest(), ErrorKind::ModelMismatch,
          "packet was coded with a different symbol model");
  ElementList list;
  list.packet_index = wire.header.packet_index;
  list.values = decode_elements(wire.payload, wire.header.element_count, model);
  return list;
}

std::vector<WirePacket> frame_to_packets(const CodedTensor& tensor, const PacketizationMap& map,
                                         const SymbolModel& model, const FrameFields& fields) {
  require(map.num_packets() <= 0xFFFF, ErrorKind::InvalidInput, "too many packets");
  const auto lists = packetize(tensor, map);
  const long k = static_cast<long>(lists.size());
  std::vector<std::vector<WirePacket>> per_packet(lists.size());
  constexpr std::size_t chunk = kMaxDatagramBytes - kHeaderBytes - 2;

#pragma omp parallel for schedule(dynamic)
  for (long j = 0; j < k; ++j) {
    const auto idx = static_cast<std::size_t>(j);
    PacketFields pf{fields.frame_index, tensor.kind, static_cast<std::uint16_t>(idx),
                    static_cast<std::uint16_t>(k), fields.map_seed, static_cast<std::uint8_t>(tensor.level_id)};
    const WirePacket logical = encode_packet(lists[idx], model, pf);

    std::vector<std::uint8_t> body;
    body.push_back(tensor.ipatch ? 1 : 0);
    if (tensor.ipatch) {
      const Rect& r = *tensor.ipatch;
      for (int v : {r.x, r.y, r.width, r.height}) {
        body.push_back(static_cast<std::uint8_t>(v & 0xFF));
        body.push_back(static_cast<std::uint8_t>(v >> 8));
      }
    }
    const bool carrier = idx < kModelCarriers;
    const auto& mb = model.serialized();
    const std::size_t model_len = carrier ? mb.size() : 0;
    body.push_back(static_cast<std::uint8_t>(model_len & 0xFF));
    body.push_back(static_cast<std::uint8_t>(model_len >> 8));
    if (carrier) body.insert(body.end(), mb.begin(), mb.end());
    body.insert(body.end(), logical.payload.begin(), logical.payload.end());

    const std::size_t frags = std::max<std::size_t>(1, (body.size() + chunk - 1) / chunk);
    auto& out = per_packet[idx];
    for (std::size_t f = 0; f < frags; ++f) {
      WirePacket d;
      d.header = logical.header;
      d.payload.push_back(static_cast<std::uint8_t>(f));
      d.payload.push_back(static_cast<std::uint8_t>(frags));
      const std::size_t begin = f * chunk;
      const std::size_t end = std::min(body.size(), begin + chunk);
      d.payload.insert(d.payload.end(), body.begin() + static_cast<long>(begin), body.begin() + static_cast<long>(end));
      seal(d);
      out.push_back(std::move(d));
    }
  }
  std::vector<WirePacket> all;
  for (auto& group : per_packet)
    for (auto& d : group) all.push_back(std::move(d));
  require(std::all_of(per_packet.begin(), per_packet.end(), [](const auto& g) { return g.size() <= 255; }),
          ErrorKind::InvalidInput, "packet needs more than 255 fragments");
  return all;
}

void ModelStore::remember(const SymbolModel& model) {
  if (find(model.digest()) != nullptr) return;
  models_.push_back(model);
  if (models_.size() > kCapacity) models_.pop_front();
}

const SymbolModel* ModelStore::find(std::uint32_t digest) const {
  for (auto it = models_.rbegin(); it != models_.rend(); ++it)
    if (it->digest() == digest) return &*it;
  return nullptr;
}

ReceivedFrame packets_to_tensor(std::span<const WirePacket> datagrams, const TensorDims& dims,
                                const std::vector<QualityLevel>& levels, ModelStore& models) {
  require(!datagrams.empty(), ErrorKind::InvalidInput, "packets_to_tensor needs at least one packet");
  const WireHeader& first = datagrams.front().header;
  struct Group {
    std::vector<const WirePacket*> frags;
    std::size_t count = 0;
  };
  std::map<std::uint16_t, Group> groups;
  for (const auto& d : datagrams) {
    check_wire_header(d.header);
    require(compute_checksum(d.header, d.payload) == d.header.checksum, ErrorKind::CorruptPacket,
            "checksum mismatch on packet " + std::to_string(d.header.packet_index));
    require(d.header.frame_index == first.frame_index && d.header.packet_count == first.packet_count &&
                d.header.map_seed == first.map_seed,
            ErrorKind::InvalidInput, "packets from different frames");
    require(d.payload.size() >= 2 && d.payload[1] >= 1 && d.payload[0] < d.payload[1], ErrorKind::CorruptPacket,
            "bad fragment prefix");
    auto& g = groups[d.header.packet_index];
    if (g.frags.empty()) {
      g.count = d.payload[1];
      g.frags.assign(g.count, nullptr);
    }
    require(d.payload[1] == g.count, ErrorKind::CorruptPacket, "inconsistent fragment count");
    require(g.frags[d.payload[0]] == nullptr, ErrorKind::InvalidInput,
            "duplicate packet index " + std::to_string(d.header.packet_index));
    g.frags[d.payload[0]] = &d;
  }

  ReceivedFrame out;
  out.packet_count = first.packet_count;
  CodedTensor& t = out.tensor;
  t.kind = first.frame_kind;
  t.dims = dims;
  t.level_id = first.level_id;
  t.quant_step = level_by_id(levels, first.level_id).quant_step;
  t.symbols.assign(dims.size(), 0);

  struct Body {
    std::uint16_t index;
    std::uint32_t element_count;
    std::vector<std::uint8_t> coded;
  };
  std::vector<Body> bodies;
  const SymbolModel* model = models.find(first.model_digest);
  std::optional<SymbolModel> carried;
  for (auto& [index, g] : groups) {
    if (std::any_of(g.frags.begin(), g.frags.end(), [](auto* p) { return p == nullptr; })) continue;
    std::vector<std::uint8_t> body;
    for (const auto* f : g.frags) body.insert(body.end(), f->payload.begin() + 2, f->payload.end());
    std::size_t pos = 0;
    const auto need = [&](std::size_t n) {
      require(pos + n <= body.size(), ErrorKind::CorruptPacket, "truncated packet body");
    };
    need(1);
    const bool has_patch = body[pos++] != 0;
    if (has_patch) {
      need(8);
      int v[4];
      for (int& x : v) {
        x = body[pos] | (body[pos + 1] << 8);
        pos += 2;
      }
      t.ipatch = Rect{v[0], v[1], v[2], v[3]};
    }
    need(2);
    const std::size_t model_len = body[pos] | (body[pos + 1] << 8);
    pos += 2;
    need(model_len);
    if (model_len > 0 && !carried) {
      carried = SymbolModel::deserialize(std::span(body).subspan(pos, model_len));
      require(carried->digest() == first.model_digest, ErrorKind::ModelMismatch,
              "carried model does not match the header digest");
    }
    pos += model_len;
    bodies.push_back({index, g.frags.front()->header.element_count, std::vector<std::uint8_t>(body.begin() + static_cast<long>(pos), body.end())});
  }
  if (carried) {
    models.remember(*carried);
    model = models.find(first.model_digest);
  }
  if (t.kind == FrameKind::PWithIPatch && !t.ipatch) t.kind = FrameKind::P;
  if (model == nullptr || bodies.empty()) return out;

  out.model_available = true;
  const auto map = PacketizationMap::make(dims.size(), first.packet_count, first.map_seed);
  std::vector<ElementList> lists;
  for (const auto& b : bodies) {
    require(b.element_count == map.packet_size(b.index), ErrorKind::CorruptPacket, "element count mismatch");
    lists.push_back({b.index, decode_elements(b.coded, b.element_count, *model)});
  }
  t.symbols = depacketize(lists, map);
  out.packets_used = lists.size();
  return out;
}

}  // namespace dsv
