#include "dsv/delivery.hpp"

#include "dsv/error.hpp"
#include "dsv/metrics.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dsv {

Rect ipatch_rect(std::uint32_t frame_index, int k_patch, int frame_width, int frame_height, int patch_width,
                 int patch_height) {
  require(k_patch >= 1, ErrorKind::InvalidInput, "k_patch must be positive");
  require(frame_width > 0 && frame_height > 0, ErrorKind::InvalidInput, "frame dimensions must be positive");
  require(patch_width > 0 && patch_height > 0, ErrorKind::InvalidInput, "patch dimensions must be positive");
  require(patch_width <= frame_width && patch_height <= frame_height, ErrorKind::InvalidInput,
          "patch larger than frame");
  const int cols = (frame_width + patch_width - 1) / patch_width;
  const int rows = (frame_height + patch_height - 1) / patch_height;
  require(cols * rows == k_patch, ErrorKind::InvalidInput, "patch tiling does not have k_patch tiles");
  const int tile = static_cast<int>(frame_index % static_cast<std::uint32_t>(k_patch));
  const int x = (tile % cols) * patch_width;
  const int y = (tile / cols) * patch_height;
  return {x, y, std::min(patch_width, frame_width - x), std::min(patch_height, frame_height - y)};
}

std::vector<double> isotonic_non_decreasing(const std::vector<double>& values) {
  struct Block {
    double sum;
    int count;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / a.count <= b.sum / b.count) break;
      const Block merged{a.sum + b.sum, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const Block& b : blocks) out.insert(out.end(), static_cast<std::size_t>(b.count), b.sum / b.count);
  return out;
}

QualityProfile estimate_profile(const std::vector<ProfileSample>& history, int k,
                                const std::vector<double>& offline_table) {
  require(k >= 1, ErrorKind::InvalidInput, "packet count must be positive");
  const bool has_table = !offline_table.empty();
  if (has_table)
    require(offline_table.size() == static_cast<std::size_t>(k) + 1, ErrorKind::InvalidInput,
            "offline table must have k+1 entries");

  const double a = 1.0 - std::pow(2.0, -1.0 / kProfileHalfLife);
  std::vector<std::optional<double>> ewma(static_cast<std::size_t>(k) + 1);
  for (const ProfileSample& s : history) {
    require(s.packets >= 0 && s.packets <= k, ErrorKind::InvalidInput, "sample packet count out of range");
    require(std::isfinite(s.quality_db), ErrorKind::InvalidInput, "sample quality must be finite");
    auto& e = ewma[static_cast<std::size_t>(s.packets)];
    e = e ? (1.0 - a) * *e + a * s.quality_db : s.quality_db;
  }

  std::vector<int> measured;
  for (int n = 0; n <= k; ++n)
    if (ewma[static_cast<std::size_t>(n)]) measured.push_back(n);
  require(!measured.empty() || has_table, ErrorKind::InvalidInput,
          "profile needs history or an offline table");
  if (measured.empty()) return {isotonic_non_decreasing(offline_table)};

  std::vector<double> q(static_cast<std::size_t>(k) + 1);
  const int lo = measured.front();
  const int hi = measured.back();
  const double q_lo = *ewma[static_cast<std::size_t>(lo)];
  const double q_hi = *ewma[static_cast<std::size_t>(hi)];
  auto scaled = [&](int n, int anchor, double anchor_q) {
    if (!has_table) return anchor_q;
    const double base = offline_table[static_cast<std::size_t>(anchor)];
    if (base == 0.0) return anchor_q;
    return offline_table[static_cast<std::size_t>(n)] * anchor_q / base;
  };
  for (int n = 0; n < lo; ++n) q[static_cast<std::size_t>(n)] = scaled(n, lo, q_lo);
  for (int n = hi + 1; n <= k; ++n) q[static_cast<std::size_t>(n)] = scaled(n, hi, q_hi);
  for (std::size_t j = 0; j < measured.size(); ++j) {
    const int n0 = measured[j];
    const double v0 = *ewma[static_cast<std::size_t>(n0)];
    q[static_cast<std::size_t>(n0)] = v0;
    if (j + 1 == measured.size()) break;
    const int n1 = measured[j + 1];
    const double v1 = *ewma[static_cast<std::size_t>(n1)];
    for (int n = n0 + 1; n < n1; ++n)
      q[static_cast<std::size_t>(n)] = v0 + (v1 - v0) * static_cast<double>(n - n0) / (n1 - n0);
  }
  return {isotonic_non_decreasing(q)};
}

std::vector<ProfileSample> profile_samples_from_frame(const CodedTensor& tensor, const PacketizationMap& map,
                                                      double full_quality_db, std::uint64_t seed) {
  validate_tensor(tensor);
  require(map.num_elements() == tensor.symbols.size(), ErrorKind::InvalidInput, "map does not match tensor");
  const std::size_t k = map.num_packets();
  const std::size_t luma = static_cast<std::size_t>(256) * tensor.dims.rows * tensor.dims.cols;
  std::vector<double> energy(k, 0.0);
  for (std::size_t i = 0; i < luma; ++i) {
    const double c = tensor.symbols[i] * tensor.quant_step;
    if (c != 0.0) energy[map.packet_of(i)] += c * c;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const double pixels = static_cast<double>(tensor.frame_width()) * tensor.frame_height();
  const double full_mse = 255.0 * 255.0 / std::pow(10.0, full_quality_db / 10.0);
  double lost = std::accumulate(energy.begin(), energy.end(), 0.0);
  std::vector<ProfileSample> out;
  for (std::size_t n = 1; n <= k; ++n) {
    lost -= energy[order[n - 1]];
    const double mse = full_mse + std::max(0.0, lost) / pixels;
    out.push_back({static_cast<int>(n), n == k ? full_quality_db : 10.0 * std::log10(255.0 * 255.0 / mse)});
  }
  return out;
}

double decode_deadline(double t_i, int packets_held, const QualityProfile& profile, const DecodePolicy& policy) {
  const int k = profile.packet_count();
  require(packets_held >= 1 && packets_held < k, ErrorKind::InvalidInput, "deadline needs 1 <= i < k");
  require(policy.beta > 0.0, ErrorKind::InvalidInput, "beta must be positive");
  const double gain = profile.q[static_cast<std::size_t>(packets_held) + 1] - profile.q[static_cast<std::size_t>(packets_held)];
  return t_i + std::max(0.0, gain) / policy.beta;
}

double decode_utility(const QualityProfile& profile, int packets, double t, double tau, const DecodePolicy& policy) {
  require(packets >= 0 && packets <= profile.packet_count(), ErrorKind::InvalidInput, "packet count out of range");
  return profile.q[static_cast<std::size_t>(packets)] - policy.beta * (t - tau);
}

Receiver::Receiver(DecodePolicy policy, QualityProfile profile, std::uint32_t first_frame)
    : policy_(policy), profile_(std::move(profile)), next_(first_frame) {
  require(profile_.packet_count() >= 1, ErrorKind::InvalidInput, "profile needs k >= 1");
}

ReceiverAction Receiver::on_packet(const WirePacket& packet, double now) {
  const std::uint32_t f = packet.header.frame_index;
  if (f < next_ || ready_.count(f)) {
    ++late_;
    return {ActionKind::Discard, f, 0, 0.0};
  }
  require(packet.payload.size() >= 2 && packet.payload[1] >= 1 && packet.payload[0] < packet.payload[1],
          ErrorKind::CorruptPacket, "bad fragment prefix");
  FrameBuffer& fb = frames_[f];
  fb.k = packet.header.packet_count;
  const std::uint16_t idx = packet.header.packet_index;
  auto& frags = fb.fragments[idx];
  const bool duplicate = std::any_of(frags.begin(), frags.end(),
                                     [&](const WirePacket& w) { return w.payload[0] == packet.payload[0]; });
  if (!duplicate) {
    frags.push_back(packet);
    if (static_cast<int>(frags.size()) == packet.payload[1]) {
      ++fb.complete;
      if (fb.complete < fb.k) {
        QualityProfile p = profile_for(packet.header.level_id);
        if (p.packet_count() != fb.k) p.q.assign(static_cast<std::size_t>(fb.k) + 1, 0.0);
        fb.deadline = decode_deadline(now, fb.complete, p, policy_);
      }
    }
  }
  if (f != next_) return {ActionKind::Buffer, f, fb.complete, 0.0};
  if (fb.complete == fb.k) return {ActionKind::Decode, f, fb.complete, now};
  if (fb.complete >= 1) return {ActionKind::Wait, f, fb.complete, fb.deadline};
  return {ActionKind::Buffer, f, 0, 0.0};
}

std::vector<Resolution> Receiver::resolve(double now) {
  std::vector<Resolution> out;
  while (!frames_.empty()) {
    auto it = frames_.find(next_);
    if (it == frames_.end() || it->second.complete == 0) {
      const bool newer = std::any_of(frames_.upper_bound(next_), frames_.end(),
                                     [](const auto& kv) { return !kv.second.fragments.empty(); });
      if (!newer) break;
      if (it != frames_.end()) frames_.erase(it);
      out.push_back({next_, false, 0, now});
      ++next_;
      continue;
    }
    FrameBuffer& fb = it->second;
    if (fb.complete < fb.k && now < fb.deadline) break;
    out.push_back({next_, true, fb.complete, now});
    std::vector<WirePacket> held;
    for (auto& [idx, frags] : fb.fragments)
      if (static_cast<int>(frags.size()) == frags.front().payload[1])
        for (auto& w : frags) held.push_back(std::move(w));
    ready_[next_] = std::move(held);
    frames_.erase(it);
    ++next_;
  }
  return out;
}

void Receiver::set_profile(int level_id, QualityProfile profile) {
  require(profile.packet_count() >= 1, ErrorKind::InvalidInput, "profile needs k >= 1");
  level_profiles_[level_id] = std::move(profile);
}

const QualityProfile& Receiver::profile_for(int level_id) const {
  auto it = level_profiles_.find(level_id);
  return it == level_profiles_.end() ? profile_ : it->second;
}

std::optional<double> Receiver::head_deadline() const {
  auto it = frames_.find(next_);
  if (it == frames_.end() || it->second.complete == 0 || it->second.complete >= it->second.k) return std::nullopt;
  return it->second.deadline;
}

std::optional<double> Receiver::pending_deadline() const { return head_deadline(); }

std::vector<WirePacket> Receiver::take_frame(std::uint32_t frame_index) {
  auto it = ready_.find(frame_index);
  require(it != ready_.end(), ErrorKind::State, "frame has not been decoded");
  std::vector<WirePacket> out = std::move(it->second);
  ready_.erase(it);
  return out;
}

Sender::Sender(SenderConfig config, int width, int height)
    : config_(std::move(config)), width_(width), height_(height) {
  require(!config_.levels.empty(), ErrorKind::InvalidInput, "sender needs quality levels");
  tensor_dims_for(width, height);
  packets_ = config_.packets ? config_.packets : packets_for_frame(width, height);
  if (config_.use_ipatch) {
    require(config_.k_patch >= kMinPatchPeriod && config_.k_patch <= kMaxPatchPeriod, ErrorKind::InvalidInput,
            "k_patch must be in [6, 20]");
    require(config_.patch_width >= kMinPatchSide && config_.patch_width <= kMaxPatchSide &&
                config_.patch_height >= kMinPatchSide && config_.patch_height <= kMaxPatchSide,
            ErrorKind::InvalidInput, "patch sides must be in [128, 512]");
    require(config_.patch_width % kMacroblock == 0 && config_.patch_height % kMacroblock == 0,
            ErrorKind::InvalidInput, "patch dimensions must be multiples of 16");
    ipatch_rect(0, config_.k_patch, width, height, config_.patch_width, config_.patch_height);
  }
}

EncodedFrame Sender::encode_next(const RawFrame& frame, double target_bytes) {
  const QualityLevel& level = bitrate_select(target_bytes, config_.levels, history_, static_cast<long>(width_) * height_);
  return encode_next_at(frame, level);
}

EncodedFrame Sender::encode_next_at(const RawFrame& frame, const QualityLevel& level) {
  require(frame.width() == width_ && frame.height() == height_, ErrorKind::InvalidInput,
          "frame dimensions differ from the session");
  const std::uint32_t idx = frame_index_;
  const bool intra = idx == 0 || (config_.iframe_interval > 0 && idx % static_cast<std::uint32_t>(config_.iframe_interval) == 0);
  EncodedFrame out;
  out.frame_index = idx;
  out.level_id = level.level_id;
  if (intra) {
    out.tensor = encode_iframe(frame, level);
  } else {
    std::optional<Rect> patch;
    if (config_.use_ipatch)
      patch = ipatch_rect(idx, config_.k_patch, width_, height_, config_.patch_width, config_.patch_height);
    out.tensor = encode_pframe(frame, state_, level, patch);
  }
  const std::uint64_t seed = frame_map_seed(config_.session_seed, idx);
  const auto map = PacketizationMap::make(out.tensor.symbols.size(), packets_, seed);
  const SymbolModel model = fit_model(out.tensor);
  out.packets = frame_to_packets(out.tensor, map, model, {idx, seed});
  for (const WirePacket& p : out.packets) out.bytes += p.wire_size();
  if (!intra) history_.record(level, static_cast<double>(out.bytes), static_cast<long>(width_) * height_);
  state_.encoder_reference = decode(out.tensor, intra ? nullptr : &state_.encoder_reference);
  ++frame_index_;
  return out;
}

std::vector<double> offline_profile_table(const VideoSource& video, const QualityLevel& level,
                                          const SenderConfig& config, int frames, int seeds) {
  require(frames >= 1 && seeds >= 1, ErrorKind::InvalidInput, "frames and seeds must be positive");
  const RawFrame& first = video.frame(0);
  Sender sender(config, first.width(), first.height());
  const std::size_t k = sender.packet_count();
  std::vector<double> sum(k + 1, 0.0);
  int samples = 0;
  Rng rng(config.session_seed ^ 0x9E3779B97F4A7C15ULL);
  // Frame 0 is intra and only primes the reference; the table covers P frames.
  sender.encode_next_at(video.frame(0), level);
  for (int f = 1; f <= frames; ++f) {
    const RawFrame reference = sender.state().encoder_reference;
    const RawFrame& original = video.frame(f);
    const EncodedFrame enc = sender.encode_next_at(original, level);
    const auto map = PacketizationMap::make(enc.tensor.symbols.size(), k, frame_map_seed(config.session_seed, enc.frame_index));
    const auto lists = packetize(enc.tensor, map);
    for (int s = 0; s < seeds; ++s) {
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::size_t n = 0; n <= k; ++n) {
        std::vector<ElementList> kept;
        for (std::size_t j = 0; j < n; ++j) kept.push_back(lists[order[j]]);
        CodedTensor t = enc.tensor;
        t.symbols = depacketize(kept, map);
        const RawFrame decoded = decode(t, t.kind == FrameKind::I ? nullptr : &reference);
        sum[n] += psnr(original, decoded);
      }
      ++samples;
    }
  }
  for (double& v : sum) v /= samples;
  return sum;
}

}  // namespace dsv
