#pragma once

// Sender and receiver frame logic: I-patch scheduling, quality-profile
// estimation, the decode-deadline policy and lazy reference handling.

#include "dsv/bitrate.hpp"
#include "dsv/codec.hpp"
#include "dsv/entropy.hpp"
#include "dsv/packetize.hpp"
#include "dsv/video_io.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace dsv {

// Tile `frame_index mod k_patch` of a raster (row-major) tiling of the frame
// by patch-sized tiles; edge tiles are clipped. The tiling must have exactly
// k_patch tiles.
Rect ipatch_rect(std::uint32_t frame_index, int k_patch, int frame_width, int frame_height, int patch_width,
                 int patch_height);

// q[n]: expected decode quality (dB) with n of k packets.
struct QualityProfile {
  std::vector<double> q;

  int packet_count() const { return static_cast<int>(q.size()) - 1; }
};

struct ProfileSample {
  int packets = 0;
  double quality_db = 0.0;
};

inline constexpr double kProfileHalfLife = 10.0;

// Per-n EWMA (half-life 10 samples), linear interpolation between measured
// n, the offline table scaled to the nearest measurement outside that range,
// then a pool-adjacent-violators pass to make q non-decreasing.
QualityProfile estimate_profile(const std::vector<ProfileSample>& history, int k,
                                const std::vector<double>& offline_table = {});

// Non-decreasing least-squares fit (unweighted pool-adjacent-violators).
std::vector<double> isotonic_non_decreasing(const std::vector<double>& values);

// Profile samples from one fully received frame: for a random packet order,
// q[n] for every prefix size n = 1..k, using the orthonormal transform's
// energy identity (a zeroed luma coefficient adds its squared dequantized
// value to the frame's squared error). `full_quality_db` is q[k].
std::vector<ProfileSample> profile_samples_from_frame(const CodedTensor& tensor, const PacketizationMap& map,
                                                      double full_quality_db, std::uint64_t seed);

struct DecodePolicy {
  double beta = 0.02;  // dB per ms
};

// t* = t_i + (q[i+1] - q[i]) / beta, for 1 <= i < k.
double decode_deadline(double t_i, int packets_held, const QualityProfile& profile, const DecodePolicy& policy);

// Utility of decoding with n packets at time t for a frame whose natural
// decode time is tau.
double decode_utility(const QualityProfile& profile, int packets, double t, double tau, const DecodePolicy& policy);

enum class ActionKind { Decode, Wait, Buffer, Discard };

struct ReceiverAction {
  ActionKind kind = ActionKind::Buffer;
  std::uint32_t frame_index = 0;
  int packets = 0;
  double until = 0.0;  // for Wait
};

struct Resolution {
  std::uint32_t frame_index = 0;
  bool decoded = false;  // false: no packet of the frame ever arrived
  int packets = 0;
  double at = 0.0;
};

// Receiver-side arrival buffer. Frames resolve strictly in order; a frame
// with no packets is declared lost once a newer frame has data.
class Receiver {
 public:
  Receiver(DecodePolicy policy, QualityProfile profile, std::uint32_t first_frame = 0);

  ReceiverAction on_packet(const WirePacket& packet, double now);
  // Frames that can be resolved at `now`, in frame order.
  std::vector<Resolution> resolve(double now);
  std::optional<double> pending_deadline() const;

  // Datagrams held for a frame that resolve() just decoded.
  std::vector<WirePacket> take_frame(std::uint32_t frame_index);

  void set_profile(QualityProfile profile) { profile_ = std::move(profile); }
  // Profile used for frames coded at `level_id`; others use the default.
  void set_profile(int level_id, QualityProfile profile);
  const QualityProfile& profile() const { return profile_; }
  std::uint32_t next_frame() const { return next_; }
  std::size_t late_discarded() const { return late_; }

 private:
  struct FrameBuffer {
    std::map<std::uint16_t, std::vector<WirePacket>> fragments;
    std::map<std::uint16_t, int> fragment_count;
    int complete = 0;
    int k = 0;
    double deadline = 0.0;
  };

  std::optional<double> head_deadline() const;

  DecodePolicy policy_;
  const QualityProfile& profile_for(int level_id) const;

  QualityProfile profile_;
  std::map<int, QualityProfile> level_profiles_;
  std::uint32_t next_ = 0;
  std::map<std::uint32_t, FrameBuffer> frames_;
  std::map<std::uint32_t, std::vector<WirePacket>> ready_;
  std::size_t late_ = 0;
};

inline constexpr int kMinPatchPeriod = 6;
inline constexpr int kMaxPatchPeriod = 20;
inline constexpr int kMinPatchSide = 128;
inline constexpr int kMaxPatchSide = 512;

struct SenderConfig {
  std::vector<QualityLevel> levels = default_levels();
  int k_patch = 6;
  int patch_width = 128;
  int patch_height = 128;
  bool use_ipatch = true;
  int iframe_interval = 0;  // 0: only the first frame is intra
  std::size_t packets = 0;  // 0: chosen from the frame size
  std::uint64_t session_seed = 1;
};

struct EncodedFrame {
  std::uint32_t frame_index = 0;
  CodedTensor tensor;
  std::vector<WirePacket> packets;
  std::size_t bytes = 0;
  int level_id = 0;
};

// Encoder side. The encoder reference is always the sender's own decode of
// the previous frame with every packet present; receiver drift is repaired
// by the rolling I-patch rather than by per-frame synchronization.
class Sender {
 public:
  Sender(SenderConfig config, int width, int height);

  EncodedFrame encode_next(const RawFrame& frame, double target_bytes);
  // Encode at a fixed level, bypassing bitrate selection.
  EncodedFrame encode_next_at(const RawFrame& frame, const QualityLevel& level);

  const CodecState& state() const { return state_; }
  const SenderConfig& config() const { return config_; }
  std::uint32_t frame_index() const { return frame_index_; }
  std::size_t packet_count() const { return packets_; }
  const LevelHistory& history() const { return history_; }

 private:
  SenderConfig config_;
  int width_;
  int height_;
  std::size_t packets_;
  CodecState state_;
  LevelHistory history_;
  std::uint32_t frame_index_ = 0;
};

// Mean luma PSNR when decoding with n of k packets (n = 0..k), measured on
// single-frame losses over P frames 1..frames of the clip.
std::vector<double> offline_profile_table(const VideoSource& video, const QualityLevel& level,
                                          const SenderConfig& config, int frames, int seeds);

}  // namespace dsv
