#pragma once

// Deterministic discrete-event simulation of a one-way bottleneck path:
// trace-driven link, droptail queue, fixed propagation delay and a loss-free
// feedback channel, plus congestion control and the delivery schemes.

#include "dsv/delivery.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dsv::netsim {

inline constexpr int kMtu = 1500;

// Mahimahi-format trace: each timestamp (ms) grants one MTU worth of bytes.
// The schedule repeats every `period_ms`.
class LinkTrace {
 public:
  static LinkTrace from_opportunities(std::vector<std::int64_t> opportunities_ms);
  static LinkTrace parse(const std::string& text);
  static LinkTrace load(const std::filesystem::path& path);
  // No rate limit: packets leave the queue the moment they enter it.
  static LinkTrace unlimited();

  bool is_unlimited() const { return unlimited_; }
  const std::vector<std::int64_t>& opportunities() const { return opps_; }
  std::int64_t period_ms() const { return period_; }
  // Time of the n-th opportunity, counting across repetitions.
  std::int64_t opportunity_ms(std::uint64_t n) const;
  // Highest delivery rate over any 1 s window.
  double ceiling_bps() const { return ceiling_; }
  double mean_bps() const;

  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::int64_t> opps_;
  std::int64_t period_ = 0;
  double ceiling_ = 0.0;
  bool unlimited_ = false;
};

// Piecewise-constant rate schedule, (duration ms, rate Mbps) per segment.
struct RateSegment {
  std::int64_t duration_ms = 0;
  double mbps = 0.0;
};

LinkTrace trace_from_schedule(const std::vector<RateSegment>& schedule);
LinkTrace constant_trace(double mbps, std::int64_t duration_ms = 1000);
// Base rate with a dip to `dip_mbps` for `dip_ms` starting at `dip_start_ms`.
LinkTrace step_trace(double base_mbps, double dip_mbps, std::int64_t dip_start_ms, std::int64_t dip_ms,
                     std::int64_t period_ms);
// Cellular-like trace: rate changes every `segment_ms` by a bounded
// multiplicative random walk within [min, max].
LinkTrace cellular_trace(std::uint64_t seed, std::int64_t duration_ms, double min_mbps, double max_mbps,
                         std::int64_t segment_ms = 250);

struct PathConfig {
  double one_way_delay_ms = 100.0;
  int queue_capacity = 25;
  int mtu = kMtu;

  double rtt_ms() const { return 2.0 * one_way_delay_ms; }
  void validate() const;
};

enum class SchemeKind { DataScalable, IdealFEC, IdealSVC, Retransmit, FrameSkip };
SchemeKind parse_scheme(const std::string& name);
std::string to_string(SchemeKind kind);
const std::vector<SchemeKind>& all_schemes();

enum class CcKind { Gcc, Salsify };
CcKind parse_cc(const std::string& name);
std::string to_string(CcKind kind);
CcKind default_cc(SchemeKind scheme);

struct Feedback {
  std::uint64_t seq = 0;
  double send_ms = 0.0;
  double recv_ms = 0.0;
  int bytes = 0;
};

struct CcConfig {
  double initial_bps = 1.0e6;
  double min_bps = 50.0e3;
  double gcc_interval_ms = 100.0;
  double gcc_decrease = 0.85;
  double gcc_increase = 1.05;
  double gcc_overuse_ms = 4.0;     // smoothed one-way-delay growth per interval
  double gcc_loss_threshold = 0.1;
  double salsify_probe = 0.1;
  double salsify_queue_ms = 20.0;  // standing queue that counts as congestion
};

// Delay-gradient controller: every interval compares the smallest one-way
// delay seen (the standing queue, free of per-frame burst spread) against the
// previous interval; sustained growth means overuse.
class GccController {
 public:
  GccController(CcConfig config, double ceiling_bps);

  void on_feedback(const Feedback& fb);
  void on_loss(std::uint64_t count);
  // Interval update; returns the new target rate.
  double step(double now_ms);
  double target_bps() const { return rate_; }
  bool last_overuse() const { return overuse_; }

 private:
  CcConfig config_;
  double ceiling_;
  double rate_;
  double min_owd_ = std::numeric_limits<double>::infinity();
  std::uint64_t samples_ = 0;
  std::uint64_t lost_ = 0;
  std::optional<double> prev_min_;
  double trend_ = 0.0;
  bool overuse_ = false;
};

// Budget per frame from bytes acknowledged over the last RTT, scaled to the
// frame interval. An application-limited sender acks less than the path
// carries, so without congestion evidence in the last RTT (a loss, or a
// standing queue above the base delay) the budget is not allowed to shrink
// and grows by the probe factor per RTT; under congestion it follows the
// acked bytes, less the probe factor so the queue drains.
class SalsifyController {
 public:
  SalsifyController(CcConfig config, double ceiling_bps, double rtt_ms, double frame_interval_ms);

  void on_feedback(const Feedback& fb, double now_ms);
  void on_loss(double now_ms);
  double frame_budget_bytes(double now_ms);
  bool congested(double now_ms) const;

 private:
  struct Ack {
    double at;
    int bytes;
    double owd;
  };
  CcConfig config_;
  double ceiling_;
  double rtt_;
  double interval_;
  std::deque<Ack> acked_;
  double base_owd_ = std::numeric_limits<double>::infinity();
  std::optional<double> last_loss_;
  std::optional<double> budget_;
};

// Windowed loss rate smoothed by an EWMA, updated once per frame.
class FecPredictor {
 public:
  explicit FecPredictor(double window_ms = 2000.0, double weight = 0.1);

  void observe(double now_ms, bool lost);
  // Updates the EWMA with the loss rate over the trailing window.
  double predict(double now_ms);
  double rate() const { return rate_; }

 private:
  double window_;
  double weight_;
  std::deque<std::pair<double, bool>> events_;
  double rate_ = 0.0;
};

inline constexpr double kMaxRedundancy = 0.95;

struct FecPlan {
  int source_packets = 0;
  int redundancy_packets = 0;
  double source_bytes = 0.0;
};

// Packets for an ideal erasure code: any `source_packets` suffice.
FecPlan baseline_fec(double frame_bytes, double redundancy, int payload_bytes = 1400);

// Highest layer h such that layers 1..h are usable; layer 1 is decodable from
// any `base_source` of its packets, the others need every packet.
int svc_decodable_layers(const std::vector<int>& received_per_layer, const std::vector<int>& sent_per_layer,
                         int base_source);

// Encoded size and lossless quality per level, used for schemes whose quality
// is accounted from the rate rather than by running the codec.
struct RatePoint {
  double bytes = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

class RateQualityTable {
 public:
  explicit RateQualityTable(std::vector<RatePoint> points);
  static RateQualityTable measure(const VideoSource& video, const std::vector<QualityLevel>& levels, int frames,
                                  const SenderConfig& sender);

  const std::vector<RatePoint>& points() const { return points_; }
  // Encoded size for a target, clamped to the coder's range.
  double size_for(double target_bytes) const;
  // Interpolated in log-size.
  double psnr_at(double bytes) const;
  double ssim_at(double bytes) const;

 private:
  double interpolate(double bytes, double RatePoint::*field) const;
  std::vector<RatePoint> points_;  // ascending bytes
};

struct SchemeConfig {
  SchemeKind kind = SchemeKind::DataScalable;
  std::optional<CcKind> cc;
  double fec_window_ms = 2000.0;
  double fec_weight = 0.1;
  int svc_layers = 3;
  double svc_base_redundancy = 0.3;
  double retransmit_extra_ms = 10.0;
};

struct SessionConfig {
  const VideoSource* video = nullptr;
  int frames = 250;
  double fps = 25.0;
  double encode_ms = 5.0;
  double decode_ms = 0.0;
  double drain_ms = 3000.0;
  std::vector<QualityLevel> levels = default_levels();
  SenderConfig sender;
  SchemeConfig scheme;
  CcConfig cc;
  PathConfig path;
  LinkTrace trace = LinkTrace::unlimited();
  DecodePolicy policy;
  std::uint64_t seed = 1;
  const RateQualityTable* rate_quality = nullptr;
  // Offline profile per level id (DataScalable cold start).
  const std::vector<std::vector<double>>* profile_tables = nullptr;
  bool record_packets = false;
};

struct FrameRecord {
  std::uint32_t frame_index = 0;
  double encode_start_ms = 0.0;
  double decode_end_ms = 0.0;
  double delay_ms = 0.0;
  int packets_sent = 0;      // network transmissions, fragments and resends included
  int packets_received = 0;  // coded packets the decoder used
  int packets_dropped = 0;
  int packets_late = 0;
  double bytes = 0.0;
  double target_bytes = 0.0;
  int level_id = -1;
  double psnr = 0.0;
  double ssim = 0.0;
  bool skipped = false;
};

// One transmission; times are -1 for stages the packet never reached.
struct PacketLogEntry {
  std::uint64_t seq = 0;
  std::uint32_t frame = 0;
  int bytes = 0;
  bool retransmission = false;
  bool dropped = false;
  double send_ms = 0.0;
  double service_ms = -1.0;  // left the bottleneck queue
  double arrive_ms = -1.0;
  double feedback_ms = -1.0;  // sender learned of the arrival
};

struct SessionReport {
  std::vector<FrameRecord> frames;
  std::vector<PacketLogEntry> packet_log;  // only with record_packets
  int max_queue_occupancy = 0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double p95_delay_ms = 0.0;
  double delivered_fps = 0.0;
  std::uint64_t packets_sent = 0;
  std::uint64_t packets_delivered = 0;
  std::uint64_t packets_dropped = 0;
  std::uint64_t packets_in_flight = 0;
  std::uint64_t late_discarded = 0;
};

// Nearest-rank percentile (p in (0, 100]).
double percentile_nearest_rank(std::vector<double> values, double p);
void compute_aggregates(SessionReport& report, double fps);

SessionReport simulate(const SessionConfig& config);

}  // namespace dsv::netsim
