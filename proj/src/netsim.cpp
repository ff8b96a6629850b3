#include "dsv/netsim.hpp"

#include "dsv/error.hpp"
#include "dsv/metrics.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

namespace dsv::netsim {

namespace {

std::int64_t to_us(double ms) { return static_cast<std::int64_t>(std::llround(ms * 1000.0)); }
double to_ms(std::int64_t us) { return static_cast<double>(us) / 1000.0; }

}  // namespace

LinkTrace LinkTrace::from_opportunities(std::vector<std::int64_t> opportunities_ms) {
  require(!opportunities_ms.empty(), ErrorKind::TraceFormat, "trace has no delivery opportunities");
  require(opportunities_ms.front() >= 0, ErrorKind::TraceFormat, "trace timestamps must be non-negative");
  require(std::is_sorted(opportunities_ms.begin(), opportunities_ms.end()), ErrorKind::TraceFormat,
          "trace timestamps must be non-decreasing");
  require(opportunities_ms.back() > 0, ErrorKind::TraceFormat, "trace period must be positive");
  LinkTrace t;
  t.opps_ = std::move(opportunities_ms);
  t.period_ = t.opps_.back();

  // Max count over [s, s + 1000) for window starts at each opportunity.
  std::vector<std::int64_t> times;
  const std::int64_t horizon = t.period_ + 1000;
  for (std::uint64_t n = 0;; ++n) {
    const std::int64_t v = t.opportunity_ms(n);
    if (v >= horizon + t.period_) break;
    times.push_back(v);
  }
  std::size_t hi = 0;
  std::size_t best = 0;
  for (std::size_t lo = 0; lo < times.size() && times[lo] <= t.period_ + t.opps_.front(); ++lo) {
    hi = std::max(hi, lo);
    while (hi < times.size() && times[hi] < times[lo] + 1000) ++hi;
    best = std::max(best, hi - lo);
  }
  t.ceiling_ = static_cast<double>(best) * kMtu * 8.0;
  return t;
}

LinkTrace LinkTrace::parse(const std::string& text) {
  std::vector<std::int64_t> opps;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::int64_t v = 0;
    const char* b = line.data() + first;
    const char* e = line.data() + last + 1;
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) fail(ErrorKind::TraceFormat, "trace line " + std::to_string(lineno) + " is not an integer");
    opps.push_back(v);
  }
  return from_opportunities(std::move(opps));
}

LinkTrace LinkTrace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open trace " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

LinkTrace LinkTrace::unlimited() {
  LinkTrace t;
  t.unlimited_ = true;
  t.ceiling_ = std::numeric_limits<double>::infinity();
  return t;
}

std::int64_t LinkTrace::opportunity_ms(std::uint64_t n) const {
  const std::uint64_t size = opps_.size();
  return static_cast<std::int64_t>(n / size) * period_ + opps_[n % size];
}

double LinkTrace::mean_bps() const {
  if (unlimited_) return std::numeric_limits<double>::infinity();
  return static_cast<double>(opps_.size()) * kMtu * 8.0 / (static_cast<double>(period_) / 1000.0);
}

std::string LinkTrace::to_text() const {
  std::string out;
  for (std::int64_t v : opps_) {
    out += std::to_string(v);
    out += '\n';
  }
  return out;
}

void LinkTrace::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write trace " + path.string());
  out << to_text();
}

LinkTrace trace_from_schedule(const std::vector<RateSegment>& schedule) {
  require(!schedule.empty(), ErrorKind::InvalidInput, "empty rate schedule");
  std::vector<std::int64_t> opps;
  double credit = 0.0;
  std::int64_t t = 0;
  for (const RateSegment& seg : schedule) {
    require(seg.duration_ms > 0 && seg.mbps >= 0.0, ErrorKind::InvalidInput, "bad rate segment");
    const double per_ms = seg.mbps * 1.0e6 / 8.0 / kMtu / 1000.0;
    for (std::int64_t i = 0; i < seg.duration_ms; ++i) {
      ++t;
      credit += per_ms;
      while (credit >= 1.0 - 1e-9) {
        opps.push_back(t);
        credit -= 1.0;
      }
    }
  }
  // The period is the last timestamp; pin it to the schedule length.
  if (opps.empty() || opps.back() != t) opps.push_back(t);
  return LinkTrace::from_opportunities(std::move(opps));
}

LinkTrace constant_trace(double mbps, std::int64_t duration_ms) { return trace_from_schedule({{duration_ms, mbps}}); }

LinkTrace step_trace(double base_mbps, double dip_mbps, std::int64_t dip_start_ms, std::int64_t dip_ms,
                     std::int64_t period_ms) {
  require(dip_start_ms > 0 && dip_ms > 0 && dip_start_ms + dip_ms < period_ms, ErrorKind::InvalidInput,
          "dip must lie inside the period");
  return trace_from_schedule({{dip_start_ms, base_mbps}, {dip_ms, dip_mbps}, {period_ms - dip_start_ms - dip_ms, base_mbps}});
}

LinkTrace cellular_trace(std::uint64_t seed, std::int64_t duration_ms, double min_mbps, double max_mbps,
                         std::int64_t segment_ms) {
  require(min_mbps > 0.0 && max_mbps >= min_mbps, ErrorKind::InvalidInput, "bad cellular rate range");
  require(segment_ms > 0 && duration_ms >= segment_ms, ErrorKind::InvalidInput, "bad cellular segment length");
  Rng rng(seed);
  std::vector<RateSegment> schedule;
  double log_rate = std::log(std::sqrt(min_mbps * max_mbps));
  for (std::int64_t t = 0; t < duration_ms; t += segment_ms) {
    // Occasional deep fades on top of a random walk.
    log_rate += rng.normal() * 0.35;
    log_rate = std::clamp(log_rate, std::log(min_mbps), std::log(max_mbps));
    double rate = std::exp(log_rate);
    if (rng.uniform() < 0.08) rate = min_mbps * rng.uniform(0.3, 1.0);
    schedule.push_back({std::min(segment_ms, duration_ms - t), rate});
  }
  return trace_from_schedule(schedule);
}

void PathConfig::validate() const {
  require(one_way_delay_ms >= 0.0, ErrorKind::Config, "one-way delay must be >= 0");
  require(queue_capacity >= 1, ErrorKind::Config, "queue capacity must be >= 1");
  require(mtu >= 100, ErrorKind::Config, "mtu too small");
}

SchemeKind parse_scheme(const std::string& name) {
  for (SchemeKind k : all_schemes())
    if (to_string(k) == name) return k;
  fail(ErrorKind::Config, "unknown scheme '" + name + "'");
}

std::string to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::DataScalable: return "data-scalable";
    case SchemeKind::IdealFEC: return "ideal-fec";
    case SchemeKind::IdealSVC: return "ideal-svc";
    case SchemeKind::Retransmit: return "retransmit";
    case SchemeKind::FrameSkip: return "frame-skip";
  }
  return "?";
}

const std::vector<SchemeKind>& all_schemes() {
  static const std::vector<SchemeKind> v{SchemeKind::DataScalable, SchemeKind::IdealFEC, SchemeKind::IdealSVC,
                                         SchemeKind::Retransmit, SchemeKind::FrameSkip};
  return v;
}

CcKind parse_cc(const std::string& name) {
  if (name == "gcc") return CcKind::Gcc;
  if (name == "salsify") return CcKind::Salsify;
  fail(ErrorKind::Config, "unknown congestion control '" + name + "'");
}

std::string to_string(CcKind kind) { return kind == CcKind::Gcc ? "gcc" : "salsify"; }

CcKind default_cc(SchemeKind scheme) { return scheme == SchemeKind::FrameSkip ? CcKind::Salsify : CcKind::Gcc; }

GccController::GccController(CcConfig config, double ceiling_bps)
    : config_(config), ceiling_(ceiling_bps), rate_(std::clamp(config.initial_bps, config.min_bps, ceiling_bps)) {}

void GccController::on_feedback(const Feedback& fb) {
  min_owd_ = std::min(min_owd_, fb.recv_ms - fb.send_ms);
  ++samples_;
}

void GccController::on_loss(std::uint64_t count) { lost_ += count; }

double GccController::step(double) {
  overuse_ = false;
  bool underuse = false;
  const std::uint64_t total = samples_ + lost_;
  if (total == 0) return rate_;
  const double loss = static_cast<double>(lost_) / static_cast<double>(total);
  if (samples_ > 0) {
    if (prev_min_) {
      trend_ = 0.5 * trend_ + 0.5 * (min_owd_ - *prev_min_);
      overuse_ = trend_ > config_.gcc_overuse_ms;
      underuse = trend_ < -config_.gcc_overuse_ms;
    }
    prev_min_ = min_owd_;
  }
  double next = rate_ * config_.gcc_increase;
  if (overuse_) next = rate_ * config_.gcc_decrease;
  else if (underuse) next = rate_;
  if (loss > config_.gcc_loss_threshold) next = std::min(next, rate_ * (1.0 - 0.5 * loss));
  rate_ = std::clamp(next, config_.min_bps, ceiling_);
  min_owd_ = std::numeric_limits<double>::infinity();
  samples_ = 0;
  lost_ = 0;
  return rate_;
}

SalsifyController::SalsifyController(CcConfig config, double ceiling_bps, double rtt_ms, double frame_interval_ms)
    : config_(config), ceiling_(ceiling_bps), rtt_(rtt_ms), interval_(frame_interval_ms) {
  require(rtt_ms > 0.0 && frame_interval_ms > 0.0, ErrorKind::InvalidInput, "rtt and frame interval must be positive");
}

void SalsifyController::on_feedback(const Feedback& fb, double now_ms) {
  const double owd = fb.recv_ms - fb.send_ms;
  base_owd_ = std::min(base_owd_, owd);
  acked_.push_back({now_ms, fb.bytes, owd});
}

void SalsifyController::on_loss(double now_ms) { last_loss_ = now_ms; }

bool SalsifyController::congested(double now_ms) const {
  if (last_loss_ && *last_loss_ > now_ms - rtt_) return true;
  double min_owd = std::numeric_limits<double>::infinity();
  for (const Ack& a : acked_)
    if (a.at > now_ms - rtt_) min_owd = std::min(min_owd, a.owd);
  return std::isfinite(min_owd) && min_owd > base_owd_ + config_.salsify_queue_ms;
}

double SalsifyController::frame_budget_bytes(double now_ms) {
  while (!acked_.empty() && acked_.front().at <= now_ms - rtt_) acked_.pop_front();
  const double lo = config_.min_bps / 8.0 * interval_ / 1000.0;
  const double hi = ceiling_ / 8.0 * interval_ / 1000.0;
  const double initial = std::clamp(config_.initial_bps / 8.0 * interval_ / 1000.0, lo, hi);
  if (std::isinf(base_owd_)) return *(budget_ = initial);
  double bytes = 0.0;
  for (const Ack& a : acked_) bytes += a.bytes;
  const double acked = bytes * interval_ / rtt_;
  const double previous = budget_.value_or(initial);
  double next;
  if (congested(now_ms))
    next = acked * (1.0 - config_.salsify_probe);
  else
    next = std::max(acked, previous * std::pow(1.0 + config_.salsify_probe, interval_ / rtt_));
  budget_ = std::clamp(next, lo, hi);
  return *budget_;
}

FecPredictor::FecPredictor(double window_ms, double weight) : window_(window_ms), weight_(weight) {
  require(window_ms > 0.0 && weight > 0.0 && weight <= 1.0, ErrorKind::InvalidInput, "bad predictor parameters");
}

void FecPredictor::observe(double now_ms, bool lost) { events_.emplace_back(now_ms, lost); }

double FecPredictor::predict(double now_ms) {
  while (!events_.empty() && events_.front().first < now_ms - window_) events_.pop_front();
  if (!events_.empty()) {
    const auto lost = std::count_if(events_.begin(), events_.end(), [](const auto& e) { return e.second; });
    const double window_loss = static_cast<double>(lost) / static_cast<double>(events_.size());
    rate_ = (1.0 - weight_) * rate_ + weight_ * window_loss;
  }
  return std::clamp(rate_, 0.0, kMaxRedundancy);
}

FecPlan baseline_fec(double frame_bytes, double redundancy, int payload_bytes) {
  require(redundancy >= 0.0 && redundancy <= kMaxRedundancy, ErrorKind::InvalidInput, "redundancy out of range");
  require(frame_bytes > 0.0 && payload_bytes > 0, ErrorKind::InvalidInput, "frame and payload sizes must be positive");
  FecPlan plan;
  plan.source_bytes = frame_bytes;
  plan.source_packets = static_cast<int>(std::ceil(frame_bytes / payload_bytes));
  plan.redundancy_packets =
      static_cast<int>(std::ceil(plan.source_packets * redundancy / (1.0 - redundancy) - 1e-9));
  return plan;
}

int svc_decodable_layers(const std::vector<int>& received_per_layer, const std::vector<int>& sent_per_layer,
                         int base_source) {
  require(received_per_layer.size() == sent_per_layer.size() && !sent_per_layer.empty(), ErrorKind::InvalidInput,
          "layer vectors must match");
  if (received_per_layer[0] < base_source) return 0;
  int h = 1;
  while (h < static_cast<int>(sent_per_layer.size()) &&
         received_per_layer[static_cast<std::size_t>(h)] >= sent_per_layer[static_cast<std::size_t>(h)])
    ++h;
  return h;
}

RateQualityTable::RateQualityTable(std::vector<RatePoint> points) : points_(std::move(points)) {
  require(!points_.empty(), ErrorKind::InvalidInput, "rate-quality table is empty");
  std::sort(points_.begin(), points_.end(), [](const RatePoint& a, const RatePoint& b) { return a.bytes < b.bytes; });
  for (const RatePoint& p : points_) require(p.bytes > 0.0, ErrorKind::InvalidInput, "rate point needs positive size");
}

RateQualityTable RateQualityTable::measure(const VideoSource& video, const std::vector<QualityLevel>& levels,
                                           int frames, const SenderConfig& sender_config) {
  require(frames >= 2, ErrorKind::InvalidInput, "rate table needs at least two frames");
  std::vector<RatePoint> points;
  for (const QualityLevel& level : levels) {
    const RawFrame& first = video.frame(0);
    Sender sender(sender_config, first.width(), first.height());
    RatePoint p;
    // Steady-state P frames only: the opening I frame is excluded.
    for (int f = 0; f < frames; ++f) {
      const RawFrame& original = video.frame(f);
      const EncodedFrame enc = sender.encode_next_at(original, level);
      if (f == 0) continue;
      p.bytes += static_cast<double>(enc.bytes);
      p.psnr += psnr(original, sender.state().encoder_reference);
      p.ssim += ssim(original, sender.state().encoder_reference);
    }
    p.bytes /= frames - 1;
    p.psnr /= frames - 1;
    p.ssim /= frames - 1;
    points.push_back(p);
  }
  return RateQualityTable(std::move(points));
}

double RateQualityTable::size_for(double target_bytes) const {
  return std::clamp(target_bytes, points_.front().bytes, points_.back().bytes);
}

double RateQualityTable::interpolate(double bytes, double RatePoint::*field) const {
  if (bytes <= points_.front().bytes) return points_.front().*field;
  if (bytes >= points_.back().bytes) return points_.back().*field;
  auto hi = std::upper_bound(points_.begin(), points_.end(), bytes,
                             [](double b, const RatePoint& p) { return b < p.bytes; });
  auto lo = hi - 1;
  const double w = std::log(bytes / lo->bytes) / std::log(hi->bytes / lo->bytes);
  return (*lo).*field + w * ((*hi).*field - (*lo).*field);
}

double RateQualityTable::psnr_at(double bytes) const { return interpolate(bytes, &RatePoint::psnr); }
double RateQualityTable::ssim_at(double bytes) const { return interpolate(bytes, &RatePoint::ssim); }

double percentile_nearest_rank(std::vector<double> values, double p) {
  require(p > 0.0 && p <= 100.0, ErrorKind::InvalidInput, "percentile must be in (0, 100]");
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

void compute_aggregates(SessionReport& report, double fps) {
  std::vector<double> delays;
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  std::size_t decoded = 0;
  for (const FrameRecord& r : report.frames) {
    delays.push_back(r.delay_ms);
    if (r.skipped) continue;
    psnr_sum += r.psnr;
    ssim_sum += r.ssim;
    ++decoded;
  }
  report.mean_psnr = decoded ? psnr_sum / static_cast<double>(decoded) : 0.0;
  report.mean_ssim = decoded ? ssim_sum / static_cast<double>(decoded) : 0.0;
  report.p95_delay_ms = percentile_nearest_rank(delays, 95.0);
  report.delivered_fps =
      report.frames.empty() ? 0.0 : static_cast<double>(decoded) * fps / static_cast<double>(report.frames.size());
}

namespace {

enum class Ev { FrameTick, EncodeDone, LinkService, Arrival, Feedback, RecvTimer, CcTick, Rto };

struct Event {
  std::int64_t t;
  std::uint64_t order;
  Ev kind;
  std::uint64_t arg;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const { return a.t != b.t ? a.t > b.t : a.order > b.order; }
};

struct Packet {
  std::uint32_t frame = 0;
  int index = 0;  // logical packet within the frame
  int layer = 0;
  int bytes = 0;
  std::uint64_t seq = 0;
  std::int64_t sent_us = 0;
  bool retransmission = false;
  std::optional<WirePacket> wire;
};

struct FrameState {
  bool encoded = false;
  double encode_start_ms = 0.0;
  double target_bytes = 0.0;
  double bytes = 0.0;
  int level_id = -1;
  int total = 0;   // distinct logical packets
  int needed = 0;  // FEC source count / SVC base source count
  std::vector<int> layer_sent;
  std::vector<int> layer_received;
  std::vector<double> layer_bytes;  // cumulative bytes per layer
  double quality_bytes = 0.0;
  int ref = -1;
  std::vector<std::size_t> packet_ids;
  std::set<int> received;
  int transmissions = 0;
  int dropped = 0;
  int late = 0;
  // Sender's view from feedback.
  std::set<int> acked;
  bool known_lost = false;
  // Outcome.
  bool resolved = false;
  bool decoded = false;
  int packets_used = 0;
  double decode_end_ms = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

constexpr int kPayloadBytes = 1400;

class Simulation {
 public:
  explicit Simulation(const SessionConfig& cfg)
      : cfg_(cfg), kind_(cfg.scheme.kind), cc_kind_(cfg.scheme.cc.value_or(default_cc(cfg.scheme.kind))),
        gcc_(cfg.cc, cfg.trace.ceiling_bps()),
        salsify_(cfg.cc, cfg.trace.ceiling_bps(), cfg.path.rtt_ms(), 1000.0 / cfg.fps),
        fec_(cfg.scheme.fec_window_ms, cfg.scheme.fec_weight) {
    validate();
    frames_.resize(static_cast<std::size_t>(cfg.frames));
    srtt_ms_ = cfg.path.rtt_ms();
    if (kind_ == SchemeKind::DataScalable) init_data_scalable();
  }

  SessionReport run();

 private:
  void validate() const;
  void init_data_scalable();
  void push(std::int64_t t, Ev kind, std::uint64_t arg = 0) { events_.push({t, order_++, kind, arg}); }

  void on_frame_tick(std::uint32_t f);
  void on_encode_done(std::uint32_t f);
  void transmit(std::size_t pid);
  void schedule_service();
  void on_link_service();
  void on_arrival(std::size_t pid);
  void on_feedback(std::size_t pid);
  void on_rto(std::size_t pid);

  double frame_target_bytes();
  void build_baseline_packets(std::uint32_t f, double target);
  std::uint32_t choose_reference(std::uint32_t f);
  int sender_status(int f) const;  // -1 failed, 0 unknown, 1 decoded

  void ds_resolve();
  void ds_decode(const Resolution& r);
  void baseline_resolve();
  void finish_frame(FrameState& fs, bool decoded, double psnr, double ssim, int used);

  double now_ms() const { return to_ms(now_); }

  const SessionConfig& cfg_;
  SchemeKind kind_;
  CcKind cc_kind_;
  GccController gcc_;
  SalsifyController salsify_;
  FecPredictor fec_;

  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t order_ = 0;
  std::int64_t now_ = 0;

  std::vector<FrameState> frames_;
  std::vector<Packet> packets_;
  std::vector<std::size_t> pid_by_seq_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t expected_seq_ = 0;

  std::deque<std::size_t> queue_;
  int head_remaining_ = 0;
  bool service_pending_ = false;
  std::uint64_t opp_cursor_ = 0;

  std::vector<PacketLogEntry> log_;
  int max_queue_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t dropped_ = 0;
  double srtt_ms_ = 0.0;
  double rttvar_ms_ = 0.0;

  // Baseline receiver.
  std::uint32_t next_resolve_ = 0;
  std::int64_t newest_with_data_ = -1;

  // DataScalable state.
  std::optional<Sender> sender_;
  std::optional<Receiver> receiver_;
  ModelStore models_;
  RawFrame decoder_reference_;
  std::map<int, std::vector<ProfileSample>> history_;
  std::optional<std::int64_t> timer_at_;
  std::size_t k_ = 0;
  Rng profile_rng_{0};
};

void Simulation::validate() const {
  require(cfg_.video != nullptr, ErrorKind::Config, "session needs a video source");
  require(cfg_.frames >= 1, ErrorKind::Config, "session needs at least one frame");
  require(cfg_.fps > 0.0, ErrorKind::Config, "fps must be positive");
  require(cfg_.encode_ms >= 0.0 && cfg_.decode_ms >= 0.0 && cfg_.drain_ms >= 0.0, ErrorKind::Config,
          "timing parameters must be non-negative");
  require(!cfg_.levels.empty(), ErrorKind::Config, "session needs quality levels");
  require(cfg_.policy.beta > 0.0, ErrorKind::Config, "beta must be positive");
  cfg_.path.validate();
  if (kind_ != SchemeKind::DataScalable)
    require(cfg_.rate_quality != nullptr, ErrorKind::Config, "baseline schemes need a rate-quality table");
  if (kind_ == SchemeKind::IdealSVC)
    require(cfg_.scheme.svc_layers >= 1 && cfg_.scheme.svc_base_redundancy >= 0.0 &&
                cfg_.scheme.svc_base_redundancy <= kMaxRedundancy,
            ErrorKind::Config, "bad SVC parameters");
  if (kind_ == SchemeKind::DataScalable)
    require(cfg_.profile_tables != nullptr && !cfg_.profile_tables->empty(), ErrorKind::Config,
            "data-scalable sessions need offline profile tables");
}

void Simulation::init_data_scalable() {
  const RawFrame& first = cfg_.video->frame(0);
  SenderConfig sc = cfg_.sender;
  sc.levels = cfg_.levels;
  sc.session_seed = cfg_.seed;
  sender_.emplace(sc, first.width(), first.height());
  k_ = sender_->packet_count();
  profile_rng_ = Rng(cfg_.seed ^ 0x51ED2701ULL);
  const auto& tables = *cfg_.profile_tables;
  for (const auto& t : tables)
    require(t.size() == k_ + 1, ErrorKind::Config, "profile table size does not match the packet count");
  receiver_.emplace(cfg_.policy, estimate_profile({}, static_cast<int>(k_), tables.front()));
  if (tables.size() > 1)
    for (const QualityLevel& l : cfg_.levels)
      if (static_cast<std::size_t>(l.level_id) < tables.size())
        receiver_->set_profile(l.level_id, estimate_profile({}, static_cast<int>(k_), tables[static_cast<std::size_t>(l.level_id)]));
  decoder_reference_ = RawFrame(first.width(), first.height());
}

double Simulation::frame_target_bytes() {
  if (cc_kind_ == CcKind::Salsify) return salsify_.frame_budget_bytes(now_ms());
  return gcc_.target_bps() / 8.0 / cfg_.fps;
}

int Simulation::sender_status(int f) const {
  if (f < 0) return 1;
  const FrameState& fs = frames_[static_cast<std::size_t>(f)];
  if (fs.known_lost) return -1;
  const int parent = sender_status(fs.ref);
  if (parent < 0) return -1;
  if (static_cast<int>(fs.acked.size()) == fs.total && parent == 1) return 1;
  return 0;
}

std::uint32_t Simulation::choose_reference(std::uint32_t f) {
  if (f == 0) return static_cast<std::uint32_t>(-1);
  const int prev = static_cast<int>(f) - 1;
  if (sender_status(prev) >= 0) return static_cast<std::uint32_t>(prev);
  for (int g = prev - 1; g >= 0; --g)
    if (sender_status(g) == 1) return static_cast<std::uint32_t>(g);
  return static_cast<std::uint32_t>(-1);
}

void Simulation::build_baseline_packets(std::uint32_t f, double target) {
  FrameState& fs = frames_[f];
  const RateQualityTable& rq = *cfg_.rate_quality;
  auto add = [&](int count, int layer, double bytes_each) {
    for (int i = 0; i < count; ++i) {
      Packet p;
      p.frame = f;
      p.index = fs.total++;
      p.layer = layer;
      p.bytes = static_cast<int>(std::ceil(bytes_each)) + static_cast<int>(kHeaderBytes);
      fs.packet_ids.push_back(packets_.size());
      fs.bytes += p.bytes;
      packets_.push_back(std::move(p));
    }
  };
  switch (kind_) {
    case SchemeKind::Retransmit:
    case SchemeKind::FrameSkip: {
      const double size = rq.size_for(target);
      const int n = static_cast<int>(std::ceil(size / kPayloadBytes));
      add(n, 0, size / n);
      fs.needed = n;
      fs.quality_bytes = size;
      if (kind_ == SchemeKind::FrameSkip) fs.ref = static_cast<int>(choose_reference(f));
      break;
    }
    case SchemeKind::IdealFEC: {
      const double r = fec_.predict(now_ms());
      const double size = rq.size_for(target * (1.0 - r));
      const FecPlan plan = baseline_fec(size, r, kPayloadBytes);
      const double each = size / plan.source_packets;
      add(plan.source_packets + plan.redundancy_packets, 0, each);
      fs.needed = plan.source_packets;
      fs.quality_bytes = size;
      break;
    }
    case SchemeKind::IdealSVC: {
      const int layers = cfg_.scheme.svc_layers;
      const double rb = cfg_.scheme.svc_base_redundancy;
      const double source = target / (1.0 + rb / ((1.0 - rb) * layers));
      fs.layer_sent.assign(static_cast<std::size_t>(layers), 0);
      fs.layer_received.assign(static_cast<std::size_t>(layers), 0);
      double prev = 0.0;
      for (int h = 1; h <= layers; ++h) {
        const double cumulative = rq.size_for(source * h / layers);
        fs.layer_bytes.push_back(cumulative);
        const double layer_size = std::max(1.0, cumulative - prev);
        prev = cumulative;
        if (h == 1) {
          const FecPlan plan = baseline_fec(layer_size, rb, kPayloadBytes);
          add(plan.source_packets + plan.redundancy_packets, 0, layer_size / plan.source_packets);
          fs.needed = plan.source_packets;
          fs.layer_sent[0] = plan.source_packets + plan.redundancy_packets;
        } else {
          const int n = static_cast<int>(std::ceil(layer_size / kPayloadBytes));
          add(n, h - 1, layer_size / n);
          fs.layer_sent[static_cast<std::size_t>(h - 1)] = n;
        }
      }
      fs.quality_bytes = fs.layer_bytes.back();
      break;
    }
    case SchemeKind::DataScalable: break;
  }
}

void Simulation::on_frame_tick(std::uint32_t f) {
  FrameState& fs = frames_[f];
  fs.encode_start_ms = now_ms();
  fs.target_bytes = frame_target_bytes();
  if (kind_ == SchemeKind::DataScalable) {
    EncodedFrame enc = sender_->encode_next(cfg_.video->frame(static_cast<int>(f)), fs.target_bytes);
    fs.level_id = enc.level_id;
    fs.total = static_cast<int>(k_);
    fs.bytes = static_cast<double>(enc.bytes);
    for (WirePacket& w : enc.packets) {
      Packet p;
      p.frame = f;
      p.index = w.header.packet_index;
      p.bytes = static_cast<int>(w.wire_size());
      p.wire = std::move(w);
      fs.packet_ids.push_back(packets_.size());
      packets_.push_back(std::move(p));
    }
  } else {
    build_baseline_packets(f, fs.target_bytes);
  }
  push(now_ + to_us(cfg_.encode_ms), Ev::EncodeDone, f);
}

void Simulation::on_encode_done(std::uint32_t f) {
  FrameState& fs = frames_[f];
  fs.encoded = true;
  for (std::size_t pid : fs.packet_ids) transmit(pid);
}

void Simulation::transmit(std::size_t pid) {
  Packet& p = packets_[pid];
  FrameState& fs = frames_[p.frame];
  p.seq = next_seq_++;
  p.sent_us = now_;
  pid_by_seq_.push_back(pid);
  ++sent_;
  ++fs.transmissions;
  if (cfg_.record_packets) {
    PacketLogEntry e;
    e.seq = p.seq;
    e.frame = p.frame;
    e.bytes = p.bytes;
    e.retransmission = p.retransmission;
    e.send_ms = now_ms();
    log_.push_back(e);
  }
  if (kind_ == SchemeKind::Retransmit)
    push(now_ + to_us(srtt_ms_ + 4.0 * rttvar_ms_ + cfg_.scheme.retransmit_extra_ms), Ev::Rto, pid);
  if (cfg_.trace.is_unlimited()) {
    ++delivered_;
    if (cfg_.record_packets) log_[p.seq].service_ms = now_ms();
    push(now_ + to_us(cfg_.path.one_way_delay_ms), Ev::Arrival, pid);
    return;
  }
  if (static_cast<int>(queue_.size()) >= cfg_.path.queue_capacity) {
    ++dropped_;
    ++fs.dropped;
    if (cfg_.record_packets) log_[p.seq].dropped = true;
    return;
  }
  if (queue_.empty()) head_remaining_ = p.bytes;
  queue_.push_back(pid);
  max_queue_ = std::max(max_queue_, static_cast<int>(queue_.size()));
  if (!service_pending_) schedule_service();
}

void Simulation::schedule_service() {
  while (cfg_.trace.opportunity_ms(opp_cursor_) * 1000 < now_) ++opp_cursor_;
  push(cfg_.trace.opportunity_ms(opp_cursor_) * 1000, Ev::LinkService);
  service_pending_ = true;
}

void Simulation::on_link_service() {
  service_pending_ = false;
  ++opp_cursor_;
  int budget = cfg_.path.mtu;
  while (!queue_.empty() && budget > 0) {
    const int take = std::min(head_remaining_, budget);
    head_remaining_ -= take;
    budget -= take;
    if (head_remaining_ > 0) break;
    const std::size_t pid = queue_.front();
    queue_.pop_front();
    ++delivered_;
    if (cfg_.record_packets) log_[packets_[pid].seq].service_ms = now_ms();
    push(now_ + to_us(cfg_.path.one_way_delay_ms), Ev::Arrival, pid);
    if (!queue_.empty()) head_remaining_ = packets_[queue_.front()].bytes;
  }
  if (!queue_.empty()) schedule_service();
}

void Simulation::on_arrival(std::size_t pid) {
  const Packet& p = packets_[pid];
  FrameState& fs = frames_[p.frame];
  if (cfg_.record_packets) log_[p.seq].arrive_ms = now_ms();
  push(now_ + to_us(cfg_.path.one_way_delay_ms), Ev::Feedback, pid);
  if (kind_ == SchemeKind::DataScalable) {
    const ReceiverAction a = receiver_->on_packet(*p.wire, now_ms());
    if (a.kind == ActionKind::Discard) ++fs.late;
    ds_resolve();
    return;
  }
  if (fs.resolved) {
    ++fs.late;
    return;
  }
  if (fs.received.insert(p.index).second && !fs.layer_received.empty())
    ++fs.layer_received[static_cast<std::size_t>(p.layer)];
  newest_with_data_ = std::max<std::int64_t>(newest_with_data_, p.frame);
  baseline_resolve();
}

void Simulation::on_feedback(std::size_t pid) {
  const Packet& p = packets_[pid];
  FrameState& fs = frames_[p.frame];
  const double now = now_ms();
  if (cfg_.record_packets) log_[p.seq].feedback_ms = now;
  if (p.seq > expected_seq_) {
    const std::uint64_t lost = p.seq - expected_seq_;
    gcc_.on_loss(lost);
    salsify_.on_loss(now);
    for (std::uint64_t s = expected_seq_; s < p.seq; ++s) {
      fec_.observe(now, true);
      frames_[packets_[pid_by_seq_[s]].frame].known_lost = true;
    }
  }
  expected_seq_ = std::max(expected_seq_, p.seq + 1);
  const Feedback fb{p.seq, to_ms(p.sent_us), now - cfg_.path.one_way_delay_ms, p.bytes};
  gcc_.on_feedback(fb);
  salsify_.on_feedback(fb, now);
  fec_.observe(now, false);
  fs.acked.insert(p.index);
  if (!p.retransmission) {
    const double rtt = now - to_ms(p.sent_us);
    rttvar_ms_ = 0.75 * rttvar_ms_ + 0.25 * std::fabs(srtt_ms_ - rtt);
    srtt_ms_ = 0.875 * srtt_ms_ + 0.125 * rtt;
  }
}

void Simulation::on_rto(std::size_t pid) {
  const Packet& p = packets_[pid];
  FrameState& fs = frames_[p.frame];
  if (fs.acked.count(p.index)) return;
  Packet copy = p;
  copy.retransmission = true;
  copy.wire.reset();
  packets_.push_back(std::move(copy));
  transmit(packets_.size() - 1);
}

void Simulation::finish_frame(FrameState& fs, bool decoded, double psnr_db, double ssim_v, int used) {
  fs.resolved = true;
  fs.decoded = decoded;
  fs.packets_used = used;
  fs.decode_end_ms = now_ms() + (decoded ? cfg_.decode_ms : 0.0);
  fs.psnr = psnr_db;
  fs.ssim = ssim_v;
}

void Simulation::baseline_resolve() {
  const RateQualityTable& rq = *cfg_.rate_quality;
  while (next_resolve_ < frames_.size()) {
    FrameState& fs = frames_[next_resolve_];
    if (!fs.encoded) break;
    const int got = static_cast<int>(fs.received.size());
    const bool hopeless = newest_with_data_ > static_cast<std::int64_t>(next_resolve_);
    bool done = false;
    switch (kind_) {
      case SchemeKind::Retransmit:
        if (got == fs.total) {
          finish_frame(fs, true, rq.psnr_at(fs.quality_bytes), rq.ssim_at(fs.quality_bytes), got);
          done = true;
        }
        break;
      case SchemeKind::IdealFEC:
        if (got >= fs.needed) {
          finish_frame(fs, true, rq.psnr_at(fs.quality_bytes), rq.ssim_at(fs.quality_bytes), got);
          done = true;
        } else if (hopeless) {
          finish_frame(fs, false, 0.0, 0.0, got);
          done = true;
        }
        break;
      case SchemeKind::IdealSVC:
        if (got == fs.total || hopeless) {
          const int h = svc_decodable_layers(fs.layer_received, fs.layer_sent, fs.needed);
          if (h > 0) {
            const double b = fs.layer_bytes[static_cast<std::size_t>(h - 1)];
            finish_frame(fs, true, rq.psnr_at(b), rq.ssim_at(b), got);
          } else {
            finish_frame(fs, false, 0.0, 0.0, got);
          }
          done = true;
        }
        break;
      case SchemeKind::FrameSkip: {
        const bool ref_ok = fs.ref < 0 || frames_[static_cast<std::size_t>(fs.ref)].decoded;
        if (got == fs.total && ref_ok) {
          finish_frame(fs, true, rq.psnr_at(fs.quality_bytes), rq.ssim_at(fs.quality_bytes), got);
          done = true;
        } else if (hopeless || (got == fs.total && !ref_ok)) {
          finish_frame(fs, false, 0.0, 0.0, got);
          done = true;
        }
        break;
      }
      case SchemeKind::DataScalable: break;
    }
    if (!done) break;
    ++next_resolve_;
  }
}

void Simulation::ds_decode(const Resolution& r) {
  FrameState& fs = frames_[r.frame_index];
  if (!r.decoded) {
    finish_frame(fs, false, 0.0, 0.0, 0);
    return;
  }
  const std::vector<WirePacket> held = receiver_->take_frame(r.frame_index);
  const RawFrame& first = cfg_.video->frame(0);
  const ReceivedFrame rf =
      packets_to_tensor(held, tensor_dims_for(first.width(), first.height()), cfg_.levels, models_);
  RawFrame out = decode(rf.tensor, rf.tensor.kind == FrameKind::I ? nullptr : &decoder_reference_);
  const RawFrame& original = cfg_.video->frame(static_cast<int>(r.frame_index));
  const double q = psnr(original, out);
  finish_frame(fs, true, q, ssim(original, out), static_cast<int>(rf.packets_used));

  const auto& tables = *cfg_.profile_tables;
  const auto& table = static_cast<std::size_t>(rf.tensor.level_id) < tables.size()
                          ? tables[static_cast<std::size_t>(rf.tensor.level_id)]
                          : tables.front();
  decoder_reference_ = std::move(out);

  // Profile samples come from fully received frames, anchored at the level's
  // lossless quality; the receiver has no access to the original.
  auto& hist = history_[rf.tensor.level_id];
  if (rf.packets_used == k_ && rf.tensor.kind == FrameKind::P) {
    const auto map = PacketizationMap::make(rf.tensor.symbols.size(), k_, frame_map_seed(cfg_.seed, r.frame_index));
    for (const ProfileSample& s : profile_samples_from_frame(rf.tensor, map, table.back(), profile_rng_.next()))
      hist.push_back(s);
    const std::size_t keep = 16 * k_;
    if (hist.size() > keep) hist.erase(hist.begin(), hist.begin() + static_cast<long>(hist.size() - keep));
  }
  receiver_->set_profile(rf.tensor.level_id, estimate_profile(hist, static_cast<int>(k_), table));
}

void Simulation::ds_resolve() {
  for (const Resolution& r : receiver_->resolve(now_ms())) ds_decode(r);
  if (const auto d = receiver_->pending_deadline()) {
    const std::int64_t t = std::max(now_, static_cast<std::int64_t>(std::ceil(*d * 1000.0)));
    if (!timer_at_ || *timer_at_ != t) {
      timer_at_ = t;
      push(t, Ev::RecvTimer);
    }
  }
}

SessionReport Simulation::run() {
  const double interval = 1000.0 / cfg_.fps;
  for (int f = 0; f < cfg_.frames; ++f) push(to_us(f * interval), Ev::FrameTick, static_cast<std::uint64_t>(f));
  if (cc_kind_ == CcKind::Gcc) push(to_us(cfg_.cc.gcc_interval_ms), Ev::CcTick);
  const std::int64_t end = to_us((cfg_.frames - 1) * interval + cfg_.drain_ms);

  while (!events_.empty() && events_.top().t <= end) {
    const Event e = events_.top();
    events_.pop();
    now_ = e.t;
    switch (e.kind) {
      case Ev::FrameTick: on_frame_tick(static_cast<std::uint32_t>(e.arg)); break;
      case Ev::EncodeDone: on_encode_done(static_cast<std::uint32_t>(e.arg)); break;
      case Ev::LinkService: on_link_service(); break;
      case Ev::Arrival: on_arrival(e.arg); break;
      case Ev::Feedback: on_feedback(e.arg); break;
      case Ev::RecvTimer:
        if (timer_at_ && *timer_at_ == now_) timer_at_.reset();
        ds_resolve();
        break;
      case Ev::CcTick:
        gcc_.step(now_ms());
        push(now_ + to_us(cfg_.cc.gcc_interval_ms), Ev::CcTick);
        break;
      case Ev::Rto: on_rto(e.arg); break;
    }
  }
  now_ = end;

  SessionReport report;
  report.packets_sent = sent_;
  report.packets_delivered = delivered_;
  report.packets_dropped = dropped_;
  report.packets_in_flight = sent_ - delivered_ - dropped_;
  report.late_discarded = receiver_ ? receiver_->late_discarded() : 0;
  report.max_queue_occupancy = max_queue_;
  report.packet_log = std::move(log_);

  double next_decode = to_ms(end);
  for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) {
    if (!it->resolved) it->decode_end_ms = next_decode;
    else if (!it->decoded) it->decode_end_ms = next_decode;
    else next_decode = it->decode_end_ms;
  }
  for (std::size_t f = 0; f < frames_.size(); ++f) {
    const FrameState& fs = frames_[f];
    FrameRecord r;
    r.frame_index = static_cast<std::uint32_t>(f);
    r.encode_start_ms = fs.encode_start_ms;
    r.decode_end_ms = fs.decode_end_ms;
    r.delay_ms = fs.decode_end_ms - fs.encode_start_ms;
    r.packets_sent = fs.transmissions;
    r.packets_received = fs.decoded ? fs.packets_used : static_cast<int>(fs.received.size());
    r.packets_dropped = fs.dropped;
    r.packets_late = fs.late;
    r.bytes = fs.bytes;
    r.target_bytes = fs.target_bytes;
    r.level_id = fs.level_id;
    r.psnr = fs.psnr;
    r.ssim = fs.ssim;
    r.skipped = !fs.decoded;
    report.frames.push_back(r);
  }
  compute_aggregates(report, cfg_.fps);
  return report;
}

}  // namespace

SessionReport simulate(const SessionConfig& config) {
  Simulation sim(config);
  return sim.run();
}

}  // namespace dsv::netsim
