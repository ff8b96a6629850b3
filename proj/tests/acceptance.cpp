// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria (capped at 1 for ctest).
//
// Usage: acceptance <path-to-dsv-cli> [criterion numbers...]

#include "dsv/codec.hpp"
#include "dsv/delivery.hpp"
#include "dsv/entropy.hpp"
#include "dsv/error.hpp"
#include "dsv/harness.hpp"
#include "dsv/losstrain.hpp"
#include "dsv/metrics.hpp"
#include "dsv/netsim.hpp"
#include "dsv/packetize.hpp"
#include "dsv/rng.hpp"
#include "dsv/video_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dsv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... A>
std::string fmtn(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::int32_t> laplacian(std::size_t n, double scale, Rng& rng) {
  std::vector<std::int32_t> v(n);
  for (auto& s : v)
    s = static_cast<std::int32_t>(std::clamp<long>(std::lround(rng.laplace(scale)), -kSymbolBound, kSymbolBound));
  return v;
}

PacketFields fields_for(std::uint16_t index, std::uint16_t count) {
  PacketFields f;
  f.frame_index = 1;
  f.frame_kind = FrameKind::P;
  f.packet_index = index;
  f.packet_count = count;
  f.map_seed = 7;
  f.level_id = 4;
  return f;
}

// 1. Packetization round trip against a brute-force assignment table.
Outcome packetization() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const std::size_t ks[] = {8, 16, 24};
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16 + static_cast<std::size_t>(rng.below(100000 - 16 + 1));
    const std::size_t k = ks[rng.below(3)];
    const PacketizationMap map = PacketizationMap::make(n, k, rng.next());
    const std::uint64_t p = map.prime();
    // table[i] = (packet, slot), by direct modular multiplication.
    std::vector<std::pair<std::size_t, std::size_t>> table(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t q = static_cast<std::size_t>((static_cast<unsigned __int128>(i) * p) % n);
      table[i] = {q % k, q / k};
    }
    std::vector<std::int32_t> symbols(n);
    for (std::size_t i = 0; i < n; ++i) symbols[i] = 1 + static_cast<std::int32_t>(rng.below(kSymbolBound));
    const auto lists = packetize(symbols, map);
    for (std::size_t i = 0; i < n; ++i) {
      const auto [pk, slot] = table[i];
      if (lists[pk].values.size() <= slot || lists[pk].values[slot] != symbols[i]) ++bad;
    }
    if (depacketize(lists, map) != symbols) ++bad;
    std::vector<bool> dropped(k);
    for (std::size_t j = 0; j < k; ++j) dropped[j] = rng.uniform() < 0.5;
    std::vector<ElementList> kept;
    for (std::size_t j = 0; j < k; ++j)
      if (!dropped[j]) kept.push_back(lists[j]);
    const auto out = depacketize(kept, map);
    for (std::size_t i = 0; i < n; ++i)
      if (out[i] != (dropped[table[i].first] ? 0 : symbols[i])) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10.0, fmtn("1000 triples, %zu mismatches, %.1f s (limit 10 s)", bad, secs)};
}

// 2. Entropy coding: round trips, closeness to the model bound, per-packet
// overhead and balance.
Outcome entropy() {
  Rng rng(77);
  std::size_t failures = 0;
  double worst_rel = 0.0;
  std::size_t bound_checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(trial % 10 == 0 ? 20000 : 2000));
    const auto v = laplacian(n, rng.uniform(0.05, 60.0), rng);
    const SymbolModel m = fit_model(v);
    const WirePacket w = encode_packet({0, v}, m, fields_for(0, 1));
    const WirePacket back = WirePacket::parse(w.serialize());
    if (decode_packet(back, m).values != v) ++failures;
    if (n >= 256) {
      ++bound_checked;
      const double bound = shannon_bytes(v, m);
      // Relative excess over the bound, after the coder's 4-byte flush.
      const double size = static_cast<double>(w.payload.size());
      worst_rel = std::max(worst_rel, (size - 4.0 - bound) / std::max(bound, 1.0));
    }
  }
  const std::size_t n = static_cast<std::size_t>(kernels::kChannels) * 11 * 20;
  double worst_spread = 0.0;
  double worst_overhead = 0.0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng r(seed);
    const auto v = laplacian(n, 3.0, r);
    const SymbolModel m = fit_model(v);
    const auto map = PacketizationMap::make(n, 16, seed);
    std::vector<double> sizes;
    for (const auto& l : packetize(v, map))
      sizes.push_back(static_cast<double>(encode_packet(l, m, fields_for(0, 16)).payload.size()));
    const double mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / static_cast<double>(sizes.size());
    for (double s : sizes) worst_spread = std::max(worst_spread, std::fabs(s - mean) / mean);
    const double whole = static_cast<double>(encode_packet({0, v}, m, fields_for(0, 1)).payload.size());
    worst_overhead = std::max(worst_overhead, std::accumulate(sizes.begin(), sizes.end(), 0.0) / whole);
  }
  const bool pass = failures == 0 && worst_rel <= 0.02 && worst_overhead <= 1.05 && worst_spread <= 0.10;
  return {pass, fmtn("10^4 round trips, %zu failures; worst excess over bound %.2f%% on %zu lists >= 256 "
                     "(flush excluded); sum/whole %.4f (<= 1.05); per-packet spread %.1f%% (<= 10%%)",
                     failures, 100 * worst_rel, bound_checked, worst_overhead, 100 * worst_spread)};
}

// 3. Graceful degradation of the toy codec.
Outcome degradation() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::ExperimentConfig c;
  c.videos = {"synth:conference:320x176:10:5", "synth:pan:320x176:10:5", "synth:shapes:320x176:10:5"};
  c.levels = {0, 4, 8};
  c.loss_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  c.seeds.clear();
  for (std::uint64_t s = 1; s <= 30; ++s) c.seeds.push_back(s);
  c.eval_frames = 10;
  const harness::Table t = harness::codec_eval(c);

  std::map<std::pair<std::string, std::string>, std::map<double, double>> mean;
  std::map<std::pair<std::string, std::string>, std::set<std::string>> bytes;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto key = std::make_pair(t.at(r, "video"), t.at(r, "level"));
    mean[key][harness::parse_number(t.at(r, "loss_rate"))] += harness::parse_number(t.at(r, "psnr")) / 30.0;
    bytes[key].insert(t.at(r, "bytes_per_frame"));
  }
  int increases = 0;
  double worst_step = -1e9;
  for (const auto& [key, curve] : mean) {
    double prev = 1e9;
    for (const auto& [rate, q] : curve) {
      if (q > prev) ++increases;
      worst_step = std::max(worst_step, q - prev);
      prev = q;
    }
  }
  int byte_mismatch = 0;
  for (const auto& [key, set] : bytes) byte_mismatch += set.size() != 1;

  // Every non-empty subset of one P frame's packets decodes, and re-encoding
  // yields the same datagrams whatever the loss rate was.
  std::size_t subsets = 0;
  std::size_t decode_failures = 0;
  std::size_t encode_mismatch = 0;
  for (const std::string& spec : c.videos) {
    const VideoSource video = VideoSource::open(spec);
    for (int level_id : c.levels) {
      const QualityLevel& level = level_by_id(default_levels(), level_id);
      SenderConfig sc;
      sc.k_patch = 6;
      Sender a(sc, video.width(), video.height());
      Sender b(sc, video.width(), video.height());
      EncodedFrame fa, fb;
      for (int f = 0; f < 3; ++f) {
        fa = a.encode_next_at(video.frame(f), level);
        fb = b.encode_next_at(video.frame(f), level);
        if (fa.packets != fb.packets) ++encode_mismatch;
      }
      const std::size_t k = a.packet_count();
      const TensorDims dims = tensor_dims_for(video.width(), video.height());
      const RawFrame reference(video.width(), video.height());
      for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
        std::vector<WirePacket> kept;
        for (const WirePacket& w : fa.packets)
          if (mask >> w.header.packet_index & 1u) kept.push_back(w);
        ++subsets;
        try {
          ModelStore store;
          const ReceivedFrame rf = packets_to_tensor(kept, dims, default_levels(), store);
          const RawFrame out = decode(rf.tensor, &reference);
          if (out.width() != video.width() || !std::isfinite(psnr(video.frame(2), out))) ++decode_failures;
        } catch (const Error&) {
          ++decode_failures;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = increases == 0 && byte_mismatch == 0 && decode_failures == 0 && encode_mismatch == 0 && secs < 300;
  return {pass, fmtn("3 clips x levels {0,4,8} x 9 rates x 30 seeds: %d increases (largest step %+.3f dB), "
                     "%d byte mismatches; %zu/%zu subset decodes failed; %zu encode mismatches; %.0f s",
                     increases, worst_step, byte_mismatch, decode_failures, subsets, encode_mismatch, secs)};
}

// 4. Training under erasures.
Outcome training() {
  const auto t0 = std::chrono::steady_clock::now();
  using namespace losstrain;
  Rng rng(4);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(8));
    const int m = 2 + static_cast<int>(rng.below(8));
    const LinearCodec c = LinearCodec::random(d, m, rng.next(), 0.7);
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.normal();
    Vector mask(m);
    for (int i = 0; i < m; ++i) mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    const double alpha = trial % 2 == 0 ? 0.0 : 0.1;
    const Gradients g = backward(c, x, mask, alpha);
    for (int which = 0; which < 2; ++which) {
      const Matrix& w = which == 0 ? c.encoder : c.decoder;
      const Matrix& analytic = which == 0 ? g.encoder : g.decoder;
      for (long r = 0; r < w.rows(); ++r)
        for (long col = 0; col < w.cols(); ++col) {
          LinearCodec plus = c;
          LinearCodec minus = c;
          (which == 0 ? plus.encoder : plus.decoder)(r, col) += h;
          (which == 0 ? minus.encoder : minus.decoder)(r, col) -= h;
          const double fd = (forward(plus, x, mask, alpha).loss - forward(minus, x, mask, alpha).loss) / (2 * h);
          worst = std::max(worst, std::fabs(fd - analytic(r, col)) / std::max(1e-3, std::fabs(fd)));
        }
    }
  }

  // The train-toy defaults, mean over five seeds.
  double clean30 = 0.0, mixed30 = 0.0, clean0 = 0.0, mixed0 = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    harness::ExperimentConfig c;
    c.distributions = {"fixed:0", "preset:2"};
    c.test_loss_rates = {0.0, 0.3};
    c.seeds = {seed};
    const harness::Table t = harness::train_toy(c).eval;
    auto at = [&](const char* dist, double rate) {
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (t.at(r, "distribution") == dist && harness::parse_number(t.at(r, "test_loss_rate")) == rate)
          return harness::parse_number(t.at(r, "distortion"));
      throw Error(ErrorKind::InvalidInput, "missing eval row");
    };
    clean0 += at("fixed:0", 0.0) / 5;
    clean30 += at("fixed:0", 0.3) / 5;
    mixed0 += at("preset:2", 0.0) / 5;
    mixed30 += at("preset:2", 0.3) / 5;
    per_seed += fmtn(" %.3f", at("preset:2", 0.0) / at("fixed:0", 0.0));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-3 && mixed30 < clean30 && mixed0 <= 1.05 * clean0 && secs < 120;
  return {pass, fmtn("worst FD relative error %.2e (< 1e-3); at 30%%: mixed %.5f vs 0%%-only %.5f; "
                     "at 0%%: mixed %.5f vs 0%%-only %.5f (ratio %.3f, <= 1.05; per seed%s); %.0f s",
                     worst, mixed30, clean30, mixed0, clean0, mixed0 / std::max(clean0, 1e-300), per_seed.c_str(),
                     secs)};
}

// 5. Decode-deadline dominance, footnote form: for an arrival after t*,
// decoding with i packets at t_i has at least the utility of waiting for it.
Outcome dominance() {
  std::size_t cases = 0;
  std::size_t violations = 0;
  double tightest = 1e18;
  for (double gap : {0.0, 0.5, 1.0, 2.0})
    for (double beta : {0.005, 0.02, 0.1})
      for (int k : {2, 4, 8}) {
        // Concave-ish profile whose step i -> i+1 is `gap` at every i.
        QualityProfile p;
        p.q.push_back(0.0);
        for (int n = 1; n <= k; ++n) p.q.push_back(30.0 + gap * (n - 1));
        const DecodePolicy policy{beta};
        for (int i = 1; i < k; ++i)
          for (double t_i : {0.0, 13.0, 250.0})
            for (double tau : {0.0, -40.0})
              for (double offset : {1e-9, 1e-3, 0.5, 1.0, 5.0, 20.0, 100.0, 1000.0}) {
                const double t_star = decode_deadline(t_i, i, p, policy);
                const double now = decode_utility(p, i, t_i, tau, policy);
                const double later = decode_utility(p, i + 1, t_star + offset, tau, policy);
                ++cases;
                if (now < later - 1e-12) ++violations;
                tightest = std::min(tightest, now - later);
              }
      }
  return {violations == 0, fmtn("%zu grid points (gap x beta x k x i x t_i x tau x offset), %zu violations, "
                                "smallest margin %.3g dB",
                                cases, violations, tightest)};
}

// Shared end-to-end setup.
harness::ExperimentConfig e2e_config() {
  harness::ExperimentConfig c;
  c.videos = {"synth:conference:640x352:250:3"};
  c.k_patch = 15;
  c.frames = 250;
  c.delays_ms = {100.0};
  c.queues = {25};
  return c;
}

std::string trace_path(const char* name) { return (fs::path(DSV_SOURCE_DIR) / "traces" / name).string(); }

struct Row {
  double p95 = 0.0;
  double psnr = 0.0;
};

std::map<std::string, std::map<std::string, Row>> by_trace_scheme(const harness::Table& t) {
  std::map<std::string, std::map<std::string, Row>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out[t.at(r, "trace")][t.at(r, "scheme")] = {harness::parse_number(t.at(r, "p95_delay_ms")),
                                               harness::parse_number(t.at(r, "mean_psnr"))};
  return out;
}

// 6. End-to-end tail delay and quality.
Outcome tail_delay() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::ExperimentConfig c = e2e_config();
  c.schemes = {"data-scalable", "retransmit", "frame-skip"};
  c.traces = {"step", trace_path("cellular1.txt"), trace_path("cellular2.txt")};
  const auto rows = by_trace_scheme(harness::sweep(c));
  bool pass = true;
  std::string detail;
  for (const std::string& tr : c.traces) {
    const Row& ds = rows.at(tr).at("data-scalable");
    const Row& rt = rows.at(tr).at("retransmit");
    const Row& fs = rows.at(tr).at("frame-skip");
    const double r_rt = ds.p95 / rt.p95;
    const double r_fs = ds.p95 / fs.p95;
    const double penalty = fs.psnr - ds.psnr;
    const bool ok = r_rt <= 0.5 && r_fs <= 0.8 && penalty <= 2.0;
    pass = pass && ok;
    detail += fmtn("\n    %-14s P95 ds/rt/fs %.0f/%.0f/%.0f ms, ds/rt %.2f (<= 0.5) %s, ds/fs %.2f (<= 0.8) %s, "
                   "PSNR ds %.2f fs %.2f penalty %.2f dB (<= 2) %s",
                   fs::path(tr).filename().string().c_str(), ds.p95, rt.p95, fs.p95, r_rt, r_rt <= 0.5 ? "ok" : "MISS",
                   r_fs, r_fs <= 0.8 ? "ok" : "MISS", ds.psnr, fs.psnr, penalty, penalty <= 2.0 ? "ok" : "MISS");
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 600;
  return {pass, fmtn("%.0f s", secs) + detail};
}

// 7. I-patch smooths frame sizes.
Outcome ipatch_smoothing() {
  const VideoSource video = VideoSource::synthetic(SyntheticKind::Conference, 640, 256, 100, 3);
  const QualityLevel& level = level_by_id(default_levels(), 4);
  auto cv = [&](const SenderConfig& sc) {
    Sender s(sc, video.width(), video.height());
    std::vector<double> sizes;
    for (int f = 0; f < video.frame_count(); ++f)
      sizes.push_back(static_cast<double>(s.encode_next_at(video.frame(f), level).bytes));
    const double mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / static_cast<double>(sizes.size());
    double var = 0.0;
    for (double x : sizes) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(sizes.size())) / mean;
  };
  SenderConfig patch;
  patch.k_patch = 10;
  SenderConfig iframes;
  iframes.use_ipatch = false;
  iframes.iframe_interval = 10;
  const double a = cv(patch);
  const double b = cv(iframes);
  return {a < b, fmtn("100 frames 640x256: CV with I-patch (k_patch 10) %.3f vs I-frame every 10 %.3f", a, b)};
}

// 8. Sweep orderings over delay and queue.
Outcome sweep_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  harness::ExperimentConfig c = e2e_config();
  c.schemes = {"data-scalable", "retransmit"};
  c.traces = {"step", trace_path("cellular1.txt")};
  auto advantage = [&](double delay, int queue) {
    harness::ExperimentConfig x = c;
    x.delays_ms = {delay};
    x.queues = {queue};
    const auto rows = by_trace_scheme(harness::sweep(x));
    double sum = 0.0;
    for (const auto& tr : x.traces) sum += rows.at(tr).at("retransmit").p95 - rows.at(tr).at("data-scalable").p95;
    return sum / static_cast<double>(x.traces.size());
  };
  const double d100 = advantage(100.0, 25);
  const double d300 = advantage(300.0, 25);
  const double q15 = advantage(100.0, 15);
  const double q35 = advantage(100.0, 35);
  const bool pass = d300 > d100 && q15 > q35;
  return {pass, fmtn("P95 reduction vs retransmit (mean over step, cellular1): delay 100 ms %.0f, 300 ms %.0f; "
                     "queue 15 %.0f, queue 35 %.0f ms; %.0f s",
                     d100, d300, q15, q35, seconds_since(t0))};
}

// 9. CLI determinism: every subcommand twice, byte-identical CSVs.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "dsv_acceptance_cli";
  fs::remove_all(root);
  const std::string common = " --video synth:conference:320x176:30:2 --frames 30 --k-patch 6";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"codec-eval", common + " --levels 2,6 --loss-rates 0,0.3,0.6 --seed 1,2 --eval-frames 4"},
      {"simulate", common + " --scheme data-scalable --trace step"},
      {"sweep", common + " --scheme data-scalable,retransmit,frame-skip --trace step --delay 100,300 --workers 2"},
      {"train-toy", " --iterations 500 --distributions fixed:0,preset:2"},
      {"gen-trace", " --kind cellular --params 4 --duration 5000"},
  };
  std::size_t files = 0;
  std::vector<std::string> differing;
  auto run = [&](const std::string& sub, const std::string& args, const fs::path& dir) {
    fs::create_directories(dir);
    const std::string cmd = cli + " " + sub + args + " -o " + dir.string() + " > " + (dir / "stdout.txt").string();
    return std::system(cmd.c_str());
  };
  for (const auto& [sub, args] : commands) {
    const fs::path a = root / "a" / sub;
    const fs::path b = root / "b" / sub;
    if (run(sub, args, a) != 0 || run(sub, args, b) != 0) {
      differing.push_back(sub + " (failed to run)");
      continue;
    }
    for (const auto& e : fs::directory_iterator(a)) {
      if (e.path().filename() == "stdout.txt") continue;
      ++files;
      if (slurp(e.path()) != slurp(b / e.path().filename())) differing.push_back(sub + "/" + e.path().filename().string());
    }
  }
  // report over the simulate output.
  for (const char* side : {"a", "b"}) {
    const fs::path dir = root / side / "report";
    fs::create_directories(dir);
    const std::string cmd = cli + " report " + (root / side / "simulate" / "frames.csv").string() + " -o " +
                            dir.string() + " > " + (dir / "stdout.txt").string();
    if (std::system(cmd.c_str()) != 0) differing.push_back("report (failed to run)");
  }
  ++files;
  if (slurp(root / "a" / "report" / "report.csv") != slurp(root / "b" / "report" / "report.csv"))
    differing.push_back("report/report.csv");
  std::string which;
  for (const auto& d : differing) which += " " + d;
  return {differing.empty() && files >= 8,
          fmtn("6 subcommands, %zu output files compared, %zu differ", files, differing.size()) + which};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <dsv-cli> [criteria...]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"packetization round trip", packetization},
      {"entropy coder", entropy},
      {"graceful degradation", degradation},
      {"training under erasures", training},
      {"decode-deadline dominance", dominance},
      {"end-to-end tail delay", tail_delay},
      {"I-patch smoothing", ipatch_smoothing},
      {"sweep orderings", sweep_fidelity},
      {"CLI determinism", [&] { return cli_determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
