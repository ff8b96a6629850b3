#include "dsv/harness.hpp"

#include "dsv/error.hpp"
#include "dsv/metrics.hpp"
#include "json.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <system_error>

namespace dsv::harness {

using nlohmann::json;

namespace {

const std::map<std::string, std::vector<std::string>>& schemas() {
  static const std::vector<std::string> session_cols{
      "video",          "scheme",        "cc",           "trace",         "one_way_delay_ms",  "rtt_ms",
      "queue_capacity", "seed",          "frames",       "decoded_frames", "mean_psnr",        "mean_ssim",
      "p95_delay_ms",   "delivered_fps", "pct_late",     "packets_sent",  "packets_delivered", "packets_dropped",
      "packets_in_flight", "late_discarded"};
  static const std::map<std::string, std::vector<std::string>> all = [] {
    std::map<std::string, std::vector<std::string>> m;
    m["codec_eval"] = {"video", "level", "loss_rate", "seed", "psnr", "ssim", "bytes_per_frame"};
    m["frames"] = {"session",         "scheme",       "frame_index",  "encode_start_ms", "decode_end_ms",
                   "delay_ms",        "packets_sent", "packets_received", "packets_dropped", "packets_late",
                   "bytes",           "target_bytes", "level_id",     "psnr",            "ssim",
                   "skipped"};
    m["session"] = session_cols;
    std::vector<std::string> sweep{"index"};
    sweep.insert(sweep.end(), session_cols.begin(), session_cols.end());
    m["sweep"] = sweep;
    m["train_curve"] = {"distribution", "iteration", "loss", "distortion", "size_proxy"};
    m["train_eval"] = {"distribution", "test_loss_rate", "distortion"};
    m["report"] = {"scheme", "sessions", "frames", "decoded_frames", "mean_psnr", "mean_ssim", "p95_delay_ms",
                   "pct_late"};
    return m;
  }();
  return all;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double number_arg(const std::string& text, const std::string& context) {
  try {
    return parse_number(text);
  } catch (const Error&) {
    fail(ErrorKind::Config, "bad number '" + text + "' in " + context);
  }
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      rec.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        rec.push_back(field);
        records.push_back(rec);
      }
      rec.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  require(!quoted, ErrorKind::Format, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    rec.push_back(field);
    records.push_back(rec);
  }
  return records;
}

template <class T>
std::vector<T> as_list(const json& v) {
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + salt + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<QualityLevel> selected_levels(const ExperimentConfig& c) {
  const auto all = default_levels();
  if (c.levels.empty()) return all;
  std::vector<QualityLevel> out;
  for (int id : c.levels) out.push_back(level_by_id(all, id));
  return out;
}

SenderConfig sender_config(const ExperimentConfig& c, std::uint64_t seed) {
  SenderConfig s;
  s.levels = selected_levels(c);
  s.k_patch = c.k_patch;
  s.patch_width = c.patch_width;
  s.patch_height = c.patch_height;
  s.use_ipatch = c.ipatch;
  s.packets = static_cast<std::size_t>(c.k_packets);
  s.session_seed = seed;
  return s;
}

bool is_generator(const std::string& spec) {
  const std::string head = split(spec, ':').front();
  return head == "step" || head == "constant" || head == "cellular" || head == "unlimited";
}

double pct_late(const netsim::SessionReport& r, double threshold) {
  if (r.frames.empty()) return 0.0;
  std::size_t late = 0;
  for (const auto& f : r.frames) late += f.delay_ms > threshold;
  return 100.0 * static_cast<double>(late) / static_cast<double>(r.frames.size());
}

std::vector<std::string> session_row(const std::string& video, const std::string& scheme, const std::string& cc,
                                     const std::string& trace, double delay, int queue, std::uint64_t seed,
                                     const netsim::SessionReport& r, double late_threshold) {
  std::size_t decoded = 0;
  for (const auto& f : r.frames) decoded += !f.skipped;
  return {video,
          scheme,
          cc,
          trace,
          format_number(delay),
          format_number(2.0 * delay),
          format_number(static_cast<std::int64_t>(queue)),
          format_number(static_cast<std::int64_t>(seed)),
          format_number(static_cast<std::int64_t>(r.frames.size())),
          format_number(static_cast<std::int64_t>(decoded)),
          format_number(r.mean_psnr),
          format_number(r.mean_ssim),
          format_number(r.p95_delay_ms),
          format_number(r.delivered_fps),
          format_number(pct_late(r, late_threshold)),
          format_number(static_cast<std::int64_t>(r.packets_sent)),
          format_number(static_cast<std::int64_t>(r.packets_delivered)),
          format_number(static_cast<std::int64_t>(r.packets_dropped)),
          format_number(static_cast<std::int64_t>(r.packets_in_flight)),
          format_number(static_cast<std::int64_t>(r.late_discarded))};
}

std::string cc_name(const ExperimentConfig& c, const std::string& scheme) {
  if (!c.cc.empty()) return c.cc;
  return netsim::to_string(netsim::default_cc(netsim::parse_scheme(scheme)));
}

// The I-patch tiling must fit the clip; reported as a configuration error.
void check_geometry(const ExperimentConfig& c, const VideoSource& v) {
  if (!c.ipatch) return;
  require(c.patch_width <= v.width() && c.patch_height <= v.height(), ErrorKind::Config,
          "I-patch larger than the " + std::to_string(v.width()) + "x" + std::to_string(v.height()) + " frame");
  const int tiles = ((v.width() + c.patch_width - 1) / c.patch_width) *
                    ((v.height() + c.patch_height - 1) / c.patch_height);
  require(tiles == c.k_patch, ErrorKind::Config,
          "I-patch tiling has " + std::to_string(tiles) + " tiles but k_patch is " + std::to_string(c.k_patch));
}

void set_threads(int workers) {
  if (workers > 0) omp_set_num_threads(workers);
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  fail(ErrorKind::Format, "table has no column '" + std::string(name) + "'");
}

const std::string& Table::at(std::size_t row, std::string_view name) const { return rows.at(row).at(column(name)); }

std::vector<std::string> schema_names() {
  std::vector<std::string> out;
  for (const auto& [name, cols] : schemas()) out.push_back(name);
  return out;
}

const std::vector<std::string>& schema_columns(const std::string& schema) {
  auto it = schemas().find(schema);
  require(it != schemas().end(), ErrorKind::Format, "unknown CSV schema '" + schema + "'");
  return it->second;
}

Table make_table(const std::string& schema) { return {schema, schema_columns(schema), {}}; }

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_number(std::int64_t value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size() && !text.empty(), ErrorKind::Format,
          "not a number: '" + std::string(text) + "'");
  return v;
}

std::string write_csv(const Table& table) {
  require(table.columns == schema_columns(table.schema), ErrorKind::Format,
          "columns do not match schema '" + table.schema + "'");
  std::string out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) out += (i ? "," : "") + table.columns[i];
  out += '\n';
  for (const auto& row : table.rows) {
    require(row.size() == table.columns.size(), ErrorKind::Format, "row width differs from the header");
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + quote_csv(row[i]);
    out += '\n';
  }
  return out;
}

Table read_csv(const std::string& text, const std::string& schema) {
  Table t = make_table(schema);
  auto records = parse_csv_records(text);
  require(!records.empty(), ErrorKind::Format, "CSV has no header");
  require(records.front() == t.columns, ErrorKind::Format, "CSV header does not match schema '" + schema + "'");
  for (std::size_t i = 1; i < records.size(); ++i) {
    require(records[i].size() == t.columns.size(), ErrorKind::Format,
            "CSV row " + std::to_string(i) + " has the wrong number of fields");
    t.rows.push_back(std::move(records[i]));
  }
  return t;
}

void save_csv(const std::filesystem::path& path, const Table& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << write_csv(table);
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

Table load_csv(const std::filesystem::path& path, const std::string& schema) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return read_csv(ss.str(), schema);
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  ExperimentConfig c;
  using Setter = void (*)(ExperimentConfig&, const json&);
  static const std::map<std::string, Setter> setters{
      {"videos", [](ExperimentConfig& c, const json& v) { c.videos = as_list<std::string>(v); }},
      {"schemes", [](ExperimentConfig& c, const json& v) { c.schemes = as_list<std::string>(v); }},
      {"cc", [](ExperimentConfig& c, const json& v) { c.cc = v.get<std::string>(); }},
      {"traces", [](ExperimentConfig& c, const json& v) { c.traces = as_list<std::string>(v); }},
      {"delays_ms", [](ExperimentConfig& c, const json& v) { c.delays_ms = as_list<double>(v); }},
      {"queues", [](ExperimentConfig& c, const json& v) { c.queues = as_list<int>(v); }},
      {"seeds", [](ExperimentConfig& c, const json& v) { c.seeds = as_list<std::uint64_t>(v); }},
      {"inputs", [](ExperimentConfig& c, const json& v) { c.inputs = as_list<std::string>(v); }},
      {"frames", [](ExperimentConfig& c, const json& v) { c.frames = v.get<int>(); }},
      {"fps", [](ExperimentConfig& c, const json& v) { c.fps = v.get<double>(); }},
      {"encode_ms", [](ExperimentConfig& c, const json& v) { c.encode_ms = v.get<double>(); }},
      {"beta", [](ExperimentConfig& c, const json& v) { c.beta = v.get<double>(); }},
      {"k_packets", [](ExperimentConfig& c, const json& v) { c.k_packets = v.get<int>(); }},
      {"k_patch", [](ExperimentConfig& c, const json& v) { c.k_patch = v.get<int>(); }},
      {"patch_width", [](ExperimentConfig& c, const json& v) { c.patch_width = v.get<int>(); }},
      {"patch_height", [](ExperimentConfig& c, const json& v) { c.patch_height = v.get<int>(); }},
      {"ipatch", [](ExperimentConfig& c, const json& v) { c.ipatch = v.get<bool>(); }},
      {"levels", [](ExperimentConfig& c, const json& v) { c.levels = as_list<int>(v); }},
      {"rate_table_frames", [](ExperimentConfig& c, const json& v) { c.rate_table_frames = v.get<int>(); }},
      {"profile_table_frames", [](ExperimentConfig& c, const json& v) { c.profile_table_frames = v.get<int>(); }},
      {"profile_table_seeds", [](ExperimentConfig& c, const json& v) { c.profile_table_seeds = v.get<int>(); }},
      {"loss_rates", [](ExperimentConfig& c, const json& v) { c.loss_rates = as_list<double>(v); }},
      {"eval_frames", [](ExperimentConfig& c, const json& v) { c.eval_frames = v.get<int>(); }},
      {"distributions", [](ExperimentConfig& c, const json& v) { c.distributions = as_list<std::string>(v); }},
      {"test_loss_rates", [](ExperimentConfig& c, const json& v) { c.test_loss_rates = as_list<double>(v); }},
      {"patch", [](ExperimentConfig& c, const json& v) { c.patch = v.get<int>(); }},
      {"code_dim", [](ExperimentConfig& c, const json& v) { c.code_dim = v.get<int>(); }},
      {"train_patches", [](ExperimentConfig& c, const json& v) { c.train_patches = v.get<int>(); }},
      {"iterations", [](ExperimentConfig& c, const json& v) { c.iterations = v.get<int>(); }},
      {"batch_size", [](ExperimentConfig& c, const json& v) { c.batch_size = v.get<int>(); }},
      {"learning_rate", [](ExperimentConfig& c, const json& v) { c.learning_rate = v.get<double>(); }},
      {"alpha", [](ExperimentConfig& c, const json& v) { c.alpha = v.get<double>(); }},
      {"eval_seeds", [](ExperimentConfig& c, const json& v) { c.eval_seeds = v.get<int>(); }},
      {"trace_kind", [](ExperimentConfig& c, const json& v) { c.trace_kind = v.get<std::string>(); }},
      {"trace_params", [](ExperimentConfig& c, const json& v) { c.trace_params = as_list<double>(v); }},
      {"trace_duration_ms", [](ExperimentConfig& c, const json& v) { c.trace_duration_ms = v.get<std::int64_t>(); }},
      {"output_dir", [](ExperimentConfig& c, const json& v) { c.output_dir = v.get<std::string>(); }},
      {"output_file", [](ExperimentConfig& c, const json& v) { c.output_file = v.get<std::string>(); }},
      {"workers", [](ExperimentConfig& c, const json& v) { c.workers = v.get<int>(); }},
      {"late_threshold_ms", [](ExperimentConfig& c, const json& v) { c.late_threshold_ms = v.get<double>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    require(it != setters.end(), ErrorKind::Config, "unknown config key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, "bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["videos"] = c.videos;
  j["schemes"] = c.schemes;
  j["cc"] = c.cc;
  j["traces"] = c.traces;
  j["delays_ms"] = c.delays_ms;
  j["queues"] = c.queues;
  j["seeds"] = c.seeds;
  j["inputs"] = c.inputs;
  j["frames"] = c.frames;
  j["fps"] = c.fps;
  j["encode_ms"] = c.encode_ms;
  j["beta"] = c.beta;
  j["k_packets"] = c.k_packets;
  j["k_patch"] = c.k_patch;
  j["patch_width"] = c.patch_width;
  j["patch_height"] = c.patch_height;
  j["ipatch"] = c.ipatch;
  j["levels"] = c.levels;
  j["rate_table_frames"] = c.rate_table_frames;
  j["profile_table_frames"] = c.profile_table_frames;
  j["profile_table_seeds"] = c.profile_table_seeds;
  j["loss_rates"] = c.loss_rates;
  j["eval_frames"] = c.eval_frames;
  j["distributions"] = c.distributions;
  j["test_loss_rates"] = c.test_loss_rates;
  j["patch"] = c.patch;
  j["code_dim"] = c.code_dim;
  j["train_patches"] = c.train_patches;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["alpha"] = c.alpha;
  j["eval_seeds"] = c.eval_seeds;
  j["trace_kind"] = c.trace_kind;
  j["trace_params"] = c.trace_params;
  j["trace_duration_ms"] = c.trace_duration_ms;
  j["output_dir"] = c.output_dir;
  j["output_file"] = c.output_file;
  j["workers"] = c.workers;
  j["late_threshold_ms"] = c.late_threshold_ms;
  return j.dump(2);
}

void validate(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::Config, what); };
  check(!c.videos.empty(), "at least one video is required");
  check(!c.schemes.empty(), "at least one scheme is required");
  check(!c.traces.empty(), "at least one trace is required");
  check(!c.delays_ms.empty() && !c.queues.empty() && !c.seeds.empty(), "delays, queues and seeds must be non-empty");
  for (const auto& s : c.schemes) {
    try {
      netsim::parse_scheme(s);
    } catch (const Error&) {
      fail(ErrorKind::Config, "unknown scheme '" + s + "'");
    }
  }
  if (!c.cc.empty()) {
    try {
      netsim::parse_cc(c.cc);
    } catch (const Error&) {
      fail(ErrorKind::Config, "unknown congestion control '" + c.cc + "'");
    }
  }
  for (const auto& t : c.traces)
    if (!is_generator(t)) check(std::filesystem::exists(t), "trace file does not exist: " + t);
  for (const auto& v : c.videos)
    if (v.rfind("synth:", 0) != 0) check(std::filesystem::exists(v), "video does not exist: " + v);
  for (double d : c.delays_ms) check(d >= 0.0, "one-way delay must be non-negative");
  for (int q : c.queues) check(q >= 1, "queue capacity must be at least 1");
  check(c.frames >= 1 && c.eval_frames >= 1, "frame counts must be positive");
  check(c.fps > 0.0 && c.encode_ms >= 0.0, "fps must be positive and encode time non-negative");
  check(c.beta > 0.0, "beta must be positive");
  check(c.k_packets == 0 || (c.k_packets >= 1 && c.k_packets <= 255), "k_packets must be 0 (auto) or 1..255");
  if (c.ipatch) {
    check(c.k_patch >= kMinPatchPeriod && c.k_patch <= kMaxPatchPeriod, "k_patch must be in [6, 20]");
    check(c.patch_width >= kMinPatchSide && c.patch_width <= kMaxPatchSide && c.patch_height >= kMinPatchSide &&
              c.patch_height <= kMaxPatchSide,
          "patch sides must be in [128, 512]");
  }
  for (int l : c.levels) check(l >= 0 && l < static_cast<int>(default_levels().size()), "level id out of range");
  for (double r : c.loss_rates) check(r >= 0.0 && r <= 1.0, "loss rates must be in [0, 1]");
  for (double r : c.test_loss_rates) check(r >= 0.0 && r < 1.0, "test loss rates must be in [0, 1)");
  check(c.rate_table_frames >= 1 && c.profile_table_frames >= 1 && c.profile_table_seeds >= 1,
        "table sizes must be positive");
  check(c.patch >= 2 && c.code_dim >= 1 && c.train_patches >= 1 && c.iterations >= 1 && c.batch_size >= 1,
        "training sizes must be positive");
  check(c.learning_rate > 0.0 && c.alpha >= 0.0 && c.eval_seeds >= 1, "bad training parameters");
  check(c.workers >= 0, "workers must be non-negative");
  check(c.late_threshold_ms >= 0.0, "late threshold must be non-negative");
  for (const auto& d : c.distributions) parse_distribution(d);
}

std::filesystem::path default_output_dir() {
  if (const char* env = std::getenv("DSV_OUTPUT_DIR"); env && *env) return env;
  return ".";
}

netsim::LinkTrace make_trace(const std::string& spec) {
  const auto parts = split(spec, ':');
  const std::string& head = parts.front();
  std::vector<double> args;
  if (is_generator(spec))
    for (std::size_t i = 1; i < parts.size(); ++i) args.push_back(number_arg(parts[i], "trace '" + spec + "'"));
  if (head == "unlimited") return netsim::LinkTrace::unlimited();
  if (head == "step") {
    require(args.empty() || args.size() == 5, ErrorKind::Config, "step trace takes 0 or 5 parameters");
    if (args.empty()) return netsim::step_trace(5.0, 1.0, 1900, 200, 4000);
    return netsim::step_trace(args[0], args[1], static_cast<std::int64_t>(args[2]), static_cast<std::int64_t>(args[3]),
                              static_cast<std::int64_t>(args[4]));
  }
  if (head == "constant") {
    require(args.size() == 1 || args.size() == 2, ErrorKind::Config, "constant trace takes 1 or 2 parameters");
    return netsim::constant_trace(args[0], args.size() == 2 ? static_cast<std::int64_t>(args[1]) : 1000);
  }
  if (head == "cellular") {
    require(args.size() == 1 || args.size() == 4, ErrorKind::Config, "cellular trace takes 1 or 4 parameters");
    if (args.size() == 1) return netsim::cellular_trace(static_cast<std::uint64_t>(args[0]), 30000, 0.8, 8.0);
    return netsim::cellular_trace(static_cast<std::uint64_t>(args[0]), static_cast<std::int64_t>(args[1]), args[2],
                                  args[3]);
  }
  try {
    return netsim::LinkTrace::load(spec);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) fail(ErrorKind::Config, "trace file does not exist: " + spec);
    throw;
  }
}

std::shared_ptr<const SessionAssets> build_assets(const ExperimentConfig& config, const std::string& video) {
  auto a = std::make_shared<SessionAssets>(SessionAssets{VideoSource::open(video), selected_levels(config),
                                                         sender_config(config, 1), nullptr, {}});
  check_geometry(config, a->video);
  a->rate_quality = std::make_unique<netsim::RateQualityTable>(
      netsim::RateQualityTable::measure(a->video, a->levels, config.rate_table_frames, a->sender));
  int max_id = 0;
  for (const auto& l : a->levels) max_id = std::max(max_id, l.level_id);
  a->profile_tables.resize(static_cast<std::size_t>(max_id) + 1);
  for (const auto& l : a->levels)
    a->profile_tables[static_cast<std::size_t>(l.level_id)] =
        offline_profile_table(a->video, l, a->sender, config.profile_table_frames, config.profile_table_seeds);
  // Ids outside the configured set are never selected; give them a valid table.
  const auto& filler = a->profile_tables[static_cast<std::size_t>(a->levels.front().level_id)];
  for (auto& t : a->profile_tables)
    if (t.empty()) t = filler;
  return a;
}

netsim::SessionConfig session_config(const SessionAssets& assets, const ExperimentConfig& config,
                                     const std::string& scheme, const netsim::LinkTrace& trace, double delay_ms,
                                     int queue, std::uint64_t seed) {
  netsim::SessionConfig s;
  s.video = &assets.video;
  s.frames = config.frames;
  s.fps = config.fps;
  s.encode_ms = config.encode_ms;
  s.levels = assets.levels;
  s.sender = assets.sender;
  s.scheme.kind = netsim::parse_scheme(scheme);
  if (!config.cc.empty()) s.scheme.cc = netsim::parse_cc(config.cc);
  s.path.one_way_delay_ms = delay_ms;
  s.path.queue_capacity = queue;
  s.trace = trace;
  s.policy.beta = config.beta;
  s.seed = seed;
  s.rate_quality = assets.rate_quality.get();
  s.profile_tables = &assets.profile_tables;
  return s;
}

Table codec_eval(const ExperimentConfig& config) {
  validate(config);
  set_threads(config.workers);
  Table table = make_table("codec_eval");
  const auto levels = selected_levels(config);
  for (const std::string& spec : config.videos) {
    const VideoSource video = VideoSource::open(spec);
    check_geometry(config, video);
    const int frames = config.eval_frames;
    for (const QualityLevel& level : levels) {
      Sender sender(sender_config(config, 1), video.width(), video.height());
      std::vector<EncodedFrame> encoded;
      double bytes = 0.0;
      for (int f = 0; f < frames; ++f) {
        encoded.push_back(sender.encode_next_at(video.frame(f), level));
        bytes += static_cast<double>(encoded.back().bytes);
      }
      const double bytes_per_frame = bytes / frames;
      const std::size_t k = sender.packet_count();
      const TensorDims dims = tensor_dims_for(video.width(), video.height());

      struct Cell {
        double psnr = 0.0;
        double ssim = 0.0;
      };
      const std::size_t nr = config.loss_rates.size();
      const std::size_t ns = config.seeds.size();
      std::vector<Cell> cells(nr * ns);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t idx = 0; idx < nr * ns; ++idx) {
        const double rate = config.loss_rates[idx / ns];
        const std::uint64_t seed = config.seeds[idx % ns];
        ModelStore models;
        RawFrame reference(video.width(), video.height());
        double sp = 0.0;
        double ss = 0.0;
        for (int f = 0; f < frames; ++f) {
          // One uniform per packet, shared across loss rates, so a higher
          // rate always drops a superset of the packets a lower rate drops.
          Rng rng(mix_seed(seed, static_cast<std::uint64_t>(f)));
          std::vector<bool> drop(k);
          for (std::size_t p = 0; p < k; ++p) drop[p] = rng.uniform() < rate;
          std::vector<WirePacket> kept;
          for (const WirePacket& w : encoded[static_cast<std::size_t>(f)].packets)
            if (!drop[w.header.packet_index]) kept.push_back(w);
          RawFrame out;
          if (kept.empty()) {
            out = reference;
          } else {
            const ReceivedFrame rf = packets_to_tensor(kept, dims, levels, models);
            out = decode(rf.tensor, rf.tensor.kind == FrameKind::I ? nullptr : &reference);
          }
          sp += psnr(video.frame(f), out);
          ss += ssim(video.frame(f), out);
          reference = std::move(out);
        }
        cells[idx] = {sp / frames, ss / frames};
      }
      for (std::size_t idx = 0; idx < nr * ns; ++idx)
        table.rows.push_back({spec, format_number(static_cast<std::int64_t>(level.level_id)),
                              format_number(config.loss_rates[idx / ns]),
                              format_number(static_cast<std::int64_t>(config.seeds[idx % ns])),
                              format_number(cells[idx].psnr), format_number(cells[idx].ssim),
                              format_number(bytes_per_frame)});
    }
  }
  return table;
}

SimulateOutput simulate(const ExperimentConfig& config) {
  validate(config);
  const std::string& scheme = config.schemes.front();
  const auto assets = build_assets(config, config.videos.front());
  const netsim::LinkTrace trace = make_trace(config.traces.front());
  const netsim::SessionConfig s = session_config(*assets, config, scheme, trace, config.delays_ms.front(),
                                                 config.queues.front(), config.seeds.front());
  const netsim::SessionReport r = netsim::simulate(s);
  SimulateOutput out{make_table("frames"), make_table("session")};
  for (const auto& f : r.frames)
    out.frames.rows.push_back({"0", scheme, format_number(static_cast<std::int64_t>(f.frame_index)),
                               format_number(f.encode_start_ms), format_number(f.decode_end_ms),
                               format_number(f.delay_ms), format_number(static_cast<std::int64_t>(f.packets_sent)),
                               format_number(static_cast<std::int64_t>(f.packets_received)),
                               format_number(static_cast<std::int64_t>(f.packets_dropped)),
                               format_number(static_cast<std::int64_t>(f.packets_late)), format_number(f.bytes),
                               format_number(f.target_bytes), format_number(static_cast<std::int64_t>(f.level_id)),
                               format_number(f.psnr), format_number(f.ssim), f.skipped ? "1" : "0"});
  out.summary.rows.push_back(session_row(config.videos.front(), scheme, cc_name(config, scheme),
                                         config.traces.front(), config.delays_ms.front(), config.queues.front(),
                                         config.seeds.front(), r, config.late_threshold_ms));
  return out;
}

Table sweep(const ExperimentConfig& config) {
  validate(config);
  set_threads(config.workers);
  struct Job {
    std::size_t video;
    std::string scheme;
    std::size_t trace;
    double delay;
    int queue;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < config.videos.size(); ++v)
    for (const auto& s : config.schemes)
      for (std::size_t t = 0; t < config.traces.size(); ++t)
        for (double d : config.delays_ms)
          for (int q : config.queues)
            for (std::uint64_t seed : config.seeds) jobs.push_back({v, s, t, d, q, seed});

  std::vector<std::shared_ptr<const SessionAssets>> assets;
  for (const auto& v : config.videos) assets.push_back(build_assets(config, v));
  std::vector<netsim::LinkTrace> traces;
  for (const auto& t : config.traces) traces.push_back(make_trace(t));

  std::vector<std::vector<std::string>> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& j = jobs[i];
    try {
      const auto s = session_config(*assets[j.video], config, j.scheme, traces[j.trace], j.delay, j.queue, j.seed);
      const auto r = netsim::simulate(s);
      rows[i] = session_row(config.videos[j.video], j.scheme, cc_name(config, j.scheme), config.traces[j.trace],
                            j.delay, j.queue, j.seed, r, config.late_threshold_ms);
      rows[i].insert(rows[i].begin(), format_number(static_cast<std::int64_t>(i)));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i)
    require(errors[i].empty(), ErrorKind::State, "sweep session " + std::to_string(i) + " failed: " + errors[i]);
  Table table = make_table("sweep");
  table.rows = std::move(rows);
  return table;
}

losstrain::ErasureDistribution parse_distribution(const std::string& spec) {
  const auto parts = split(spec, ':');
  require(parts.size() == 2, ErrorKind::Config, "distribution must be fixed:<rate> or preset:<1|2|3>");
  const double v = number_arg(parts[1], "distribution '" + spec + "'");
  if (parts[0] == "fixed") {
    require(v >= 0.0 && v < 1.0, ErrorKind::Config, "fixed loss rate must be in [0, 1)");
    return losstrain::ErasureDistribution::fixed(v);
  }
  if (parts[0] == "preset") {
    require(v == 1.0 || v == 2.0 || v == 3.0, ErrorKind::Config, "preset must be 1, 2 or 3");
    return losstrain::ErasureDistribution::preset(static_cast<int>(v));
  }
  fail(ErrorKind::Config, "unknown distribution '" + spec + "'");
}

TrainOutput train_toy(const ExperimentConfig& config) {
  validate(config);
  set_threads(config.workers);
  std::vector<RawFrame> frames;
  for (const auto& spec : config.videos) {
    const VideoSource v = VideoSource::open(spec);
    for (int i = 0; i < std::min(v.frame_count(), 50); ++i) frames.push_back(v.frame(i));
  }
  const std::uint64_t seed = config.seeds.front();
  const auto train_set = losstrain::extract_patches(frames, config.patch, config.train_patches, seed);
  const auto test_set = losstrain::extract_patches(frames, config.patch, config.train_patches, seed + 1);
  TrainOutput out{make_table("train_curve"), make_table("train_eval"), {}};
  const std::size_t nd = config.distributions.size();
  std::vector<losstrain::TrainResult> results(nd);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t d = 0; d < nd; ++d) {
    losstrain::TrainConfig tc;
    tc.alpha = config.alpha;
    tc.learning_rate = config.learning_rate;
    tc.iterations = config.iterations;
    tc.batch_size = config.batch_size;
    tc.seed = seed;
    tc.erasure = parse_distribution(config.distributions[d]);
    tc.record_every = std::max(1, config.iterations / 100);
    results[d] = losstrain::train(train_set, config.code_dim, tc);
  }
  for (std::size_t d = 0; d < nd; ++d) {
    const std::string& name = config.distributions[d];
    for (const auto& p : results[d].curve)
      out.curve.rows.push_back({name, format_number(static_cast<std::int64_t>(p.iteration)), format_number(p.loss),
                                format_number(p.distortion), format_number(p.size_proxy)});
    for (double r : config.test_loss_rates)
      out.eval.rows.push_back({name, format_number(r),
                               format_number(losstrain::mean_distortion(results[d].codec, test_set, r, 8,
                                                                        config.eval_seeds, seed + 2))});
    out.weights.emplace_back(name, results[d].codec);
  }
  return out;
}

Table report(const std::vector<Table>& frame_tables, double late_threshold_ms) {
  struct Acc {
    std::vector<std::string> sessions;
    std::size_t frames = 0;
    std::size_t decoded = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::vector<double> delays;
    std::size_t late = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (std::size_t ti = 0; ti < frame_tables.size(); ++ti) {
    const Table& t = frame_tables[ti];
    require(t.columns == schema_columns("frames"), ErrorKind::Format, "report inputs must use the frames schema");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& scheme = t.at(r, "scheme");
      if (!acc.count(scheme)) order.push_back(scheme);
      Acc& a = acc[scheme];
      const std::string session = std::to_string(ti) + "/" + t.at(r, "session");
      if (std::find(a.sessions.begin(), a.sessions.end(), session) == a.sessions.end()) a.sessions.push_back(session);
      const double delay = parse_number(t.at(r, "delay_ms"));
      ++a.frames;
      a.delays.push_back(delay);
      a.late += delay > late_threshold_ms;
      if (parse_number(t.at(r, "skipped")) == 0.0) {
        ++a.decoded;
        a.psnr += parse_number(t.at(r, "psnr"));
        a.ssim += parse_number(t.at(r, "ssim"));
      }
    }
  }
  Table out = make_table("report");
  for (const auto& scheme : order) {
    const Acc& a = acc[scheme];
    const double dec = static_cast<double>(std::max<std::size_t>(a.decoded, 1));
    out.rows.push_back({scheme, format_number(static_cast<std::int64_t>(a.sessions.size())),
                        format_number(static_cast<std::int64_t>(a.frames)),
                        format_number(static_cast<std::int64_t>(a.decoded)),
                        format_number(a.decoded ? a.psnr / dec : 0.0), format_number(a.decoded ? a.ssim / dec : 0.0),
                        format_number(netsim::percentile_nearest_rank(a.delays, 95.0)),
                        format_number(100.0 * static_cast<double>(a.late) / static_cast<double>(a.frames))});
  }
  return out;
}

netsim::LinkTrace generate_trace(const ExperimentConfig& config) {
  const auto& p = config.trace_params;
  const std::string& kind = config.trace_kind;
  if (kind == "step") {
    require(p.empty() || p.size() == 5, ErrorKind::Config, "step takes 0 or 5 parameters");
    if (p.empty()) return netsim::step_trace(5.0, 1.0, 1900, 200, 4000);
    return netsim::step_trace(p[0], p[1], static_cast<std::int64_t>(p[2]), static_cast<std::int64_t>(p[3]),
                              static_cast<std::int64_t>(p[4]));
  }
  if (kind == "constant") {
    require(p.size() == 1, ErrorKind::Config, "constant takes 1 parameter (Mbps)");
    return netsim::constant_trace(p[0], config.trace_duration_ms);
  }
  if (kind == "cellular") {
    require(p.size() == 1 || p.size() == 3, ErrorKind::Config, "cellular takes seed [min_mbps max_mbps]");
    return netsim::cellular_trace(static_cast<std::uint64_t>(p[0]), config.trace_duration_ms,
                                  p.size() == 3 ? p[1] : 0.8, p.size() == 3 ? p[2] : 8.0);
  }
  if (kind == "schedule") {
    require(!p.empty() && p.size() % 2 == 0, ErrorKind::Config, "schedule takes (duration_ms, mbps) pairs");
    std::vector<netsim::RateSegment> segs;
    for (std::size_t i = 0; i < p.size(); i += 2) segs.push_back({static_cast<std::int64_t>(p[i]), p[i + 1]});
    return netsim::trace_from_schedule(segs);
  }
  fail(ErrorKind::Config, "unknown trace kind '" + kind + "'");
}

}  // namespace dsv::harness
