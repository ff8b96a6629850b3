// dsv: command-line front end. Exit codes: 0 success, 1 configuration error,
// 2 runtime error.

#include "dsv/error.hpp"
#include "dsv/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsv;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// Flag name, config key, whether the key holds a list.
struct Override {
  const char* flag;
  const char* key;
  bool list;
  const char* help;
};

const std::vector<Override> kOverrides{
    {"--video", "videos", true, "video specs or paths (comma separated)"},
    {"--scheme", "schemes", true, "delivery schemes"},
    {"--cc", "cc", false, "congestion control for every scheme: gcc | salsify"},
    {"--trace", "traces", true, "trace specs or Mahimahi files"},
    {"--delay", "delays_ms", true, "one-way delays (ms)"},
    {"--queue", "queues", true, "queue capacities (packets)"},
    {"--seed", "seeds", true, "seeds"},
    {"--frames", "frames", false, "frames per session"},
    {"--fps", "fps", false, "frame rate"},
    {"--beta", "beta", false, "decode policy beta (dB/ms)"},
    {"--k-packets", "k_packets", false, "packets per frame (0: by frame size)"},
    {"--k-patch", "k_patch", false, "I-patch period"},
    {"--patch-width", "patch_width", false, "I-patch width"},
    {"--patch-height", "patch_height", false, "I-patch height"},
    {"--ipatch", "ipatch", false, "use the rolling I-patch (true/false)"},
    {"--levels", "levels", true, "quality level ids"},
    {"--loss-rates", "loss_rates", true, "loss rates for codec-eval"},
    {"--eval-frames", "eval_frames", false, "frames per codec-eval run"},
    {"--distributions", "distributions", true, "training erasure distributions"},
    {"--test-loss-rates", "test_loss_rates", true, "test erasure rates"},
    {"--iterations", "iterations", false, "training iterations"},
    {"--learning-rate", "learning_rate", false, "training learning rate"},
    {"--alpha", "alpha", false, "size penalty weight"},
    {"--code-dim", "code_dim", false, "code length"},
    {"--patch", "patch", false, "training patch side"},
    {"--kind", "trace_kind", false, "gen-trace kind: step | constant | cellular | schedule"},
    {"--params", "trace_params", true, "gen-trace parameters"},
    {"--duration", "trace_duration_ms", false, "gen-trace duration (ms)"},
    {"--output-file", "output_file", false, "output file name"},
    {"--workers", "workers", false, "parallel workers (0: default)"},
    {"--late-threshold", "late_threshold_ms", false, "lateness threshold for report (ms)"},
};

json scalar_value(const std::string& text) {
  try {
    json v = json::parse(text);
    if (!v.is_object() && !v.is_array()) return v;
  } catch (const json::exception&) {
  }
  return text;
}

json flag_value(const std::string& text, bool list) {
  if (!list) return scalar_value(text);
  json arr = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) arr.push_back(scalar_value(item));
  return arr;
}

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::string output_dir;
  std::vector<std::string> inputs;
  std::vector<std::string> values = std::vector<std::string>(kOverrides.size());
};

harness::ExperimentConfig resolve(const Command& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    require(static_cast<bool>(in), ErrorKind::Config, "cannot read config " + c.config_path);
    try {
      in >> j;
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  }
  for (std::size_t i = 0; i < kOverrides.size(); ++i)
    if (c.app->count(kOverrides[i].flag) > 0) j[kOverrides[i].key] = flag_value(c.values[i], kOverrides[i].list);
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  if (!c.inputs.empty()) j["inputs"] = c.inputs;
  return harness::parse_config(j.dump());
}

fs::path out_dir(const harness::ExperimentConfig& cfg) {
  return cfg.output_dir.empty() ? harness::default_output_dir() : fs::path(cfg.output_dir);
}

fs::path out_file(const harness::ExperimentConfig& cfg, const std::string& fallback) {
  return out_dir(cfg) / (cfg.output_file.empty() ? fallback : cfg.output_file);
}

void emit(const fs::path& path, const harness::Table& table) {
  harness::save_csv(path, table);
  std::cout << path.string() << "\n";
}

std::string file_safe(std::string name) {
  for (char& ch : name)
    if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
  return name;
}

int run(const std::string& name, const Command& c) {
  const harness::ExperimentConfig cfg = resolve(c);
  if (name == "codec-eval") {
    emit(out_file(cfg, "codec_eval.csv"), harness::codec_eval(cfg));
  } else if (name == "simulate") {
    const auto r = harness::simulate(cfg);
    emit(out_file(cfg, "frames.csv"), r.frames);
    emit(out_dir(cfg) / "session.csv", r.summary);
  } else if (name == "sweep") {
    emit(out_file(cfg, "sweep.csv"), harness::sweep(cfg));
  } else if (name == "train-toy") {
    const auto r = harness::train_toy(cfg);
    emit(out_file(cfg, "train_curve.csv"), r.curve);
    emit(out_dir(cfg) / "train_eval.csv", r.eval);
    for (const auto& [dist, codec] : r.weights) {
      const fs::path p = out_dir(cfg) / ("weights_" + file_safe(dist) + ".lcw");
      losstrain::save_weights(p, codec);
      std::cout << p.string() << "\n";
    }
  } else if (name == "report") {
    std::vector<harness::Table> tables;
    for (const auto& in : cfg.inputs) {
      require(fs::exists(in), ErrorKind::Config, "input does not exist: " + in);
      tables.push_back(harness::load_csv(in, "frames"));
    }
    const auto t = harness::report(tables, cfg.late_threshold_ms);
    emit(out_file(cfg, "report.csv"), t);
    std::cout << harness::write_csv(t);
  } else if (name == "gen-trace") {
    const fs::path p = out_file(cfg, "trace.txt");
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    harness::generate_trace(cfg).save(p);
    std::cout << p.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-scalable video delivery simulator and toy codec"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> names{
      {"codec-eval", "quality vs loss rate per level"},
      {"simulate", "one end-to-end session"},
      {"sweep", "cross product of sessions"},
      {"train-toy", "train the linear codec under erasures"},
      {"report", "per-scheme summary of frame CSVs"},
      {"gen-trace", "write a Mahimahi trace"},
  };
  std::vector<Command> commands(names.size());
  for (std::size_t n = 0; n < names.size(); ++n) {
    Command& c = commands[n];
    c.app = app.add_subcommand(names[n].first, names[n].second);
    c.app->add_option("-c,--config", c.config_path, "JSON config file");
    c.app->add_option("-o,--output-dir", c.output_dir, "output directory (default $DSV_OUTPUT_DIR or .)");
    for (std::size_t i = 0; i < kOverrides.size(); ++i)
      c.app->add_option(kOverrides[i].flag, c.values[i], kOverrides[i].help);
    if (names[n].first == "report") c.app->add_option("inputs", c.inputs, "frame CSVs");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  for (std::size_t n = 0; n < names.size(); ++n) {
    if (!commands[n].app->parsed()) continue;
    try {
      return run(names[n].first, commands[n]);
    } catch (const Error& e) {
      std::cerr << "dsv " << names[n].first << ": " << e.what() << "\n";
      return e.kind() == ErrorKind::Config ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
      std::cerr << "dsv " << names[n].first << ": " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitConfig;
}
