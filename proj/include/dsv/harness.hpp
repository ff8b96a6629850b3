#pragma once

// Experiment orchestration behind the command-line tool: configuration,
// versioned CSV tables and one entry point per subcommand. Every output is a
// pure function of the configuration.

#include "dsv/losstrain.hpp"
#include "dsv/netsim.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dsv::harness {

inline constexpr int kSchemaVersion = 1;

struct Table {
  std::string schema;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
  const std::string& at(std::size_t row, std::string_view name) const;
};

std::vector<std::string> schema_names();
const std::vector<std::string>& schema_columns(const std::string& schema);
Table make_table(const std::string& schema);

// Shortest text that parses back to the same double.
std::string format_number(double value);
std::string format_number(std::int64_t value);
double parse_number(std::string_view text);

std::string write_csv(const Table& table);
// Header must match the schema's columns exactly.
Table read_csv(const std::string& text, const std::string& schema);
void save_csv(const std::filesystem::path& path, const Table& table);
Table load_csv(const std::filesystem::path& path, const std::string& schema);

struct ExperimentConfig {
  // Inputs.
  std::vector<std::string> videos{"synth:conference:320x176:100:3"};
  std::vector<std::string> schemes{"data-scalable"};
  std::string cc;  // empty: each scheme's default
  std::vector<std::string> traces{"step"};
  std::vector<double> delays_ms{100.0};
  std::vector<int> queues{25};
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> inputs;  // report

  // Session.
  int frames = 250;
  double fps = 25.0;
  double encode_ms = 5.0;
  double beta = 0.02;
  int k_packets = 0;  // 0: by frame size
  int k_patch = 6;
  int patch_width = 128;
  int patch_height = 128;
  bool ipatch = true;
  std::vector<int> levels;  // empty: all nine
  int rate_table_frames = 6;
  int profile_table_frames = 3;
  int profile_table_seeds = 2;

  // Codec evaluation.
  std::vector<double> loss_rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  int eval_frames = 20;

  // Toy training.
  std::vector<std::string> distributions{"fixed:0", "preset:2"};
  std::vector<double> test_loss_rates{0.0, 0.3};
  int patch = 8;
  int code_dim = 8;
  int train_patches = 2000;
  int iterations = 15000;
  int batch_size = 16;
  double learning_rate = 0.015;
  double alpha = 0.0;
  int eval_seeds = 20;

  // Trace generation.
  std::string trace_kind = "step";  // step | constant | cellular | schedule
  std::vector<double> trace_params;
  std::int64_t trace_duration_ms = 30000;

  // Output.
  std::string output_dir;
  std::string output_file;
  int workers = 0;  // 0: OpenMP default
  double late_threshold_ms = 200.0;
};

// Unknown keys and ill-typed values are configuration errors.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);

// DSV_OUTPUT_DIR if set, else the working directory.
std::filesystem::path default_output_dir();

// "step[:base:dip:start_ms:dip_ms:period_ms]", "constant:mbps",
// "cellular:seed[:duration_ms:min_mbps:max_mbps]", "unlimited", or a path to
// a Mahimahi trace file.
netsim::LinkTrace make_trace(const std::string& spec);

// Everything a session needs that depends only on the video and the sender.
struct SessionAssets {
  VideoSource video;
  std::vector<QualityLevel> levels;
  SenderConfig sender;
  std::unique_ptr<netsim::RateQualityTable> rate_quality;
  std::vector<std::vector<double>> profile_tables;
};

std::shared_ptr<const SessionAssets> build_assets(const ExperimentConfig& config, const std::string& video);

netsim::SessionConfig session_config(const SessionAssets& assets, const ExperimentConfig& config,
                                     const std::string& scheme, const netsim::LinkTrace& trace, double delay_ms,
                                     int queue, std::uint64_t seed);

Table codec_eval(const ExperimentConfig& config);

struct SimulateOutput {
  Table frames;
  Table summary;
};
SimulateOutput simulate(const ExperimentConfig& config);

// Cross product videos x schemes x traces x delays x queues x seeds, rows in
// that order regardless of which worker finished first.
Table sweep(const ExperimentConfig& config);

struct TrainOutput {
  Table curve;
  Table eval;
  std::vector<std::pair<std::string, losstrain::LinearCodec>> weights;
};
TrainOutput train_toy(const ExperimentConfig& config);
losstrain::ErasureDistribution parse_distribution(const std::string& spec);

// Per scheme over every frame row of every input: mean PSNR/SSIM over decoded
// frames, nearest-rank P95 delay, and the share of frames later than the
// threshold.
Table report(const std::vector<Table>& frame_tables, double late_threshold_ms);

netsim::LinkTrace generate_trace(const ExperimentConfig& config);

}  // namespace dsv::harness
