#pragma once

// Linear autoencoder trained under simulated packet erasures. The decoder
// sees mask ⊙ z; encoder gradients flow only through surviving code
// elements. Loss = ||x_hat - x||^2 + alpha * sum|z_i| with z taken before
// the mask (the sender pays for every coded element).

#include "dsv/frame.hpp"
#include "dsv/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dsv::losstrain {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct LinearCodec {
  Matrix encoder;  // m x d
  Matrix decoder;  // d x m

  int patch_dim() const { return static_cast<int>(encoder.cols()); }
  int code_dim() const { return static_cast<int>(encoder.rows()); }

  static LinearCodec random(int patch_dim, int code_dim, std::uint64_t seed, double scale = 0.1);
};

struct ForwardResult {
  Vector z;
  Vector x_hat;
  double distortion = 0.0;
  double size_proxy = 0.0;
  double loss = 0.0;
};

ForwardResult forward(const LinearCodec& codec, const Vector& x, const Vector& mask, double alpha);

struct Gradients {
  Matrix encoder;
  Matrix decoder;
};

Gradients backward(const LinearCodec& codec, const Vector& x, const Vector& mask, double alpha);

// |dF/dz_i| at the unmasked operating point.
Vector saliency(const LinearCodec& codec, const Vector& x, double alpha);

struct ErasureDistribution {
  std::vector<std::pair<double, double>> support;  // (loss rate, probability)
  int packet_count = 8;

  static ErasureDistribution fixed(double rate, int packet_count = 8);
  // 1: always 30%; 2: {0%, 30%} equally; 3: uniform over {0, 20, 40, 60}%.
  static ErasureDistribution preset(int which, int packet_count = 8);

  double mean_rate() const;
  double sample(Rng& rng) const;
  void validate() const;
};

// Erases exactly round(rate * m) code positions, taken whole packets first
// in a random packet order, where positions are grouped into packets by a
// seeded packetization map.
Vector sample_mask(int code_dim, double rate, int packet_count, Rng& rng);

struct TrainConfig {
  double alpha = 0.0;
  double learning_rate = 1e-2;
  int iterations = 2000;
  int batch_size = 16;
  std::uint64_t seed = 1;
  ErasureDistribution erasure = ErasureDistribution::fixed(0.0);
  int record_every = 10;
};

struct TrainPoint {
  int iteration = 0;
  double loss = 0.0;        // EWMA over ~100 iterations
  double distortion = 0.0;  // batch mean
  double size_proxy = 0.0;  // batch mean
};

struct TrainResult {
  LinearCodec codec;
  std::vector<TrainPoint> curve;
};

// One mask per example per step. Throws TrainingDiverged on non-finite loss.
TrainResult train(const std::vector<Vector>& dataset, const LinearCodec& init, const TrainConfig& config);
TrainResult train(const std::vector<Vector>& dataset, int code_dim, const TrainConfig& config);

// Mean distortion over the dataset with `seeds` random masks per patch.
double mean_distortion(const LinearCodec& codec, const std::vector<Vector>& dataset, double rate,
                       int packet_count, int seeds, std::uint64_t seed);

// Mean distortion after zeroing, per patch, the top `fraction` of code
// elements ranked by descending saliency.
double distortion_after_top_zeroing(const LinearCodec& codec, const std::vector<Vector>& dataset,
                                    double fraction, double alpha);

// Square luma patches, mean-removed and scaled by 1/64.
std::vector<Vector> extract_patches(const std::vector<RawFrame>& frames, int patch, int count, std::uint64_t seed);

// "LCW1", u32 patch_dim, u32 code_dim, then encoder and decoder as row-major
// little-endian doubles.
void save_weights(const std::filesystem::path& path, const LinearCodec& codec);
LinearCodec load_weights(const std::filesystem::path& path);

}  // namespace dsv::losstrain
