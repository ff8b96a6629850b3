#include "doctest.h"

#include "dsv/error.hpp"
#include "dsv/losstrain.hpp"
#include "support.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace dsv;
using namespace dsv::losstrain;

namespace {

Vector random_vector(int n, Rng& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Vector random_mask(int m, Rng& rng) {
  Vector v(m);
  for (int i = 0; i < m; ++i) v[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  return v;
}

// Loss computed element by element, no matrix library.
double oracle_loss(const LinearCodec& c, const Vector& x, const Vector& mask, double alpha) {
  const int m = c.code_dim();
  const int d = c.patch_dim();
  std::vector<double> z(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) z[static_cast<std::size_t>(i)] += c.encoder(i, j) * x[j];
  double dist = 0.0;
  for (int r = 0; r < d; ++r) {
    double xh = 0.0;
    for (int i = 0; i < m; ++i) xh += c.decoder(r, i) * mask[i] * z[static_cast<std::size_t>(i)];
    dist += (xh - x[r]) * (xh - x[r]);
  }
  double size = 0.0;
  for (double v : z) size += std::fabs(v);
  return dist + alpha * size;
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)}); }

// Patches from smooth synthetic frames: correlated pixels, like natural images.
std::vector<Vector> patch_set(int patch, int count, std::uint64_t seed) {
  std::vector<RawFrame> frames;
  for (std::uint64_t s = 0; s < 4; ++s) frames.push_back(test::smooth_frame(96, 64, seed * 10 + s));
  return extract_patches(frames, patch, count, seed);
}

}  // namespace

TEST_CASE("forward: trivial reconstructions") {
  Rng rng(1);
  const int d = 16;
  const int m = 24;
  LinearCodec c = LinearCodec::random(d, m, 3, 1.0);
  c.decoder = c.encoder.completeOrthogonalDecomposition().pseudoInverse();
  const Vector x = random_vector(d, rng);
  const ForwardResult full = forward(c, x, Vector::Ones(m), 0.0);
  CHECK((full.x_hat - x).norm() < 1e-9);
  CHECK(full.distortion < 1e-18);
  const ForwardResult none = forward(c, x, Vector::Zero(m), 0.0);
  CHECK(none.x_hat.norm() == 0.0);
  CHECK(none.distortion == doctest::Approx(x.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("forward: matches an element-wise oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(30));
    const int m = 1 + static_cast<int>(rng.below(30));
    const LinearCodec c = LinearCodec::random(d, m, rng.next(), 0.5);
    const Vector x = random_vector(d, rng);
    const Vector mask = random_mask(m, rng);
    const double alpha = rng.uniform(0.0, 0.5);
    const ForwardResult f = forward(c, x, mask, alpha);
    CHECK(rel_err(f.loss, oracle_loss(c, x, mask, alpha)) < 1e-10);
    CHECK(f.z.isApprox(c.encoder * x));
  }
}

TEST_CASE("forward: errors") {
  const LinearCodec c = LinearCodec::random(4, 3, 1);
  Vector x = Vector::Ones(4);
  CHECK_THROWS_AS(forward(c, Vector::Ones(5), Vector::Ones(3), 0.0), Error);
  CHECK_THROWS_AS(forward(c, x, Vector::Ones(2), 0.0), Error);
  x[1] = std::nan("");
  try {
    forward(c, x, Vector::Ones(3), 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("backward: central finite differences on 100 random triples") {
  Rng rng(4);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(8));
    const int m = 2 + static_cast<int>(rng.below(8));
    const LinearCodec c = LinearCodec::random(d, m, rng.next(), 0.7);
    const Vector x = random_vector(d, rng);
    const Vector mask = random_mask(m, rng);
    const double alpha = trial % 2 == 0 ? 0.0 : 0.1;
    const Gradients g = backward(c, x, mask, alpha);
    for (Matrix LinearCodec::*which : {&LinearCodec::encoder, &LinearCodec::decoder}) {
      const Matrix& analytic = which == &LinearCodec::encoder ? g.encoder : g.decoder;
      for (long r = 0; r < (c.*which).rows(); ++r)
        for (long col = 0; col < (c.*which).cols(); ++col) {
          LinearCodec plus = c;
          LinearCodec minus = c;
          (plus.*which)(r, col) += h;
          (minus.*which)(r, col) -= h;
          const double fd = (forward(plus, x, mask, alpha).loss - forward(minus, x, mask, alpha).loss) / (2 * h);
          // Absolute floor for entries that are zero analytically.
          const double err = std::fabs(fd - analytic(r, col)) / std::max(1e-3, std::fabs(fd));
          worst = std::max(worst, err);
        }
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("backward: mask contracts") {
  Rng rng(5);
  const LinearCodec c = LinearCodec::random(6, 5, 9, 0.5);
  const Vector x = random_vector(6, rng);
  SUBCASE("masked element with alpha 0 has a zero encoder row") {
    Vector mask = Vector::Ones(5);
    mask[2] = 0.0;
    const Gradients g = backward(c, x, mask, 0.0);
    CHECK(g.encoder.row(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.encoder.row(1).cwiseAbs().maxCoeff() > 0.0);
    CHECK(g.decoder.col(2).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("all-ones mask gives the lossless gradients") {
    const Vector z = c.encoder * x;
    const Vector r = 2.0 * (c.decoder * z - x);
    const Matrix g_dec = r * z.transpose();
    const Matrix g_enc = (c.decoder.transpose() * r) * x.transpose();
    const Gradients g = backward(c, x, Vector::Ones(5), 0.0);
    CHECK(g.encoder.isApprox(g_enc, 1e-12));
    CHECK(g.decoder.isApprox(g_dec, 1e-12));
  }
}

TEST_CASE("saliency: finite differences and dead units") {
  Rng rng(6);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 3 + static_cast<int>(rng.below(10));
    const int m = 3 + static_cast<int>(rng.below(10));
    const LinearCodec c = LinearCodec::random(d, m, rng.next(), 0.6);
    const Vector x = random_vector(d, rng);
    const Vector s = saliency(c, x, 0.0);
    const Vector z = c.encoder * x;
    for (int i = 0; i < m; ++i) {
      // Perturb z_i directly through the decoder.
      Vector zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd = ((c.decoder * zp - x).squaredNorm() - (c.decoder * zm - x).squaredNorm()) / (2 * h);
      CHECK(std::fabs(std::fabs(fd) - s[i]) <= 1e-3 * std::max(1e-3, std::fabs(fd)));
    }
  }
  LinearCodec c = LinearCodec::random(8, 6, 2, 0.5);
  c.decoder.col(4).setZero();
  const Vector x = random_vector(8, rng);
  CHECK(saliency(c, x, 0.0)[4] == 0.0);
  const double a = 0.25;
  CHECK(saliency(c, x, a)[4] == doctest::Approx(a));
}

TEST_CASE("erasure distributions and masks") {
  CHECK(ErasureDistribution::preset(1).mean_rate() == doctest::Approx(0.3));
  CHECK(ErasureDistribution::preset(2).mean_rate() == doctest::Approx(0.15));
  CHECK(ErasureDistribution::preset(3).mean_rate() == doctest::Approx(0.3));
  CHECK_THROWS_AS(ErasureDistribution::preset(4), Error);
  CHECK_THROWS_AS((ErasureDistribution{{{0.2, 0.5}}, 8}.validate()), Error);
  CHECK_THROWS_AS((ErasureDistribution{{{1.5, 1.0}}, 8}.validate()), Error);

  SUBCASE("exact erased count") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
      const int m = 1 + static_cast<int>(rng.below(100));
      const double rate = rng.uniform();
      const int k = 1 + static_cast<int>(rng.below(16));
      const Vector mask = sample_mask(m, rate, k, rng);
      CHECK(m - mask.sum() == std::lround(rate * m));
      CHECK((mask.array() * (1.0 - mask.array())).abs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("whole packets go first") {
    // m = 16, k = 8: each packet holds two positions, 25% is exactly two packets.
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      const std::uint64_t state = rng.next();
      Rng a(state);
      const Vector mask = sample_mask(16, 0.25, 8, a);
      CHECK(mask.sum() == 12.0);
    }
  }
  SUBCASE("empirical rate over 10^4 draws") {
    for (int which : {1, 2, 3}) {
      const ErasureDistribution dist = ErasureDistribution::preset(which);
      Rng rng(static_cast<std::uint64_t>(which));
      const int m = 40;
      double erased = 0.0;
      for (int i = 0; i < 10000; ++i) erased += m - sample_mask(m, dist.sample(rng), dist.packet_count, rng).sum();
      CHECK(std::fabs(erased / (10000.0 * m) - dist.mean_rate()) <= 0.005);
    }
  }
}

TEST_CASE("train: deterministic, and loss-free autoencoding converges") {
  const auto data = patch_set(4, 100, 11);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.iterations = 6000;
  cfg.seed = 3;
  const LinearCodec init = LinearCodec::random(16, 20, 5, 0.1);
  const double initial = mean_distortion(init, data, 0.0, 8, 1, 1);
  const TrainResult a = train(data, init, cfg);
  const TrainResult b = train(data, init, cfg);
  CHECK(a.codec.encoder == b.codec.encoder);
  CHECK(a.codec.decoder == b.codec.decoder);
  const double final_d = mean_distortion(a.codec, data, 0.0, 8, 1, 1);
  CHECK(final_d <= 1e-4 * initial);
  // Smoothed loss: final no higher than at iteration 100.
  REQUIRE(a.curve.size() > 10);
  CHECK(a.curve.back().loss <= a.curve[9].loss);
}

TEST_CASE("train: smoothed loss is non-increasing over 500-iteration spans for the default config") {
  const auto data = patch_set(4, 100, 12);
  TrainConfig cfg;
  cfg.record_every = 50;
  const TrainResult r = train(data, 16, cfg);
  const std::size_t span = 500 / 50;
  const std::size_t warmup = 200 / 50;
  for (std::size_t i = warmup; i + span < r.curve.size(); ++i) CHECK(r.curve[i + span].loss <= r.curve[i].loss);
}

TEST_CASE("train: a distribution that includes losses beats loss-free training under 30% erasure") {
  const auto data = patch_set(4, 200, 13);
  const auto test_set = patch_set(4, 200, 14);
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.iterations = 4000;
  cfg.seed = 4;
  const LinearCodec init = LinearCodec::random(16, 32, 8, 0.1);
  cfg.erasure = ErasureDistribution::fixed(0.0);
  const LinearCodec clean = train(data, init, cfg).codec;
  cfg.erasure = ErasureDistribution::preset(2);
  const LinearCodec lossy = train(data, init, cfg).codec;
  const double d_clean = mean_distortion(clean, test_set, 0.3, 8, 10, 99);
  const double d_lossy = mean_distortion(lossy, test_set, 0.3, 8, 10, 99);
  CAPTURE(d_clean);
  CAPTURE(d_lossy);
  CHECK(d_lossy < d_clean);

  // Zeroing the most salient 10% hurts the loss-trained codec less.
  CHECK(distortion_after_top_zeroing(lossy, test_set, 0.1, 0.0) <
        distortion_after_top_zeroing(clean, test_set, 0.1, 0.0));
}

TEST_CASE("train: errors") {
  TrainConfig cfg;
  CHECK_THROWS_AS(train(std::vector<Vector>{}, 4, cfg), Error);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train(patch_set(2, 4, 1), 4, cfg), Error);
  cfg.learning_rate = 50.0;
  cfg.iterations = 500;
  std::vector<Vector> big(10, Vector::Constant(16, 100.0));
  try {
    train(big, 16, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TrainingDiverged);
  }
}

TEST_CASE("weights round trip") {
  const LinearCodec c = LinearCodec::random(9, 5, 42, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "dsv_test_weights.lcw";
  save_weights(path, c);
  CHECK(std::filesystem::file_size(path) == 4 + 8 + 2 * 9 * 5 * 8);
  const LinearCodec back = load_weights(path);
  CHECK(back.encoder == c.encoder);
  CHECK(back.decoder == c.decoder);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(load_weights(path), Error);
  std::filesystem::remove(path);
}
