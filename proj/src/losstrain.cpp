#include "dsv/losstrain.hpp"

#include "dsv/error.hpp"
#include "dsv/packetize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstring>
#include <numeric>

namespace dsv::losstrain {
namespace {

void require_finite(const Vector& v, const char* what) {
  require(v.allFinite(), ErrorKind::InvalidInput, std::string(what) + " contains non-finite values");
}

void check_shapes(const LinearCodec& codec, const Vector& x, const Vector& mask) {
  require(codec.decoder.rows() == codec.encoder.cols() && codec.decoder.cols() == codec.encoder.rows(),
          ErrorKind::InvalidInput, "encoder/decoder shapes are inconsistent");
  require(x.size() == codec.encoder.cols(), ErrorKind::InvalidInput, "input length differs from patch_dim");
  require(mask.size() == codec.encoder.rows(), ErrorKind::InvalidInput, "mask length differs from code_dim");
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

template <typename T>
void write_le(std::ofstream& out, T v) {
  unsigned char b[sizeof(T)];
  std::uint64_t bits = 0;
  static_assert(sizeof(T) <= 8);
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  require(static_cast<bool>(in), ErrorKind::Format, "truncated weights file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace

LinearCodec LinearCodec::random(int patch_dim, int code_dim, std::uint64_t seed, double scale) {
  require(patch_dim > 0 && code_dim > 0, ErrorKind::InvalidInput, "codec dims must be positive");
  Rng rng(seed);
  LinearCodec c{Matrix(code_dim, patch_dim), Matrix(patch_dim, code_dim)};
  for (int i = 0; i < c.encoder.size(); ++i) c.encoder.data()[i] = scale * rng.normal();
  for (int i = 0; i < c.decoder.size(); ++i) c.decoder.data()[i] = scale * rng.normal();
  return c;
}

ForwardResult forward(const LinearCodec& codec, const Vector& x, const Vector& mask, double alpha) {
  check_shapes(codec, x, mask);
  require_finite(x, "input");
  require_finite(mask, "mask");
  ForwardResult r;
  r.z = codec.encoder * x;
  r.x_hat = codec.decoder * mask.cwiseProduct(r.z);
  r.distortion = (r.x_hat - x).squaredNorm();
  r.size_proxy = r.z.cwiseAbs().sum();
  r.loss = r.distortion + alpha * r.size_proxy;
  return r;
}

Gradients backward(const LinearCodec& codec, const Vector& x, const Vector& mask, double alpha) {
  const ForwardResult f = forward(codec, x, mask, alpha);
  const Vector d_xhat = 2.0 * (f.x_hat - x);
  const Vector masked_z = mask.cwiseProduct(f.z);
  Gradients g;
  g.decoder = d_xhat * masked_z.transpose();
  Vector d_z = mask.cwiseProduct(codec.decoder.transpose() * d_xhat);
  if (alpha != 0.0) d_z += alpha * f.z.unaryExpr(&sign);
  g.encoder = d_z * x.transpose();
  return g;
}

Vector saliency(const LinearCodec& codec, const Vector& x, double alpha) {
  const Vector ones = Vector::Ones(codec.code_dim());
  const ForwardResult f = forward(codec, x, ones, alpha);
  Vector d_z = codec.decoder.transpose() * (2.0 * (f.x_hat - x));
  if (alpha != 0.0) d_z += alpha * f.z.unaryExpr(&sign);
  return d_z.cwiseAbs();
}

ErasureDistribution ErasureDistribution::fixed(double rate, int packet_count) {
  return {{{rate, 1.0}}, packet_count};
}

ErasureDistribution ErasureDistribution::preset(int which, int packet_count) {
  switch (which) {
    case 1: return {{{0.3, 1.0}}, packet_count};
    case 2: return {{{0.0, 0.5}, {0.3, 0.5}}, packet_count};
    case 3: return {{{0.0, 0.25}, {0.2, 0.25}, {0.4, 0.25}, {0.6, 0.25}}, packet_count};
    default: fail(ErrorKind::InvalidInput, "erasure presets are 1, 2 and 3");
  }
}

void ErasureDistribution::validate() const {
  require(!support.empty() && packet_count >= 1, ErrorKind::InvalidInput, "empty erasure distribution");
  double total = 0.0;
  for (const auto& [rate, prob] : support) {
    require(rate >= 0.0 && rate <= 1.0 && prob >= 0.0, ErrorKind::InvalidInput, "erasure rate/probability range");
    total += prob;
  }
  require(std::fabs(total - 1.0) < 1e-9, ErrorKind::InvalidInput, "erasure probabilities must sum to 1");
}

double ErasureDistribution::mean_rate() const {
  double m = 0.0;
  for (const auto& [rate, prob] : support) m += rate * prob;
  return m;
}

double ErasureDistribution::sample(Rng& rng) const {
  double u = rng.uniform();
  for (const auto& [rate, prob] : support) {
    if (u < prob) return rate;
    u -= prob;
  }
  return support.back().first;
}

Vector sample_mask(int code_dim, double rate, int packet_count, Rng& rng) {
  Vector mask = Vector::Ones(code_dim);
  const auto erase = static_cast<long>(std::lround(rate * code_dim));
  if (erase <= 0) return mask;
  const auto k = static_cast<std::size_t>(std::min(packet_count, code_dim));
  const auto map = PacketizationMap::make(static_cast<std::size_t>(code_dim), k, rng.next());
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  long erased = 0;
  for (std::size_t packet : order)
    for (std::size_t s = 0; s < map.packet_size(packet) && erased < erase; ++s, ++erased)
      mask[static_cast<long>(map.element_at(packet, s))] = 0.0;
  return mask;
}

TrainResult train(const std::vector<Vector>& dataset, const LinearCodec& init, const TrainConfig& config) {
  require(!dataset.empty(), ErrorKind::InvalidInput, "training dataset is empty");
  require(config.alpha >= 0.0 && config.learning_rate > 0.0 && config.batch_size > 0 && config.iterations >= 0,
          ErrorKind::InvalidInput, "invalid training config");
  config.erasure.validate();
  Rng rng(config.seed);
  TrainResult result{init, {}};
  LinearCodec& codec = result.codec;
  const int m = codec.code_dim();
  constexpr double kEwma = 2.0 / (100.0 + 1.0);
  double ewma = 0.0;
  for (int it = 1; it <= config.iterations; ++it) {
    Matrix g_enc = Matrix::Zero(codec.encoder.rows(), codec.encoder.cols());
    Matrix g_dec = Matrix::Zero(codec.decoder.rows(), codec.decoder.cols());
    double loss = 0.0, distortion = 0.0, size = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const Vector& x = dataset[rng.below(dataset.size())];
      const double rate = config.erasure.sample(rng);
      const Vector mask = sample_mask(m, rate, config.erasure.packet_count, rng);
      const ForwardResult f = forward(codec, x, mask, config.alpha);
      const Gradients g = backward(codec, x, mask, config.alpha);
      g_enc += g.encoder;
      g_dec += g.decoder;
      loss += f.loss;
      distortion += f.distortion;
      size += f.size_proxy;
    }
    const double inv = 1.0 / config.batch_size;
    loss *= inv;
    if (!std::isfinite(loss) || !g_enc.allFinite() || !g_dec.allFinite())
      fail(ErrorKind::TrainingDiverged, "loss became non-finite at iteration " + std::to_string(it));
    codec.encoder -= config.learning_rate * inv * g_enc;
    codec.decoder -= config.learning_rate * inv * g_dec;
    ewma = it == 1 ? loss : ewma + kEwma * (loss - ewma);
    if (it % config.record_every == 0 || it == config.iterations)
      result.curve.push_back({it, ewma, distortion * inv, size * inv});
  }
  return result;
}

TrainResult train(const std::vector<Vector>& dataset, int code_dim, const TrainConfig& config) {
  require(!dataset.empty(), ErrorKind::InvalidInput, "training dataset is empty");
  return train(dataset, LinearCodec::random(static_cast<int>(dataset.front().size()), code_dim, config.seed ^ 0xC0DEC), config);
}

double mean_distortion(const LinearCodec& codec, const std::vector<Vector>& dataset, double rate,
                       int packet_count, int seeds, std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  for (int s = 0; s < seeds; ++s)
    for (const auto& x : dataset) {
      const Vector mask = sample_mask(codec.code_dim(), rate, packet_count, rng);
      total += forward(codec, x, mask, 0.0).distortion;
    }
  return total / (static_cast<double>(seeds) * static_cast<double>(dataset.size()));
}

double distortion_after_top_zeroing(const LinearCodec& codec, const std::vector<Vector>& dataset,
                                    double fraction, double alpha) {
  const int m = codec.code_dim();
  const auto zeroed = static_cast<long>(std::lround(fraction * m));
  double total = 0.0;
  for (const auto& x : dataset) {
    const Vector sal = saliency(codec, x, alpha);
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sal[a] > sal[b]; });
    Vector mask = Vector::Ones(m);
    for (long i = 0; i < zeroed; ++i) mask[order[static_cast<std::size_t>(i)]] = 0.0;
    total += forward(codec, x, mask, 0.0).distortion;
  }
  return total / static_cast<double>(dataset.size());
}

std::vector<Vector> extract_patches(const std::vector<RawFrame>& frames, int patch, int count, std::uint64_t seed) {
  require(!frames.empty() && patch > 0 && count > 0, ErrorKind::InvalidInput, "invalid patch extraction request");
  Rng rng(seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    const RawFrame& f = frames[rng.below(frames.size())];
    const auto x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(f.width() - patch + 1)));
    const auto y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(f.height() - patch + 1)));
    Vector v(patch * patch);
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) v[y * patch + x] = f.y_at(x0 + x, y0 + y);
    v.array() -= v.mean();
    v /= 64.0;
    out.push_back(std::move(v));
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const LinearCodec& codec) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write("LCW1", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(codec.patch_dim()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(codec.code_dim()));
  for (const Matrix* m : {&codec.encoder, &codec.decoder})
    for (long r = 0; r < m->rows(); ++r)
      for (long c = 0; c < m->cols(); ++c) write_le<double>(out, (*m)(r, c));
}

LinearCodec load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::string(magic, 4) == "LCW1", ErrorKind::Format, "not a codec weights file");
  const auto d = read_le<std::uint32_t>(in);
  const auto m = read_le<std::uint32_t>(in);
  require(d > 0 && m > 0 && d < 65536 && m < 65536, ErrorKind::Format, "implausible codec dims");
  LinearCodec c{Matrix(m, d), Matrix(d, m)};
  for (Matrix* mat : {&c.encoder, &c.decoder})
    for (long r = 0; r < mat->rows(); ++r)
      for (long col = 0; col < mat->cols(); ++col) (*mat)(r, col) = read_le<double>(in);
  return c;
}

}  // namespace dsv::losstrain
