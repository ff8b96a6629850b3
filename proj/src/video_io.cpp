#include "dsv/video_io.hpp"

#include "dsv/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dsv {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [-1, 1).
double hash_noise(std::uint64_t seed, int a, int b, int c) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(a) * 0x100000001b3ULL ^
                                         mix(static_cast<std::uint64_t>(b) << 21 ^ static_cast<std::uint64_t>(c))));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

// Smooth value noise on an integer lattice of spacing `cell`.
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell;
  const double gy = y / cell;
  const int ix = static_cast<int>(std::floor(gx));
  const int iy = static_cast<int>(std::floor(gy));
  const double fx = gx - ix;
  const double fy = gy - iy;
  const double sx = fx * fx * (3 - 2 * fx);
  const double sy = fy * fy * (3 - 2 * fy);
  const double n00 = hash_noise(seed, ix, iy, 7);
  const double n10 = hash_noise(seed, ix + 1, iy, 7);
  const double n01 = hash_noise(seed, ix, iy + 1, 7);
  const double n11 = hash_noise(seed, ix + 1, iy + 1, 7);
  return (n00 * (1 - sx) + n10 * sx) * (1 - sy) + (n01 * (1 - sx) + n11 * sx) * sy;
}

double texture(std::uint64_t seed, double x, double y) {
  return 0.55 * value_noise(seed, x, y, 32.0) + 0.3 * value_noise(seed + 1, x, y, 11.0) +
         0.15 * value_noise(seed + 2, x, y, 4.0);
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void fill_chroma(RawFrame& f, std::uint64_t seed, double shift_x, double shift_y) {
  for (int y = 0; y < f.chroma_height(); ++y)
    for (int x = 0; x < f.chroma_width(); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * f.chroma_width() + x;
      const double px = 2.0 * x + shift_x;
      const double py = 2.0 * y + shift_y;
      f.chroma_u()[i] = to_u8(128 + 30 * value_noise(seed + 11, px, py, 64.0));
      f.chroma_v()[i] = to_u8(128 + 30 * value_noise(seed + 13, px, py, 48.0));
    }
}

RawFrame pan_frame(int w, int h, std::uint64_t seed, int index) {
  RawFrame f(w, h);
  const double dx = 2.5 * index;
  const double dy = 1.0 * index;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = 128 + 90 * texture(seed, x + dx, y + dy) + 2.0 * hash_noise(seed, x, y, index);
      f.y_at(x, y) = to_u8(v);
    }
  fill_chroma(f, seed, dx, dy);
  return f;
}

RawFrame shapes_frame(int w, int h, std::uint64_t seed, int index) {
  RawFrame f(w, h);
  struct Blob {
    double cx, cy, vx, vy, rx, ry, level;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < 5; ++b) {
    const auto r = [&](int salt) { return 0.5 * (hash_noise(seed, b, salt, 99) + 1.0); };
    blobs.push_back({r(1) * w, r(2) * h, (r(3) - 0.5) * 6, (r(4) - 0.5) * 4, 20 + r(5) * w / 6.0,
                     20 + r(6) * h / 6.0, 40 + 180 * r(7)});
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 60 + 120.0 * x / w + 40.0 * y / h + 25 * texture(seed + 3, x, y);
      for (std::size_t b = 0; b < blobs.size(); ++b) {
        const Blob& bl = blobs[b];
        // Reflect positions so blobs bounce inside the frame.
        const auto bounce = [](double p, double range) {
          const double m = std::fmod(std::fabs(p), 2 * range);
          return m < range ? m : 2 * range - m;
        };
        const double cx = bounce(bl.cx + bl.vx * index, w);
        const double cy = bounce(bl.cy + bl.vy * index, h);
        const double ex = (x - cx) / bl.rx;
        const double ey = (y - cy) / bl.ry;
        if (ex * ex + ey * ey < 1.0)
          v = bl.level + 35 * texture(seed + 20 + b, x - cx, y - cy);
      }
      f.y_at(x, y) = to_u8(v + 2.0 * hash_noise(seed, x, y, index));
    }
  fill_chroma(f, seed, 0, 0);
  return f;
}

RawFrame conference_frame(int w, int h, std::uint64_t seed, int index) {
  RawFrame f(w, h);
  const double t = index / 25.0;
  const double head_x = w * (0.5 + 0.015 * std::sin(2 * std::numbers::pi * 0.25 * t));
  const double head_y = h * (0.42 + 0.01 * std::sin(2 * std::numbers::pi * 0.4 * t));
  const double head_r = std::min(w, h) * 0.22;
  const double hand_x = w * (0.25 + 0.04 * std::sin(2 * std::numbers::pi * 0.5 * t));
  const double hand_y = h * (0.8 + 0.03 * std::cos(2 * std::numbers::pi * 0.4 * t));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 150 + 60 * texture(seed, x, y);
      const double dx = (x - head_x) / head_r;
      const double dy = (y - head_y) / (1.25 * head_r);
      if (dx * dx + dy * dy < 1.0) v = 170 + 40 * texture(seed + 5, x - head_x, y - head_y);
      const double body = (y - (head_y + 1.2 * head_r)) / (0.9 * h);
      if (body > 0 && std::fabs(x - head_x) < head_r * (1.4 + 2 * body)) v = 70 + 30 * texture(seed + 6, x, y);
      const double hx = (x - hand_x) / (0.06 * w);
      const double hy = (y - hand_y) / (0.08 * h);
      if (hx * hx + hy * hy < 1.0) v = 190 + 20 * texture(seed + 7, x - hand_x, y - hand_y);
      f.y_at(x, y) = to_u8(v + 1.0 * hash_noise(seed, x, y, index));
    }
  fill_chroma(f, seed, 0, 0);
  return f;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "pan") return SyntheticKind::Pan;
  if (name == "shapes") return SyntheticKind::Shapes;
  if (name == "conference") return SyntheticKind::Conference;
  fail(ErrorKind::InvalidInput, "unknown synthetic clip kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::Pan: return "pan";
    case SyntheticKind::Shapes: return "shapes";
    case SyntheticKind::Conference: return "conference";
  }
  return "pan";
}

RawFrame synthetic_frame(SyntheticKind kind, int width, int height, std::uint64_t seed, int index) {
  switch (kind) {
    case SyntheticKind::Pan: return pan_frame(width, height, seed, index);
    case SyntheticKind::Shapes: return shapes_frame(width, height, seed, index);
    case SyntheticKind::Conference: return conference_frame(width, height, seed, index);
  }
  return pan_frame(width, height, seed, index);
}

VideoSource VideoSource::from_frames(std::vector<RawFrame> frames) {
  require(!frames.empty(), ErrorKind::InvalidInput, "video has no frames");
  VideoSource v;
  v.width_ = frames.front().width();
  v.height_ = frames.front().height();
  for (const auto& f : frames)
    require(f.same_dims(frames.front()), ErrorKind::InvalidInput, "video frames differ in size");
  v.count_ = static_cast<int>(frames.size());
  v.frames_ = std::move(frames);
  return v;
}

VideoSource VideoSource::synthetic(SyntheticKind kind, int width, int height, int frame_count,
                                   std::uint64_t seed) {
  require(frame_count > 0, ErrorKind::InvalidInput, "synthetic clip needs at least one frame");
  RawFrame probe(width, height);  // validates dims
  VideoSource v;
  v.width_ = width;
  v.height_ = height;
  v.count_ = frame_count;
  v.frames_.reserve(static_cast<std::size_t>(frame_count));
  for (int i = 0; i < frame_count; ++i) v.frames_.push_back(synthetic_frame(kind, width, height, seed, i));
  return v;
}

VideoSource VideoSource::open(const std::string& spec) {
  if (spec.rfind("synth:", 0) == 0) {
    const auto parts = split(spec.substr(6), ':');
    require(!parts.empty(), ErrorKind::InvalidInput, "synthetic spec needs a kind");
    int w = 320, h = 176, n = 50;
    std::uint64_t seed = 1;
    if (parts.size() > 1) {
      const auto wh = split(parts[1], 'x');
      require(wh.size() == 2, ErrorKind::InvalidInput, "synthetic size must be WxH");
      w = std::stoi(wh[0]);
      h = std::stoi(wh[1]);
    }
    if (parts.size() > 2) n = std::stoi(parts[2]);
    if (parts.size() > 3) seed = std::stoull(parts[3]);
    return synthetic(parse_synthetic_kind(parts[0]), w, h, n, seed);
  }
  const std::filesystem::path p(spec);
  if (std::filesystem::is_directory(p)) return from_frames(read_image_sequence(p));
  return from_frames(read_y4m(p));
}

const RawFrame& VideoSource::frame(int index) const {
  const int i = ((index % count_) + count_) % count_;
  return frames_[static_cast<std::size_t>(i)];
}

std::vector<RawFrame> read_y4m(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  require(header.rfind("YUV4MPEG2", 0) == 0, ErrorKind::Format, path.string() + " is not a YUV4MPEG2 file");
  int w = 0, h = 0;
  for (const auto& tok : split(header, ' ')) {
    if (tok.empty()) continue;
    if (tok[0] == 'W') w = std::stoi(tok.substr(1));
    if (tok[0] == 'H') h = std::stoi(tok.substr(1));
    if (tok[0] == 'C')
      require(tok.rfind("C420", 0) == 0 && tok.find("p10") == std::string::npos, ErrorKind::Format,
              "only 8-bit 4:2:0 Y4M is supported, got " + tok);
  }
  std::vector<RawFrame> frames;
  std::string frame_header;
  while (std::getline(in, frame_header)) {
    require(frame_header.rfind("FRAME", 0) == 0, ErrorKind::Format, "bad Y4M frame marker");
    RawFrame f(w, h);
    in.read(reinterpret_cast<char*>(f.luma().data()), static_cast<std::streamsize>(f.luma().size()));
    in.read(reinterpret_cast<char*>(f.chroma_u().data()), static_cast<std::streamsize>(f.chroma_u().size()));
    in.read(reinterpret_cast<char*>(f.chroma_v().data()), static_cast<std::streamsize>(f.chroma_v().size()));
    require(static_cast<bool>(in), ErrorKind::Format, "truncated Y4M frame");
    frames.push_back(std::move(f));
  }
  require(!frames.empty(), ErrorKind::Format, path.string() + " contains no frames");
  return frames;
}

void write_y4m(const std::filesystem::path& path, const std::vector<RawFrame>& frames, int fps) {
  require(!frames.empty(), ErrorKind::InvalidInput, "no frames to write");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "YUV4MPEG2 W" << frames[0].width() << " H" << frames[0].height() << " F" << fps
      << ":1 Ip A1:1 C420jpeg\n";
  for (const auto& f : frames) {
    out << "FRAME\n";
    out.write(reinterpret_cast<const char*>(f.luma().data()), static_cast<std::streamsize>(f.luma().size()));
    out.write(reinterpret_cast<const char*>(f.chroma_u().data()), static_cast<std::streamsize>(f.chroma_u().size()));
    out.write(reinterpret_cast<const char*>(f.chroma_v().data()), static_cast<std::streamsize>(f.chroma_v().size()));
  }
}

RawFrame read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  require(magic == "P5" && maxval == 255, ErrorKind::Format, path.string() + " is not an 8-bit binary PGM");
  in.get();
  RawFrame f(w, h);
  in.read(reinterpret_cast<char*>(f.luma().data()), static_cast<std::streamsize>(f.luma().size()));
  require(static_cast<bool>(in), ErrorKind::Format, "truncated PGM " + path.string());
  return f;
}

void write_pgm(const std::filesystem::path& path, const RawFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << frame.width() << " " << frame.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.luma().data()), static_cast<std::streamsize>(frame.luma().size()));
}

RawFrame read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_file(&image, path.c_str()) != 0, ErrorKind::Format,
          "cannot read PNG " + path.string());
  image.format = PNG_FORMAT_GRAY;
  const auto w = static_cast<int>(image.width);
  const auto h = static_cast<int>(image.height);
  if (w % 16 != 0 || h % 16 != 0) png_image_free(&image);
  RawFrame f(w, h);
  const bool ok = png_image_finish_read(&image, nullptr, f.luma().data(), 0, nullptr) != 0;
  png_image_free(&image);
  require(ok, ErrorKind::Format, "failed to decode PNG " + path.string());
  return f;
}

std::vector<RawFrame> read_image_sequence(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".png") files.push_back(e.path());
  }
  require(!files.empty(), ErrorKind::Io, "no .pgm/.png images in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<RawFrame> frames;
  for (const auto& f : files) frames.push_back(f.extension() == ".png" ? read_png(f) : read_pgm(f));
  return frames;
}

}  // namespace dsv
