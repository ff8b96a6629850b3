#pragma once

#include "dsv/frame.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsv {

enum class SyntheticKind { Pan, Shapes, Conference };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

// Procedural clip: frame(i) is a pure function of (kind, dims, seed, i).
RawFrame synthetic_frame(SyntheticKind kind, int width, int height, std::uint64_t seed, int index);

// Frames addressed cyclically so sessions can outlast the clip.
class VideoSource {
 public:
  static VideoSource from_frames(std::vector<RawFrame> frames);
  static VideoSource synthetic(SyntheticKind kind, int width, int height, int frame_count, std::uint64_t seed);

  // "synth:<kind>[:WxH[:frames[:seed]]]", a .y4m file, or a directory of
  // numbered .pgm/.png images.
  static VideoSource open(const std::string& spec);

  int width() const { return width_; }
  int height() const { return height_; }
  int frame_count() const { return count_; }
  const RawFrame& frame(int index) const;

 private:
  int width_ = 0;
  int height_ = 0;
  int count_ = 0;
  std::vector<RawFrame> frames_;
};

std::vector<RawFrame> read_y4m(const std::filesystem::path& path);
void write_y4m(const std::filesystem::path& path, const std::vector<RawFrame>& frames, int fps = 25);

// Luma-only images; chroma is set to 128.
RawFrame read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const RawFrame& frame);
RawFrame read_png(const std::filesystem::path& path);
std::vector<RawFrame> read_image_sequence(const std::filesystem::path& dir);

}  // namespace dsv
