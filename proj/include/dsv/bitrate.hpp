#pragma once

#include "dsv/codec.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace dsv {

// Recent encoded sizes per quality level, smoothed with an EWMA. A level's
// average goes stale after kStaleAfter records at other levels; stale and
// unseen levels are predicted from nominal_bpp scaled by the recent ratio of
// actual to nominal size across all levels.
class LevelHistory {
 public:
  static constexpr double kWeight = 0.3;  // weight of the newest sample
  static constexpr std::uint64_t kStaleAfter = 25;

  void record(const QualityLevel& level, double bytes, long pixels);
  std::optional<double> predicted(int level_id) const;
  std::optional<double> scale() const { return scale_; }
  bool empty() const { return ewma_.empty(); }

 private:
  struct Entry {
    double bytes;
    std::uint64_t at;
  };
  std::map<int, Entry> ewma_;
  std::optional<double> scale_;
  std::uint64_t count_ = 0;
};

double predicted_bytes(const QualityLevel& level, const LevelHistory& history, long pixels);

// Largest predicted size not exceeding the target; ties go to the lower
// level_id; if nothing fits, the coarsest level.
const QualityLevel& bitrate_select(double target_bytes, const std::vector<QualityLevel>& levels,
                                   const LevelHistory& history, long pixels);

}  // namespace dsv
