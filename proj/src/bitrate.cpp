#include "dsv/bitrate.hpp"

#include "dsv/error.hpp"

namespace dsv {

namespace {

double nominal_bytes(const QualityLevel& level, long pixels) {
  return level.nominal_bpp * static_cast<double>(pixels) / 8.0;
}

}  // namespace

void LevelHistory::record(const QualityLevel& level, double bytes, long pixels) {
  auto it = ewma_.find(level.level_id);
  if (it == ewma_.end() || count_ - it->second.at > kStaleAfter)
    ewma_[level.level_id] = {bytes, count_};
  else
    it->second = {it->second.bytes + kWeight * (bytes - it->second.bytes), count_};
  const double nominal = nominal_bytes(level, pixels);
  if (nominal > 0.0) {
    const double ratio = bytes / nominal;
    scale_ = scale_ ? *scale_ + kWeight * (ratio - *scale_) : ratio;
  }
  ++count_;
}

std::optional<double> LevelHistory::predicted(int level_id) const {
  if (auto it = ewma_.find(level_id); it != ewma_.end() && count_ - 1 - it->second.at <= kStaleAfter)
    return it->second.bytes;
  return std::nullopt;
}

double predicted_bytes(const QualityLevel& level, const LevelHistory& history, long pixels) {
  if (auto p = history.predicted(level.level_id)) return *p;
  return nominal_bytes(level, pixels) * history.scale().value_or(1.0);
}

const QualityLevel& bitrate_select(double target_bytes, const std::vector<QualityLevel>& levels,
                                   const LevelHistory& history, long pixels) {
  require(!levels.empty(), ErrorKind::InvalidInput, "bitrate_select needs at least one level");
  const QualityLevel* best = nullptr;
  double best_size = -1.0;
  const QualityLevel* coarsest = &levels.front();
  for (const auto& level : levels) {
    if (level.quant_step > coarsest->quant_step) coarsest = &level;
    const double size = predicted_bytes(level, history, pixels);
    if (size > target_bytes) continue;
    if (best == nullptr || size > best_size || (size == best_size && level.level_id < best->level_id)) {
      best = &level;
      best_size = size;
    }
  }
  return best ? *best : *coarsest;
}

}  // namespace dsv
