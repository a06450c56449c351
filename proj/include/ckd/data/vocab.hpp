#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ckd::data {

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 4;

/// Token inventory shared by every model tier.
///
/// Layout: fixed specials, then colors, shapes, numbers zero..max_count and
/// one token per grid cell in raster order.
class Vocab {
 public:
  enum Special : std::int32_t {
    pad = 0,
    img,
    eos,
    caption,
    q_color_of,
    q_shape_at,
    q_count_color,
    q_right_of,
    q_below,
    none,
    n_specials,
  };

  Vocab(std::uint32_t grid_size, std::uint32_t max_count);

  std::int32_t color(int c) const;
  std::int32_t shape(int s) const;
  std::int32_t number(int n) const;
  std::int32_t cell(int k) const;

  std::uint32_t grid_size() const noexcept { return grid_; }
  std::uint32_t max_count() const noexcept { return max_count_; }
  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(std::int32_t id) const;
  /// Inverse of name(); throws Error for unknown names.
  std::int32_t id(const std::string& name) const;

 private:
  std::uint32_t grid_;
  std::uint32_t max_count_;
  std::vector<std::string> names_;
};

const char* color_name(int c);
const char* shape_name(int s);

}  // namespace ckd::data
