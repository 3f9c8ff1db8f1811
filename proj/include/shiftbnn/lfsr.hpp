#pragma once

// Fibonacci LFSR with exact reverse shifting.
//
// Registers are numbered R_1 (head) ... R_n (tail). A forward shift computes
// the head bit as the XOR of all tap registers, moves every R_i into R_{i+1}
// and drops R_n. A reverse shift moves every R_{i+1} back into R_i and
// reconstructs the dropped tail as
//
//   R_n = R'_1 ^ R'_{a+1} ^ R'_{b+1} ^ ...      (all taps except n)
//
// which undoes the forward step bit for bit.
//
// Integer view: the register is read as an n-bit number written R_1 ... R_n
// from most to least significant bit, so R_i lives at bit (n - i). Seeds and
// `to_words()` use this view.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shiftbnn {

class TapSet {
 public:
  /// Validates and sorts `taps`. Throws Error{InvalidTaps}.
  TapSet(int width, std::vector<int> taps);

  /// Shipped maximal-length configurations (4, 8, 12, 16, 20, 24, 32, 64,
  /// 128, 256 bits). Throws InvalidTaps for any other width.
  static TapSet default_for(int width);

  int width() const noexcept { return width_; }
  const std::vector<int>& taps() const noexcept { return taps_; }

  bool operator==(const TapSet&) const = default;

 private:
  int width_;
  std::vector<int> taps_;  // ascending, last element == width
};

struct ForwardShift {
  int head_in;
  int tail_out;
};

struct ReverseShift {
  int tail_in;
  int head_out;
};

class LfsrState {
 public:
  /// `seed` holds the integer view little-endian by 64-bit word; bits above
  /// the register width must be zero. Throws ZeroSeed or InvalidTaps.
  LfsrState(const TapSet& taps, std::span<const std::uint64_t> seed);

  /// Convenience for widths up to 64.
  LfsrState(const TapSet& taps, std::uint64_t seed);

  ForwardShift shift_forward() noexcept {
    switch (words_.size()) {
      case 1: return forward_fixed<1>();
      case 2: return forward_fixed<2>();
      case 3: return forward_fixed<3>();
      case 4: return forward_fixed<4>();
      default: return forward_generic();
    }
  }

  ReverseShift shift_reverse() noexcept {
    switch (words_.size()) {
      case 1: return reverse_fixed<1>();
      case 2: return reverse_fixed<2>();
      case 3: return reverse_fixed<3>();
      case 4: return reverse_fixed<4>();
      default: return reverse_generic();
    }
  }

  /// R_i for i in [1, n].
  int bit(int i) const noexcept;
  int popcount() const noexcept;

  int width() const noexcept { return taps_.width(); }
  const TapSet& taps() const noexcept { return taps_; }
  std::int64_t position() const noexcept { return position_; }
  const std::vector<std::uint64_t>& to_words() const noexcept { return words_; }
  /// Low 64 bits of the integer view.
  std::uint64_t to_u64() const noexcept { return words_.front(); }
  /// "R_1 R_2 ... R_n" as '0'/'1' characters.
  std::string to_string() const;

  /// Keeps the register contents and position but switches the feedback
  /// taps (same width required). Only used to inject faults.
  void retap(const TapSet& taps);

  /// Same register contents (position and taps are not compared).
  bool same_pattern(const LfsrState& other) const noexcept {
    return words_ == other.words_;
  }

 private:
  // The word loops are spelled out for registers up to 256 bits so the
  // compiler can keep the whole pattern in registers.
  template <std::size_t W>
  ForwardShift forward_fixed() noexcept {
    std::uint64_t* w = words_.data();
    const std::uint64_t* fm = forward_mask_.data();
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < W; ++i) acc ^= w[i] & fm[i];
    const int head = std::popcount(acc) & 1;
    const int tail = static_cast<int>(w[0] & 1);
    for (std::size_t i = 0; i + 1 < W; ++i) w[i] = (w[i] >> 1) | (w[i + 1] << 63);
    w[W - 1] = (w[W - 1] >> 1) | (head_mask_ & (std::uint64_t{0} - static_cast<std::uint64_t>(head)));
    ++position_;
    return {head, tail};
  }

  template <std::size_t W>
  ReverseShift reverse_fixed() noexcept {
    std::uint64_t* w = words_.data();
    const std::uint64_t* rm = reverse_mask_.data();
    const int head = (w[W - 1] & head_mask_) != 0;
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < W; ++i) acc ^= w[i] & rm[i];
    const int tail = std::popcount(acc) & 1;
    for (std::size_t i = W - 1; i > 0; --i) w[i] = (w[i] << 1) | (w[i - 1] >> 63);
    w[0] = (w[0] << 1) | static_cast<std::uint64_t>(tail);
    w[W - 1] &= top_mask_;
    --position_;
    return {tail, head};
  }

  ForwardShift forward_generic() noexcept;
  ReverseShift reverse_generic() noexcept;

  TapSet taps_;
  std::vector<std::uint64_t> words_;
  std::vector<std::uint64_t> forward_mask_;  // R_t for every tap t
  std::vector<std::uint64_t> reverse_mask_;  // R_1 and R_{t+1} for t != n
  std::uint64_t top_mask_;                   // valid bits of the last word
  std::size_t head_word_;                    // word holding R_1 (always the last)
  std::uint64_t head_mask_;                  // R_1's bit within that word
  std::int64_t position_ = 0;
};

/// Number of 1 bits; the GRNG's running sum is checked against this.
int popcount_state(const LfsrState& state) noexcept;

}  // namespace shiftbnn
