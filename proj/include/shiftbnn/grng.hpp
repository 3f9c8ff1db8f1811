#pragma once

// Central-limit Gaussian generator on top of an LFSR.
//
// Each pattern's 1-count c ~ B(n, 1/2) is standardized to
//   eps = (c - n/2) / sqrt(n/4),
// so n = 256 gives eps on a 0.125 grid inside [-16, 16]. The count is kept
// incrementally: a forward shift adds (head_in - tail_out), a reverse shift
// adds (tail_in - head_out).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "shiftbnn/lfsr.hpp"

namespace shiftbnn {

enum class GrngMode { Idle, Forward, Backward };

struct Epsilon {
  double value;
  int count;
};

/// Standardized value of a raw 1-count for an n-bit pattern.
double standardize(int count, int width) noexcept;

/// The documented seed mixer: 64-bit finalizer over
/// (master_seed + stream_id * 0x9E3779B97F4A7C15 + j), one word per j,
/// masked to `width` bits; an all-zero result gets its lowest bit set.
std::vector<std::uint64_t> derive_seed(std::uint64_t master_seed, std::uint64_t stream_id,
                                       int width);

class GrngStream {
 public:
  GrngStream(std::uint64_t master_seed, std::uint64_t stream_id, const TapSet& taps);

  /// One forward shift; returns the eps of the new pattern.
  Epsilon generate_forward() noexcept {
    set_mode(GrngMode::Forward);
    const auto s = lfsr_.shift_forward();
    running_sum_ += s.head_in - s.tail_out;
    return current();
  }

  /// Returns the eps of the current pattern, then shifts back one step.
  /// Throws UnderflowBeforeSeed once every generated pattern is consumed.
  Epsilon retrieve_backward() {
    set_mode(GrngMode::Backward);
    if (lfsr_.position() <= 0) throw_underflow();
    const Epsilon out = current();
    const auto s = lfsr_.shift_reverse();
    running_sum_ += s.tail_in - s.head_out;
    return out;
  }

  void set_mode(GrngMode mode) noexcept {
    if (mode_ == GrngMode::Backward && mode == GrngMode::Forward) ++b2f_switches_;
    mode_ = mode;
  }

  /// Fault injection: swap the feedback taps, keeping the register.
  void retap(const TapSet& taps) { lfsr_.retap(taps); }

  /// One clock in the current mode. Idle leaves the register untouched and
  /// yields nothing.
  std::optional<Epsilon> tick();

  Epsilon current() const noexcept {
    return {(running_sum_ - half_) / scale_, running_sum_};
  }

  GrngMode mode() const noexcept { return mode_; }
  int running_sum() const noexcept { return running_sum_; }
  int width() const noexcept { return lfsr_.width(); }
  std::int64_t position() const noexcept { return lfsr_.position(); }
  const LfsrState& lfsr() const noexcept { return lfsr_; }
  /// Count of Backward -> Forward switches, kept as a diagnostic.
  std::int64_t backward_to_forward_switches() const noexcept { return b2f_switches_; }

 private:
  [[noreturn]] static void throw_underflow();

  LfsrState lfsr_;
  int running_sum_;
  double half_;   // n / 2
  double scale_;  // sqrt(n / 4)
  GrngMode mode_ = GrngMode::Idle;
  std::int64_t b2f_switches_ = 0;
};

/// Raw 1-counts in generation order; the STORE strategy's off-chip buffer
/// and the "EPSL" debug dump.
struct EpsLog {
  int width = 256;
  std::vector<std::uint16_t> counts;

  void write(const std::filesystem::path& path) const;
  static EpsLog read(const std::filesystem::path& path);
};

}  // namespace shiftbnn
