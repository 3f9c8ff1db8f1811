#include "shiftbnn/lfsr.hpp"

#include <algorithm>
#include <bit>
#include <map>

#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

std::size_t word_count(int width) { return (static_cast<std::size_t>(width) + 63) / 64; }

// Bit position of R_i in the integer view.
int bit_index(int width, int i) { return width - i; }

void set_bit(std::vector<std::uint64_t>& words, int pos, int value) {
  auto& w = words[static_cast<std::size_t>(pos) / 64];
  const std::uint64_t m = std::uint64_t{1} << (pos % 64);
  w = value ? (w | m) : (w & ~m);
}

}  // namespace

TapSet::TapSet(int width, std::vector<int> taps) : width_(width), taps_(std::move(taps)) {
  if (width_ < 4) throw Error(ErrorCode::InvalidTaps, "width must be >= 4");
  std::sort(taps_.begin(), taps_.end());
  if (std::adjacent_find(taps_.begin(), taps_.end()) != taps_.end())
    throw Error(ErrorCode::InvalidTaps, "duplicate tap index");
  if (taps_.empty() || taps_.front() < 1 || taps_.back() > width_)
    throw Error(ErrorCode::InvalidTaps, "tap index out of range [1, width]");
  if (taps_.back() != width_)
    throw Error(ErrorCode::InvalidTaps, "tail register must be a tap");
}

TapSet TapSet::default_for(int width) {
  // Maximal-length Fibonacci configurations; the small ones are re-verified
  // by brute-force period enumeration in the tests.
  static const std::map<int, std::vector<int>> table = {
      {4, {3, 4}},
      {8, {4, 5, 6, 8}},
      {12, {1, 4, 6, 12}},
      {16, {4, 13, 15, 16}},
      {20, {17, 20}},
      {24, {17, 22, 23, 24}},
      {32, {1, 2, 22, 32}},
      {64, {60, 61, 63, 64}},
      {128, {99, 101, 126, 128}},
      {256, {246, 251, 254, 256}},
  };
  const auto it = table.find(width);
  if (it == table.end())
    throw Error(ErrorCode::InvalidTaps, "no default tap set for width " + std::to_string(width));
  return TapSet(width, it->second);
}

LfsrState::LfsrState(const TapSet& taps, std::span<const std::uint64_t> seed)
    : taps_(taps),
      words_(word_count(taps.width()), 0),
      forward_mask_(words_.size(), 0),
      reverse_mask_(words_.size(), 0) {
  const int n = taps_.width();
  const int top_bits = n % 64;
  top_mask_ = top_bits == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << top_bits) - 1;
  head_word_ = static_cast<std::size_t>(n - 1) / 64;
  head_mask_ = std::uint64_t{1} << ((n - 1) % 64);

  if (seed.size() > words_.size()) {
    for (std::size_t i = words_.size(); i < seed.size(); ++i)
      if (seed[i] != 0) throw Error(ErrorCode::InvalidTaps, "seed wider than register");
  }
  std::copy_n(seed.begin(), std::min(seed.size(), words_.size()), words_.begin());
  if ((words_.back() & ~top_mask_) != 0)
    throw Error(ErrorCode::InvalidTaps, "seed wider than register");
  if (std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; }))
    throw Error(ErrorCode::ZeroSeed, "all-zero seed is a fixed point");

  retap(taps);
}

void LfsrState::retap(const TapSet& taps) {
  if (taps.width() != taps_.width())
    throw Error(ErrorCode::InvalidTaps, "retap must keep the register width");
  taps_ = taps;
  const int n = taps_.width();
  std::fill(forward_mask_.begin(), forward_mask_.end(), 0);
  std::fill(reverse_mask_.begin(), reverse_mask_.end(), 0);
  for (int t : taps_.taps()) set_bit(forward_mask_, bit_index(n, t), 1);
  set_bit(reverse_mask_, bit_index(n, 1), 1);
  for (int t : taps_.taps())
    if (t != n) set_bit(reverse_mask_, bit_index(n, t + 1), 1);
}

LfsrState::LfsrState(const TapSet& taps, std::uint64_t seed)
    : LfsrState(taps, std::span<const std::uint64_t>(&seed, 1)) {}

ForwardShift LfsrState::forward_generic() noexcept {
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) acc ^= words_[i] & forward_mask_[i];
  const int head = std::popcount(acc) & 1;
  const int tail = static_cast<int>(words_[0] & 1);
  const std::size_t last = words_.size() - 1;
  for (std::size_t i = 0; i < last; ++i) words_[i] = (words_[i] >> 1) | (words_[i + 1] << 63);
  words_[last] = (words_[last] >> 1) | (head_mask_ & (std::uint64_t{0} - static_cast<std::uint64_t>(head)));
  ++position_;
  return {head, tail};
}

ReverseShift LfsrState::reverse_generic() noexcept {
  const int head = (words_[head_word_] & head_mask_) != 0;
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) acc ^= words_[i] & reverse_mask_[i];
  const int tail = std::popcount(acc) & 1;
  for (std::size_t i = words_.size() - 1; i > 0; --i)
    words_[i] = (words_[i] << 1) | (words_[i - 1] >> 63);
  words_[0] = (words_[0] << 1) | static_cast<std::uint64_t>(tail);
  words_.back() &= top_mask_;
  --position_;
  return {tail, head};
}

int LfsrState::bit(int i) const noexcept {
  const int pos = bit_index(taps_.width(), i);
  return static_cast<int>((words_[static_cast<std::size_t>(pos) / 64] >> (pos % 64)) & 1);
}

int LfsrState::popcount() const noexcept {
  int total = 0;
  for (auto w : words_) total += std::popcount(w);
  return total;
}

std::string LfsrState::to_string() const {
  std::string out;
  out.reserve(static_cast<std::size_t>(width()));
  for (int i = 1; i <= width(); ++i) out.push_back(bit(i) ? '1' : '0');
  return out;
}

int popcount_state(const LfsrState& state) noexcept { return state.popcount(); }

}  // namespace shiftbnn
