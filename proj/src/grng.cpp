#include "shiftbnn/grng.hpp"

#include <cmath>
#include <fstream>

#include "shiftbnn/binary_io.hpp"
#include "shiftbnn/error.hpp"

namespace shiftbnn {

namespace {

constexpr char kEpslMagic[] = "EPSL";
constexpr std::uint32_t kEpslVersion = 1;

std::uint64_t finalize(std::uint64_t x) {
  x = (x ^ (x >> 33)) * 0xFF51AFD7ED558CCDull;
  x = (x ^ (x >> 33)) * 0xC4CEB9FE1A85EC53ull;
  return x ^ (x >> 33);
}

}  // namespace

double standardize(int count, int width) noexcept {
  const double n = width;
  return (count - n / 2.0) / std::sqrt(n / 4.0);
}

std::vector<std::uint64_t> derive_seed(std::uint64_t master_seed, std::uint64_t stream_id,
                                       int width) {
  const std::size_t words = (static_cast<std::size_t>(width) + 63) / 64;
  std::vector<std::uint64_t> seed(words);
  const std::uint64_t base = master_seed + stream_id * 0x9E3779B97F4A7C15ull;
  for (std::size_t j = 0; j < words; ++j) seed[j] = finalize(base + j);
  if (width % 64 != 0) seed.back() &= (std::uint64_t{1} << (width % 64)) - 1;
  bool zero = true;
  for (auto w : seed) zero = zero && w == 0;
  if (zero) seed[0] |= 1;
  return seed;
}

GrngStream::GrngStream(std::uint64_t master_seed, std::uint64_t stream_id, const TapSet& taps)
    : lfsr_(taps, derive_seed(master_seed, stream_id, taps.width())),
      running_sum_(lfsr_.popcount()),
      half_(taps.width() / 2.0),
      scale_(std::sqrt(taps.width() / 4.0)) {}

void GrngStream::throw_underflow() {
  throw Error(ErrorCode::UnderflowBeforeSeed,
              "retrieval requested past the stream's initial pattern");
}

std::optional<Epsilon> GrngStream::tick() {
  switch (mode_) {
    case GrngMode::Forward: return generate_forward();
    case GrngMode::Backward: return retrieve_backward();
    case GrngMode::Idle: break;
  }
  return std::nullopt;
}

void EpsLog::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  os.write(kEpslMagic, 4);
  io::put_le<std::uint32_t>(os, kEpslVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(width));
  io::put_le<std::uint64_t>(os, counts.size());
  for (auto c : counts) io::put_le<std::uint16_t>(os, c);
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

EpsLog EpsLog::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  io::expect_magic(is, "EPSL");
  const auto version = io::get_le<std::uint32_t>(is, "EPSL version");
  if (version != kEpslVersion)
    throw Error(ErrorCode::BadMagic, "unsupported EPSL version " + std::to_string(version));
  EpsLog log;
  log.width = static_cast<int>(io::get_le<std::uint32_t>(is, "EPSL width"));
  const auto n = io::get_le<std::uint64_t>(is, "EPSL count");
  log.counts.resize(n);
  for (auto& c : log.counts) c = io::get_le<std::uint16_t>(is, "EPSL counts");
  return log;
}

}  // namespace shiftbnn
