#pragma once

// Bookkeeping for reversed epsilon retrieval.
//
// Forward sampling draws one epsilon per weight in a frozen canonical order:
//   conv: m (output channel) outer, n (input channel), k (kernel slot,
//         row-major) innermost
//   fc:   out-index outer, in-index inner
// Layers are visited first to last, so a sample's stream position advances
// through contiguous per-layer segments. Reverse shifting hands the same
// epsilons back last to first. Inside a conv segment that means kernels
// arrive as (m, n) descending with n inner, and each kernel's slots arrive
// reversed, which is exactly the 180-degree rotated kernel. Input-error map
// n therefore receives its contributions in bursts separated by M, so the
// consumer keeps one persistent partial-sum buffer per input channel
// (intermittent accumulation).

#include <cstddef>
#include <cstdint>
#include <ranges>
#include <span>
#include <string>
#include <vector>

namespace shiftbnn {

enum class LayerKind : std::uint8_t { Conv = 0, FC = 1, Pool = 2 };

std::string_view to_string(LayerKind kind);

struct SegmentGeometry {
  LayerKind kind = LayerKind::FC;
  std::size_t kernel = 0;  // conv: K
  std::size_t out = 0;     // conv: M, fc: out
  std::size_t in = 0;      // conv: N, fc: in

  std::uint64_t weight_count() const noexcept {
    return kind == LayerKind::Conv ? kernel * kernel * out * in : out * in;
  }
  bool operator==(const SegmentGeometry&) const = default;
};

struct SegmentRecord {
  std::size_t layer_id = 0;
  std::size_t sample_id = 0;
  SegmentGeometry geometry;
  std::uint64_t count = 0;
  std::int64_t start_position = 0;  // stream position before the first draw

  std::int64_t end_position() const noexcept {
    return start_position + static_cast<std::int64_t>(count);
  }
  /// "m>n>k" for conv, "out>in" for fc.
  std::string_view traversal() const noexcept;
};

/// Position of one weight within the canonical forward order.
struct ForwardSlot {
  std::uint64_t position;  // 0-based within the segment
  std::size_t m;           // conv: output channel; fc: out-index
  std::size_t n;           // conv: input channel;  fc: in-index
  std::size_t k;           // conv: row-major kernel slot; fc: 0
};

/// One retrieval in reverse order, annotated with its destination.
struct ReplaySlot {
  std::uint64_t position;  // forward position this epsilon was drawn at
  std::size_t m;
  std::size_t n;
  std::size_t k;          // original kernel slot
  std::size_t flipped_k;  // K*K - 1 - k: slot in the rotated kernel
};

ForwardSlot forward_slot(const SegmentGeometry& g, std::uint64_t position) noexcept;

inline auto canonical_forward_order(const SegmentGeometry& g) {
  return std::views::iota(std::uint64_t{0}, g.weight_count()) |
         std::views::transform([g](std::uint64_t p) { return forward_slot(g, p); });
}

/// Kernel (conv) or row (fc) granularity view of the reversed order; each
/// block is a contiguous run of the segment, yielded last to first.
struct ReplayBlock {
  std::size_t m;
  std::size_t n;                // conv only
  std::uint64_t first_position;  // lowest forward position in the block
  std::size_t length;           // K*K (conv) or in (fc)
};

class GenerationLedger {
 public:
  explicit GenerationLedger(std::size_t sample_id = 0, std::int64_t origin = 0)
      : sample_id_(sample_id), origin_(origin) {}

  /// Throws NonContiguousSegment if `record` does not start where the
  /// previous one ended, LedgerMismatch if its count disagrees with its
  /// geometry or its layer id does not increase.
  void record_segment(const SegmentRecord& record);

  /// Throws LedgerMismatch if the layer has no segment.
  const SegmentRecord& segment(std::size_t layer_id) const;
  const std::vector<SegmentRecord>& segments() const noexcept { return segments_; }

  std::uint64_t total() const noexcept;
  std::size_t sample_id() const noexcept { return sample_id_; }
  std::int64_t origin() const noexcept { return origin_; }
  std::int64_t end_position() const noexcept;

  void clear(std::int64_t origin);

  /// "layer,sample,kind,counts,geometry" lines, one per segment.
  std::string dump() const;

 private:
  std::size_t sample_id_;
  std::int64_t origin_;
  std::vector<SegmentRecord> segments_;
};

/// Reversed slot order for one layer; conv slots carry the flipped index.
/// Throws LedgerMismatch if the layer is missing.
std::vector<ReplaySlot> reverse_schedule(const GenerationLedger& ledger, std::size_t layer_id);
std::vector<ReplaySlot> fc_reverse_schedule(const GenerationLedger& ledger, std::size_t layer_id);

/// Block-level reversed order (kernels for conv, rows for fc).
inline auto reverse_blocks(const SegmentGeometry& g) {
  const bool conv = g.kind == LayerKind::Conv;
  const std::size_t length = conv ? g.kernel * g.kernel : g.in;
  const std::size_t blocks = conv ? g.out * g.in : g.out;
  return std::views::iota(std::size_t{0}, blocks) |
         std::views::transform([=](std::size_t j) {
           const std::size_t b = blocks - 1 - j;
           return ReplayBlock{conv ? b / g.in : b, conv ? b % g.in : 0,
                              static_cast<std::uint64_t>(b) * length, length};
         });
}

/// Enforces the replay contract during a backward pass: layers strictly
/// last to first, and each layer retrieves exactly what it generated.
class ReplayCursor {
 public:
  explicit ReplayCursor(const GenerationLedger& ledger) : ledger_(&ledger) {}

  /// Throws LedgerMismatch when layers are not visited in decreasing order.
  const SegmentRecord& begin_layer(std::size_t layer_id);
  /// Throws LedgerMismatch if `retrieved` differs from the recorded count.
  void end_layer(std::uint64_t retrieved);
  bool complete() const noexcept;

 private:
  const GenerationLedger* ledger_;
  const SegmentRecord* active_ = nullptr;
  std::size_t last_layer_ = static_cast<std::size_t>(-1);
  std::uint64_t replayed_ = 0;
};

/// Persistent per-input-channel partial sums for the backward data pass.
/// Kernels may arrive in any (m, n) order; each contribution is added into
/// buffer n as it arrives.
class IntermittentAccumulator {
 public:
  IntermittentAccumulator(std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t kernel, std::size_t stride, std::size_t pad);

  void consume(std::size_t n, std::span<const double> rotated_kernel,
               std::span<const double> error_map, std::size_t out_h, std::size_t out_w);

  std::span<const double> channel(std::size_t n) const noexcept;
  const std::vector<double>& buffers() const noexcept { return buffers_; }
  std::vector<double>& buffers() noexcept { return buffers_; }

 private:
  std::size_t channels_, height_, width_, kernel_, stride_, pad_;
  std::vector<double> buffers_;
};

}  // namespace shiftbnn
