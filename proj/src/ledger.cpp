#include "shiftbnn/ledger.hpp"

#include <algorithm>
#include <sstream>

#include "shiftbnn/error.hpp"
#include "shiftbnn/nn.hpp"

namespace shiftbnn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "CONV";
    case LayerKind::FC: return "FC";
    case LayerKind::Pool: return "POOL";
  }
  return "?";
}

std::string_view SegmentRecord::traversal() const noexcept {
  return geometry.kind == LayerKind::Conv ? "m>n>k" : "out>in";
}

ForwardSlot forward_slot(const SegmentGeometry& g, std::uint64_t position) noexcept {
  if (g.kind == LayerKind::Conv) {
    const std::uint64_t kk = g.kernel * g.kernel;
    const std::uint64_t kernel_index = position / kk;
    return {position, static_cast<std::size_t>(kernel_index / g.in),
            static_cast<std::size_t>(kernel_index % g.in), static_cast<std::size_t>(position % kk)};
  }
  return {position, static_cast<std::size_t>(position / g.in),
          static_cast<std::size_t>(position % g.in), 0};
}

void GenerationLedger::record_segment(const SegmentRecord& record) {
  if (record.geometry.kind == LayerKind::Pool)
    throw Error(ErrorCode::LedgerMismatch, "pool layers draw no epsilons");
  if (record.count != record.geometry.weight_count())
    throw Error(ErrorCode::LedgerMismatch,
                "segment count " + std::to_string(record.count) + " does not match geometry (" +
                    std::to_string(record.geometry.weight_count()) + ")");
  if (record.start_position != end_position())
    throw Error(ErrorCode::NonContiguousSegment,
                "segment for layer " + std::to_string(record.layer_id) + " starts at " +
                    std::to_string(record.start_position) + ", expected " +
                    std::to_string(end_position()));
  if (!segments_.empty() && record.layer_id <= segments_.back().layer_id)
    throw Error(ErrorCode::LedgerMismatch, "layer ids must increase along the forward pass");
  segments_.push_back(record);
}

const SegmentRecord& GenerationLedger::segment(std::size_t layer_id) const {
  const auto it = std::find_if(segments_.begin(), segments_.end(),
                               [&](const SegmentRecord& s) { return s.layer_id == layer_id; });
  if (it == segments_.end())
    throw Error(ErrorCode::LedgerMismatch, "no segment for layer " + std::to_string(layer_id));
  return *it;
}

std::uint64_t GenerationLedger::total() const noexcept {
  std::uint64_t t = 0;
  for (const auto& s : segments_) t += s.count;
  return t;
}

std::int64_t GenerationLedger::end_position() const noexcept {
  return segments_.empty() ? origin_ : segments_.back().end_position();
}

void GenerationLedger::clear(std::int64_t origin) {
  segments_.clear();
  origin_ = origin;
}

std::string GenerationLedger::dump() const {
  std::ostringstream os;
  for (const auto& s : segments_) {
    os << s.layer_id << ',' << s.sample_id << ',' << to_string(s.geometry.kind) << ','
       << s.count << ',';
    if (s.geometry.kind == LayerKind::Conv)
      os << s.geometry.kernel << 'x' << s.geometry.out << 'x' << s.geometry.in;
    else
      os << s.geometry.out << 'x' << s.geometry.in;
    os << '\n';
  }
  return os.str();
}

std::vector<ReplaySlot> reverse_schedule(const GenerationLedger& ledger, std::size_t layer_id) {
  const auto& seg = ledger.segment(layer_id);
  const auto& g = seg.geometry;
  const std::size_t kk = g.kind == LayerKind::Conv ? g.kernel * g.kernel : 1;
  std::vector<ReplaySlot> out;
  out.reserve(seg.count);
  for (std::uint64_t j = 0; j < seg.count; ++j) {
    const auto f = forward_slot(g, seg.count - 1 - j);
    out.push_back({f.position, f.m, f.n, f.k, kk - 1 - f.k});
  }
  return out;
}

std::vector<ReplaySlot> fc_reverse_schedule(const GenerationLedger& ledger, std::size_t layer_id) {
  if (ledger.segment(layer_id).geometry.kind != LayerKind::FC)
    throw Error(ErrorCode::LedgerMismatch, "layer " + std::to_string(layer_id) + " is not FC");
  // FC weights are not flipped: the slot is the original (out, in) address.
  auto slots = reverse_schedule(ledger, layer_id);
  for (auto& s : slots) s.flipped_k = 0;
  return slots;
}

const SegmentRecord& ReplayCursor::begin_layer(std::size_t layer_id) {
  if (active_ != nullptr)
    throw Error(ErrorCode::LedgerMismatch, "previous layer replay not finished");
  if (last_layer_ != static_cast<std::size_t>(-1) && layer_id >= last_layer_)
    throw Error(ErrorCode::LedgerMismatch, "backward replay must visit layers last to first");
  active_ = &ledger_->segment(layer_id);
  last_layer_ = layer_id;
  return *active_;
}

void ReplayCursor::end_layer(std::uint64_t retrieved) {
  if (active_ == nullptr) throw Error(ErrorCode::LedgerMismatch, "no layer replay in progress");
  if (retrieved != active_->count)
    throw Error(ErrorCode::LedgerMismatch,
                "layer " + std::to_string(active_->layer_id) + " retrieved " +
                    std::to_string(retrieved) + " of " + std::to_string(active_->count));
  replayed_ += retrieved;
  active_ = nullptr;
}

bool ReplayCursor::complete() const noexcept {
  return active_ == nullptr && replayed_ == ledger_->total();
}

IntermittentAccumulator::IntermittentAccumulator(std::size_t channels, std::size_t height,
                                                 std::size_t width, std::size_t kernel,
                                                 std::size_t stride, std::size_t pad)
    : channels_(channels),
      height_(height),
      width_(width),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      buffers_(channels * height * width, 0.0) {}

void IntermittentAccumulator::consume(std::size_t n, std::span<const double> rotated_kernel,
                                      std::span<const double> error_map, std::size_t out_h,
                                      std::size_t out_w) {
  const std::size_t plane = height_ * width_;
  accumulate_kernel_data_error(error_map, out_h, out_w, rotated_kernel,
                               ConvGeometry{kernel_, stride_, pad_},
                               {buffers_.data() + n * plane, plane}, height_, width_);
}

std::span<const double> IntermittentAccumulator::channel(std::size_t n) const noexcept {
  const std::size_t plane = height_ * width_;
  return {buffers_.data() + n * plane, plane};
}

}  // namespace shiftbnn
