#include "llic/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "llic/model.hpp"

namespace llic {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::uint32_t kBot = 1u << 16;
constexpr unsigned kChunkBits = 15;
constexpr std::uint32_t kChunkMask = (1u << kChunkBits) - 1;
constexpr int kMaxChunks = 5;

// z such that each Gaussian tail beyond z standard deviations holds 2^-17.
double tail_z() {
  static const double z = [] {
    const double target = std::ldexp(1.0, -17);
    double lo = 0.0, hi = 10.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (normal_cdf(-mid) > target ? lo : hi) = mid;
    }
    return hi;
  }();
  return z;
}

std::uint64_t escape_magnitude(const CdfTable& t, std::int64_t symbol) {
  const std::uint64_t a = symbol < 0 ? 0 - static_cast<std::uint64_t>(symbol) : static_cast<std::uint64_t>(symbol);
  return a - static_cast<std::uint64_t>(t.bound) - 1;
}

int chunk_count(std::uint64_t m) {
  int n = 1;
  while (m >>= kChunkBits) ++n;
  return n;
}

}  // namespace

const std::array<double, kScaleCount>& scale_table() {
  static const std::array<double, kScaleCount> table = [] {
    std::array<double, kScaleCount> t{};
    const double lo = std::log(kSigmaMin), hi = std::log(kSigmaMax);
    for (std::size_t i = 0; i < kScaleCount; ++i) {
      t[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kScaleCount - 1));
    }
    t.front() = kSigmaMin;
    t.back() = kSigmaMax;
    return t;
  }();
  return table;
}

std::size_t scale_index(double sigma) {
  const auto& t = scale_table();
  auto it = std::lower_bound(t.begin(), t.end(), sigma);
  if (it == t.end()) return kScaleCount - 1;
  return static_cast<std::size_t>(it - t.begin());
}

double CdfTable::pmf(std::int64_t symbol) const {
  if (symbol < -bound || symbol > bound) return 0.0;
  return static_cast<double>(freq(static_cast<std::size_t>(symbol + bound))) / kCdfTotal;
}

double CdfTable::cost_bits(std::int64_t symbol) const {
  if (symbol >= -bound && symbol <= bound) return -std::log2(pmf(symbol));
  const double escape = -std::log2(static_cast<double>(freq(escape_slot())) / kCdfTotal);
  return escape + 1.0 + 16.0 * chunk_count(escape_magnitude(*this, symbol));
}

CdfTable build_cdf(double scale, double offset) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("build_cdf: scale must be positive");
  if (!(std::fabs(offset) <= 0.5)) throw DomainError("build_cdf: offset outside [-1/2, 1/2]");
  CdfTable t;
  t.bound = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(tail_z() * scale + std::fabs(offset) - 0.5)));
  const std::size_t slots = static_cast<std::size_t>(2 * t.bound + 2);

  std::vector<double> target(slots);
  double in_range = 0.0;
  for (std::size_t i = 0; i + 1 < slots; ++i) {
    const double k = static_cast<double>(static_cast<std::int64_t>(i) - t.bound);
    target[i] = gaussian_mass(k - offset, scale) * kCdfTotal;
    in_range += target[i];
  }
  target.back() = std::max(0.0, kCdfTotal - in_range);

  std::vector<std::int64_t> freq(slots);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < slots; ++i) {
    freq[i] = std::max<std::int64_t>(1, std::llround(target[i]));
    total += freq[i];
  }

  // Fix the total one quantum at a time, preferring slots whose rounding
  // went the other way so every slot stays within one quantum of its target.
  std::vector<bool> touched(slots, false);
  while (total != kCdfTotal) {
    const bool shrink = total > kCdfTotal;
    std::size_t best = slots;
    double best_err = 0.0;
    for (std::size_t i = 0; i < slots; ++i) {
      if (touched[i] || (shrink && freq[i] <= 1)) continue;
      const double err = static_cast<double>(freq[i]) - target[i];
      const double gain = shrink ? err : -err;
      if (gain > best_err) {
        best_err = gain;
        best = i;
      }
    }
    if (best == slots) {
      // No slot left that stays within tolerance; take the largest one.
      best = static_cast<std::size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
    }
    touched[best] = true;
    freq[best] += shrink ? -1 : 1;
    total += shrink ? -1 : 1;
  }

  t.cdf.assign(slots + 1, 0);
  for (std::size_t i = 0; i < slots; ++i) t.cdf[i + 1] = t.cdf[i] + static_cast<std::uint32_t>(freq[i]);
  return t;
}

const std::vector<CdfTable>& gaussian_tables() {
  static const std::vector<CdfTable> tables = [] {
    std::vector<CdfTable> out;
    out.reserve(kScaleCount);
    for (double s : scale_table()) out.push_back(build_cdf(s));
    return out;
  }();
  return tables;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq) {
  range_ >>= kCdfPrecisionBits;
  low_ += cum * range_;
  range_ *= freq;
  while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

void RangeEncoder::encode_raw16(std::uint32_t value) { encode(value & 0xFFFFu, 1); }

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 4; ++i) {
    out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
    low_ <<= 8;
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) throw FormatError("range decoder: payload truncated");
  return bytes_[pos_++];
}

std::uint32_t RangeDecoder::target() {
  range_ >>= kCdfPrecisionBits;
  if (range_ == 0) throw FormatError("range decoder: corrupt state");
  const std::uint32_t v = (code_ - low_) / range_;
  if (v >= kCdfTotal) throw FormatError("range decoder: corrupt payload");
  return v;
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq) {
  low_ += cum * range_;
  range_ *= freq;
  while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode_raw16() {
  const std::uint32_t v = target();
  consume(v, 1);
  return v;
}

void RangeDecoder::finish() const {
  if (pos_ != bytes_.size()) {
    throw FormatError("range decoder: " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }
}

void encode_symbol(RangeEncoder& enc, const CdfTable& table, std::int64_t symbol) {
  if (symbol >= -table.bound && symbol <= table.bound) {
    const auto slot = static_cast<std::size_t>(symbol + table.bound);
    enc.encode(table.cdf[slot], table.freq(slot));
    return;
  }
  const std::size_t esc = table.escape_slot();
  enc.encode(table.cdf[esc], table.freq(esc));
  enc.encode(symbol < 0 ? kCdfTotal / 2 : 0, kCdfTotal / 2);
  std::uint64_t m = escape_magnitude(table, symbol);
  if (chunk_count(m) > kMaxChunks) throw DomainError("range coder: symbol magnitude too large");
  do {
    std::uint32_t chunk = static_cast<std::uint32_t>(m & kChunkMask);
    m >>= kChunkBits;
    if (m != 0) chunk |= 1u << kChunkBits;
    enc.encode_raw16(chunk);
  } while (m != 0);
}

std::int64_t decode_symbol(RangeDecoder& dec, const CdfTable& table) {
  const std::uint32_t v = dec.target();
  const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), v);
  const auto slot = static_cast<std::size_t>(it - table.cdf.begin()) - 1;
  dec.consume(table.cdf[slot], table.freq(slot));
  if (slot != table.escape_slot()) return static_cast<std::int64_t>(slot) - table.bound;

  const std::uint32_t half = kCdfTotal / 2;
  const bool negative = dec.target() >= half;
  dec.consume(negative ? half : 0, half);
  std::uint64_t m = 0;
  for (int i = 0;; ++i) {
    if (i == kMaxChunks) throw FormatError("range decoder: escape magnitude overflow");
    const std::uint32_t chunk = dec.decode_raw16();
    m |= static_cast<std::uint64_t>(chunk & kChunkMask) << (kChunkBits * i);
    if (!(chunk >> kChunkBits)) break;
  }
  const std::int64_t a = static_cast<std::int64_t>(m) + table.bound + 1;
  return negative ? -a : a;
}

std::vector<std::uint8_t> range_encode(std::span<const std::int64_t> symbols,
                                       std::span<const CdfTable* const> tables) {
  if (symbols.size() != tables.size()) throw std::invalid_argument("range_encode: one table per symbol required");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) encode_symbol(enc, *tables[i], symbols[i]);
  return enc.finish();
}

std::vector<std::int64_t> range_decode(std::span<const std::uint8_t> bytes,
                                       std::span<const CdfTable* const> tables, std::size_t count) {
  if (tables.size() != count) throw std::invalid_argument("range_decode: one table per symbol required");
  RangeDecoder dec(bytes);
  std::vector<std::int64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = decode_symbol(dec, *tables[i]);
  dec.finish();
  return out;
}

}  // namespace llic
