#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

inline constexpr unsigned kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;
inline constexpr std::size_t kScaleCount = 64;

/// 64 scales log-spaced over [0.11, 256]; both endpoints exact.
const std::array<double, kScaleCount>& scale_table();
/// Index of the smallest table scale >= sigma (clamped to the table ends).
std::size_t scale_index(double sigma);

/// Quantized CDF over symbols [-bound, bound] plus a trailing escape slot.
struct CdfTable {
  std::int64_t bound = 0;
  std::vector<std::uint32_t> cdf;  // 2*bound + 3 entries, cdf[0] = 0, back() = 65536

  std::size_t slots() const { return cdf.size() - 1; }
  std::size_t escape_slot() const { return slots() - 1; }
  std::uint32_t freq(std::size_t slot) const { return cdf[slot + 1] - cdf[slot]; }
  /// Probability of an in-range symbol as coded (0 outside the alphabet).
  double pmf(std::int64_t symbol) const;
  /// Bits the coder spends on `symbol`, escape path included.
  double cost_bits(std::int64_t symbol) const;
};

/// Table for symbols s whose continuous value is s - offset with offset in
/// [-1/2, 1/2], distributed N(0, scale) integrated over unit bins.
CdfTable build_cdf(double scale, double offset = 0.0);
/// Tables for every entry of scale_table(), in order.
const std::vector<CdfTable>& gaussian_tables();

/// Byte-oriented range coder (32-bit state, carry-less renormalization).
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq);
  /// 16 raw bits at probability 2^-16 each.
  void encode_raw16(std::uint32_t value);
  std::vector<std::uint8_t> finish();

 private:
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  /// Cumulative-frequency target for the next symbol.
  std::uint32_t target();
  void consume(std::uint32_t cum, std::uint32_t freq);
  std::uint32_t decode_raw16();
  /// Throws FormatError unless every byte was read.
  void finish() const;

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

void encode_symbol(RangeEncoder& enc, const CdfTable& table, std::int64_t symbol);
std::int64_t decode_symbol(RangeDecoder& dec, const CdfTable& table);

std::vector<std::uint8_t> range_encode(std::span<const std::int64_t> symbols,
                                       std::span<const CdfTable* const> tables);
std::vector<std::int64_t> range_decode(std::span<const std::uint8_t> bytes,
                                       std::span<const CdfTable* const> tables, std::size_t count);

}  // namespace llic
