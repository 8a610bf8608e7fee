#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "llic/model.hpp"

namespace llic {

inline constexpr std::uint8_t kBitstreamVersion = 1;
/// magic(4) version(1) lambda(1) orig_h orig_w padded_h padded_w z_len y_len (u32 each)
inline constexpr std::size_t kHeaderBytes = 30;

struct BitstreamHeader {
  std::uint8_t version = kBitstreamVersion;
  std::uint8_t lambda_index = 0;
  std::uint32_t orig_h = 0, orig_w = 0;
  std::uint32_t padded_h = 0, padded_w = 0;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> z_payload;
  std::vector<std::uint8_t> y_payload;

  std::size_t total_bytes() const { return kHeaderBytes + z_payload.size() + y_payload.size(); }
  /// Total coded bits over original pixels.
  double bpp() const;

  std::vector<std::uint8_t> serialize() const;
  /// Checks magic, version, lengths and dimension consistency.
  static Bitstream parse(std::span<const std::uint8_t> bytes);
};

struct EncodeResult {
  Bitstream stream;
  Tensor y_hat;  // (1, M, h/16, w/16) as the decoder will rebuild it
  Tensor z_hat;
  double estimated_bits = 0.0;  // eval-mode rate estimate of the same latents
};

/// x: (3, h, w) or (1, 3, h, w) in [0, 1].
EncodeResult encode_image(const CompressionModel& model, const Tensor& x, std::uint8_t lambda_index = 0);

struct DecodeResult {
  Tensor x_hat;  // (1, 3, orig_h, orig_w)
  Tensor y_hat;
};

DecodeResult decode_image(const CompressionModel& model, const Bitstream& stream);

}  // namespace llic
