#include "llic/codec.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "llic/entropy.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"

namespace llic {

namespace {

constexpr char kMagic[4] = {'L', 'L', 'I', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | in[at + i];
  return v;
}

std::int64_t to_symbol(double v) {
  if (!std::isfinite(v) || std::fabs(v) > 1e15) throw NumericError("codec: latent value out of range");
  return static_cast<std::int64_t>(v);
}

struct ZTables {
  std::vector<CdfTable> per_channel;
  std::vector<double> offset;  // round(loc) per channel
};

ZTables z_tables(const FactorizedPrior& prior) {
  ZTables t;
  const std::size_t c = prior.loc().numel();
  for (std::size_t i = 0; i < c; ++i) {
    const double loc = prior.loc().data()[i];
    const double centre = std::round(loc);
    t.per_channel.push_back(build_cdf(prior.scale(i), loc - centre));
    t.offset.push_back(centre);
  }
  return t;
}

Shape z_shape(const CompressionModel& model, std::size_t padded_h, std::size_t padded_w) {
  const auto spec = ConvSpec::down(model.config().hyper, model.config().hyper, 5);
  const std::size_t zh = spec.output_extent(spec.output_extent(padded_h / 16));
  const std::size_t zw = spec.output_extent(spec.output_extent(padded_w / 16));
  return {1, model.config().hyper, zh, zw};
}

std::vector<const CdfTable*> z_table_refs(const ZTables& t, const Shape& shape) {
  const std::size_t plane = shape[2] * shape[3];
  std::vector<const CdfTable*> refs(shape_numel(shape));
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = &t.per_channel[i / plane];
  return refs;
}

std::vector<const CdfTable*> y_table_refs(const Tensor& sigma) {
  const auto& tables = gaussian_tables();
  std::vector<const CdfTable*> refs(sigma.numel());
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = &tables[scale_index(sigma.data()[i])];
  return refs;
}

}  // namespace

double Bitstream::bpp() const {
  return 8.0 * static_cast<double>(total_bytes()) / (static_cast<double>(header.orig_h) * header.orig_w);
}

std::vector<std::uint8_t> Bitstream::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(header.version);
  out.push_back(header.lambda_index);
  put_u32(out, header.orig_h);
  put_u32(out, header.orig_w);
  put_u32(out, header.padded_h);
  put_u32(out, header.padded_w);
  put_u32(out, static_cast<std::uint32_t>(z_payload.size()));
  put_u32(out, static_cast<std::uint32_t>(y_payload.size()));
  out.insert(out.end(), z_payload.begin(), z_payload.end());
  out.insert(out.end(), y_payload.begin(), y_payload.end());
  return out;
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("bitstream: shorter than the header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bitstream: bad magic");
  Bitstream s;
  s.header.version = bytes[4];
  if (s.header.version != kBitstreamVersion) {
    throw FormatError("bitstream: unsupported version " + std::to_string(s.header.version));
  }
  s.header.lambda_index = bytes[5];
  s.header.orig_h = get_u32(bytes, 6);
  s.header.orig_w = get_u32(bytes, 10);
  s.header.padded_h = get_u32(bytes, 14);
  s.header.padded_w = get_u32(bytes, 18);
  const std::uint64_t z_len = get_u32(bytes, 22), y_len = get_u32(bytes, 26);
  if (kHeaderBytes + z_len + y_len != bytes.size()) throw FormatError("bitstream: length fields disagree with size");
  const auto& h = s.header;
  if (h.orig_h == 0 || h.orig_w == 0 || h.padded_h != padded_extent(h.orig_h) ||
      h.padded_w != padded_extent(h.orig_w)) {
    throw FormatError("bitstream: inconsistent image dimensions");
  }
  const auto z_begin = bytes.begin() + kHeaderBytes;
  s.z_payload.assign(z_begin, z_begin + static_cast<std::ptrdiff_t>(z_len));
  s.y_payload.assign(z_begin + static_cast<std::ptrdiff_t>(z_len), bytes.end());
  return s;
}

EncodeResult encode_image(const CompressionModel& model, const Tensor& x, std::uint8_t lambda_index) {
  NoGradGuard no_grad;
  Tensor img = x.rank() == 3 ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 3) {
    throw ShapeError("encode_image: expected (3, h, w), got " + shape_str(x.shape()));
  }
  const std::size_t h = img.dim(2), w = img.dim(3);
  if (h > std::numeric_limits<std::uint32_t>::max() - 16 || w > std::numeric_limits<std::uint32_t>::max() - 16) {
    throw ShapeError("encode_image: image too large");
  }
  const std::size_t ph = padded_extent(h), pw = padded_extent(w);

  EncodeResult r;
  auto& hdr = r.stream.header;
  hdr.lambda_index = lambda_index;
  hdr.orig_h = static_cast<std::uint32_t>(h);
  hdr.orig_w = static_cast<std::uint32_t>(w);
  hdr.padded_h = static_cast<std::uint32_t>(ph);
  hdr.padded_w = static_cast<std::uint32_t>(pw);

  const Tensor y = model.analysis(pad_replicate(img, ph, pw));
  const Tensor z = model.hyper_analysis(y);
  r.z_hat = quantize(z, {}, QuantMode::round);

  const ZTables zt = z_tables(model.prior());
  const std::size_t plane_z = z.dim(2) * z.dim(3);
  std::vector<std::int64_t> z_symbols(z.numel());
  for (std::size_t i = 0; i < z_symbols.size(); ++i) {
    z_symbols[i] = to_symbol(r.z_hat.data()[i] - zt.offset[i / plane_z]);
  }
  const auto z_refs = z_table_refs(zt, z.shape());
  r.stream.z_payload = range_encode(z_symbols, z_refs);

  const GaussianParams g = model.hyper_synthesis(r.z_hat, y.dim(2), y.dim(3));
  std::vector<std::int64_t> y_symbols(y.numel());
  r.y_hat = Tensor(y.shape());
  for (std::size_t i = 0; i < y_symbols.size(); ++i) {
    const double mu = g.mu.data()[i];
    const double q = std::round(y.data()[i] - mu);
    y_symbols[i] = to_symbol(q);
    r.y_hat.data()[i] = q + mu;
  }
  const auto y_refs = y_table_refs(g.sigma);
  r.stream.y_payload = range_encode(y_symbols, y_refs);

  double bits = 0.0;
  for (std::size_t i = 0; i < z_symbols.size(); ++i) {
    bits -= std::log2(std::max(kLikelihoodFloor, gaussian_mass(static_cast<double>(z_symbols[i]) -
                                                                   (model.prior().loc().data()[i / plane_z] -
                                                                    zt.offset[i / plane_z]),
                                                               model.prior().scale(i / plane_z))));
  }
  const auto& scales = scale_table();
  for (std::size_t i = 0; i < y_symbols.size(); ++i) {
    bits -= std::log2(std::max(kLikelihoodFloor, gaussian_mass(static_cast<double>(y_symbols[i]),
                                                               scales[scale_index(g.sigma.data()[i])])));
  }
  r.estimated_bits = bits;
  return r;
}

DecodeResult decode_image(const CompressionModel& model, const Bitstream& stream) {
  NoGradGuard no_grad;
  const auto& hdr = stream.header;
  if (hdr.version != kBitstreamVersion) throw FormatError("decode_image: unsupported bitstream version");
  if (hdr.orig_h == 0 || hdr.orig_w == 0 || hdr.padded_h != padded_extent(hdr.orig_h) ||
      hdr.padded_w != padded_extent(hdr.orig_w)) {
    throw FormatError("decode_image: inconsistent image dimensions");
  }
  const Shape zs = z_shape(model, hdr.padded_h, hdr.padded_w);
  const ZTables zt = z_tables(model.prior());
  const auto z_refs = z_table_refs(zt, zs);
  const auto z_symbols = range_decode(stream.z_payload, z_refs, z_refs.size());
  Tensor z_hat(zs);
  const std::size_t plane_z = zs[2] * zs[3];
  for (std::size_t i = 0; i < z_symbols.size(); ++i) {
    z_hat.data()[i] = static_cast<double>(z_symbols[i]) + zt.offset[i / plane_z];
  }

  const std::size_t lh = hdr.padded_h / 16, lw = hdr.padded_w / 16;
  const GaussianParams g = model.hyper_synthesis(z_hat, lh, lw);
  const auto y_refs = y_table_refs(g.sigma);
  const auto y_symbols = range_decode(stream.y_payload, y_refs, y_refs.size());
  DecodeResult r;
  r.y_hat = Tensor(g.mu.shape());
  for (std::size_t i = 0; i < y_symbols.size(); ++i) {
    r.y_hat.data()[i] = static_cast<double>(y_symbols[i]) + g.mu.data()[i];
  }
  r.x_hat = crop(clamp(model.synthesis(r.y_hat), 0.0, 1.0), hdr.orig_h, hdr.orig_w);
  return r;
}

}  // namespace llic
