#include "llic/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "llic/image_io.hpp"

namespace llic {

namespace {

constexpr char kMagic[8] = {'L', 'L', 'I', 'C', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void Checkpoint::put(const std::string& name, const Tensor& value) {
  for (auto& t : tensors) {
    if (t.name == name) {
      t.value = value;
      return;
    }
  }
  tensors.push_back({name, value});
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, ckpt.digest);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, value] : ckpt.tensors) {
    if (name.size() > 0xFFFF) throw FormatError("checkpoint: tensor name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    if (value.rank() > 0xFF) throw FormatError("checkpoint: rank too large");
    out.push_back(static_cast<std::uint8_t>(value.rank()));
    for (std::size_t d : value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  Reader r(bytes.subspan(8));
  const auto version = r.le<std::uint16_t>();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.digest = r.le<std::uint64_t>();
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>();
    std::string name = r.str(len);
    const auto rank = r.le<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("checkpoint: tensor too large");
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    if (ckpt.find(name)) throw FormatError("checkpoint: duplicate tensor " + name);
    ckpt.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor config_to_tensor(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.N), static_cast<double>(c.M), static_cast<double>(c.hyper)};
  for (auto k : c.analysis_kernels) v.push_back(static_cast<double>(k));
  for (auto k : c.synthesis_kernels) v.push_back(static_cast<double>(k));
  v.push_back(static_cast<double>(c.blocks_per_stage));
  v.push_back(static_cast<double>(c.gate_expansion));
  v.push_back(static_cast<double>(c.condition_hidden));
  const auto& s = c.switches;
  for (bool b : {s.static_weights, s.use_ffn_instead_of_gate, s.linear_embedding, s.disable_stb, s.disable_ctb,
                 s.swap_stb_ctb}) {
    v.push_back(b ? 1.0 : 0.0);
  }
  v.push_back(static_cast<double>(c.layout));
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

ModelConfig config_from_tensor(const Tensor& t) {
  constexpr std::size_t kFields = 21;
  if (t.rank() != 1 || t.numel() != kFields) throw FormatError("checkpoint: malformed model config record");
  const auto v = t.data();
  for (double x : v) {
    if (!(x >= 0.0) || x != std::floor(x) || x > 1e9) throw FormatError("checkpoint: malformed model config record");
  }
  auto at = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
  ModelConfig c;
  c.N = at(0);
  c.M = at(1);
  c.hyper = at(2);
  for (std::size_t i = 0; i < 4; ++i) c.analysis_kernels[i] = at(3 + i);
  for (std::size_t i = 0; i < 4; ++i) c.synthesis_kernels[i] = at(7 + i);
  c.blocks_per_stage = at(11);
  c.gate_expansion = at(12);
  c.condition_hidden = at(13);
  c.switches.static_weights = at(14) != 0;
  c.switches.use_ffn_instead_of_gate = at(15) != 0;
  c.switches.linear_embedding = at(16) != 0;
  c.switches.disable_stb = at(17) != 0;
  c.switches.disable_ctb = at(18) != 0;
  c.switches.swap_stb_ctb = at(19) != 0;
  if (at(20) > 2) throw FormatError("checkpoint: unknown block layout");
  c.layout = static_cast<PairLayout>(at(20));
  return c;
}

Checkpoint model_checkpoint(const CompressionModel& model) {
  Checkpoint ckpt;
  ckpt.digest = model.config().digest();
  ckpt.tensors.push_back({kConfigTensorName, config_to_tensor(model.config())});
  for (const auto& p : model.params().params()) ckpt.tensors.push_back({p.name, p.value.detach()});
  return ckpt;
}

void load_model_params(CompressionModel& model, const Checkpoint& ckpt) {
  if (ckpt.digest != model.config().digest()) {
    throw FormatError("checkpoint: config digest " + hex(ckpt.digest) + " does not match model " +
                      hex(model.config().digest()));
  }
  for (auto& p : model.params().params()) {
    const Tensor* t = ckpt.find(p.name);
    if (!t) throw FormatError("checkpoint: missing parameter " + p.name);
    if (t->shape() != p.value.shape()) {
      throw FormatError("checkpoint: parameter " + p.name + " has shape " + shape_str(t->shape()) + ", expected " +
                        shape_str(p.value.shape()));
    }
    std::copy(t->data().begin(), t->data().end(), p.value.data().begin());
  }
}

CompressionModel model_from_checkpoint(const Checkpoint& ckpt) {
  const Tensor* cfg = ckpt.find(kConfigTensorName);
  if (!cfg) throw FormatError("checkpoint: no model config record");
  const ModelConfig config = config_from_tensor(*cfg);
  if (config.digest() != ckpt.digest) throw FormatError("checkpoint: config record does not match digest");
  CompressionModel model(config);
  load_model_params(model, ckpt);
  return model;
}

}  // namespace llic
