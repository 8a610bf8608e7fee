#include "llic/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "llic/image_io.hpp"

namespace llic {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw FormatError("config: bad value '" + value + "' for " + key);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, v);
}

template <std::size_t N, typename F>
auto to_list(const std::string& key, const std::string& v, F convert) {
  std::array<decltype(convert(key, v)), N> out{};
  std::stringstream ss(v);
  std::size_t i = 0;
  for (std::string item; std::getline(ss, item, ',');) {
    if (i == N) bad_value(key, v);
    out[i++] = convert(key, trim(item));
  }
  if (i != N) bad_value(key, v);
  return out;
}

void apply(Settings& s, const std::string& key, const std::string& v) {
  ModelConfig& m = s.model;
  TrainConfig& t = s.train;
  if (key == "preset") {
    // Handled before the other keys.
  } else if (key == "N") {
    m.N = to_size(key, v);
  } else if (key == "M") {
    m.M = to_size(key, v);
  } else if (key == "hyper") {
    m.hyper = to_size(key, v);
  } else if (key == "analysis_kernels") {
    m.analysis_kernels = to_list<4>(key, v, to_size);
  } else if (key == "synthesis_kernels") {
    m.synthesis_kernels = to_list<4>(key, v, to_size);
  } else if (key == "blocks_per_stage") {
    m.blocks_per_stage = to_size(key, v);
  } else if (key == "gate_expansion") {
    m.gate_expansion = to_size(key, v);
  } else if (key == "condition_hidden") {
    m.condition_hidden = to_size(key, v);
  } else if (key == "static_weights") {
    m.switches.static_weights = to_bool(key, v);
  } else if (key == "use_ffn_instead_of_gate") {
    m.switches.use_ffn_instead_of_gate = to_bool(key, v);
  } else if (key == "linear_embedding") {
    m.switches.linear_embedding = to_bool(key, v);
  } else if (key == "disable_stb") {
    m.switches.disable_stb = to_bool(key, v);
  } else if (key == "disable_ctb") {
    m.switches.disable_ctb = to_bool(key, v);
  } else if (key == "swap_stb_ctb") {
    m.switches.swap_stb_ctb = to_bool(key, v);
  } else if (key == "layout") {
    if (v == "spatial_channel") m.layout = PairLayout::spatial_channel;
    else if (v == "spatial_spatial") m.layout = PairLayout::spatial_spatial;
    else if (v == "channel_channel") m.layout = PairLayout::channel_channel;
    else bad_value(key, v);
  } else if (key == "lambda") {
    t.lambda = to_double(key, v);
  } else if (key == "lambda_index") {
    s.lambda_index = to_size(key, v);
    if (s.lambda_index >= kMseLambdas.size()) bad_value(key, v);
    t.lambda = t.distortion == DistortionKind::mse ? kMseLambdas[s.lambda_index] : kMsssimLambdas[s.lambda_index];
  } else if (key == "distortion") {
    if (v == "mse") t.distortion = DistortionKind::mse;
    else if (v == "ms_ssim") t.distortion = DistortionKind::ms_ssim;
    else bad_value(key, v);
  } else if (key == "total_steps") {
    t.total_steps = to_size(key, v);
  } else if (key == "batch_size") {
    t.batch_size = to_size(key, v);
  } else if (key == "lr_values") {
    t.lr_values = to_list<5>(key, v, to_double);
  } else if (key == "milestones") {
    t.milestone_fractions = to_list<4>(key, v, to_double);
  } else if (key == "lr_decay") {
    t.lr_decay = to_bool(key, v);
  } else if (key == "patch_small") {
    t.patch_small = to_size(key, v);
  } else if (key == "patch_large") {
    t.patch_large = to_size(key, v);
  } else if (key == "curriculum_fraction") {
    t.curriculum_fraction = to_double(key, v);
  } else if (key == "seed") {
    t.seed = to_u64(key, v);
  } else {
    throw FormatError("config: unknown key '" + key + "'");
  }
}

template <typename T>
std::string join(const T& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
  return os.str();
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_key_values(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Settings resolve_settings(const KeyValues& file, const KeyValues& overrides) {
  Settings s;
  std::string preset = "full";
  for (const auto* kv : {&file, &overrides}) {
    for (const auto& [k, v] : *kv) {
      if (k == "preset") preset = v;
    }
  }
  if (preset == "desk") s.model = ModelConfig::desk_scale();
  else if (preset != "full") bad_value("preset", preset);
  s.train.lambda = kMseLambdas[s.lambda_index];

  // distortion decides which ladder lambda_index indexes, so it goes first.
  for (const auto* kv : {&file, &overrides}) {
    for (const auto& [k, v] : *kv) {
      if (k == "distortion") apply(s, k, v);
    }
  }
  for (const auto* kv : {&file, &overrides}) {
    for (const auto& [k, v] : *kv) apply(s, k, v);
  }
  s.model.validate();
  s.train.validate();
  return s;
}

std::string format_settings(const Settings& s) {
  const ModelConfig& m = s.model;
  const TrainConfig& t = s.train;
  static const char* layouts[] = {"spatial_channel", "spatial_spatial", "channel_channel"};
  char lambda[32];
  std::snprintf(lambda, sizeof lambda, "%.17g", t.lambda);
  std::ostringstream os;
  os << "N = " << m.N << "\nM = " << m.M << "\nhyper = " << m.hyper << "\nanalysis_kernels = "
     << join(m.analysis_kernels) << "\nsynthesis_kernels = " << join(m.synthesis_kernels)
     << "\nblocks_per_stage = " << m.blocks_per_stage << "\ngate_expansion = " << m.gate_expansion
     << "\ncondition_hidden = " << m.condition_hidden << "\nstatic_weights = " << m.switches.static_weights
     << "\nuse_ffn_instead_of_gate = " << m.switches.use_ffn_instead_of_gate
     << "\nlinear_embedding = " << m.switches.linear_embedding << "\ndisable_stb = " << m.switches.disable_stb
     << "\ndisable_ctb = " << m.switches.disable_ctb << "\nswap_stb_ctb = " << m.switches.swap_stb_ctb
     << "\nlayout = " << layouts[static_cast<int>(m.layout)] << "\nlambda = " << lambda
     << "\ndistortion = " << (t.distortion == DistortionKind::mse ? "mse" : "ms_ssim")
     << "\ntotal_steps = " << t.total_steps << "\nbatch_size = " << t.batch_size
     << "\nlr_values = " << join(t.lr_values) << "\nmilestones = " << join(t.milestone_fractions)
     << "\nlr_decay = " << t.lr_decay << "\npatch_small = " << t.patch_small << "\npatch_large = " << t.patch_large
     << "\ncurriculum_fraction = " << t.curriculum_fraction << "\nseed = " << t.seed << "\n";
  return os.str();
}

}  // namespace llic
