#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "tape/numcore/error.hpp"

namespace tape::model {

enum class PhiMode { Identity, Bilinear };
enum class PeInit { Rope, Fourier };
enum class MlpParam { Shared, Full };
// Outer: E' = E + U(E~). Inner: E' = E~ + U(E~).
enum class EResidual { Outer, Inner };
// Token-mixing logits are sum_m alpha_m, each block scaled by 1/sqrt(B).
// Head: the sum is further scaled by 1/sqrt(M), i.e. 1/sqrt(head dim) overall.
// Block: the sum is used as is.
enum class MixScale { Head, Block };
// Deliberately broken variants used to show the symmetry checks are not vacuous.
enum class Mutation { None, FlattenedPe, RAxisMlp };

struct ModelConfig {
  std::size_t N = 64;      // max context
  std::size_t C = 128;     // hidden width
  std::size_t H = 2;       // heads
  std::size_t M = 32;      // blocks per head
  std::size_t L = 2;       // vectors per block
  std::size_t R = 2;       // rotation dim
  std::size_t I = 0;       // position-MLP width; 0 means 4 * H
  std::size_t depth = 3;
  std::size_t vocab = 15;
  std::size_t ffn_mult = 4;
  PhiMode phi = PhiMode::Identity;
  PeInit pe = PeInit::Rope;
  double rope_base = 10000.0;
  double theta_sign = 1.0;
  double fourier_freq_std = 1.0;
  bool attn_path = true;
  bool mlp_path = true;
  MlpParam mlp_param = MlpParam::Shared;
  EResidual e_residual = EResidual::Outer;
  MixScale mix_scale = MixScale::Head;
  bool w2_zero_init = false;
  double init_std = 0.02;
  Mutation mutation = Mutation::None;

  std::size_t B() const { return C / (H * M); }
  std::size_t head_dim() const { return C / H; }
  std::size_t width() const { return I ? I : 4 * H; }
  bool contextualized() const { return attn_path || mlp_path; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(N && C && H && M && L && R && vocab && ffn_mult, "model extents must be >= 1");
    need(C % (H * M) == 0, "C = " + std::to_string(C) + " is not divisible by H*M = " + std::to_string(H * M));
    need(phi != PhiMode::Identity || B() == L,
         "identity phi needs B == L, got B = " + std::to_string(B()) + ", L = " + std::to_string(L));
    need(pe != PeInit::Rope || (L == 2 && R == 2), "rope init needs L = R = 2");
    need(pe != PeInit::Fourier || R % 2 == 0, "fourier init needs even R");
    need(theta_sign == 1.0 || theta_sign == -1.0, "theta_sign must be +1 or -1");
    need(rope_base > 1.0, "rope_base must be > 1");
    need(init_std > 0.0, "init_std must be > 0");
  }
};

inline const char* to_string(PhiMode v) { return v == PhiMode::Identity ? "identity" : "bilinear"; }
inline const char* to_string(PeInit v) { return v == PeInit::Rope ? "rope" : "fourier"; }
inline const char* to_string(MlpParam v) { return v == MlpParam::Shared ? "shared" : "full"; }
inline const char* to_string(EResidual v) { return v == EResidual::Outer ? "outer" : "inner"; }
inline const char* to_string(MixScale v) { return v == MixScale::Head ? "head" : "block"; }
inline const char* to_string(Mutation v) {
  switch (v) {
    case Mutation::None: return "none";
    case Mutation::FlattenedPe: return "flattened_pe";
    case Mutation::RAxisMlp: return "r_axis_mlp";
  }
  return "none";
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<E> options) {
  for (E e : options)
    if (v == to_string(e)) return e;
  throw ConfigError("bad value '" + v + "' for key " + key);
}

}  // namespace detail

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer '" + v + "' for key " + key);
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer '" + v + "' for key " + key);
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("bad number '" + v + "' for key " + key);
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + v + "' for key " + key);
}

/// Flat key=value view of a config, keys prefixed by "model.".
inline std::map<std::string, std::string> to_kv(const ModelConfig& c) {
  using detail::fmt_double;
  return {
      {"model.N", std::to_string(c.N)},
      {"model.C", std::to_string(c.C)},
      {"model.H", std::to_string(c.H)},
      {"model.M", std::to_string(c.M)},
      {"model.L", std::to_string(c.L)},
      {"model.R", std::to_string(c.R)},
      {"model.I", std::to_string(c.I)},
      {"model.depth", std::to_string(c.depth)},
      {"model.vocab", std::to_string(c.vocab)},
      {"model.ffn_mult", std::to_string(c.ffn_mult)},
      {"model.phi", to_string(c.phi)},
      {"model.pe", to_string(c.pe)},
      {"model.rope_base", fmt_double(c.rope_base)},
      {"model.theta_sign", fmt_double(c.theta_sign)},
      {"model.fourier_freq_std", fmt_double(c.fourier_freq_std)},
      {"model.attn_path", c.attn_path ? "true" : "false"},
      {"model.mlp_path", c.mlp_path ? "true" : "false"},
      {"model.mlp_param", to_string(c.mlp_param)},
      {"model.e_residual", to_string(c.e_residual)},
      {"model.mix_scale", to_string(c.mix_scale)},
      {"model.w2_zero_init", c.w2_zero_init ? "true" : "false"},
      {"model.init_std", fmt_double(c.init_std)},
      {"model.mutation", to_string(c.mutation)},
  };
}

/// Applies one "model.*" key. Returns false if the key is not a model key.
inline bool apply_kv(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key.rfind("model.", 0) != 0) return false;
  const std::string k = key.substr(6);
  if (k == "N") c.N = parse_size(key, v);
  else if (k == "C") c.C = parse_size(key, v);
  else if (k == "H") c.H = parse_size(key, v);
  else if (k == "M") c.M = parse_size(key, v);
  else if (k == "L") c.L = parse_size(key, v);
  else if (k == "R") c.R = parse_size(key, v);
  else if (k == "I") c.I = parse_size(key, v);
  else if (k == "depth") c.depth = parse_size(key, v);
  else if (k == "vocab") c.vocab = parse_size(key, v);
  else if (k == "ffn_mult") c.ffn_mult = parse_size(key, v);
  else if (k == "phi") c.phi = detail::parse_enum(key, v, {PhiMode::Identity, PhiMode::Bilinear});
  else if (k == "pe") c.pe = detail::parse_enum(key, v, {PeInit::Rope, PeInit::Fourier});
  else if (k == "rope_base") c.rope_base = parse_double(key, v);
  else if (k == "theta_sign") c.theta_sign = parse_double(key, v);
  else if (k == "fourier_freq_std") c.fourier_freq_std = parse_double(key, v);
  else if (k == "attn_path") c.attn_path = parse_bool(key, v);
  else if (k == "mlp_path") c.mlp_path = parse_bool(key, v);
  else if (k == "mlp_param") c.mlp_param = detail::parse_enum(key, v, {MlpParam::Shared, MlpParam::Full});
  else if (k == "e_residual") c.e_residual = detail::parse_enum(key, v, {EResidual::Outer, EResidual::Inner});
  else if (k == "mix_scale") c.mix_scale = detail::parse_enum(key, v, {MixScale::Head, MixScale::Block});
  else if (k == "w2_zero_init") c.w2_zero_init = parse_bool(key, v);
  else if (k == "init_std") c.init_std = parse_double(key, v);
  else if (k == "mutation")
    c.mutation = detail::parse_enum(key, v, {Mutation::None, Mutation::FlattenedPe, Mutation::RAxisMlp});
  else throw ConfigError("unknown key: " + key);
  return true;
}

inline std::string serialize_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// Parses "key=value" lines; '#' starts a comment line, blank lines are skipped.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv)
    if (!apply_kv(c, k, v)) throw ConfigError("unknown key: " + k);
  c.validate();
  return c;
}

}  // namespace tape::model
