#include "wal/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wal {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ValidationError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                        std::string(expected));
}

int to_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (used != s.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  bad_value(key, v, "on/off");
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class Parse>
auto parse_enum(std::string_view key, std::string_view v, Parse parse) {
  try {
    return parse(v);
  } catch (const ValidationError& e) {
    throw ValidationError("config key '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "n_train",        "n_test",        "d",           "concept_count", "frac_clean",    "frac_loose",
      "frac_noise",     "concepts_per_pair", "feature_noise_sigma", "frame_len_min", "frame_len_max",
      "corpus_seed",    "lr",            "momentum",    "weight_decay",  "batch_size",    "n_f",
      "freeze_epochs",  "joint_epochs",  "lr_drop_factor", "attention_kind", "sampler_kind", "input_mode",
      "bvf_count",      "tau",           "loss_kind",   "triplet_margin", "discriminator", "d_emb",
      "seed"};
  return keys;
}

void set_config_value(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view v = trim(raw);
  auto& cs = c.corpus;
  auto& t = c.train;
  if (key == "n_train") cs.n_train = to_int(key, v);
  else if (key == "n_test") cs.n_test = to_int(key, v);
  else if (key == "d") cs.d = to_int(key, v);
  else if (key == "concept_count") cs.concept_count = to_int(key, v);
  else if (key == "frac_clean") cs.frac_clean = to_double(key, v);
  else if (key == "frac_loose") cs.frac_loose = to_double(key, v);
  else if (key == "frac_noise") cs.frac_noise = to_double(key, v);
  else if (key == "concepts_per_pair") cs.concepts_per_pair = to_int(key, v);
  else if (key == "feature_noise_sigma") cs.feature_noise_sigma = to_double(key, v);
  else if (key == "frame_len_min") cs.frame_len_min = to_int(key, v);
  else if (key == "frame_len_max") cs.frame_len_max = to_int(key, v);
  else if (key == "corpus_seed") cs.seed = to_u64(key, v);
  else if (key == "lr") t.lr = to_double(key, v);
  else if (key == "momentum") t.momentum = to_double(key, v);
  else if (key == "weight_decay") t.weight_decay = to_double(key, v);
  else if (key == "batch_size") t.batch_size = to_int(key, v);
  else if (key == "n_f") t.n_f = to_int(key, v);
  else if (key == "freeze_epochs") t.freeze_epochs = to_int(key, v);
  else if (key == "joint_epochs") t.joint_epochs = to_int(key, v);
  else if (key == "lr_drop_factor") t.lr_drop_factor = to_double(key, v);
  else if (key == "attention_kind") t.attention_kind = parse_enum(key, v, parse_attention_kind);
  else if (key == "sampler_kind") t.sampler_kind = parse_enum(key, v, parse_sampler_kind);
  else if (key == "input_mode") t.input_mode = parse_enum(key, v, parse_input_mode);
  else if (key == "bvf_count") t.bvf_count = to_int(key, v);
  else if (key == "tau") t.tau = to_double(key, v);
  else if (key == "loss_kind") t.loss_kind = parse_enum(key, v, parse_loss_kind);
  else if (key == "triplet_margin") t.triplet_margin = to_double(key, v);
  else if (key == "discriminator") t.discriminator = to_bool(key, v);
  else if (key == "d_emb") t.d_emb = to_int(key, v);
  else if (key == "seed") t.seed = to_u64(key, v);
  else throw ValidationError("unknown config key '" + std::string(key) + "'");
}

std::string get_config_value(const RunConfig& c, std::string_view key) {
  const auto& cs = c.corpus;
  const auto& t = c.train;
  if (key == "n_train") return std::to_string(cs.n_train);
  if (key == "n_test") return std::to_string(cs.n_test);
  if (key == "d") return std::to_string(cs.d);
  if (key == "concept_count") return std::to_string(cs.concept_count);
  if (key == "frac_clean") return fmt_double(cs.frac_clean);
  if (key == "frac_loose") return fmt_double(cs.frac_loose);
  if (key == "frac_noise") return fmt_double(cs.frac_noise);
  if (key == "concepts_per_pair") return std::to_string(cs.concepts_per_pair);
  if (key == "feature_noise_sigma") return fmt_double(cs.feature_noise_sigma);
  if (key == "frame_len_min") return std::to_string(cs.frame_len_min);
  if (key == "frame_len_max") return std::to_string(cs.frame_len_max);
  if (key == "corpus_seed") return std::to_string(cs.seed);
  if (key == "lr") return fmt_double(t.lr);
  if (key == "momentum") return fmt_double(t.momentum);
  if (key == "weight_decay") return fmt_double(t.weight_decay);
  if (key == "batch_size") return std::to_string(t.batch_size);
  if (key == "n_f") return std::to_string(t.n_f);
  if (key == "freeze_epochs") return std::to_string(t.freeze_epochs);
  if (key == "joint_epochs") return std::to_string(t.joint_epochs);
  if (key == "lr_drop_factor") return fmt_double(t.lr_drop_factor);
  if (key == "attention_kind") return std::string(to_string(t.attention_kind));
  if (key == "sampler_kind") return std::string(to_string(t.sampler_kind));
  if (key == "input_mode") return std::string(to_string(t.input_mode));
  if (key == "bvf_count") return std::to_string(t.bvf_count);
  if (key == "tau") return fmt_double(t.tau);
  if (key == "loss_kind") return std::string(to_string(t.loss_kind));
  if (key == "triplet_margin") return fmt_double(t.triplet_margin);
  if (key == "discriminator") return t.discriminator ? "on" : "off";
  if (key == "d_emb") return std::to_string(t.d_emb);
  if (key == "seed") return std::to_string(t.seed);
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string_view key = trim(l.substr(0, eq));
    try {
      set_config_value(base, key, l.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(config, key) + "\n";
  return out;
}

std::string format_manifest(const RunConfig& config, const std::map<std::string, std::string>& artifacts) {
  std::string out = "# wal run manifest\n# tool_version = " + std::string(kToolVersion) + "\n";
  for (const auto& [name, path] : artifacts) out += "# artifact." + name + " = " + path + "\n";
  out += format_config(config);
  return out;
}

}  // namespace wal
