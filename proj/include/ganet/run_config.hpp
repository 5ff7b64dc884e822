#pragma once

// Plain-text run configuration: one `key=value` per line, `#` starts a
// comment. Every GanetConfig field is addressable; unknown keys are errors.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "ganet_model.hpp"

namespace ganet {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: bad value '" + std::string(v) + "' for key '" + std::string(key) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + std::string(v) + "' for key '" + std::string(key) + "'");
}

}  // namespace detail

inline constexpr std::string_view kConfigKeys[] = {"c",     "k1",   "num_classes", "in_channels", "variant",
                                                   "lr",    "epochs", "seed",      "share_plan",  "plus_uses_pig"};

inline void apply_setting(GanetConfig& cfg, std::string_view key, std::string_view value) {
  using detail::parse_number;
  if (key == "c") {
    cfg.c = parse_number<std::size_t>(key, value);
  } else if (key == "k1") {
    cfg.k1 = value == "sqrt" ? 0 : parse_number<std::size_t>(key, value);
  } else if (key == "num_classes") {
    cfg.num_classes = parse_number<std::size_t>(key, value);
  } else if (key == "in_channels") {
    cfg.in_channels = parse_number<std::size_t>(key, value);
  } else if (key == "variant") {
    try {
      cfg.variant = parse_variant(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else if (key == "lr") {
    cfg.lr = parse_number<double>(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "share_plan") {
    cfg.share_plan = detail::parse_bool(key, value);
  } else if (key == "plus_uses_pig") {
    cfg.plus_uses_pig = detail::parse_bool(key, value);
  } else {
    throw ConfigError("config: unknown key '" + std::string(key) + "'");
  }
}

// Parsed key/value pairs in file order of last assignment.
inline std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    kv[std::string(detail::trim(line.substr(0, eq)))] = std::string(detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline void apply_settings(GanetConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) apply_setting(cfg, k, v);
}

inline std::string config_to_text(const GanetConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "c=" << cfg.c << '\n'
     << "k1=" << (cfg.k1 ? std::to_string(cfg.k1) : std::string("sqrt")) << '\n'
     << "num_classes=" << cfg.num_classes << '\n'
     << "in_channels=" << cfg.in_channels << '\n'
     << "variant=" << variant_name(cfg.variant) << '\n'
     << "lr=" << cfg.lr << '\n'
     << "epochs=" << cfg.epochs << '\n'
     << "seed=" << cfg.seed << '\n'
     << "share_plan=" << (cfg.share_plan ? "true" : "false") << '\n'
     << "plus_uses_pig=" << (cfg.plus_uses_pig ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace ganet
