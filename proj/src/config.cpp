#include "tracewarp/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace tracewarp {

using nlohmann::json;

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1]");
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be finite and >= 0");
  require(lambda_adv >= 0.0 && std::isfinite(lambda_adv), "lambda_adv must be finite and >= 0");
  require(lambda_smooth >= 0.0 && std::isfinite(lambda_smooth), "lambda_smooth must be finite and >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be finite and > 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0,1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0,1)");
  require(adam_eps > 0.0, "adam_eps must be > 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 1, "epochs must be >= 1");
  require(integration_steps >= 1, "integration_steps must be >= 1");
  require(dnmi_bins_warp >= 2 && dnmi_bins_cross >= 2, "dnmi bins must be >= 2");
  require(dnmi_sigma > 0.0, "dnmi_sigma must be > 0");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "train_fraction must be in (0,1]");
  try {
    model().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

LossWeights TrainConfig::weights() const { return {alpha, gamma, lambda_adv, lambda_smooth}; }

DnmiConfig TrainConfig::dnmi_warp() const { return {dnmi_bins_warp, dnmi_sigma, {-1.0, 1.0}}; }

DnmiConfig TrainConfig::dnmi_cross() const { return {dnmi_bins_cross, dnmi_sigma, {-1.0, 1.0}}; }

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.image_size = image_size;
  m.width_factor = width_factor;
  m.shared_encoder = shared_encoder;
  return m;
}

json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"gamma", c.gamma},
          {"lambda_adv", c.lambda_adv},
          {"lambda_smooth", c.lambda_smooth},
          {"lr", c.lr},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"integration_steps", c.integration_steps},
          {"dnmi_bins_warp", c.dnmi_bins_warp},
          {"dnmi_bins_cross", c.dnmi_bins_cross},
          {"dnmi_sigma", c.dnmi_sigma},
          {"seed", c.seed},
          {"width_factor", c.width_factor},
          {"image_size", c.image_size},
          {"shared_encoder", c.shared_encoder},
          {"train_fraction", c.train_fraction},
          {"checkpoint_every", c.checkpoint_every}};
}

namespace {

template <typename V>
void read_value(const json& value, const std::string& key, V& out) {
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!value.is_boolean()) throw ConfigError(key + " must be a boolean");
      out = value.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!value.is_number_integer()) throw ConfigError(key + " must be an integer");
      if (std::is_unsigned_v<V> && value.get<std::int64_t>() < 0 && !value.is_number_unsigned())
        throw ConfigError(key + " must be non-negative");
      out = value.get<V>();
    } else {
      if (!value.is_number()) throw ConfigError(key + " must be a number");
      out = value.get<V>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "alpha") read_value(value, key, c.alpha);
    else if (key == "gamma") read_value(value, key, c.gamma);
    else if (key == "lambda_adv") read_value(value, key, c.lambda_adv);
    else if (key == "lambda_smooth") read_value(value, key, c.lambda_smooth);
    else if (key == "lr") read_value(value, key, c.lr);
    else if (key == "adam_beta1") read_value(value, key, c.adam_beta1);
    else if (key == "adam_beta2") read_value(value, key, c.adam_beta2);
    else if (key == "adam_eps") read_value(value, key, c.adam_eps);
    else if (key == "batch_size") read_value(value, key, c.batch_size);
    else if (key == "epochs") read_value(value, key, c.epochs);
    else if (key == "integration_steps") read_value(value, key, c.integration_steps);
    else if (key == "dnmi_bins_warp") read_value(value, key, c.dnmi_bins_warp);
    else if (key == "dnmi_bins_cross") read_value(value, key, c.dnmi_bins_cross);
    else if (key == "dnmi_sigma") read_value(value, key, c.dnmi_sigma);
    else if (key == "seed") read_value(value, key, c.seed);
    else if (key == "width_factor") read_value(value, key, c.width_factor);
    else if (key == "image_size") read_value(value, key, c.image_size);
    else if (key == "shared_encoder") read_value(value, key, c.shared_encoder);
    else if (key == "train_fraction") read_value(value, key, c.train_fraction);
    else if (key == "checkpoint_every") read_value(value, key, c.checkpoint_every);
    else throw ConfigError("unknown train config key: " + key);
  }
  c.validate();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_toml_value(const std::string& raw, int line) {
  const std::string v = trim(raw);
  auto fail = [&](const std::string& why) {
    throw ConfigError("TOML line " + std::to_string(line) + ": " + why);
  };
  if (v.empty()) fail("missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') fail("unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string digits;
  for (char ch : v)
    if (ch != '_') digits += ch;
  const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                        digits == "nan";
  std::size_t used = 0;
  try {
    if (is_float) {
      const double d = std::stod(digits, &used);
      if (used == digits.size()) return d;
    } else if (!digits.empty() && digits[0] == '-') {
      const long long i = std::stoll(digits, &used);
      if (used == digits.size()) return i;
    } else {
      const unsigned long long u = std::stoull(digits, &used);
      if (used == digits.size()) return u;
    }
  } catch (const std::exception&) {
  }
  fail("unsupported value '" + v + "'");
  return {};
}

}  // namespace

json parse_flat_toml(const std::string& text) {
  json out = json::object();
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    // Strip comments outside of strings.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line != "[train]" && line != "[synth]")
        throw ConfigError("TOML line " + std::to_string(number) + ": unsupported table " + line);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("TOML line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("TOML line " + std::to_string(number) + ": empty key");
    if (out.contains(key)) throw ConfigError("TOML line " + std::to_string(number) + ": duplicate key " + key);
    out[key] = parse_toml_value(line.substr(eq + 1), number);
  }
  return out;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  if (path.extension() == ".toml") return parse_flat_toml(ss.str());
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json(read_config_file(path));
}

}  // namespace tracewarp
