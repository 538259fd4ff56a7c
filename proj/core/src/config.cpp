#include "degan/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "degan/errors.hpp"

namespace degan {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "config table assumes a 64-bit size_t");
using Field = std::variant<double ExperimentConfig::*, std::size_t ExperimentConfig::*, bool ExperimentConfig::*>;

struct FieldEntry {
  const char* key;
  Field field;
};

const std::vector<FieldEntry>& fields() {
  static const std::vector<FieldEntry> table = {
      {"lambda_e", &ExperimentConfig::lambda_e},
      {"lambda_d", &ExperimentConfig::lambda_d},
      {"batch_size", &ExperimentConfig::batch_size},
      {"latent_dim", &ExperimentConfig::latent_dim},
      {"gan_lr", &ExperimentConfig::gan_lr},
      {"gan_beta1", &ExperimentConfig::gan_beta1},
      {"gan_epochs", &ExperimentConfig::gan_epochs},
      {"non_saturating", &ExperimentConfig::non_saturating},
      {"eval_samples", &ExperimentConfig::eval_samples},
      {"kd_temperature", &ExperimentConfig::kd_temperature},
      {"kd_epochs", &ExperimentConfig::kd_epochs},
      {"batches_per_kd_epoch", &ExperimentConfig::batches_per_kd_epoch},
      {"kd_pool_size", &ExperimentConfig::kd_pool_size},
      {"teacher_lr", &ExperimentConfig::teacher_lr},
      {"student_lr", &ExperimentConfig::student_lr},
      {"teacher_max_epochs", &ExperimentConfig::teacher_max_epochs},
      {"teacher_patience", &ExperimentConfig::teacher_patience},
      {"incr_reg_weight", &ExperimentConfig::incr_reg_weight},
      {"incr_temperature", &ExperimentConfig::incr_temperature},
      {"incr_epochs", &ExperimentConfig::incr_epochs},
      {"incr_batches_per_epoch", &ExperimentConfig::incr_batches_per_epoch},
      {"seed", &ExperimentConfig::seed},
      {"eps_log", &ExperimentConfig::eps_log},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& value) {
  Int out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a real number, got '" + value + "'");
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(std::isfinite(c.lambda_e) && c.lambda_e >= 0.0, "lambda_e must be >= 0");
  require(std::isfinite(c.lambda_d) && c.lambda_d >= 0.0, "lambda_d must be >= 0");
  require(c.batch_size > 0, "batch_size must be > 0");
  require(c.latent_dim > 0, "latent_dim must be > 0");
  require(c.gan_lr > 0.0, "gan_lr must be > 0");
  require(c.gan_beta1 >= 0.0 && c.gan_beta1 < 1.0, "gan_beta1 must lie in [0,1)");
  require(c.kd_temperature > 0.0, "kd_temperature must be > 0");
  require(c.teacher_lr > 0.0 && c.student_lr > 0.0, "learning rates must be > 0");
  require(c.teacher_max_epochs > 0, "teacher_max_epochs must be > 0");
  require(c.incr_reg_weight >= 0.0, "incr_reg_weight must be >= 0");
  require(c.incr_temperature > 0.0, "incr_temperature must be > 0");
  require(c.eval_samples > 0, "eval_samples must be > 0");
  require(c.eps_log > 0.0 && c.eps_log < 1.0, "eps_log must lie in (0,1)");
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& entry : fields()) {
    if (key != entry.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            cfg.*member = parse_double(key, value);
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") {
              cfg.*member = true;
            } else if (value == "false" || value == "0") {
              cfg.*member = false;
            } else {
              throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
            }
          } else {
            cfg.*member = parse_int<T>(key, value);
          }
        },
        entry.field);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& entry : fields()) {
    os << entry.key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            os << format_double(cfg.*member);
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (cfg.*member ? "true" : "false");
          } else {
            os << cfg.*member;
          }
        },
        entry.field);
    os << '\n';
  }
  return os.str();
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(base);
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << to_text(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : fields()) keys.emplace_back(e.key);
  return keys;
}

}  // namespace degan
