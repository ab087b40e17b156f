#include "midemo/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace midemo::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strip a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

TomlValue parse_value(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v.empty())
    throw ConfigError("config: empty value at line " + std::to_string(line_no));
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"')
      throw ConfigError("config: unterminated string at line " +
                        std::to_string(line_no));
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '[') {
    if (v.back() != ']')
      throw ConfigError("config: unterminated array at line " +
                        std::to_string(line_no));
    std::vector<double> items;
    std::string body = v.substr(1, v.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (t.empty()) continue;
      char* end = nullptr;
      const double d = std::strtod(t.c_str(), &end);
      if (end != t.c_str() + t.size())
        throw ConfigError("config: bad array element '" + t + "' at line " +
                          std::to_string(line_no));
      items.push_back(d);
    }
    return items;
  }
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size())
    throw ConfigError("config: cannot parse value '" + v + "' at line " +
                      std::to_string(line_no));
  return d;
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config: empty section name at line " +
                          std::to_string(line_no));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " +
                        std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("config: empty key at line " + std::to_string(line_no));
    const std::string full = section.empty() ? key : section + "." + key;
    table[full] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

TomlTable parse_toml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

void apply_override(TomlTable& table, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  // Allow bare strings in overrides; quote anything that is not a number,
  // boolean or array.
  if (!value.empty() && value.front() != '"' && value.front() != '[' &&
      value != "true" && value != "false") {
    char* end = nullptr;
    std::strtod(value.c_str(), &end);
    if (end != value.c_str() + value.size()) value = "\"" + value + "\"";
  }
  table[key] = parse_value(value, 0);
}

namespace {

double num_or(const TomlTable& t, const std::string& key, double fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const double* d = std::get_if<double>(&it->second)) return *d;
  throw ConfigError("config: '" + key + "' must be a number");
}

std::string str_or(const TomlTable& t, const std::string& key,
                   const std::string& fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const std::string* s = std::get_if<std::string>(&it->second)) return *s;
  throw ConfigError("config: '" + key + "' must be a string");
}

}  // namespace

ExperimentConfig config_from_table(const TomlTable& t) {
  ExperimentConfig cfg;
  cfg.audio_dir = str_or(t, "data.audio_dir", "");
  cfg.midlevel_csv = str_or(t, "data.midlevel_csv", "");
  cfg.emotion_csv = str_or(t, "data.emotion_csv", "");
  cfg.output_dir = str_or(t, "output.dir", "out");

  cfg.spectrogram.sample_rate =
      static_cast<int>(num_or(t, "spectrogram.sample_rate", 22050));
  cfg.spectrogram.frame_size =
      static_cast<int>(num_or(t, "spectrogram.frame_size", 2048));
  cfg.spectrogram.hop = static_cast<int>(num_or(t, "spectrogram.hop", 705));
  cfg.spectrogram.n_bands = static_cast<int>(num_or(t, "spectrogram.n_bands", 149));
  cfg.spectrogram.crop_seconds = num_or(t, "spectrogram.crop_seconds", 10.0);
  cfg.spectrogram.fmin = num_or(t, "spectrogram.fmin", 30.0);
  cfg.spectrogram.fmax = num_or(t, "spectrogram.fmax", 11025.0);
  cfg.spectrogram.log_floor_db = num_or(t, "spectrogram.log_floor_db", -100.0);
  cfg.spectrogram.n_frames = static_cast<int>(num_or(t, "spectrogram.n_frames", 313));

  if (auto it = t.find("trunk.widths"); it != t.end()) {
    const auto* arr = std::get_if<std::vector<double>>(&it->second);
    if (!arr || arr->size() != cfg.trunk.widths.size())
      throw ConfigError("config: trunk.widths must be an array of 5 numbers");
    for (std::size_t i = 0; i < arr->size(); ++i)
      cfg.trunk.widths[i] = static_cast<std::size_t>((*arr)[i]);
  }
  cfg.trunk.embedding_dim = static_cast<std::size_t>(
      num_or(t, "trunk.embedding_dim", static_cast<double>(cfg.trunk.embedding_dim)));
  cfg.trunk.dropout = num_or(t, "trunk.dropout", cfg.trunk.dropout);

  cfg.training.lr = num_or(t, "training.lr", cfg.training.lr);
  cfg.training.batch_size = static_cast<std::size_t>(
      num_or(t, "training.batch_size", static_cast<double>(cfg.training.batch_size)));
  cfg.training.patience = static_cast<std::size_t>(
      num_or(t, "training.patience", static_cast<double>(cfg.training.patience)));
  cfg.training.max_epochs = static_cast<std::size_t>(
      num_or(t, "training.max_epochs", static_cast<double>(cfg.training.max_epochs)));
  cfg.training.val_fraction =
      num_or(t, "training.val_fraction", cfg.training.val_fraction);
  cfg.training.train_loss_goal =
      num_or(t, "training.train_loss_goal", cfg.training.train_loss_goal);

  cfg.scheme = str_or(t, "protocol.scheme", cfg.scheme);
  cfg.runs = static_cast<std::size_t>(
      num_or(t, "protocol.runs", static_cast<double>(cfg.runs)));
  cfg.base_seed = static_cast<std::uint64_t>(
      num_or(t, "protocol.base_seed", static_cast<double>(cfg.base_seed)));
  cfg.test_ratio = num_or(t, "protocol.test_ratio", cfg.test_ratio);

  cfg.spectrogram.validate();
  models::scheme_from_name(cfg.scheme);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  TomlTable table = parse_toml_file(path);
  for (const auto& o : overrides) apply_override(table, o);
  return config_from_table(table);
}

void ExperimentConfig::validate_paths() const {
  auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) return;
    if (!std::filesystem::exists(p))
      throw DataError(std::string("config: ") + what + " does not exist: " +
                      p.string());
  };
  must_exist(audio_dir, "data.audio_dir");
  must_exist(midlevel_csv, "data.midlevel_csv");
  must_exist(emotion_csv, "data.emotion_csv");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream out;
  out << "audio_dir=" << audio_dir.string() << "\n"
      << "midlevel_csv=" << midlevel_csv.string() << "\n"
      << "emotion_csv=" << emotion_csv.string() << "\n"
      << "spectrogram=" << spectrogram.sample_rate << "," << spectrogram.frame_size
      << "," << spectrogram.hop << "," << spectrogram.n_bands << ","
      << spectrogram.crop_seconds << "," << spectrogram.fmin << ","
      << spectrogram.fmax << "," << spectrogram.log_floor_db << ","
      << spectrogram.n_frames << "\n"
      << "trunk=";
  for (std::size_t w : trunk.widths) out << w << ",";
  out << trunk.embedding_dim << "," << trunk.dropout << "\n"
      << "training=" << training.lr << "," << training.batch_size << ","
      << training.patience << "," << training.max_epochs << ","
      << training.val_fraction << "," << training.train_loss_goal << "\n"
      << "protocol=" << scheme << "," << runs << "," << base_seed << ","
      << test_ratio << "\n";
  return out.str();
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string s = canonical();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string ExperimentConfig::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace midemo::config
