#include "attrinet/config.hpp"

#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace attrinet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void parse_into(ConfigMap& out, const std::string& text, const fs::path& base_dir, int depth) {
  if (depth > 16) throw ConfigError("config: include depth exceeded (cycle?)");
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::string key, value;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      key = trim(line.substr(0, eq));
      value = trim(line.substr(eq + 1));
    } else if (line.rfind("include ", 0) == 0) {
      key = "include";
      value = trim(line.substr(8));
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    }
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (key == "include") {
      fs::path p = value;
      if (p.is_relative()) p = base_dir / p;
      std::ifstream f(p);
      if (!f) throw ConfigError("config: cannot open include " + p.string());
      std::stringstream ss;
      ss << f.rdbuf();
      parse_into(out, ss.str(), p.parent_path(), depth + 1);
      continue;
    }
    out[key] = value;
  }
}

}  // namespace

ConfigMap parse_config(const std::string& text, const fs::path& base_dir) {
  ConfigMap out;
  parse_into(out, text, base_dir, 0);
  return out;
}

ConfigMap read_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string format_config(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) out += k + " = " + v + "\n";
  return out;
}

std::string ConfigReader::get(const std::string& key, const std::string& fallback) {
  used_.insert(key);
  const auto it = cfg_.find(key);
  return it == cfg_.end() ? fallback : it->second;
}

std::string ConfigReader::require(const std::string& key) {
  used_.insert(key);
  const auto it = cfg_.find(key);
  if (it == cfg_.end()) throw ConfigError("config: missing required key '" + key + "'");
  return it->second;
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  const std::string v = get(key, "");
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

long ConfigReader::get_long(const std::string& key, long fallback) {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  const std::string v = get(key, "");
  try {
    std::size_t pos = 0;
    const long l = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return l;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t ConfigReader::get_u64(const std::string& key, std::uint64_t fallback) {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  const std::string v = get(key, "");
  try {
    std::size_t pos = 0;
    const auto u = std::stoull(v, &pos);
    if (pos != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  const std::string v = get(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> ConfigReader::get_list(const std::string& key, const std::vector<std::string>& fallback) {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  std::vector<std::string> out;
  std::stringstream ss(get(key, ""));
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ConfigReader::reject_unknown() const {
  std::string unknown;
  for (const auto& [k, v] : cfg_) {
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw ConfigError("config: unknown key(s): " + unknown);
}

}  // namespace attrinet
