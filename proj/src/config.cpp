#include "hali/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hali/data.hpp"

namespace hali {

const char* kCodeVersion = "0.1.0";

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
} // namespace

FlatConfig FlatConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str(), path);
}

FlatConfig FlatConfig::parse_text(const std::string& text, const std::string& origin) {
    FlatConfig cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        for (const auto& e : cfg.entries_)
            if (e.first == key) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        cfg.entries_.emplace_back(key, value);
    }
    return cfg;
}

bool FlatConfig::has(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

std::string FlatConfig::get_str(const std::string& key, const std::string& fallback) const {
    for (const auto& e : entries_)
        if (e.first == key) return e.second;
    return fallback;
}

std::string FlatConfig::require_str(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.first == key) return e.second;
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
}

int64_t FlatConfig::get_int(const std::string& key, int64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key, "");
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
    }
}

double FlatConfig::get_float(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key, "");
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
    }
}

uint64_t FlatConfig::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key, "");
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not an unsigned integer: '" + v + "'");
    }
}

void FlatConfig::require_known(const std::vector<std::string>& allowed) const {
    for (const auto& e : entries_) {
        if (std::find(allowed.begin(), allowed.end(), e.first) == allowed.end())
            throw ConfigError(origin_ + ": unknown key '" + e.first + "'");
    }
}

uint64_t FlatConfig::digest() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) {
        std::string line = e.first + "=" + e.second + "\n";
        h = data::fnv1a(line.data(), line.size(), h);
    }
    return h;
}

void RunManifest::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path);
    os << "config_digest = " << config_digest << "\n";
    os << "seed = " << seed << "\n";
    os << "code_version = " << code_version << "\n";
    os << "dataset_checksum = " << dataset_checksum << "\n";
    os << "start_time = " << start_time << "\n";
}

RunManifest RunManifest::read(const std::string& path) {
    FlatConfig cfg = FlatConfig::parse_file(path);
    RunManifest m;
    m.config_digest = cfg.get_u64("config_digest", 0);
    m.seed = cfg.get_u64("seed", 0);
    m.code_version = cfg.get_str("code_version", "");
    m.dataset_checksum = cfg.get_u64("dataset_checksum", 0);
    m.start_time = cfg.get_str("start_time", "");
    return m;
}

} // namespace hali
