#pragma once

#include <string>
#include <vector>

#include "hali/error.hpp"

namespace hali {

// Flat key-value run configuration: one `key = value` per line, '#'
// comments, no sections. Unknown keys are rejected so typos fail loudly.
class FlatConfig {
public:
    static FlatConfig parse_file(const std::string& path);
    static FlatConfig parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_float(const std::string& key, double fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;

    void require_known(const std::vector<std::string>& allowed) const;

    // FNV-1a over the canonical "key=value\n" lines, in file order.
    uint64_t digest() const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    const std::string& origin() const { return origin_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_;
};

struct RunManifest {
    uint64_t config_digest = 0;
    uint64_t seed = 0;
    std::string code_version;
    uint64_t dataset_checksum = 0;
    std::string start_time;

    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

extern const char* kCodeVersion;

} // namespace hali
