#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rfgap/version.hpp"

namespace rfgap {

inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

inline std::string fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for digest: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

/// One per CLI run: what ran, with what inputs, producing what. Reruns with
/// identical inputs produce identical numeric outputs; only the duration
/// field varies.
struct RunManifest {
    std::string command;
    nlohmann::json config; // resolved flag values
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests; // path -> fnv1a64 hex
    std::vector<std::string> output_paths;
    std::string library_version = kVersion;
    double duration_seconds = 0.0;

    nlohmann::json to_json() const {
        return {{"command", command},
                {"config", config},
                {"seed", seed},
                {"input_digests", input_digests},
                {"output_paths", output_paths},
                {"library_version", library_version},
                {"duration_seconds", duration_seconds}};
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write manifest: " + path);
        out << to_json().dump(2) << '\n';
    }
};

} // namespace rfgap
