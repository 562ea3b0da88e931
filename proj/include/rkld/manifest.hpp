#pragma once

// Reproducibility manifest: config text and hash, seeds, and every output
// written for that config. Stored as JSON next to the outputs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rkld {

inline constexpr const char* kToolVersion = "0.1.0";

struct ManifestRun {
    std::string name;     // e.g. "run", "verify", "sweep_eta"
    std::string command;  // command line that regenerates it
    std::vector<std::string> outputs;  // relative to the manifest directory
};

struct Manifest {
    std::string tool = "rkld";
    std::string version = kToolVersion;
    std::string config_hash;
    std::string config_text;
    std::string config_dir;  // base for relative dataset paths
    bool seed_override = false;
    std::uint64_t chain_seed = 0;
    std::uint64_t data_seed = 0;
    std::size_t replicas = 0;
    std::string simd;
    std::vector<ManifestRun> runs;

    // Adds or replaces the run with the same name.
    void upsert(ManifestRun run);

    std::string to_json() const;
    static Manifest from_json(const std::string& text);
    static Manifest read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
};

// Short form of the config hash used in output file names.
std::string short_hash(const std::string& hash);

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& hash);

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace rkld
