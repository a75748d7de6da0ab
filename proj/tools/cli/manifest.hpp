#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace volterra::cli {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& file);

/// Single writer for an output directory. Files go through write() so the
/// manifest can name every one of them.
class OutputDirectory {
public:
    explicit OutputDirectory(std::filesystem::path dir);

    const std::filesystem::path& path() const { return dir_; }
    void write(const std::string& name, const std::string& content);
    const std::vector<std::string>& files() const { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

struct RunRecord {
    std::string subcommand;
    std::string config_path;
    std::string config_text;
    unsigned long long seed = 0;
    bool seed_known = false;
    unsigned threads = 0;
    double tolerance_scale = 1.0;
    int exit_status = 0;
    std::string outcome; ///< pass, fail, config_error, precondition_error, numerical_error
    std::string message;
    double wall_time_seconds = 0.0;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Writes manifest.json: the run record, library versions and name, size and
/// SHA-256 of every file written. wall_time_seconds is the only field that
/// differs between identical runs.
void write_manifest(const OutputDirectory& out, const RunRecord& run);

} // namespace volterra::cli
