#include "cli/manifest.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include "volterra/errors.hpp"

namespace volterra::cli {

namespace {

struct DigestDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("SHA-256 initialisation failed");
    }
    void update(const char* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("SHA-256 update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("SHA-256 final failed");
        std::ostringstream out;
        for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
        return out.str();
    }

private:
    std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

} // namespace

std::string sha256_hex(const std::string& bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

OutputDirectory::OutputDirectory(std::filesystem::path dir) : dir_(std::move(dir)) {
    namespace fs = std::filesystem;
    if (fs::exists(dir_) && !fs::is_directory(dir_)) throw ConfigError("--out", dir_.string() + " is not a directory");
    fs::create_directories(dir_);
    // Files of an earlier run (named by its manifest) are replaced; anything
    // else would end up unnamed by the new manifest.
    std::vector<std::string> previous;
    if (fs::exists(dir_ / kManifestName)) {
        std::ifstream in(dir_ / kManifestName);
        try {
            const auto old = nlohmann::json::parse(in);
            for (const auto& f : old.at("files")) previous.push_back(f.at("name").get<std::string>());
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("--out", (dir_ / kManifestName).string() + " is not a readable manifest");
        }
    }
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const std::string name = entry.path().filename().string();
        if (name == kManifestName) continue;
        if (!entry.is_regular_file() || std::find(previous.begin(), previous.end(), name) == previous.end())
            throw ConfigError("--out", dir_.string() + " contains " + name + ", which no earlier run wrote");
    }
    for (const auto& name : previous) fs::remove(dir_ / name);
    fs::remove(dir_ / kManifestName);
}

void OutputDirectory::write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + (dir_ / name).string());
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
}

void write_manifest(const OutputDirectory& out, const RunRecord& run) {
    using nlohmann::ordered_json;
    ordered_json m;
    m["tool"] = "volterra";
    m["version"] = VOLTERRA_VERSION;
    m["subcommand"] = run.subcommand;
    m["config_path"] = run.config_path;
    m["config_sha256"] = sha256_hex(run.config_text);
    m["config"] = run.config_text;
    m["seed"] = run.seed_known ? ordered_json(run.seed) : ordered_json(nullptr);
    m["rng"] = "mt19937_64 per (seed, purpose, path, coord) via splitmix64 mixing";
    m["threads"] = run.threads;
    m["tolerance_scale"] = run.tolerance_scale;
    m["versions"] = {
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                      std::to_string(BOOST_VERSION % 100)},
        {"openssl", OPENSSL_VERSION_TEXT},
        {"compiler", __VERSION__},
    };
    m["exit_status"] = run.exit_status;
    m["outcome"] = run.outcome;
    if (!run.message.empty()) m["message"] = run.message;
    ordered_json files = ordered_json::array();
    for (const auto& name : out.files()) {
        const auto p = out.path() / name;
        files.push_back({{"name", name}, {"bytes", std::filesystem::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    m["files"] = std::move(files);
    m["wall_time_seconds"] = run.wall_time_seconds;

    std::ofstream f(out.path() / kManifestName, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (out.path() / kManifestName).string());
    f << m.dump(2) << '\n';
}

} // namespace volterra::cli
