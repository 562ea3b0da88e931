#include "rkld/manifest.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace rkld {

using nlohmann::json;

void Manifest::upsert(ManifestRun run) {
    for (auto& r : runs) {
        if (r.name == run.name) {
            r = std::move(run);
            return;
        }
    }
    runs.push_back(std::move(run));
}

std::string Manifest::to_json() const {
    json j;
    j["tool"] = tool;
    j["version"] = version;
    j["config_hash"] = config_hash;
    j["config_text"] = config_text;
    j["config_dir"] = config_dir;
    j["seed_override"] = seed_override;
    j["seeds"] = {{"chain_seed", chain_seed}, {"data_seed", data_seed}, {"replicas", replicas}};
    j["simd"] = simd;
    j["runs"] = json::array();
    for (const auto& r : runs) j["runs"].push_back({{"name", r.name}, {"command", r.command}, {"outputs", r.outputs}});
    return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
    Manifest m;
    try {
        const json j = json::parse(text);
        m.tool = j.at("tool").get<std::string>();
        m.version = j.at("version").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.config_text = j.at("config_text").get<std::string>();
        m.config_dir = j.value("config_dir", "");
        m.seed_override = j.value("seed_override", false);
        m.chain_seed = j.at("seeds").at("chain_seed").get<std::uint64_t>();
        m.data_seed = j.at("seeds").at("data_seed").get<std::uint64_t>();
        m.replicas = j.at("seeds").at("replicas").get<std::size_t>();
        m.simd = j.value("simd", "");
        for (const auto& r : j.at("runs"))
            m.runs.push_back({r.at("name").get<std::string>(), r.at("command").get<std::string>(),
                              r.at("outputs").get<std::vector<std::string>>()});
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("manifest: ") + e.what());
    }
    return m;
}

Manifest Manifest::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void Manifest::write(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

std::string short_hash(const std::string& hash) { return hash.substr(0, 12); }

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& hash) {
    return out_dir / ("manifest_" + short_hash(hash) + ".json");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace rkld
