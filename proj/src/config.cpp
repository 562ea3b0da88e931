#include "rkld/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace rkld {

ConfigError::ConfigError(const std::string& origin, std::size_t line, const std::string& message)
    : std::runtime_error(line ? origin + ":" + std::to_string(line) + ": " + message
                              : origin + ": " + message + " (value not set in the file)") {}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("expected a finite number, got '" + s + "'");
    return v;
}

std::uint64_t to_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw std::invalid_argument("expected a nonnegative integer, got '" + s + "'");
    return v;
}

template <class T, class F>
std::vector<T> to_list(const std::string& s, F conv) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(static_cast<T>(conv(item)));
    if (out.empty()) throw std::invalid_argument("list must be nonempty");
    if (!std::is_sorted(out.begin(), out.end())) throw std::invalid_argument("list must be sorted ascending");
    return out;
}

struct Entry {
    std::string value;
    std::size_t line;
};

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin,
                                         const std::filesystem::path& base_dir) {
    std::map<std::string, std::map<std::string, Entry>> raw;
    const std::set<std::string> sections{"kernel", "objective", "chain", "experiment"};
    std::string section;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(origin, lineno, "unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            if (!sections.count(section)) throw ConfigError(origin, lineno, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(origin, lineno, "expected 'key = value'");
        if (section.empty()) throw ConfigError(origin, lineno, "key outside of any section");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin, lineno, "empty key");
        if (value.empty()) throw ConfigError(origin, lineno, "empty value for '" + key + "'");
        auto& sec = raw[section];
        if (sec.count(key))
            throw ConfigError(origin, lineno,
                              "duplicate key '" + key + "' (first set on line " + std::to_string(sec[key].line) + ")");
        sec[key] = {value, lineno};
    }

    ExperimentConfig cfg;
    cfg.source_text = text;
    cfg.base_dir = base_dir;
    std::optional<std::uint64_t> burn_in;
    std::optional<std::string> x0_text;
    std::size_t x0_line = 0;

    using Setter = std::function<void(const std::string&)>;
    const std::map<std::string, std::map<std::string, Setter>> setters{
        {"kernel",
         {
             {"mu0", [&](const std::string& v) { cfg.kernel.mu0 = to_double(v); }},
             {"gamma", [&](const std::string& v) { cfg.kernel.gamma = to_double(v); }},
             {"decay", [&](const std::string& v) { cfg.kernel.decay = parse_decay(v); }},
             {"basis",
              [&](const std::string& v) {
                  if (v != "cosine") throw std::invalid_argument("unknown basis '" + v + "'");
                  cfg.kernel.basis = BasisFamily::cosine;
              }},
         }},
        {"objective",
         {
             {"loss", [&](const std::string& v) { cfg.objective.loss = parse_loss(v); }},
             {"dataset",
              [&](const std::string& v) {
                  if (v == "regression") {
                      cfg.objective.dataset = DatasetKind::regression;
                  } else if (v == "classification") {
                      cfg.objective.dataset = DatasetKind::classification;
                  } else {
                      cfg.objective.dataset = DatasetKind::file;
                      std::filesystem::path p(v);
                      if (p.is_relative()) p = base_dir / p;
                      if (!std::filesystem::is_regular_file(p))
                          throw std::invalid_argument("dataset file '" + p.string() + "' does not exist");
                      cfg.objective.dataset_path = p;
                  }
              }},
             {"n_train", [&](const std::string& v) { cfg.objective.n_train = to_u64(v); }},
             {"data_seed", [&](const std::string& v) { cfg.objective.data_seed = to_u64(v); }},
             {"noise_sigma", [&](const std::string& v) { cfg.objective.noise_sigma = to_double(v); }},
             {"lambda0", [&](const std::string& v) { cfg.objective.lambda0 = to_double(v); }},
         }},
        {"chain",
         {
             {"eta", [&](const std::string& v) { cfg.chain.eta = to_double(v); }},
             {"beta", [&](const std::string& v) { cfg.chain.beta = to_double(v); }},
             {"lambda", [&](const std::string& v) { cfg.chain.lambda = to_double(v); }},
             {"n_modes", [&](const std::string& v) { cfg.chain.n_modes = to_u64(v); }},
             {"minibatch",
              [&](const std::string& v) {
                  if (v == "full")
                      cfg.chain.minibatch.reset();
                  else
                      cfg.chain.minibatch = to_u64(v);
              }},
             {"seed", [&](const std::string& v) { cfg.chain.seed = to_u64(v); }},
             {"horizon", [&](const std::string& v) { cfg.chain.horizon = to_u64(v); }},
             {"burn_in", [&](const std::string& v) { burn_in = to_u64(v); }},
             {"x0", [&](const std::string& v) { x0_text = v; }},
             {"mode", [&](const std::string& v) { cfg.mode = parse_chain_mode(v); }},
         }},
        {"experiment",
         {
             {"eta_list", [&](const std::string& v) { cfg.experiment.eta_list = to_list<double>(v, to_double); }},
             {"eta_ref", [&](const std::string& v) { cfg.experiment.eta_ref = to_double(v); }},
             {"n_list", [&](const std::string& v) { cfg.experiment.n_list = to_list<std::size_t>(v, to_u64); }},
             {"n_ref", [&](const std::string& v) { cfg.experiment.n_ref = to_u64(v); }},
             {"beta_list", [&](const std::string& v) { cfg.experiment.beta_list = to_list<double>(v, to_double); }},
             {"m_list", [&](const std::string& v) { cfg.experiment.m_list = to_list<std::size_t>(v, to_u64); }},
             {"delta", [&](const std::string& v) { cfg.experiment.delta = to_double(v); }},
             {"replicas", [&](const std::string& v) { cfg.experiment.replicas = to_u64(v); }},
             {"kappa", [&](const std::string& v) { cfg.experiment.kappa = to_double(v); }},
             {"test_function",
              [&](const std::string& v) { cfg.experiment.test_function = parse_test_function(v); }},
             {"slack", [&](const std::string& v) { cfg.experiment.slack = to_double(v); }},
             {"time_horizon", [&](const std::string& v) { cfg.experiment.time_horizon = to_double(v); }},
             {"batches", [&](const std::string& v) { cfg.experiment.batches = to_u64(v); }},
         }},
    };

    // First pass in file order so errors name the first offending line.
    std::vector<std::tuple<std::size_t, std::string, std::string, std::string>> ordered;
    for (const auto& [sec, keys] : raw)
        for (const auto& [key, e] : keys) ordered.emplace_back(e.line, sec, key, e.value);
    std::sort(ordered.begin(), ordered.end());
    for (const auto& [ln, sec, key, value] : ordered) {
        const auto& table = setters.at(sec);
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError(origin, ln, "unknown key '" + key + "' in [" + sec + "]");
        if (sec == "chain" && key == "x0") x0_line = ln;
        try {
            it->second(value);
        } catch (const std::exception& e) {
            throw ConfigError(origin, ln, key + ": " + e.what());
        }
    }

    auto line_of = [&](const std::string& sec, const std::string& key) -> std::size_t {
        const auto s = raw.find(sec);
        if (s == raw.end()) return 0;
        const auto k = s->second.find(key);
        return k == s->second.end() ? 0 : k->second.line;
    };
    auto fail = [&](const std::string& sec, const std::string& key, const std::string& msg) {
        throw ConfigError(origin, line_of(sec, key), msg);
    };

    try {
        cfg.kernel.validate();
    } catch (const std::exception& e) {
        fail("kernel", "gamma", e.what());
    }
    cfg.chain.burn_in = burn_in.value_or(default_burn_in(cfg.chain.horizon));
    if (x0_text && *x0_text != "zeros") {
        try {
            std::vector<double> c;
            for (const auto& item : split_list(*x0_text)) c.push_back(to_double(item));
            if (c.size() > cfg.chain.n_modes) throw std::invalid_argument("more coefficients than n_modes");
            c.resize(cfg.chain.n_modes, 0.0);
            cfg.chain.x0 = SpectralVector(std::move(c));
        } catch (const std::exception& e) {
            throw ConfigError(origin, x0_line, std::string("x0: ") + e.what());
        }
    }
    if (cfg.chain.beta < cfg.chain.eta) fail("chain", "beta", "chain.beta must be >= chain.eta");
    try {
        cfg.chain.validate();
    } catch (const std::exception& e) {
        std::string key = "horizon";
        const std::string msg = e.what();
        for (const char* k : {"eta", "beta", "lambda", "n_modes", "burn_in", "minibatch", "x0"})
            if (msg.find(std::string("chain.") + k) != std::string::npos) key = k;
        fail("chain", key, msg);
    }
    const auto& ob = cfg.objective;
    if (ob.dataset != DatasetKind::file && ob.n_train == 0) fail("objective", "n_train", "n_train must be positive");
    if (!(ob.noise_sigma >= 0.0)) fail("objective", "noise_sigma", "noise_sigma must be nonnegative");
    if (ob.lambda0 && !(*ob.lambda0 >= 0.0)) fail("objective", "lambda0", "lambda0 must be nonnegative");
    if (cfg.chain.minibatch && *cfg.chain.minibatch > cfg.n_train())
        fail("chain", "minibatch", "minibatch exceeds the number of training points");
    const auto& ex = cfg.experiment;
    if (!(ex.delta > 0.0 && ex.delta < 1.0)) fail("experiment", "delta", "delta must lie in (0, 1)");
    if (ex.replicas == 0) fail("experiment", "replicas", "replicas must be positive");
    if (!(ex.kappa >= 0.0 && ex.kappa < 0.5)) fail("experiment", "kappa", "kappa must lie in [0, 1/2)");
    if (!(ex.slack > 0.0)) fail("experiment", "slack", "slack must be positive");
    if (!(ex.time_horizon > 0.0)) fail("experiment", "time_horizon", "time_horizon must be positive");
    if (ex.batches < 2) fail("experiment", "batches", "batches must be >= 2");
    for (double e : ex.eta_list)
        if (!(e > 0.0) || e > cfg.chain.beta) fail("experiment", "eta_list", "eta_list entries must lie in (0, beta]");
    if (!(ex.eta_ref > 0.0)) fail("experiment", "eta_ref", "eta_ref must be positive");
    for (double b : ex.beta_list)
        if (b < cfg.chain.eta) fail("experiment", "beta_list", "beta_list entries must be >= chain.eta");
    if (!line_of("experiment", "m_list")) {
        const std::size_t n = cfg.n_train();
        std::vector<std::size_t> grid{std::max<std::size_t>(1, n / 5), std::max<std::size_t>(1, n / 2), n};
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        cfg.experiment.m_list = grid;
    }
    for (std::size_t m : ex.m_list)
        if (m == 0 || m > cfg.n_train()) fail("experiment", "m_list", "m_list entries must lie in [1, n_train]");
    if (ex.n_list.front() == 0) fail("experiment", "n_list", "n_list entries must be positive");
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string(), path.parent_path());
}

Dataset ExperimentConfig::make_dataset() const {
    switch (objective.dataset) {
        case DatasetKind::regression:
            return Dataset::synthetic_regression(objective.n_train, objective.data_seed, objective.noise_sigma);
        case DatasetKind::classification:
            return Dataset::synthetic_classification(objective.n_train, objective.data_seed);
        case DatasetKind::file:
            return Dataset::from_csv(objective.dataset_path);
    }
    throw ConfigError("bad dataset kind");
}

std::size_t ExperimentConfig::n_train() const {
    return objective.dataset == DatasetKind::file ? Dataset::from_csv(objective.dataset_path).size()
                                                   : objective.n_train;
}

ObjectiveSpec ExperimentConfig::make_objective() const {
    return ObjectiveSpec(make_dataset(), objective.loss, kernel, chain.n_modes, objective.lambda0);
}

std::string ExperimentConfig::hash() const {
    if (!seed_override) return config_hash(source_text);
    return config_hash(source_text + "\n--seed=" + std::to_string(chain.seed) + "\n");
}

std::string config_hash(const std::string& text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("config_hash: SHA-256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

}  // namespace rkld
