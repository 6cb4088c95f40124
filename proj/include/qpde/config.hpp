#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qpde/common.hpp"

namespace qpde::config {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class KeyType { string, u64, f64, boolean };

struct SchemaEntry {
    const char* section;
    const char* key;
    KeyType type;
    const char* default_value;
    const char* description;
};

// Single source of truth: drives parsing, validation and --help output.
inline const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> entries = {
        {"run", "seed", KeyType::u64, "0", "base RNG seed"},
        {"run", "out", KeyType::string, "out", "output directory"},
        {"run", "threads", KeyType::u64, "1", "worker threads (determinism is thread-count independent)"},
        {"problem", "kind", KeyType::string, "hjb", "pde instance: hjb | allen-cahn | black-scholes"},
        {"problem", "d", KeyType::u64, "1", "spatial dimension"},
        {"problem", "steps", KeyType::u64, "20", "time discretization steps N"},
        {"problem", "T", KeyType::f64, "1.0", "terminal time"},
        {"problem", "hidden_width", KeyType::u64, "0", "step-net hidden width (0 = per-d default)"},
        {"train", "eta", KeyType::f64, "0.01", "learning rate"},
        {"train", "batch", KeyType::u64, "20", "paths per iteration"},
        {"train", "iterations", KeyType::u64, "2000", "training iterations"},
        {"train", "estimator", KeyType::string, "backprop",
         "gradient estimator: backprop | forward_gradient | numerical | all"},
        {"train", "h", KeyType::f64, "0.001", "central-difference step"},
        {"train", "v_samples", KeyType::u64, "100", "forward-gradient direction draws per iteration"},
        {"train", "truncate_v", KeyType::boolean, "false", "clamp forward-gradient draws at +-3"},
        {"train", "clip", KeyType::f64, "0.0", "per-entry gradient clip (0 = off)"},
        {"eval", "checkpoint", KeyType::string, "model.ckpt", "model checkpoint path (bsde-eval)"},
        {"eval", "batch", KeyType::u64, "1000", "evaluation paths (bsde-eval)"},
        {"quantum", "qubits", KeyType::u64, "3", "distribution-register qubits"},
        {"quantum", "phase_bits", KeyType::u64, "6", "amplitude-estimation phase qubits"},
        {"quantum", "t", KeyType::f64, "1.0", "entangling initial-state evolution time"},
        {"quantum", "delta", KeyType::f64, "0.05", "powering-lemma failure budget"},
        {"quantum", "eps", KeyType::f64, "0.05", "target additive error"},
        {"bench", "k_min_bits", KeyType::u64, "4", "smallest phase-bit count in sweeps"},
        {"bench", "k_max_bits", KeyType::u64, "8", "largest phase-bit count in sweeps"},
        {"bench", "reps", KeyType::u64, "20", "repetitions per sweep point"},
        {"bench", "targets", KeyType::u64, "50", "random targets (ae-bench)"},
        {"mlmc", "eps", KeyType::f64, "0.05", "mlmc accuracy target"},
        {"mlmc", "r", KeyType::f64, "0.5", "scheme strong order"},
        {"mlmc", "drift", KeyType::f64, "0.05", "gbm drift"},
        {"mlmc", "vol", KeyType::f64, "0.2", "gbm volatility"},
        {"mlmc", "x0", KeyType::f64, "1.0", "gbm initial value"},
        {"mlmc", "T", KeyType::f64, "1.0", "gbm terminal time"},
        {"hybrid", "d", KeyType::u64, "2", "spatial dimension of the training comparison"},
        {"hybrid", "steps", KeyType::u64, "10", "time steps of the training comparison"},
        {"hybrid", "T", KeyType::f64, "0.5", "terminal time of the training comparison"},
        {"hybrid", "iterations", KeyType::u64, "250", "training iterations per model"},
        {"hybrid", "qubits", KeyType::u64, "4", "pqc width in the hybrid model"},
        {"hybrid", "reps", KeyType::u64, "1", "pqc repetitions in the hybrid model"},
        {"cost", "d", KeyType::f64, "3", "dimension for cost-model tables"},
        {"cost", "g_max", KeyType::f64, "4", "gradient sup-norm squared bound"},
        {"cost", "eps", KeyType::f64, "0.1", "target error for cost-model tables"},
        {"cost", "lambda", KeyType::f64, "1.0", "payoff standard-deviation bound"},
        {"cost", "N", KeyType::f64, "4", "time steps for budget tables"},
        {"plot", "inputs", KeyType::string, "", "comma-separated history CSVs (plot-data)"},
    };
    return entries;
}

inline const SchemaEntry* find_entry(const std::string& section, const std::string& key) {
    for (const SchemaEntry& e : schema())
        if (section == e.section && key == e.key) return &e;
    return nullptr;
}

// Flat sectioned key=value text, '#' or ';' comments, unknown keys rejected.
class RunConfig {
public:
    std::string subcommand;

    RunConfig() {
        for (const SchemaEntry& e : schema())
            values_[std::string(e.section) + "." + e.key] = e.default_value;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        RunConfig cfg;
        cfg.parse_stream(is, path);
        return cfg;
    }

    void parse_stream(std::istream& is, const std::string& origin = "<config>") {
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = trim(strip_comment(line));
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            set(section, key, value, origin + ":" + std::to_string(lineno));
        }
    }

    void set(const std::string& section, const std::string& key, const std::string& value,
             const std::string& origin = "<override>") {
        const SchemaEntry* e = find_entry(section, key);
        if (!e) throw ConfigError(origin + ": unknown key [" + section + "] " + key);
        validate(*e, value, origin);
        values_[section + "." + key] = value;
    }

    std::string get_string(const std::string& section, const std::string& key) const {
        auto it = values_.find(section + "." + key);
        require(it != values_.end(), "config: unknown key " + section + "." + key);
        return it->second;
    }
    std::uint64_t get_u64(const std::string& section, const std::string& key) const {
        return std::stoull(get_string(section, key));
    }
    double get_f64(const std::string& section, const std::string& key) const {
        return std::stod(get_string(section, key));
    }
    bool get_bool(const std::string& section, const std::string& key) const {
        std::string v = get_string(section, key);
        return v == "true" || v == "1" || v == "yes" || v == "on";
    }

private:
    std::map<std::string, std::string> values_;

    static std::string strip_comment(const std::string& s) {
        auto pos = s.find_first_of("#;");
        return pos == std::string::npos ? s : s.substr(0, pos);
    }
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
    static void validate(const SchemaEntry& e, const std::string& value, const std::string& origin) {
        try {
            switch (e.type) {
                case KeyType::u64: (void)std::stoull(value); break;
                case KeyType::f64: (void)std::stod(value); break;
                case KeyType::boolean:
                    if (value != "true" && value != "false" && value != "0" && value != "1" &&
                        value != "yes" && value != "no" && value != "on" && value != "off")
                        throw ConfigError("");
                    break;
                case KeyType::string: break;
            }
        } catch (const std::exception&) {
            throw ConfigError(origin + ": bad value for [" + std::string(e.section) + "] " + e.key +
                              ": " + value);
        }
    }
};

inline void print_schema(std::ostream& os) {
    std::string section;
    for (const SchemaEntry& e : schema()) {
        if (section != e.section) {
            section = e.section;
            os << "\n[" << section << "]\n";
        }
        os << "  " << e.key << " = " << e.default_value << "\n      " << e.description << '\n';
    }
}

} // namespace qpde::config
