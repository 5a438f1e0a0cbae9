#include "lab/config.hpp"

#include "lab/flow.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lab {

const std::vector<std::string>& known_stages() {
    static const std::vector<std::string> stages = {
        "orbit",       "lyapunov",   "scaled_spectrum", "splitting",     "domination",
        "sectional",   "singularity", "entropy",        "volume",        "expansiveness",
        "pesin",       "certify",    "recurrence",      "shadow",        "census",
    };
    return stages;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& s, double& out) {
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end && *end == '\0' && end != s.c_str();
}

std::string fmt_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void assign(ExperimentConfig& cfg, StageConfig* stage, bool in_system_params,
            const std::string& key, const std::string& raw, int line_no) {
    std::string value = trim(raw);
    auto bad = [&](const std::string& why) {
        throw InputError("config line " + std::to_string(line_no) + ": " + why);
    };
    bool is_string = value.size() >= 2 && value.front() == '"' && value.back() == '"';
    std::string sval = is_string ? value.substr(1, value.size() - 2) : "";
    double nval = 0.0;
    bool is_number = !is_string && parse_number(value, nval);
    if (!is_string && !is_number) {
        if (value == "true") {
            is_number = true;
            nval = 1.0;
        } else if (value == "false") {
            is_number = true;
            nval = 0.0;
        } else {
            bad("unparseable value '" + value + "'");
        }
    }

    if (stage) {
        if (key == "name") {
            if (!is_string) bad("stage name must be a string");
            if (std::find(known_stages().begin(), known_stages().end(), sval) ==
                known_stages().end())
                bad("unknown stage '" + sval + "'");
            stage->name = sval;
        } else if (is_string) {
            stage->str[key] = sval;
        } else {
            stage->num[key] = nval;
        }
        return;
    }
    if (in_system_params) {
        if (!is_number) bad("system parameter must be numeric");
        cfg.system_params[key] = nval;
        return;
    }
    if (key == "system") {
        if (!is_string) bad("system must be a string");
        cfg.system = sval;
    } else if (key == "seed") {
        cfg.seed = static_cast<uint64_t>(nval);
    } else if (key == "output_dir") {
        if (!is_string) bad("output_dir must be a string");
        cfg.output_dir = sval;
    } else if (key == "time_budget_s") {
        cfg.time_budget_s = nval;
    } else if (key == "vertex_budget") {
        cfg.vertex_budget = static_cast<int>(nval);
    } else if (key == "sample_budget") {
        cfg.sample_budget = static_cast<int64_t>(nval);
    } else if (key == "tol") {
        cfg.tol = nval;
    } else if (key == "threads") {
        cfg.threads = static_cast<int>(nval);
    } else {
        bad("unknown top-level key '" + key + "'");
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    enum class Section { kTop, kSystemParams, kStage } section = Section::kTop;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line == "[[stage]]") {
            cfg.pipeline.emplace_back();
            section = Section::kStage;
            continue;
        }
        if (line == "[system.params]") {
            section = Section::kSystemParams;
            continue;
        }
        if (line.front() == '[')
            throw InputError("config line " + std::to_string(line_no) + ": unknown section " +
                             line);
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        StageConfig* stage = section == Section::kStage ? &cfg.pipeline.back() : nullptr;
        assign(cfg, stage, section == Section::kSystemParams, key, line.substr(eq + 1), line_no);
    }
    for (const StageConfig& s : cfg.pipeline)
        if (s.name.empty()) throw InputError("config: stage without a name");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string dump_config(const ExperimentConfig& config) {
    std::ostringstream out;
    out << "system = \"" << config.system << "\"\n";
    out << "seed = " << config.seed << "\n";
    out << "output_dir = \"" << config.output_dir << "\"\n";
    out << "time_budget_s = " << fmt_number(config.time_budget_s) << "\n";
    out << "vertex_budget = " << config.vertex_budget << "\n";
    out << "sample_budget = " << config.sample_budget << "\n";
    out << "tol = " << fmt_number(config.tol) << "\n";
    out << "threads = " << config.threads << "\n";
    if (!config.system_params.empty()) {
        out << "\n[system.params]\n";
        for (const auto& [k, v] : config.system_params) out << k << " = " << fmt_number(v) << "\n";
    }
    for (const StageConfig& s : config.pipeline) {
        out << "\n[[stage]]\nname = \"" << s.name << "\"\n";
        for (const auto& [k, v] : s.num) out << k << " = " << fmt_number(v) << "\n";
        for (const auto& [k, v] : s.str) out << k << " = \"" << v << "\"\n";
    }
    return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
    std::string text = dump_config(config);
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace lab
