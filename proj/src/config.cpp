#include "cntn/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace cntn {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

template <class T>
T parse_number(const std::string& s) {
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <class T>
Field num(std::string section, std::string key, T& ref) {
    return {std::move(section), std::move(key),
            [&ref] {
                if constexpr (std::is_floating_point_v<T>) return fmt(ref);
                else return std::to_string(ref);
            },
            [&ref](const std::string& v) { ref = parse_number<T>(v); }};
}

Field flag(std::string section, std::string key, bool& ref) {
    return {std::move(section), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref](const std::string& v) { ref = parse_bool(v); }};
}

Field text(std::string section, std::string key, std::string& ref) {
    return {std::move(section), std::move(key), [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

template <class E>
Field enumeration(std::string section, std::string key, E& ref, E (*parse)(const std::string&)) {
    return {std::move(section), std::move(key), [&ref] { return to_string(ref); },
            [&ref, parse](const std::string& v) { ref = parse(v); }};
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

Field ramp(std::string key, Ramp& ref) {
    return {"schedule", std::move(key),
            [&ref] { return fmt(ref.start) + ", " + fmt(ref.end) + ", " + std::to_string(ref.length); },
            [&ref](const std::string& v) {
                const auto parts = split_commas(v);
                if (parts.size() != 3) throw std::invalid_argument("expected 'start, end, length', got '" + v + "'");
                ref = {parse_number<double>(parts[0]), parse_number<double>(parts[1]), parse_number<long>(parts[2])};
            }};
}

std::vector<Field> fields(ExperimentConfig& c) {
    TrainerConfig& t = c.trainer;
    OptimizerConfig& o = t.optimizer;
    GeneratorSpec& g = c.gen;
    std::vector<Field> f{
        num("experiment", "format_version", c.format_version),
        text("experiment", "data_dir", c.data_dir),
        text("experiment", "output_dir", c.output_dir),
        num("experiment", "eval_every", c.eval_every),

        num("generator", "train_ids", g.n_train_ids),
        num("generator", "test_ids", g.n_test_ids),
        num("generator", "views", g.n_views),
        num("generator", "nm_groups", g.nm_groups),
        num("generator", "bg_groups", g.bg_groups),
        num("generator", "cl_groups", g.cl_groups),
        num("generator", "seqs_per_cell", g.seqs_per_cell),
        num("generator", "frames_min", g.frames_min),
        num("generator", "frames_max", g.frames_max),
        num("generator", "d_in", g.d_in),
        num("generator", "identity_dims", g.identity_dims),
        num("generator", "seed", g.seed),
        num("generator", "frame_jitter", g.frame_jitter),
        num("generator", "sequence_jitter", g.sequence_jitter),
        num("generator", "sequence_nuisance", g.sequence_nuisance),
        num("generator", "bg_shift", g.bg_shift),
        num("generator", "cl_shared", g.cl_shared),
        num("generator", "cl_identity", g.cl_identity),
        num("generator", "view_angle", g.view_angle),

        enumeration("corruption", "mode", c.corruption.mode, &parse_corruption_mode),
        num("corruption", "rate", c.corruption.rate),
        num("corruption", "seed", c.corruption.seed),

        enumeration("trainer", "mode", t.mode, &parse_train_mode),
        num("trainer", "P", t.P),
        num("trainer", "K", t.K),
        num("trainer", "momentum", t.momentum),
        num("trainer", "iterations", t.iterations),
        flag("trainer", "cyclic", t.cyclic),
        flag("trainer", "and", t.and_enabled),
        enumeration("trainer", "augment", t.augment, &parse_augment_spec),
        num("trainer", "seed", t.seed),
        flag("trainer", "trace", t.record_trace),
        num("trainer", "margin", t.margin),
        num("trainer", "temperature", t.temperature),
        flag("trainer", "detach_teacher", t.detach_teacher),
        num("trainer", "sieve_warmup", t.sieve_warmup),
        num("trainer", "sieve_beta", t.sieve_beta),
        num("trainer", "coteach_noise_rate", t.coteach_noise_rate),
        num("trainer", "d_hidden", t.d_hidden),
        num("trainer", "d_emb", t.d_emb),

        {"optimizer", "kind", [&o] { return std::string(o.kind == OptimizerKind::Sgd ? "sgd" : "adam"); },
         [&o](const std::string& v) { o.kind = parse_optimizer_kind(v); }},
        num("optimizer", "lr", o.lr),
        num("optimizer", "momentum", o.momentum),
        num("optimizer", "beta1", o.beta1),
        num("optimizer", "beta2", o.beta2),
        num("optimizer", "eps", o.eps),
        {"optimizer", "milestones",
         [&o] {
             std::string s;
             for (std::size_t i = 0; i < o.milestones.size(); ++i) s += (i ? ", " : "") + std::to_string(o.milestones[i]);
             return s;
         },
         [&o](const std::string& v) {
             o.milestones.clear();
             for (const auto& p : split_commas(v)) o.milestones.push_back(parse_number<long>(p));
         }},
        num("optimizer", "gamma", o.gamma),

        ramp("sigma0", t.schedule.sigma[0]),
        ramp("sigma1", t.schedule.sigma[1]),
        ramp("sigma2", t.schedule.sigma[2]),
        ramp("sigma3", t.schedule.sigma[3]),

        num("eval", "gallery_nm_groups", c.eval.gallery_nm_groups),
        flag("eval", "exclude_same_view", c.eval.exclude_same_view),
    };
    return f;
}

}  // namespace

DatasetManifest ExperimentConfig::manifest() const {
    DatasetManifest m;
    m.gen = gen;
    if (corruption.mode != CorruptionMode::None) m.corruptions.push_back(corruption);
    return m;
}

std::string serialize(const ExperimentConfig& cfg) {
    ExperimentConfig copy = cfg;
    std::ostringstream os;
    std::string section;
    for (const Field& f : fields(copy)) {
        if (f.section != section) {
            if (!section.empty()) os << '\n';
            section = f.section;
            os << '[' << section << "]\n";
        }
        os << f.key << " = " << f.get() << '\n';
    }
    return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    auto table = fields(cfg);
    std::set<std::string> sections;
    for (const Field& f : table) sections.insert(f.section);

    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) throw std::invalid_argument(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
        if (section.empty()) throw std::invalid_argument(where + "key outside any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const Field& f) { return f.section == section && f.key == key; });
        if (it == table.end()) throw std::invalid_argument(where + "unknown key '" + key + "' in [" + section + "]");
        try {
            it->set(value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(where + key + ": " + e.what());
        }
        seen.insert(section + "." + key);
    }
    if (cfg.format_version != kConfigFormatVersion) {
        throw std::invalid_argument("unsupported config format_version " + std::to_string(cfg.format_version));
    }

    // Iteration-dependent defaults follow the configured length unless given.
    const bool any_sigma = seen.count("schedule.sigma0") || seen.count("schedule.sigma1") ||
                           seen.count("schedule.sigma2") || seen.count("schedule.sigma3");
    if (!any_sigma) cfg.trainer.schedule = CoeffSchedule::noisy_default(cfg.trainer.iterations);
    if (!seen.count("optimizer.milestones")) cfg.trainer.optimizer.milestones = {cfg.trainer.iterations / 2};
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write config: " + path.string());
    os << serialize(cfg);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = serialize(cfg);
    return fnv1a(s.data(), s.size());
}

void set_iterations(TrainerConfig& cfg, long iterations) {
    cfg.iterations = iterations;
    cfg.schedule = CoeffSchedule::noisy_default(iterations);
    cfg.optimizer.milestones = {iterations / 2};
}

void apply_mode_defaults(TrainerConfig& cfg, TrainMode mode) {
    cfg.mode = mode;
    cfg.cyclic = mode == TrainMode::Cntn;
    cfg.and_enabled = mode == TrainMode::Cntn;
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("CNTN_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
    }
    return p;
}

int thread_count() {
    const char* v = std::getenv("CNTN_THREADS");
    if (!v || !*v) return 1;
    int n = 0;
    try {
        n = parse_number<int>(v);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument(std::string("CNTN_THREADS must be a positive integer, got '") + v + "'");
    }
    if (n < 1) throw std::invalid_argument(std::string("CNTN_THREADS must be a positive integer, got '") + v + "'");
    return n;
}

}  // namespace cntn
