#include "cntn/gaitgen.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace cntn {

using json = nlohmann::json;

namespace {

enum : std::uint64_t {
    kStreamGlobal = 0x676c6f62,
    kStreamPerson = 0x70657273,
    kStreamSequence = 0x73657175,
    kStreamLabelNoise = 0x6c61626c,
    kStreamAugNoise = 0x61756720,
};

Vec gaussian(Index n, RngStream& rng) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

Vec unit_gaussian(Index n, RngStream& rng) {
    Vec v = gaussian(n, rng);
    return v / v.norm();
}

Mat view_rotation(Index d, Index split, int view, double angle) {
    Mat r = Mat::Identity(d, d);
    const double a = view * angle;
    for (Index k = 0; k < split && split + k < d; ++k) {
        const Index j = split + k;
        r(k, k) = std::cos(a);
        r(k, j) = -std::sin(a);
        r(j, k) = std::sin(a);
        r(j, j) = std::cos(a);
    }
    return r;
}

/// Unit Gaussian direction supported on coordinates [from, from + n) of a d-vector.
Vec block_direction(Index d, Index from, Index n, RngStream& rng) {
    Vec v = Vec::Zero(d);
    v.segment(from, n) = unit_gaussian(n, rng);
    return v;
}

/// Chooses exactly `count` distinct indices from [0, n) with a partial Fisher-Yates shuffle.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t count, RngStream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t exact_count(double rate, std::size_t n) {
    return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

void check_rate(double rate, const char* what) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument(std::string(what) + ": rate must lie in [0, 1)");
}

}  // namespace

std::string to_string(Condition c) {
    switch (c) {
        case Condition::NM: return "NM";
        case Condition::BG: return "BG";
        case Condition::CL: return "CL";
    }
    return "?";
}

std::string to_string(NoiseFlag f) {
    switch (f) {
        case NoiseFlag::Clean: return "clean";
        case NoiseFlag::LabelNoise: return "label";
        case NoiseFlag::AugmentationNoise: return "augmentation";
        case NoiseFlag::SplitNoise: return "split";
    }
    return "?";
}

Condition parse_condition(const std::string& s) {
    if (s == "NM") return Condition::NM;
    if (s == "BG") return Condition::BG;
    if (s == "CL") return Condition::CL;
    throw std::invalid_argument("unknown condition '" + s + "'");
}

NoiseFlag parse_noise_flag(const std::string& s) {
    if (s == "clean") return NoiseFlag::Clean;
    if (s == "label") return NoiseFlag::LabelNoise;
    if (s == "augmentation") return NoiseFlag::AugmentationNoise;
    if (s == "split") return NoiseFlag::SplitNoise;
    throw std::invalid_argument("unknown noise flag '" + s + "'");
}

std::string to_string(CorruptionMode m) {
    switch (m) {
        case CorruptionMode::None: return "none";
        case CorruptionMode::Label: return "label";
        case CorruptionMode::Augmentation: return "augmentation";
        case CorruptionMode::Split: return "split";
    }
    return "?";
}

CorruptionMode parse_corruption_mode(const std::string& s) {
    if (s == "none") return CorruptionMode::None;
    if (s == "label") return CorruptionMode::Label;
    if (s == "augmentation" || s == "augment") return CorruptionMode::Augmentation;
    if (s == "split") return CorruptionMode::Split;
    throw std::invalid_argument("unknown corruption mode '" + s + "'");
}

Dataset make_clean_dataset(const GeneratorSpec& spec, int first_person, int n_ids) {
    if (n_ids < 2) throw std::invalid_argument("make_clean_dataset: need at least 2 identities");
    if (spec.n_views < 1) throw std::invalid_argument("make_clean_dataset: need at least 1 view");
    if (spec.d_in < 1) throw std::invalid_argument("make_clean_dataset: d_in must be positive");
    if (spec.identity_dims < 1 || spec.identity_dims > spec.d_in) {
        throw std::invalid_argument("make_clean_dataset: identity_dims must lie in [1, d_in]");
    }
    if (spec.nm_groups < 0 || spec.bg_groups < 0 || spec.cl_groups < 0 ||
        spec.nm_groups + spec.bg_groups + spec.cl_groups == 0) {
        throw std::invalid_argument("make_clean_dataset: invalid condition mix");
    }
    if (spec.seqs_per_cell < 1) throw std::invalid_argument("make_clean_dataset: seqs_per_cell must be positive");
    if (spec.frames_min < 1 || spec.frames_max < spec.frames_min) {
        throw std::invalid_argument("make_clean_dataset: invalid frame count range");
    }
    if (first_person < 0) throw std::invalid_argument("make_clean_dataset: negative person index");

    const Index d = spec.d_in;
    const Index di = spec.identity_dims;
    const Index dn = d - di;
    RngStream global(spec.seed, kStreamGlobal);
    const Vec bg_dir = unit_gaussian(d, global);
    const Vec cl_dir = block_direction(d, 0, di, global);
    std::vector<Mat> rotations;
    for (int v = 0; v < spec.n_views; ++v) rotations.push_back(view_rotation(d, di, v, spec.view_angle));

    Dataset data;
    data.n_ids = n_ids;
    data.n_views = spec.n_views;
    data.d_in = d;

    const std::array<std::pair<Condition, int>, 3> mix{
        {{Condition::NM, spec.nm_groups}, {Condition::BG, spec.bg_groups}, {Condition::CL, spec.cl_groups}}};

    for (int id = 0; id < n_ids; ++id) {
        const auto person = static_cast<std::uint64_t>(first_person + id);
        RngStream prng = RngStream(spec.seed, kStreamPerson).substream(person);
        const Vec proto = block_direction(d, 0, di, prng);
        const Vec own_dir = block_direction(d, 0, di, prng);
        const RngStream seq_root = RngStream(spec.seed, kStreamSequence).substream(person);
        std::uint64_t seq_no = 0;

        for (const auto& [cond, groups] : mix) {
            Vec base = proto;
            if (cond == Condition::BG) base += spec.bg_shift * bg_dir;
            if (cond == Condition::CL) base += spec.cl_shared * cl_dir + spec.cl_identity * own_dir;
            for (int g = 0; g < groups; ++g) {
                for (int v = 0; v < spec.n_views; ++v) {
                    for (int s = 0; s < spec.seqs_per_cell; ++s) {
                        RngStream srng = seq_root.substream(seq_no++);
                        const int span = spec.frames_max - spec.frames_min + 1;
                        const int frames = spec.frames_min + static_cast<int>(srng.below(static_cast<std::uint64_t>(span)));
                        Vec centre = base;
                        centre.head(di) += spec.sequence_jitter * gaussian(di, srng);
                        if (dn > 0) centre.tail(dn) += spec.sequence_nuisance * gaussian(dn, srng);
                        Mat x(d, frames);
                        for (int t = 0; t < frames; ++t) x.col(t) = centre + spec.frame_jitter * gaussian(d, srng);
                        SequenceSample sample;
                        sample.frames = rotations[static_cast<std::size_t>(v)] * x;
                        sample.identity = id;
                        sample.clean_identity = id;
                        sample.condition = cond;
                        sample.group = g;
                        sample.view = v;
                        data.samples.push_back(std::move(sample));
                    }
                }
            }
        }
    }
    return data;
}

Dataset inject_random_label_noise(Dataset data, double rate, std::uint64_t seed) {
    check_rate(rate, "inject_random_label_noise");
    const std::size_t count = exact_count(rate, data.size());
    if (count == 0) return data;
    if (data.n_ids < 2) throw std::invalid_argument("inject_random_label_noise: need at least 2 identities");
    RngStream rng(seed, kStreamLabelNoise);
    for (std::size_t i : choose_without_replacement(data.size(), count, rng)) {
        SequenceSample& s = data.samples[i];
        const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(data.n_ids - 1)));
        s.identity = r >= s.clean_identity ? r + 1 : r;
        s.noise_flag = NoiseFlag::LabelNoise;
    }
    return data;
}

Dataset inject_augmentation_noise(Dataset data, double rate, std::uint64_t seed) {
    check_rate(rate, "inject_augmentation_noise");
    const std::size_t count = exact_count(rate, data.size());
    if (count == 0) return data;
    constexpr double kShift = 0.9;
    constexpr double kScale = 0.35;
    RngStream rng(seed, kStreamAugNoise);
    for (std::size_t i : choose_without_replacement(data.size(), count, rng)) {
        SequenceSample& s = data.samples[i];
        RngStream srng = rng.substream(i);
        const Vec shift = kShift * unit_gaussian(s.frames.rows(), srng);
        for (Index t = 0; t < s.frames.cols(); ++t) {
            for (Index k = 0; k < s.frames.rows(); ++k) s.frames(k, t) *= 1.0 + kScale * srng.normal();
            s.frames.col(t) += shift;
        }
        if (s.noise_flag == NoiseFlag::Clean) s.noise_flag = NoiseFlag::AugmentationNoise;
    }
    return data;
}

Dataset inject_identity_split(Dataset data, double fraction, std::uint64_t /*seed*/) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("inject_identity_split: fraction outside [0, 1]");
    const int affected = static_cast<int>(std::floor(fraction * data.n_ids + 1e-9));
    if (affected == 0) return data;
    std::vector<int> new_id(static_cast<std::size_t>(data.n_ids), -1);
    int next = data.n_ids;
    for (int id = 0; id < affected; ++id) {
        const bool has_cl = std::any_of(data.samples.begin(), data.samples.end(), [&](const SequenceSample& s) {
            return s.identity == id && s.condition == Condition::CL;
        });
        if (has_cl) new_id[static_cast<std::size_t>(id)] = next++;
    }
    for (SequenceSample& s : data.samples) {
        if (s.condition != Condition::CL || s.identity >= affected) continue;
        const int target = new_id[static_cast<std::size_t>(s.identity)];
        if (target < 0) continue;
        s.identity = target;
        s.condition = Condition::NM;
        s.noise_flag = NoiseFlag::SplitNoise;
    }
    data.n_ids = next;
    return data;
}

Dataset apply_corruption(Dataset data, const Corruption& c) {
    switch (c.mode) {
        case CorruptionMode::None: return data;
        case CorruptionMode::Label: return inject_random_label_noise(std::move(data), c.rate, c.seed);
        case CorruptionMode::Augmentation: return inject_augmentation_noise(std::move(data), c.rate, c.seed);
        case CorruptionMode::Split: return inject_identity_split(std::move(data), c.rate, c.seed);
    }
    return data;
}

GeneratedData generate(const DatasetManifest& manifest) {
    if (manifest.format_version != kDatasetFormatVersion) throw std::invalid_argument("manifest: unsupported format version");
    if (manifest.generator_version != kGeneratorVersion) {
        throw std::invalid_argument("manifest: generator version '" + manifest.generator_version + "' is not " +
                                    kGeneratorVersion);
    }
    GeneratedData out;
    out.train = make_clean_dataset(manifest.gen, 0, manifest.gen.n_train_ids);
    out.test = make_clean_dataset(manifest.gen, manifest.gen.n_train_ids, manifest.gen.n_test_ids);
    for (const Corruption& c : manifest.corruptions) out.train = apply_corruption(std::move(out.train), c);
    return out;
}

std::string to_string(AugmentSpec s) {
    switch (s) {
        case AugmentSpec::None: return "none";
        case AugmentSpec::Standard: return "standard";
        case AugmentSpec::StandardDup: return "standard+dup";
    }
    return "?";
}

AugmentSpec parse_augment_spec(const std::string& s) {
    if (s == "none") return AugmentSpec::None;
    if (s == "standard") return AugmentSpec::Standard;
    if (s == "standard+dup") return AugmentSpec::StandardDup;
    throw std::invalid_argument("unknown augmentation spec '" + s + "'");
}

Mat Augmentation::apply(const Mat& frames) const {
    if (spec_ == AugmentSpec::None) return frames;
    RngStream rng = rng_;
    const Index n = frames.cols();
    std::vector<double> u(static_cast<std::size_t>(n));
    for (auto& x : u) x = rng.uniform();

    std::vector<Index> kept;
    for (Index t = 0; t < n; ++t)
        if (u[static_cast<std::size_t>(t)] >= kDropProbability) kept.push_back(t);
    const Index floor = std::min(kMinFrames, n);
    if (static_cast<Index>(kept.size()) < floor) {
        // refill with the frames that had the largest draws, then restore time order
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return u[static_cast<std::size_t>(a)] > u[static_cast<std::size_t>(b)]; });
        kept.assign(order.begin(), order.begin() + floor);
        std::sort(kept.begin(), kept.end());
    }
    if (spec_ == AugmentSpec::StandardDup && rng.uniform() < 0.5) {
        const auto pick = static_cast<std::size_t>(rng.below(kept.size()));
        kept.insert(kept.begin() + static_cast<std::ptrdiff_t>(pick), kept[pick]);
    }

    Mat out(frames.rows(), static_cast<Index>(kept.size()));
    for (Index c = 0; c < out.cols(); ++c) {
        out.col(c) = frames.col(kept[static_cast<std::size_t>(c)]);
        for (Index k = 0; k < out.rows(); ++k) out(k, c) += kJitter * rng.normal();
    }
    return out;
}

Augmentation sample_augmentation(AugmentSpec spec, RngStream& rng) {
    return Augmentation(spec, rng.substream(rng.next_u64()));
}

void write_dataset(const std::filesystem::path& path, const Dataset& data, std::optional<std::uint64_t> config_hash) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open dataset for writing: " + path.string());
    for (const SequenceSample& s : data.samples) {
        json frames = json::array();
        for (Index t = 0; t < s.frames.cols(); ++t) {
            json f = json::array();
            for (Index k = 0; k < s.frames.rows(); ++k) f.push_back(s.frames(k, t));
            frames.push_back(std::move(f));
        }
        json j;
        j["format_version"] = kDatasetFormatVersion;
        j["id"] = s.identity;
        j["clean_id"] = s.clean_identity;
        j["condition"] = to_string(s.condition);
        j["group"] = s.group;
        j["view"] = s.view;
        j["noise_flag"] = to_string(s.noise_flag);
        j["frames"] = std::move(frames);
        if (config_hash) j["config_hash"] = hex64(*config_hash);
        os << j.dump() << '\n';
    }
    if (!os) throw std::runtime_error("failed writing dataset: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open dataset: " + path.string());
    Dataset data;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("malformed dataset line " + where + ": " + e.what());
        }
        if (j.value("format_version", -1) != kDatasetFormatVersion) {
            throw std::runtime_error("missing or unsupported format_version at " + where);
        }
        SequenceSample s;
        s.identity = j.at("id").get<int>();
        s.clean_identity = j.at("clean_id").get<int>();
        s.condition = parse_condition(j.at("condition").get<std::string>());
        s.group = j.value("group", 0);
        s.view = j.at("view").get<int>();
        s.noise_flag = parse_noise_flag(j.at("noise_flag").get<std::string>());
        const json& frames = j.at("frames");
        if (frames.empty()) throw std::runtime_error("sequence without frames at " + where);
        const auto d = static_cast<Index>(frames.at(0).size());
        if (data.d_in == 0) data.d_in = d;
        if (d != data.d_in) throw std::runtime_error("frame dimension mismatch at " + where);
        s.frames.resize(d, static_cast<Index>(frames.size()));
        for (Index t = 0; t < s.frames.cols(); ++t) {
            const json& f = frames.at(static_cast<std::size_t>(t));
            if (static_cast<Index>(f.size()) != d) throw std::runtime_error("frame dimension mismatch at " + where);
            for (Index k = 0; k < d; ++k) s.frames(k, t) = f.at(static_cast<std::size_t>(k)).get<double>();
        }
        data.n_ids = std::max(data.n_ids, s.identity + 1);
        data.n_views = std::max(data.n_views, s.view + 1);
        data.samples.push_back(std::move(s));
    }
    return data;
}

namespace {

json gen_to_json(const GeneratorSpec& g) {
    return json{{"n_train_ids", g.n_train_ids},
                {"n_test_ids", g.n_test_ids},
                {"n_views", g.n_views},
                {"nm_groups", g.nm_groups},
                {"bg_groups", g.bg_groups},
                {"cl_groups", g.cl_groups},
                {"seqs_per_cell", g.seqs_per_cell},
                {"frames_min", g.frames_min},
                {"frames_max", g.frames_max},
                {"d_in", g.d_in},
                {"identity_dims", g.identity_dims},
                {"seed", g.seed},
                {"frame_jitter", g.frame_jitter},
                {"sequence_jitter", g.sequence_jitter},
                {"sequence_nuisance", g.sequence_nuisance},
                {"bg_shift", g.bg_shift},
                {"cl_shared", g.cl_shared},
                {"cl_identity", g.cl_identity},
                {"view_angle", g.view_angle}};
}

GeneratorSpec gen_from_json(const json& j) {
    GeneratorSpec g;
    g.n_train_ids = j.at("n_train_ids").get<int>();
    g.n_test_ids = j.at("n_test_ids").get<int>();
    g.n_views = j.at("n_views").get<int>();
    g.nm_groups = j.at("nm_groups").get<int>();
    g.bg_groups = j.at("bg_groups").get<int>();
    g.cl_groups = j.at("cl_groups").get<int>();
    g.seqs_per_cell = j.at("seqs_per_cell").get<int>();
    g.frames_min = j.at("frames_min").get<int>();
    g.frames_max = j.at("frames_max").get<int>();
    g.d_in = j.at("d_in").get<Index>();
    g.identity_dims = j.at("identity_dims").get<Index>();
    g.seed = j.at("seed").get<std::uint64_t>();
    g.frame_jitter = j.at("frame_jitter").get<double>();
    g.sequence_jitter = j.at("sequence_jitter").get<double>();
    g.sequence_nuisance = j.at("sequence_nuisance").get<double>();
    g.bg_shift = j.at("bg_shift").get<double>();
    g.cl_shared = j.at("cl_shared").get<double>();
    g.cl_identity = j.at("cl_identity").get<double>();
    g.view_angle = j.at("view_angle").get<double>();
    return g;
}

}  // namespace

json manifest_json(const DatasetManifest& m) {
    json corr = json::array();
    for (const Corruption& c : m.corruptions) corr.push_back({{"mode", to_string(c.mode)}, {"rate", c.rate}, {"seed", c.seed}});
    return json{{"format_version", m.format_version},
                {"generator_version", m.generator_version},
                {"generator", gen_to_json(m.gen)},
                {"corruptions", std::move(corr)}};
}

std::uint64_t manifest_hash(const DatasetManifest& m) {
    const std::string s = manifest_json(m).dump();
    return fnv1a(s.data(), s.size());
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m, std::optional<std::uint64_t> config_hash) {
    json j = manifest_json(m);
    if (config_hash) j["config_hash"] = hex64(*config_hash);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open manifest for writing: " + path.string());
    os << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion) throw std::runtime_error("unsupported manifest version in " + path.string());
    m.generator_version = j.at("generator_version").get<std::string>();
    m.gen = gen_from_json(j.at("generator"));
    for (const json& c : j.at("corruptions")) {
        m.corruptions.push_back(Corruption{parse_corruption_mode(c.at("mode").get<std::string>()), c.at("rate").get<double>(),
                                           c.at("seed").get<std::uint64_t>()});
    }
    return m;
}

}  // namespace cntn
