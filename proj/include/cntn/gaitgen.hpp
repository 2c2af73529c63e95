// Synthetic sequence-set datasets with walking-condition and view structure,
// the three label/appearance corruptions, and sequence augmentations.
#pragma once

#include "cntn/numkit.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cntn {

enum class Condition : int { NM = 0, BG = 1, CL = 2 };
enum class NoiseFlag : int { Clean = 0, LabelNoise = 1, AugmentationNoise = 2, SplitNoise = 3 };

std::string to_string(Condition c);
std::string to_string(NoiseFlag f);
Condition parse_condition(const std::string& s);
NoiseFlag parse_noise_flag(const std::string& s);

struct SequenceSample {
    Mat frames;  // d_in x T
    int identity = 0;
    int clean_identity = 0;
    Condition condition = Condition::NM;
    int group = 0;  // sequence group within the condition, e.g. NM#group
    int view = 0;
    NoiseFlag noise_flag = NoiseFlag::Clean;

    bool operator==(const SequenceSample&) const = default;
};

struct Dataset {
    std::vector<SequenceSample> samples;
    int n_ids = 0;  // size of the label space
    int n_views = 0;
    Index d_in = 0;

    std::size_t size() const { return samples.size(); }
    bool operator==(const Dataset&) const = default;
};

/// Shape and appearance parameters of a generated population.
///
/// Coordinates split into an identity block (the first identity_dims) and a
/// nuisance block. Frame t of a sequence of person i, condition c, view v:
///   R_v (u_i + offset_c(i) + s + n + e_t)
/// with u_i a unit prototype in the identity block, s a small per-sequence
/// offset in the identity block, n a per-sequence draw in the nuisance block
/// (scale sequence_nuisance), e_t per-frame jitter and R_v a rotation by
/// v * view_angle in the planes (k, identity_dims + k) that mix the two blocks.
/// Clothing moves the identity block along a shared and a per-person direction;
/// the bag shift is a shared direction over all coordinates.
struct GeneratorSpec {
    int n_train_ids = 40;
    int n_test_ids = 20;
    int n_views = 4;
    int nm_groups = 6;
    int bg_groups = 2;
    int cl_groups = 2;
    int seqs_per_cell = 1;  // sequences per (group, view)
    int frames_min = 30;
    int frames_max = 30;
    Index d_in = 16;
    Index identity_dims = 8;
    std::uint64_t seed = 1;

    double frame_jitter = 0.15;
    double sequence_jitter = 0.12;
    double sequence_nuisance = 0.6;
    double bg_shift = 0.3;
    double cl_shared = 0.25;    // along a direction common to everyone
    double cl_identity = 0.15;  // along a per-person direction
    double view_angle = 0.15;

    bool operator==(const GeneratorSpec&) const = default;
};

/// Population of `n_ids` persons starting at person index `first_person`,
/// labelled 0..n_ids-1. Persons are addressed by index so disjoint ranges give
/// disjoint populations drawn from the same seed.
Dataset make_clean_dataset(const GeneratorSpec& spec, int first_person, int n_ids);

enum class CorruptionMode { None, Label, Augmentation, Split };

std::string to_string(CorruptionMode m);
CorruptionMode parse_corruption_mode(const std::string& s);

struct Corruption {
    CorruptionMode mode = CorruptionMode::None;
    double rate = 0.0;  // rate for label/augmentation noise, fraction of ids for split
    std::uint64_t seed = 0;

    bool operator==(const Corruption&) const = default;
};

/// Relabels exactly round(rate * n) sequences, chosen without replacement, to
/// a uniformly drawn identity other than their clean one.
Dataset inject_random_label_noise(Dataset data, double rate, std::uint64_t seed);

/// Applies a strong appearance perturbation to exactly round(rate * n) sequences;
/// labels are untouched.
Dataset inject_augmentation_noise(Dataset data, double rate, std::uint64_t seed);

/// For the first floor(fraction * n_ids) identities, moves every CL sequence to
/// a new identity appended after the label space and retags it NM.
Dataset inject_identity_split(Dataset data, double fraction, std::uint64_t seed = 0);

Dataset apply_corruption(Dataset data, const Corruption& c);

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kGeneratorVersion = "cntn-gaitgen-1";

struct DatasetManifest {
    GeneratorSpec gen;
    std::vector<Corruption> corruptions;  // applied to the train split in order
    int format_version = kDatasetFormatVersion;
    std::string generator_version = kGeneratorVersion;

    bool operator==(const DatasetManifest&) const = default;
};

struct GeneratedData {
    Dataset train;
    Dataset test;
};

GeneratedData generate(const DatasetManifest& manifest);

/// Sequence augmentations drawn per sample and per network.
enum class AugmentSpec { None, Standard, StandardDup };

std::string to_string(AugmentSpec s);
AugmentSpec parse_augment_spec(const std::string& s);

/// A concrete transformation: frame dropout (p = 0.2, at least 4 frames kept),
/// Gaussian jitter (sigma = 0.05) and, for StandardDup, duplication of one frame
/// with probability 1/2. All draws come from the captured stream, so applying
/// the same transformation twice gives the same result.
class Augmentation {
public:
    Augmentation() = default;
    Augmentation(AugmentSpec spec, RngStream rng) : spec_(spec), rng_(rng) {}

    AugmentSpec spec() const { return spec_; }
    bool is_identity() const { return spec_ == AugmentSpec::None; }
    Mat apply(const Mat& frames) const;

    static constexpr double kDropProbability = 0.2;
    static constexpr Index kMinFrames = 4;
    static constexpr double kJitter = 0.05;

private:
    AugmentSpec spec_ = AugmentSpec::None;
    RngStream rng_;
};

Augmentation sample_augmentation(AugmentSpec spec, RngStream& rng);

// Dataset file: JSON lines, one sequence per line with keys format_version,
// id, clean_id, condition, group, view, noise_flag, frames (list of frames,
// each a list of d_in numbers), plus config_hash (hex) when one is given.
// The manifest is a JSON document.
void write_dataset(const std::filesystem::path& path, const Dataset& data,
                   std::optional<std::uint64_t> config_hash = std::nullopt);
Dataset read_dataset(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m,
                    std::optional<std::uint64_t> config_hash = std::nullopt);
/// Hash of the manifest's canonical JSON form.
std::uint64_t manifest_hash(const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace cntn
