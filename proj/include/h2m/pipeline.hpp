#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "h2m/config.hpp"
#include "h2m/denoiser.hpp"
#include "h2m/enhancer.hpp"
#include "h2m/rollout.hpp"
#include "h2m/vq.hpp"

namespace h2m {

using Log = std::function<void(const std::string&)>;

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);

// HALLO2_MICRO_CACHE when set, else ./.h2m-cache.
std::filesystem::path cache_root();

// One augmentation arm of stage-2 training.
struct ArmSpec {
    std::string name;
    PatchDropConfig patch{0, 0.0, DropDomain::image};
    NoiseAugConfig noise{0.0};
    bool operator==(const ArmSpec&) const = default;
};

// The arm described by a config's augmentation block.
ArmSpec config_arm(const GenerationConfig& cfg);

// Training corpus (from data.train_dir when set) and held-out driving sequences.
std::vector<BlobSequence> training_corpus(const DataSpec& data);
BlobSequence heldout_sequence(const GenerationConfig& cfg, std::uint64_t seed, bool neutral_only);

RolloutConfig rollout_config(const GenerationConfig& cfg, const ArmSpec& arm, std::uint64_t seed);
DenoiserConfig denoiser_config(const GenerationConfig& cfg);

// Enhancer corpus: palette sequences of 64 frames (24 for training, 5 held out).
std::vector<HqPair> enhancer_pairs(const GenerationConfig& cfg, bool heldout);

// Training recipes shared by the CLI and the cache. Each is a pure function of
// its arguments, seeded from cfg.training.seed.
LatentCodec train_codec_model(const GenerationConfig& cfg, const std::vector<BlobSequence>& corpus);
DenoiserNet train_stage1_model(const GenerationConfig& cfg, const LatentCodec& codec,
                               const std::vector<BlobSequence>& corpus);
DenoiserNet train_stage2_model(const GenerationConfig& cfg, const LatentCodec& codec,
                               const std::vector<BlobSequence>& corpus, DenoiserNet stage1, const ArmSpec& arm);
VqModel train_vq_model(const GenerationConfig& cfg);
CodeEnhancer train_enhancer_model(const GenerationConfig& cfg, const VqModel& vq, bool temporal);

// Trained models keyed by the hash of every setting that shapes them. Missing
// entries are trained on demand and written to the cache; present ones load.
class ModelStore {
   public:
    ModelStore(GenerationConfig cfg, std::filesystem::path root, Log log = {});

    const GenerationConfig& config() const { return cfg_; }
    const std::filesystem::path& root() const { return root_; }

    std::filesystem::path codec_path() const;
    std::filesystem::path stage1_path() const;
    std::filesystem::path stage2_path(const ArmSpec& arm) const;
    std::filesystem::path vq_path() const;
    std::filesystem::path enhancer_path(bool temporal) const;

    LatentCodec codec();
    DenoiserNet stage1();
    DenoiserNet stage2(const ArmSpec& arm);
    VqModel vq();
    CodeEnhancer enhancer(bool temporal);

    // CPU seconds spent training a cached checkpoint, from its ".seconds" sidecar.
    static std::optional<double> training_seconds(const std::filesystem::path& checkpoint);

   private:
    std::string codec_key() const;
    std::string stage1_key() const;
    std::string vq_key() const;
    void note(const std::string& msg) const;

    GenerationConfig cfg_;
    std::filesystem::path root_;
    Log log_;
};

}  // namespace h2m
