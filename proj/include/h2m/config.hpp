#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "h2m/augment.hpp"
#include "h2m/blob.hpp"
#include "h2m/codec.hpp"
#include "h2m/diffusion.hpp"

namespace h2m {

struct ScheduleSpec {
    std::size_t steps = 50;
    double beta_start = 1e-3;
    double beta_end = 0.2;

    NoiseSchedule make() const { return make_schedule(steps, beta_start, beta_end); }
    bool operator==(const ScheduleSpec&) const = default;
};

struct DataSpec {
    std::string train_dir;  // empty: generate the corpus from `seed`
    std::size_t sequences = 192;
    std::size_t length = 32;
    std::uint64_t seed = 1000;
    std::uint64_t heldout_seed = 777;  // driving sequences for rollouts and metrics
    bool operator==(const DataSpec&) const = default;
};

struct TrainingSpec {
    std::size_t codec_steps = 6000;
    double codec_lr = 3e-3;
    std::size_t stage1_steps = 3000;
    std::size_t stage2_steps = 1500;
    std::size_t batch = 4;
    double lr = 2e-3;
    double snr_gamma = 5.0;  // Min-SNR loss weighting; 0: uniform
    std::size_t vq_steps = 1500;
    std::size_t enhancer_steps = 1200;
    std::uint64_t seed = 21;
    bool operator==(const TrainingSpec&) const = default;
};

struct ModelSpec {
    std::size_t width = 16;
    std::size_t stages = 3;
    double prior_variance = 0.1;  // 0: plain eps head
    std::size_t enhancer_width = 32;
    std::size_t enhancer_blocks = 4;
    std::size_t codebook_size = 64;
    std::size_t code_dim = 8;
    bool operator==(const ModelSpec&) const = default;
};

// The one declarative run description shared by every subcommand.
struct GenerationConfig {
    ScheduleSpec schedule;
    LatentMode latent_mode = LatentMode::codec;
    PatchDropConfig patch{1, 0.25, DropDomain::image};
    NoiseAugConfig noise{0.1};
    std::size_t segment_length = 16;
    std::size_t window = 4;
    std::size_t rollout_frames = 256;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    DataSpec data;
    std::vector<ExpressionLabel> labels{{Expression::neutral, 0}};
    bool enhancer = false;
    TrainingSpec training;
    ModelSpec model;

    bool operator==(const GenerationConfig&) const = default;
};

// Parses and validates; every error is a ValidationError prefixed with
// "<source>:<line>:" pointing at the offending key (or the syntax error).
GenerationConfig parse_config(const std::string& text, const std::string& source = "<config>");
GenerationConfig load_config(const std::filesystem::path& path);

// Canonical form: every field, fixed key order, two-space indent, trailing newline.
std::string serialize_config(const GenerationConfig& cfg);

// Cross-field checks shared by the parser and programmatic callers.
void validate_config(const GenerationConfig& cfg);

// JSON Schema (draft 2020-12) describing the accepted config files.
std::string config_schema();

}  // namespace h2m
