#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "h2m/eval.hpp"
#include "h2m/pipeline.hpp"

namespace h2m {

// One trained configuration and the sweeps it belongs to ("augmentation",
// "patch_size", "drop_rate").
struct AblationCell {
    ArmSpec arm;
    std::vector<std::string> groups;
};

struct AblationGrid {
    std::vector<std::size_t> patch_sizes{0, 1, 4, 16};  // swept at base_drop_rate
    std::vector<double> drop_rates{0.0, 0.1, 0.25, 0.5};  // swept at base_patch_size
    std::size_t base_patch_size = 1;
    double base_drop_rate = 0.25;
    double sigma = 0.1;  // noise-only and combined arms
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    static AblationGrid default_grid() { return {}; }
    // Only the four augmentation arms.
    static AblationGrid arms_only();

    // Distinct configurations; a setting reached from several sweeps appears
    // once with every group it serves. p = 0 or r = 0 disables patch drop.
    std::vector<AblationCell> cells() const;
    void validate() const;
};

// Canonical cell name: none, noise, patch, combined, p<size>, r<rate>.
std::string arm_name(const PatchDropConfig& patch, const NoiseAugConfig& noise, std::size_t base_patch,
                     double base_rate);

struct CellOutcome {
    AblationCell cell;
    bool skipped = false;
    std::string reason;
    std::vector<std::uint64_t> seeds;
    std::vector<DriftReport> reports;  // parallel to seeds
};

struct PairedTest {
    std::string lower;   // arm expected to drift less
    std::string higher;
    SignTest test;
};

struct OrderingCheck {
    std::string description;
    bool holds = false;
    bool tie_within_sd = false;  // the deciding gap is under one sd
    std::string detail;
};

struct AblationResult {
    std::vector<CellOutcome> cells;
    std::vector<PairedTest> tests;
    std::vector<OrderingCheck> orderings;

    const CellOutcome* find(const std::string& name) const;
};

// Returns the trained stage-2 net for an arm, or nullopt when it is missing.
using ArmModelSource = std::function<std::optional<DenoiserNet>(const ArmSpec&)>;

// Every cell x seed rolls out cfg.rollout_frames frames on the seed's neutral
// held-out sequence, with up to `jobs` rollouts in flight. Missing models skip
// their cell with a warning through `warn`.
AblationResult run_ablation(const AblationGrid& grid, const ArmModelSource& models, const LatentCodec& codec,
                            const GenerationConfig& cfg, std::size_t jobs = 1, const Log& warn = {});

// Paired sign tests and the expected orderings over completed cells.
void assess(AblationResult& result, const AblationGrid& grid);

std::string ablation_csv(const AblationResult& result);
std::string ablation_summary(const AblationResult& result);
// Long format: arm,seed,k,D.
std::string drift_curve_csv(const AblationResult& result);

// Writes ablation.csv, ablation_summary.txt, drift_curves.csv into `dir`.
void write_ablation_outputs(const std::filesystem::path& dir, const AblationResult& result);

}  // namespace h2m
