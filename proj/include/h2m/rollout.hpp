#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "h2m/augment.hpp"
#include "h2m/blob.hpp"
#include "h2m/codec.hpp"
#include "h2m/denoiser.hpp"
#include "h2m/diffusion.hpp"
#include "h2m/optim.hpp"

namespace h2m {

inline constexpr std::size_t kSegmentLength = 16;
inline constexpr std::size_t kWindowSize = 4;

// Training corpus with clean latents cached per sequence.
struct TrainingSet {
    std::vector<BlobSequence> sequences;
    std::vector<Tensor> latents;  // per sequence [T, 8, 8, 8]

    static TrainingSet build(std::vector<BlobSequence> sequences, const LatentCodec& codec);
    std::size_t frame_count() const;
};

struct TrainingPlan {
    int stage = 1;
    std::size_t steps = 3000;
    std::size_t batch = 4;
    double lr = 2e-3;
    double snr_gamma = 0.0;  // Min-SNR loss weighting; 0: uniform
    std::size_t warmup = 100;
    std::size_t segment_length = kSegmentLength;
    std::size_t window = kWindowSize;
    double start_clip_fraction = 0.15;  // clips forced to begin at frame 0
    PatchDropConfig patch{0, 0.0, DropDomain::image};
    NoiseAugConfig noise{0.0};
    NoiseSchedule schedule = fast_schedule();
    std::size_t checkpoint_every = 0;  // 0 disables
    std::filesystem::path checkpoint_dir;

    // Stage 1 must run without augmentation.
    void validate() const;
};

struct TrainingState {
    AdamState adam;
    std::size_t step = 0;
};

// Runs steps state.step .. plan.steps-1. Step s draws only from Rng(seed).split(s),
// so a run resumed from a checkpoint repeats the uninterrupted losses exactly.
// A non-finite loss writes the offending batch to <checkpoint_dir>/nan_batch.h2mc
// (or the working directory) and throws StateError.
std::vector<double> train(DenoiserNet& net, const TrainingSet& data, const TrainingPlan& plan,
                          const LatentCodec& codec, TrainingState& state, std::uint64_t seed,
                          const std::function<void(std::size_t step, double loss)>& on_step = {});

void save_training_checkpoint(const std::filesystem::path& path, const DenoiserNet& net, const TrainingState& state);
// Restores the network and Adam state; returns the step to resume from.
TrainingState load_training_checkpoint(const std::filesystem::path& path, DenoiserNet& net);

// The N most recent frames and their augmented latents.
class MotionWindow {
   public:
    explicit MotionWindow(std::size_t size = kWindowSize) : size_(size) {}

    // N copies of the reference frame.
    void reset(const Image& reference);
    // Slides in generated frames; keeps the last N.
    void push(const std::vector<Image>& frames);
    void set_frames(std::vector<Image> frames);
    // Re-encodes the frames through the augmentation pipeline.
    void refresh(const LatentCodec& codec, const PatchDropConfig& pd, const NoiseAugConfig& na, const Rng& rng);

    std::size_t size() const { return size_; }
    const std::deque<Image>& frames() const { return frames_; }
    std::deque<Image>& frames() { return frames_; }
    const std::vector<Tensor>& latents() const { return latents_; }

   private:
    std::size_t size_;
    std::deque<Image> frames_;
    std::vector<Tensor> latents_;
};

struct Segment {
    Tensor latents;             // [L, 8, 8, 8]
    std::vector<Image> frames;  // decoded
};

// One joint sampling pass over L frames.
Segment generate_segment(const DenoiserNet& net, const LatentCodec& codec, const ConditioningSet& cond,
                         std::size_t length, const NoiseSchedule& sched, Rng& rng,
                         AttentionRecorder* recorder = nullptr);

struct RolloutConfig {
    std::size_t segment_length = kSegmentLength;
    PatchDropConfig patch;
    NoiseAugConfig noise;
    NoiseSchedule schedule = fast_schedule();
    std::uint64_t seed = 0;
};

struct FrameInfo {
    Expression label = Expression::neutral;
    double signal = 0.0;
    std::size_t segment = 0;
};

struct VideoResult {
    std::vector<Image> frames;
    std::vector<FrameInfo> timeline;
    std::string checkpoint;  // provenance of the weights, informational
};

struct RolloutHooks {
    // Called with the window frames just before they are augmented for `segment`.
    std::function<void(std::size_t segment, std::deque<Image>& window)> before_refresh;
    // Called after each segment with the window ready for the next one.
    std::function<void(std::size_t segment, const MotionWindow& window)> after_segment;
    AttentionRecorder* recorder = nullptr;
};

// Label in force for a segment: the track value at its first frame (hard switch).
Expression segment_label(const std::vector<ExpressionLabel>& labels, std::size_t first_frame);

// Segment-by-segment generation. total_frames is rounded up to a multiple of L;
// signal samples beyond the end are edge-replicated. Segment k draws only from
// Rng(cfg.seed).split(k).
VideoResult rollout(const DenoiserNet& net, const LatentCodec& codec, const Image& reference,
                    const DrivingSignal& signal, const std::vector<ExpressionLabel>& labels, std::size_t total_frames,
                    const RolloutConfig& cfg, const RolloutHooks& hooks = {});

// Continues a rollout from segment `first_segment` given only the window frames
// in force at that point; reproduces the remaining frames of the full run.
VideoResult resume_rollout(const DenoiserNet& net, const LatentCodec& codec, const Image& reference,
                           const DrivingSignal& signal, const std::vector<ExpressionLabel>& labels,
                           std::size_t total_frames, const RolloutConfig& cfg, std::size_t first_segment,
                           std::vector<Image> window_frames, const RolloutHooks& hooks = {});

// Frame PPMs plus timeline.json.
void write_video(const std::filesystem::path& dir, const VideoResult& video);
VideoResult read_video(const std::filesystem::path& dir);

}  // namespace h2m
