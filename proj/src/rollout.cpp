#include "h2m/rollout.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "h2m/checkpoint.hpp"
#include "h2m/error.hpp"
#include "h2m/ops.hpp"
#include "h2m/rng.hpp"
#include "json.hpp"

namespace h2m {

namespace {

constexpr std::size_t kLatentNumel = kLatentChannels * kLatentTokens;

void append_latent(std::vector<double>& out, const Tensor& all, std::size_t index) {
    const auto d = all.data().subspan(index * kLatentNumel, kLatentNumel);
    out.insert(out.end(), d.begin(), d.end());
}

Tensor latent_at(const Tensor& all, std::size_t index) {
    const auto d = all.data().subspan(index * kLatentNumel, kLatentNumel);
    return Tensor::from({kLatentChannels, kLatentSide, kLatentSide}, {d.begin(), d.end()});
}

std::string frame_name(std::size_t i) {
    std::ostringstream s;
    s << "frame_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    return s.str();
}

double learning_rate(const TrainingPlan& plan, std::size_t step) {
    if (step < plan.warmup) return plan.lr * static_cast<double>(step + 1) / static_cast<double>(plan.warmup);
    const double span = static_cast<double>(std::max<std::size_t>(1, plan.steps - plan.warmup));
    const double progress = static_cast<double>(step - plan.warmup) / span;
    return plan.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress))));
}

}  // namespace

TrainingSet TrainingSet::build(std::vector<BlobSequence> sequences, const LatentCodec& codec) {
    if (sequences.empty()) throw ContractError("TrainingSet: no sequences");
    TrainingSet set;
    for (const auto& s : sequences) set.latents.push_back(codec.encode_frames(s.frames));
    set.sequences = std::move(sequences);
    return set;
}

std::size_t TrainingSet::frame_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.length();
    return n;
}

void TrainingPlan::validate() const {
    if (stage != 1 && stage != 2) throw ValidationError("training stage must be 1 or 2");
    if (stage == 1 && (patch.enabled() || noise.sigma != 0.0))
        throw ValidationError("stage 1 trains on clean motion frames (patch_size 0, noise_sigma 0)");
    if (!(snr_gamma >= 0.0)) throw ValidationError("snr_gamma must be >= 0");
    if (batch == 0 || segment_length == 0 || window == 0)
        throw ValidationError("batch, segment_length and window must be positive");
    patch.validate();
    noise.validate();
}

std::vector<double> train(DenoiserNet& net, const TrainingSet& data, const TrainingPlan& plan,
                          const LatentCodec& codec, TrainingState& state, std::uint64_t seed,
                          const std::function<void(std::size_t, double)>& on_step) {
    plan.validate();
    if (data.sequences.empty()) throw ContractError("train: empty dataset");
    if (net.config().window != plan.window) throw ContractError("train: window size differs from the network's");
    net.check_schedule(plan.schedule);
    const std::size_t L = plan.segment_length, N = plan.window, B = plan.batch;
    const std::size_t hw = net.config().audio_half_window;
    for (const auto& s : data.sequences)
        if (s.length() < L) throw ContractError("train: sequence shorter than the segment length");

    std::vector<double> log;
    const Rng base(seed);
    for (; state.step < plan.steps; ++state.step) {
        const Rng step_rng = base.split(state.step);
        std::vector<double> z0;
        z0.reserve(B * L * kLatentNumel);
        std::vector<ConditioningSet> conds;
        for (std::size_t b = 0; b < B; ++b) {
            Rng r = step_rng.split(100 + b);
            const std::size_t si = r.below(data.sequences.size());
            const auto& seq = data.sequences[si];
            const auto& lat = data.latents[si];
            const std::size_t T = seq.length();
            const std::size_t t0 = r.uniform() < plan.start_clip_fraction ? 0 : r.below(T - L + 1);
            const std::size_t ref = r.below(T);

            ConditioningSet c;
            c.reference = latent_at(lat, ref);
            std::vector<Image> motion_frames;
            for (std::size_t i = 0; i < N; ++i) {
                const long idx = static_cast<long>(t0) - static_cast<long>(N) + static_cast<long>(i);
                const std::size_t src = idx < 0 ? ref : static_cast<std::size_t>(idx);
                motion_frames.push_back(seq.frames[src]);
                if (plan.stage == 1) c.motion.push_back(latent_at(lat, src));
            }
            if (plan.stage == 2) {
                const Tensor aug = augment_motion_frames(motion_frames, plan.patch, plan.noise, codec, r.split(1));
                for (std::size_t i = 0; i < N; ++i) c.motion.push_back(latent_at(aug, i));
            }
            c.audio = audio_windows(seq.signal.samples, t0, L, hw);
            for (std::size_t f = 0; f < L; ++f) {
                c.labels.push_back(seq.label_at(t0 + f));
                append_latent(z0, lat, t0 + f);
            }
            conds.push_back(std::move(c));
        }
        const auto cond = stack_conditioning(conds, N);
        Rng noise_rng = step_rng.split(7);
        const auto batch = make_random_batch(
            Tensor::from({B, L, kLatentChannels, kLatentSide, kLatentSide}, std::move(z0)), plan.schedule, noise_rng);
        const EpsPredictor predictor = [&](const Tensor& zt, std::span<const std::size_t> t) {
            return net.forward(zt, t, cond);
        };
        const auto weights = min_snr_weights(plan.schedule, batch.t, plan.snr_gamma);
        Tensor loss = denoise_loss(predictor, batch, weights);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            std::vector<NamedTensor> dump{{"batch.z0", batch.z0},
                                          {"batch.eps", batch.eps},
                                          {"batch.zt", batch.zt},
                                          {"batch.reference", cond.reference},
                                          {"batch.motion", cond.motion},
                                          {"batch.audio", cond.audio}};
            std::vector<double> ts(batch.t.begin(), batch.t.end());
            dump.push_back({"batch.t", Tensor::from({ts.size()}, ts)});
            const auto dir = plan.checkpoint_dir.empty() ? std::filesystem::path(".") : plan.checkpoint_dir;
            std::filesystem::create_directories(dir);
            save_checkpoint(dir / "nan_batch.h2mc", dump);
            throw StateError("non-finite training loss at step " + std::to_string(state.step) + "; batch dumped to " +
                             (dir / "nan_batch.h2mc").string());
        }
        net.params().zero_grad();
        loss.backward();
        clip_grad_norm(net.params(), 1.0);
        adam_step(net.params(), state.adam, learning_rate(plan, state.step));
        log.push_back(value);
        if (on_step) on_step(state.step, value);
        if (plan.checkpoint_every > 0 && (state.step + 1) % plan.checkpoint_every == 0) {
            TrainingState snapshot = state;
            ++snapshot.step;
            std::filesystem::create_directories(plan.checkpoint_dir);
            std::ostringstream name;
            name << "step_" << std::setw(6) << std::setfill('0') << snapshot.step << ".h2mc";
            save_training_checkpoint(plan.checkpoint_dir / name.str(), net, snapshot);
        }
    }
    net.params().zero_grad();
    return log;
}

void save_training_checkpoint(const std::filesystem::path& path, const DenoiserNet& net, const TrainingState& state) {
    auto records = net.to_records();
    append_adam_records(records, net.params(), state.adam);
    records.push_back({"train.step", Tensor::scalar(static_cast<double>(state.step))});
    save_checkpoint(path, records);
}

TrainingState load_training_checkpoint(const std::filesystem::path& path, DenoiserNet& net) {
    const auto records = load_checkpoint(path);
    net = DenoiserNet::from_records(records);
    TrainingState state;
    if (find_record(records, "adam.step")) state.adam = adam_from_records(net.params(), records);
    if (const auto* s = find_record(records, "train.step")) state.step = static_cast<std::size_t>(s->tensor.item());
    return state;
}

void MotionWindow::reset(const Image& reference) {
    frames_.assign(size_, reference);
    latents_.clear();
}

void MotionWindow::push(const std::vector<Image>& frames) {
    for (const auto& f : frames) {
        frames_.push_back(f);
        if (frames_.size() > size_) frames_.pop_front();
    }
    latents_.clear();
}

void MotionWindow::set_frames(std::vector<Image> frames) {
    if (frames.size() != size_)
        throw ContractError("MotionWindow: expected " + std::to_string(size_) + " frames, got " +
                            std::to_string(frames.size()));
    frames_.assign(frames.begin(), frames.end());
    latents_.clear();
}

void MotionWindow::refresh(const LatentCodec& codec, const PatchDropConfig& pd, const NoiseAugConfig& na,
                           const Rng& rng) {
    if (frames_.size() != size_) throw StateError("MotionWindow: not initialised");
    const Tensor z = augment_motion_frames({frames_.begin(), frames_.end()}, pd, na, codec, rng);
    latents_.clear();
    for (std::size_t i = 0; i < size_; ++i) latents_.push_back(latent_at(z, i));
}

Segment generate_segment(const DenoiserNet& net, const LatentCodec& codec, const ConditioningSet& cond,
                         std::size_t length, const NoiseSchedule& sched, Rng& rng, AttentionRecorder* recorder) {
    if (length == 0) throw ContractError("generate_segment: length must be >= 1");
    validate_conditioning(cond, length, net.config().window);
    net.check_schedule(sched);
    const auto batch = stack_conditioning({cond}, net.config().window);
    const EpsPredictor predictor = [&](const Tensor& zt, std::span<const std::size_t> t) {
        if (recorder) recorder->set_step(t[0]);
        return net.forward(zt, t, batch, recorder);
    };
    const Tensor z = sample(predictor, {1, length, kLatentChannels, kLatentSide, kLatentSide}, sched, rng);
    Segment s;
    s.latents = reshape(z, {length, kLatentChannels, kLatentSide, kLatentSide});
    s.frames = codec.decode_latents(s.latents);
    return s;
}

Expression segment_label(const std::vector<ExpressionLabel>& labels, std::size_t first_frame) {
    Expression e = Expression::neutral;
    for (const auto& l : labels)
        if (l.onset_frame <= first_frame) e = l.expression;
    return e;
}

VideoResult rollout(const DenoiserNet& net, const LatentCodec& codec, const Image& reference,
                    const DrivingSignal& signal, const std::vector<ExpressionLabel>& labels, std::size_t total_frames,
                    const RolloutConfig& cfg, const RolloutHooks& hooks) {
    return resume_rollout(net, codec, reference, signal, labels, total_frames, cfg, 0,
                          std::vector<Image>(net.config().window, reference), hooks);
}

VideoResult resume_rollout(const DenoiserNet& net, const LatentCodec& codec, const Image& reference,
                           const DrivingSignal& signal, const std::vector<ExpressionLabel>& labels,
                           std::size_t total_frames, const RolloutConfig& cfg, std::size_t first_segment,
                           std::vector<Image> window_frames, const RolloutHooks& hooks) {
    const std::size_t L = cfg.segment_length;
    if (L == 0) throw ContractError("rollout: segment length must be >= 1");
    if (total_frames == 0) throw ContractError("rollout: total_frames must be >= 1");
    if (signal.samples.empty()) throw ContractError("rollout: empty driving signal");
    cfg.patch.validate(reference.width);
    cfg.noise.validate();
    const std::size_t segments = (total_frames + L - 1) / L;
    const std::size_t hw = net.config().audio_half_window;

    ConditioningSet cond;
    cond.reference = codec.encode_frame(reference);
    MotionWindow window(net.config().window);
    window.set_frames(std::move(window_frames));

    VideoResult out;
    const Rng base(cfg.seed);
    for (std::size_t k = first_segment; k < segments; ++k) {
        const Rng seg_rng = base.split(k);
        if (hooks.before_refresh) hooks.before_refresh(k, window.frames());
        window.refresh(codec, cfg.patch, cfg.noise, seg_rng.split(0));
        const std::size_t t0 = k * L;
        const Expression label = segment_label(labels, t0);
        cond.motion = window.latents();
        cond.audio = audio_windows(signal.samples, t0, L, hw);
        cond.labels.assign(L, label);
        Rng sample_rng = seg_rng.split(1);
        Segment seg = generate_segment(net, codec, cond, L, cfg.schedule, sample_rng, hooks.recorder);
        for (std::size_t f = 0; f < L; ++f) {
            const std::size_t t = std::min(t0 + f, signal.samples.size() - 1);
            out.timeline.push_back({label, signal.samples[t], k});
        }
        out.frames.insert(out.frames.end(), seg.frames.begin(), seg.frames.end());
        window.push(seg.frames);
        if (hooks.after_segment) hooks.after_segment(k, window);
    }
    return out;
}

void write_video(const std::filesystem::path& dir, const VideoResult& video) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < video.frames.size(); ++i) write_ppm(dir / frame_name(i), video.frames[i]);
    nlohmann::json tl = nlohmann::json::array();
    for (const auto& f : video.timeline)
        tl.push_back({{"label", expression_name(f.label)}, {"signal", f.signal}, {"segment", f.segment}});
    nlohmann::json j{{"frames", video.frames.size()}, {"timeline", tl}, {"checkpoint", video.checkpoint}};
    std::ofstream f(dir / "timeline.json");
    if (!f) throw ValidationError("cannot write " + (dir / "timeline.json").string());
    f << j.dump(1) << '\n';
}

VideoResult read_video(const std::filesystem::path& dir) {
    std::ifstream f(dir / "timeline.json");
    if (!f) throw ValidationError("missing " + (dir / "timeline.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError((dir / "timeline.json").string() + ": " + e.what());
    }
    VideoResult v;
    v.checkpoint = j.value("checkpoint", "");
    for (const auto& e : j.at("timeline"))
        v.timeline.push_back(
            {parse_expression(e.at("label").get<std::string>()), e.at("signal").get<double>(), e.at("segment").get<std::size_t>()});
    const auto n = j.at("frames").get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) v.frames.push_back(read_ppm(dir / frame_name(i)));
    return v;
}

}  // namespace h2m
