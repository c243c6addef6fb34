#include <chrono>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "h2m/checkpoint.hpp"
#include "h2m/error.hpp"
#include "h2m/eval.hpp"
#include "h2m/ops.hpp"
#include "h2m/rollout.hpp"

using namespace h2m;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.width = 8;
    c.stages = 1;
    c.time_dim = 8;
    c.max_frames = 16;
    return c;
}

NoiseSchedule short_schedule() { return make_schedule(4, 0.05, 0.6); }

DenoiserConfig anchored_config() {
    auto c = tiny_config();
    c.prior_variance = 0.1;
    c.schedule_steps = 4;
    c.beta_start = 0.05;
    c.beta_end = 0.6;
    return c;
}

ConditioningSet make_cond(const LatentCodec& codec, const BlobSequence& seq, std::size_t length, Expression label) {
    ConditioningSet c;
    c.reference = codec.encode_frame(seq.frames[0]);
    for (std::size_t i = 0; i < kWindowSize; ++i) c.motion.push_back(codec.encode_frame(seq.frames[i]));
    c.audio = audio_windows(seq.signal.samples, 0, length, kAudioHalfWindow);
    c.labels.assign(length, label);
    return c;
}

bool same_frames(const std::vector<Image>& a, const std::vector<Image>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i] == b[i])) return false;
    return true;
}

std::vector<BlobSequence> tiny_corpus(std::size_t n, std::size_t len) {
    std::vector<BlobSequence> out;
    const Rng root(99);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sequence(root.split(i), len));
    return out;
}

TrainingPlan tiny_plan(std::size_t steps) {
    TrainingPlan p;
    p.steps = steps;
    p.batch = 2;
    p.segment_length = 4;
    p.warmup = 2;
    p.schedule = short_schedule();
    return p;
}

}  // namespace

TEST_SUITE("rollout-engine") {
    TEST_CASE("denoiser output shape follows zt for every step") {
        Rng rng(1);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(2), 8);
        const auto cond = make_cond(codec, seq, 3, Expression::neutral);
        NoGradGuard ng;
        for (std::size_t t : {1, 2, 4}) {
            const Tensor zt = randn({3, 8, 8, 8}, rng);
            CHECK(predict_eps(net, zt, t, cond).shape() == zt.shape());
        }
    }

    TEST_CASE("full denoiser pass matches finite differences on ten seeds") {
        const auto codec = LatentCodec::identity_debug();
        const auto start = std::chrono::steady_clock::now();
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(seed);
            auto net = DenoiserNet::make(tiny_config(), rng);
            randomize_params(net.params(), rng, 0.3);
            const auto seq = generate_sequence(Rng(50 + seed), 8);
            const auto batch = stack_conditioning({make_cond(codec, seq, 2, Expression::happy),
                                                   make_cond(codec, seq, 2, Expression::surprised)},
                                                  kWindowSize);
            Tensor zt = randn({2, 2, 8, 8, 8}, rng);
            zt = Tensor::from(zt.shape(), std::vector<double>(zt.data().begin(), zt.data().end()), true);
            const Tensor weights = randn(zt.shape(), rng);
            const std::size_t steps[] = {3, 1};
            std::vector<Tensor> leaves{zt};
            for (const auto& [name, p] : net.params().items()) leaves.push_back(p);
            const auto loss = [&] { return sum(mul(net.forward(zt, steps, batch), weights)); };
            Rng pick(seed + 1000);
            CHECK(testing::gradcheck_sampled(leaves, loss, 3, pick) < 1e-4);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        CHECK(secs < 60.0);
    }

    TEST_CASE("reference-anchored head is the Gaussian posterior mean at init") {
        Rng rng(30);
        const auto net = DenoiserNet::make(anchored_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(31), 8);
        const auto cond = make_cond(codec, seq, 2, Expression::neutral);
        const auto sched = short_schedule();
        NoGradGuard ng;
        for (std::size_t t = 1; t <= 4; ++t) {
            const Tensor zt = randn({2, 8, 8, 8}, rng);
            const Tensor eps = predict_eps(net, zt, t, cond);
            const double ab = sched.alpha_bar_at(t), a = std::sqrt(ab), sd = std::sqrt(1 - ab);
            const double den = ab * 0.1 + (1 - ab);
            for (std::size_t i = 0; i < zt.numel(); ++i) {
                const double expect = sd * (zt[i] - a * cond.reference[i % (kLatentChannels * kLatentTokens)]) / den;
                CHECK(eps[i] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("reference-anchored net refuses a foreign schedule and keeps it through checkpoints") {
        Rng rng(32);
        const auto net = DenoiserNet::make(anchored_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(33), 8);
        const auto cond = make_cond(codec, seq, 4, Expression::neutral);
        Rng srng(1);
        CHECK_THROWS_AS(generate_segment(net, codec, cond, 4, make_schedule(5, 0.05, 0.6), srng), ContractError);
        CHECK_NOTHROW(generate_segment(net, codec, cond, 4, short_schedule(), srng));
        const auto back = DenoiserNet::from_records(net.to_records());
        CHECK(back.config() == net.config());
        const auto data = TrainingSet::build(tiny_corpus(2, 8), codec);
        auto plan = tiny_plan(1);
        plan.schedule = make_schedule(6, 0.05, 0.6);
        auto copy = back;
        TrainingState st;
        CHECK_THROWS_AS(train(copy, data, plan, codec, st, 1), ContractError);
    }

    TEST_CASE("reference-anchored net matches finite differences") {
        const auto codec = LatentCodec::identity_debug();
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            Rng rng(seed + 60);
            auto net = DenoiserNet::make(anchored_config(), rng);
            randomize_params(net.params(), rng, 0.3);
            const auto seq = generate_sequence(Rng(70 + seed), 8);
            const auto batch = stack_conditioning({make_cond(codec, seq, 2, Expression::happy),
                                                   make_cond(codec, seq, 2, Expression::neutral)},
                                                  kWindowSize);
            const Tensor z = randn({2, 2, 8, 8, 8}, rng);
            Tensor zt = Tensor::from(z.shape(), std::vector<double>(z.data().begin(), z.data().end()), true);
            const Tensor weights = randn(zt.shape(), rng);
            const std::size_t steps[] = {4, 1};
            std::vector<Tensor> leaves{zt};
            for (const auto& [name, p] : net.params().items()) leaves.push_back(p);
            Rng pick(seed);
            CHECK(testing::gradcheck_sampled(leaves, [&] { return sum(mul(net.forward(zt, steps, batch), weights)); },
                                             3, pick) < 1e-4);
        }
    }

    TEST_CASE("text labels do not change predictions while AdaLN is at init") {
        Rng rng(4);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(5), 8);
        const Tensor zt = randn({4, 8, 8, 8}, rng);
        NoGradGuard ng;
        const Tensor base = predict_eps(net, zt, 2, make_cond(codec, seq, 4, Expression::neutral));
        for (auto e : {Expression::happy, Expression::surprised}) {
            const Tensor other = predict_eps(net, zt, 2, make_cond(codec, seq, 4, e));
            CHECK(std::equal(base.data().begin(), base.data().end(), other.data().begin()));
        }
    }

    TEST_CASE("first-step loss of an untrained predictor is near unit variance") {
        Rng rng(6);
        auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto data = TrainingSet::build(tiny_corpus(4, 12), codec);
        TrainingState st;
        auto plan = tiny_plan(1);
        plan.lr = 0.0;
        const auto losses = train(net, data, plan, codec, st, 7);
        REQUIRE(losses.size() == 1);
        CHECK(losses[0] == doctest::Approx(1.0).epsilon(0.2));
    }

    TEST_CASE("stage one refuses augmentation") {
        auto plan = tiny_plan(1);
        plan.noise.sigma = 0.1;
        CHECK_THROWS_AS(plan.validate(), ValidationError);
        auto weighted = tiny_plan(1);
        weighted.snr_gamma = -1.0;
        CHECK_THROWS_AS(weighted.validate(), ValidationError);
    }

    TEST_CASE("checkpoint reload reproduces the remaining losses exactly") {
        const auto codec = LatentCodec::identity_debug();
        const auto data = TrainingSet::build(tiny_corpus(4, 12), codec);
        auto plan = tiny_plan(6);
        plan.stage = 2;
        plan.patch = {1, 0.25, DropDomain::image};
        plan.noise = {0.1};
        Rng rng(8);
        const auto init = DenoiserNet::make(tiny_config(), rng);

        auto full = DenoiserNet::from_records(init.to_records());
        TrainingState s1;
        const auto reference = train(full, data, plan, codec, s1, 9);

        auto part = DenoiserNet::from_records(init.to_records());
        TrainingState s2;
        auto half = plan;
        half.steps = 3;
        auto first = train(part, data, half, codec, s2, 9);
        const auto path = std::filesystem::temp_directory_path() / "h2m_resume_test.h2mc";
        save_training_checkpoint(path, part, s2);
        auto resumed = DenoiserNet::make(tiny_config(), rng);
        auto s3 = load_training_checkpoint(path, resumed);
        CHECK(s3.step == 3);
        const auto rest = train(resumed, data, plan, codec, s3, 9);
        first.insert(first.end(), rest.begin(), rest.end());
        REQUIRE(first.size() == reference.size());
        for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == reference[i]);
        std::filesystem::remove(path);
    }

    TEST_CASE("non-finite loss aborts and dumps the batch") {
        const auto codec = LatentCodec::identity_debug();
        const auto data = TrainingSet::build(tiny_corpus(2, 12), codec);
        Rng rng(10);
        auto net = DenoiserNet::make(tiny_config(), rng);
        Tensor first = net.params().items().front().second;
        first.mutable_data()[0] = std::nan("");
        auto plan = tiny_plan(2);
        plan.checkpoint_dir = std::filesystem::temp_directory_path() / "h2m_nan_test";
        std::filesystem::remove_all(plan.checkpoint_dir);
        TrainingState st;
        CHECK_THROWS_AS(train(net, data, plan, codec, st, 1), StateError);
        CHECK(std::filesystem::exists(plan.checkpoint_dir / "nan_batch.h2mc"));
        std::filesystem::remove_all(plan.checkpoint_dir);
    }

    TEST_CASE("single-frame segments and seed determinism") {
        Rng rng(11);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(12), 8);
        NoGradGuard ng;
        Rng a(3), b(3);
        const auto one = generate_segment(net, codec, make_cond(codec, seq, 1, Expression::neutral), 1,
                                          short_schedule(), a);
        CHECK(one.frames.size() == 1);
        CHECK(one.latents.shape() == Shape{1, 8, 8, 8});
        const auto again = generate_segment(net, codec, make_cond(codec, seq, 1, Expression::neutral), 1,
                                            short_schedule(), b);
        CHECK(same_frames(one.frames, again.frames));
    }

    TEST_CASE("one-segment rollout equals a single generate_segment call") {
        Rng rng(13);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(14), 8);
        RolloutConfig rc;
        rc.segment_length = 4;
        rc.schedule = short_schedule();
        rc.seed = 5;
        NoGradGuard ng;
        const auto video = rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 4, rc);

        MotionWindow window(kWindowSize);
        window.reset(seq.frames[0]);
        const Rng seg = Rng(5).split(0);
        window.refresh(codec, rc.patch, rc.noise, seg.split(0));
        ConditioningSet cond;
        cond.reference = codec.encode_frame(seq.frames[0]);
        cond.motion = window.latents();
        cond.audio = audio_windows(seq.signal.samples, 0, 4, kAudioHalfWindow);
        cond.labels.assign(4, seq.label_at(0));
        Rng sample_rng = seg.split(1);
        const auto direct = generate_segment(net, codec, cond, 4, rc.schedule, sample_rng);
        CHECK(same_frames(video.frames, direct.frames));
    }

    TEST_CASE("window holds the last four frames of each segment") {
        Rng rng(15);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(16), 24);
        RolloutConfig rc;
        rc.segment_length = 6;
        rc.schedule = short_schedule();
        std::vector<std::vector<Image>> windows;
        RolloutHooks hooks;
        hooks.after_segment = [&](std::size_t, const MotionWindow& w) {
            windows.emplace_back(w.frames().begin(), w.frames().end());
        };
        NoGradGuard ng;
        const auto video = rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 18, rc, hooks);
        REQUIRE(windows.size() == 3);
        for (std::size_t k = 0; k < 3; ++k) {
            const auto end = video.frames.begin() + static_cast<std::ptrdiff_t>((k + 1) * 6);
            CHECK(same_frames(windows[k], std::vector<Image>(end - 4, end)));
        }
    }

    TEST_CASE("rollout length rounds up to whole segments") {
        Rng rng(17);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(18), 8);
        RolloutConfig rc;
        rc.segment_length = 4;
        rc.schedule = short_schedule();
        NoGradGuard ng;
        const auto video = rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 9, rc);
        CHECK(video.frames.size() == 12);
        CHECK(video.timeline.size() == 12);
        CHECK(video.timeline.back().segment == 2);
    }

    TEST_CASE("replaying from the window state reproduces the rest bit-identically") {
        Rng rng(19);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(20), 24);
        RolloutConfig rc;
        rc.segment_length = 4;
        rc.schedule = short_schedule();
        rc.patch = {4, 0.25, DropDomain::image};
        rc.noise = {0.1};
        rc.seed = 21;
        std::vector<std::vector<Image>> windows;
        RolloutHooks hooks;
        hooks.after_segment = [&](std::size_t, const MotionWindow& w) {
            windows.emplace_back(w.frames().begin(), w.frames().end());
        };
        NoGradGuard ng;
        const auto full = rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 16, rc, hooks);
        const auto tail = resume_rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 16, rc, 2, windows[1]);
        CHECK(same_frames(tail.frames, std::vector<Image>(full.frames.begin() + 8, full.frames.end())));
    }

    TEST_CASE("reference frame is never part of the augmented window after segment 0") {
        Rng rng(22);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(23), 16);
        const Image reference = seq.frames[0];
        RolloutConfig rc;
        rc.segment_length = 4;
        rc.schedule = short_schedule();
        rc.patch = {1, 0.5, DropDomain::image};
        std::size_t refreshes = 0;
        RolloutHooks hooks;
        hooks.before_refresh = [&](std::size_t k, std::deque<Image>& w) {
            ++refreshes;
            if (k == 0)
                for (const auto& f : w) CHECK(f == reference);
        };
        NoGradGuard ng;
        const auto video = rollout(net, codec, reference, seq.signal, seq.labels, 12, rc, hooks);
        CHECK(refreshes == 3);
        CHECK(reference == seq.frames[0]);
    }

    TEST_CASE("hard label switch at segment granularity") {
        const std::vector<ExpressionLabel> labels{{Expression::neutral, 0}, {Expression::happy, 20}};
        CHECK(segment_label(labels, 16) == Expression::neutral);
        CHECK(segment_label(labels, 20) == Expression::happy);
        CHECK(segment_label(labels, 32) == Expression::happy);
    }

    TEST_CASE("stored videos reload to a fixed point and metrics repeat exactly") {
        Rng rng(24);
        const auto net = DenoiserNet::make(tiny_config(), rng);
        const auto codec = LatentCodec::identity_debug();
        const auto seq = generate_sequence(Rng(25), 8);
        RolloutConfig rc;
        rc.segment_length = 4;
        rc.schedule = short_schedule();
        NoGradGuard ng;
        const auto video = rollout(net, codec, seq.frames[0], seq.signal, seq.labels, 8, rc);
        const auto dir = std::filesystem::temp_directory_path() / "h2m_video_test";
        std::filesystem::remove_all(dir);
        write_video(dir / "a", video);
        const auto once = read_video(dir / "a");
        write_video(dir / "b", once);
        const auto twice = read_video(dir / "b");
        CHECK(same_frames(once.frames, twice.frames));
        REQUIRE(once.frames.size() == video.frames.size());
        // 8-bit PPM storage: within half a quantization step.
        for (std::size_t i = 0; i < once.frames.size(); ++i)
            CHECK(max_abs_diff(once.frames[i], video.frames[i]) <= 0.5 / 255.0 + 1e-12);
        REQUIRE(once.timeline.size() == video.timeline.size());
        for (std::size_t i = 0; i < once.timeline.size(); ++i) CHECK(once.timeline[i].signal == video.timeline[i].signal);
        CHECK(appearance_drift(once.frames, seq.frames[0]) == appearance_drift(twice.frames, seq.frames[0]));
        CHECK(temporal_smoothness(once.frames) == temporal_smoothness(twice.frames));
        std::filesystem::remove_all(dir);
    }
}
