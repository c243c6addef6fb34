#include "h2m/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iterator>
#include <sstream>

#include "h2m/error.hpp"

namespace h2m {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return hex64(fnv1a(bytes));
}

std::filesystem::path cache_root() {
    if (const char* env = std::getenv("HALLO2_MICRO_CACHE"); env && *env) return env;
    return ".h2m-cache";
}

ArmSpec config_arm(const GenerationConfig& cfg) {
    ArmSpec arm{"config", cfg.patch, cfg.noise};
    if (!cfg.patch.enabled() && cfg.noise.sigma == 0.0) arm.name = "none";
    return arm;
}

std::vector<BlobSequence> training_corpus(const DataSpec& data) {
    std::vector<BlobSequence> out;
    if (!data.train_dir.empty()) {
        const std::filesystem::path dir = data.train_dir;
        if (!std::filesystem::is_directory(dir)) throw ValidationError("data.train_dir: no such directory " + dir.string());
        std::vector<std::filesystem::path> seqs;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) seqs.push_back(e.path());
        if (seqs.empty()) throw ValidationError("data.train_dir: no sequences under " + dir.string());
        std::sort(seqs.begin(), seqs.end());
        for (const auto& p : seqs) out.push_back(read_sequence(p));
        return out;
    }
    const Rng root(data.seed);
    out.reserve(data.sequences);
    for (std::size_t i = 0; i < data.sequences; ++i) out.push_back(generate_sequence(root.split(i), data.length));
    return out;
}

BlobSequence heldout_sequence(const GenerationConfig& cfg, std::uint64_t seed, bool neutral_only) {
    BlobConfig bc;
    bc.neutral_only = neutral_only;
    return generate_sequence(Rng(cfg.data.heldout_seed).split(seed), std::max<std::size_t>(cfg.rollout_frames, 2), bc);
}

RolloutConfig rollout_config(const GenerationConfig& cfg, const ArmSpec& arm, std::uint64_t seed) {
    RolloutConfig rc;
    rc.segment_length = cfg.segment_length;
    rc.patch = arm.patch;
    rc.noise = arm.noise;
    rc.schedule = cfg.schedule.make();
    rc.seed = seed;
    return rc;
}

DenoiserConfig denoiser_config(const GenerationConfig& cfg) {
    DenoiserConfig dc;
    dc.width = cfg.model.width;
    dc.stages = cfg.model.stages;
    dc.window = cfg.window;
    dc.max_frames = std::max<std::size_t>(dc.max_frames, cfg.segment_length);
    dc.prior_variance = cfg.model.prior_variance;
    dc.schedule_steps = cfg.schedule.steps;
    dc.beta_start = cfg.schedule.beta_start;
    dc.beta_end = cfg.schedule.beta_end;
    return dc;
}

namespace {

template <class... Ts>
std::string join_fields(const Ts&... v) {
    std::ostringstream os;
    os.precision(17);
    ((os << v << '|'), ...);
    return os.str();
}

std::filesystem::path seconds_path(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".seconds";
    return p;
}

// The sidecar goes first so that a present checkpoint always has its timing.
void save_atomically(const std::filesystem::path& path, const std::vector<NamedTensor>& records,
                     std::clock_t started) {
    std::filesystem::create_directories(path.parent_path());
    const double cpu = static_cast<double>(std::clock() - started) / CLOCKS_PER_SEC;
    std::ofstream(seconds_path(path)) << cpu << '\n';
    auto tmp = path;
    tmp += ".partial";
    save_checkpoint(tmp, records);
    std::filesystem::rename(tmp, path);
}

std::string arm_tag(const ArmSpec& arm) {
    return join_fields(arm.patch.patch_size, arm.patch.drop_rate, static_cast<int>(arm.patch.domain), arm.noise.sigma);
}

}  // namespace

ModelStore::ModelStore(GenerationConfig cfg, std::filesystem::path root, Log log)
    : cfg_(std::move(cfg)), root_(std::move(root)), log_(std::move(log)) {}

void ModelStore::note(const std::string& msg) const {
    if (log_) log_(msg);
}

std::string ModelStore::codec_key() const {
    const auto& d = cfg_.data;
    const auto& t = cfg_.training;
    std::string corpus = d.train_dir.empty() ? join_fields(d.sequences, d.length, d.seed) : "dir:" + d.train_dir;
    return "codec|" + corpus + join_fields(latent_mode_name(cfg_.latent_mode), t.codec_steps, t.codec_lr, t.seed);
}

std::string ModelStore::stage1_key() const {
    const auto& t = cfg_.training;
    const auto& s = cfg_.schedule;
    const auto& m = cfg_.model;
    return codec_key() + "stage1|" +
           join_fields(s.steps, s.beta_start, s.beta_end, m.width, m.stages, m.prior_variance, cfg_.segment_length, cfg_.window,
                       t.stage1_steps, t.batch, t.lr, t.snr_gamma);
}

std::string ModelStore::vq_key() const {
    const auto& t = cfg_.training;
    return "vq|" + join_fields(cfg_.data.seed, t.vq_steps, t.seed, cfg_.model.codebook_size, cfg_.model.code_dim);
}

std::filesystem::path ModelStore::codec_path() const { return root_ / ("codec-" + hex64(fnv1a(codec_key())) + ".h2mc"); }

std::filesystem::path ModelStore::stage1_path() const {
    return root_ / ("stage1-" + hex64(fnv1a(stage1_key())) + ".h2mc");
}

std::filesystem::path ModelStore::stage2_path(const ArmSpec& arm) const {
    const auto key = stage1_key() + "stage2|" + arm_tag(arm) + join_fields(cfg_.training.stage2_steps);
    return root_ / ("stage2-" + hex64(fnv1a(key)) + ".h2mc");
}

std::filesystem::path ModelStore::vq_path() const { return root_ / ("vq-" + hex64(fnv1a(vq_key())) + ".h2mc"); }

std::filesystem::path ModelStore::enhancer_path(bool temporal) const {
    const auto& m = cfg_.model;
    const auto key = vq_key() + "enhancer|" +
                     join_fields(temporal, m.enhancer_width, m.enhancer_blocks, cfg_.training.enhancer_steps);
    return root_ / ("enhancer-" + hex64(fnv1a(key)) + ".h2mc");
}

std::vector<HqPair> enhancer_pairs(const GenerationConfig& cfg, bool heldout) {
    const auto palette = enhancer_palette();
    const Rng root(cfg.data.seed + (heldout ? 2000 : 1000));
    const std::size_t count = heldout ? 5 : 24;
    std::vector<HqPair> pairs;
    for (std::size_t i = 0; i < count; ++i) pairs.push_back(make_hq_pair(palette_sequence(root.split(i), 64, palette)));
    return pairs;
}

LatentCodec train_codec_model(const GenerationConfig& cfg, const std::vector<BlobSequence>& corpus) {
    if (cfg.latent_mode == LatentMode::identity_debug) return LatentCodec::identity_debug();
    std::vector<Image> frames;
    for (const auto& s : corpus) frames.insert(frames.end(), s.frames.begin(), s.frames.end());
    Rng rng = Rng(cfg.training.seed).split(1);
    auto codec = LatentCodec::make(rng);
    CodecTrainConfig tc;
    tc.steps = cfg.training.codec_steps;
    tc.lr = cfg.training.codec_lr;
    train_codec(codec, frames, tc, rng);
    return codec;
}

namespace {

TrainingPlan base_plan(const GenerationConfig& cfg) {
    TrainingPlan plan;
    plan.batch = cfg.training.batch;
    plan.lr = cfg.training.lr;
    plan.snr_gamma = cfg.training.snr_gamma;
    plan.segment_length = cfg.segment_length;
    plan.window = cfg.window;
    plan.schedule = cfg.schedule.make();
    return plan;
}

}  // namespace

DenoiserNet train_stage1_model(const GenerationConfig& cfg, const LatentCodec& codec,
                               const std::vector<BlobSequence>& corpus) {
    const auto data = TrainingSet::build(corpus, codec);
    Rng init = Rng(cfg.training.seed).split(2);
    auto net = DenoiserNet::make(denoiser_config(cfg), init);
    auto plan = base_plan(cfg);
    plan.stage = 1;
    plan.steps = cfg.training.stage1_steps;
    TrainingState state;
    train(net, data, plan, codec, state, cfg.training.seed);
    return net;
}

DenoiserNet train_stage2_model(const GenerationConfig& cfg, const LatentCodec& codec,
                               const std::vector<BlobSequence>& corpus, DenoiserNet stage1, const ArmSpec& arm) {
    const auto data = TrainingSet::build(corpus, codec);
    auto plan = base_plan(cfg);
    plan.stage = 2;
    plan.steps = cfg.training.stage2_steps;
    plan.lr *= 0.5;
    plan.warmup = 50;
    plan.patch = arm.patch;
    plan.noise = arm.noise;
    TrainingState state;
    train(stage1, data, plan, codec, state, cfg.training.seed + 1);
    return stage1;
}

VqModel train_vq_model(const GenerationConfig& cfg) {
    std::vector<Image> hq;
    for (const auto& p : enhancer_pairs(cfg, false)) hq.insert(hq.end(), p.highres.begin(), p.highres.end());
    Rng rng = Rng(cfg.training.seed).split(3);
    auto vq = VqModel::make(rng, cfg.model.codebook_size, cfg.model.code_dim);
    VqTrainConfig tc;
    tc.steps = cfg.training.vq_steps;
    train_vq(vq, hq, tc, rng);
    return vq;
}

CodeEnhancer train_enhancer_model(const GenerationConfig& cfg, const VqModel& vq, bool temporal) {
    Rng rng = Rng(cfg.training.seed).split(4);
    EnhancerConfig ec;
    ec.width = cfg.model.enhancer_width;
    ec.blocks = cfg.model.enhancer_blocks;
    ec.temporal = temporal;
    auto enh = CodeEnhancer::make(ec, vq.code_dim(), vq.codebook_size(), rng);
    EnhancerTrainConfig tc;
    tc.steps = cfg.training.enhancer_steps;
    train_enhancer(enh, vq, enhancer_pairs(cfg, false), tc, rng);
    return enh;
}

LatentCodec ModelStore::codec() {
    if (cfg_.latent_mode == LatentMode::identity_debug) return LatentCodec::identity_debug();
    const auto path = codec_path();
    if (std::filesystem::exists(path)) return LatentCodec::from_records(load_checkpoint(path));
    note("training codec -> " + path.string());
    const auto started = std::clock();
    auto codec = train_codec_model(cfg_, training_corpus(cfg_.data));
    save_atomically(path, codec.to_records(), started);
    return codec;
}

DenoiserNet ModelStore::stage1() {
    const auto path = stage1_path();
    if (std::filesystem::exists(path)) return DenoiserNet::from_records(load_checkpoint(path));
    const auto codec = this->codec();
    note("training stage 1 -> " + path.string());
    const auto started = std::clock();
    auto net = train_stage1_model(cfg_, codec, training_corpus(cfg_.data));
    save_atomically(path, net.to_records(), started);
    return net;
}

DenoiserNet ModelStore::stage2(const ArmSpec& arm) {
    const auto path = stage2_path(arm);
    if (std::filesystem::exists(path)) return DenoiserNet::from_records(load_checkpoint(path));
    auto net = stage1();
    const auto codec = this->codec();
    note("training stage 2 (" + arm.name + ") -> " + path.string());
    const auto started = std::clock();
    net = train_stage2_model(cfg_, codec, training_corpus(cfg_.data), std::move(net), arm);
    save_atomically(path, net.to_records(), started);
    return net;
}

VqModel ModelStore::vq() {
    const auto path = vq_path();
    if (std::filesystem::exists(path)) return VqModel::from_records(load_checkpoint(path));
    note("training vq -> " + path.string());
    const auto started = std::clock();
    auto vq = train_vq_model(cfg_);
    save_atomically(path, vq.to_records(), started);
    return vq;
}

CodeEnhancer ModelStore::enhancer(bool temporal) {
    const auto path = enhancer_path(temporal);
    if (std::filesystem::exists(path)) return CodeEnhancer::from_records(load_checkpoint(path));
    const auto vq = this->vq();
    note(std::string("training enhancer (temporal ") + (temporal ? "on" : "off") + ") -> " + path.string());
    const auto started = std::clock();
    auto enh = train_enhancer_model(cfg_, vq, temporal);
    save_atomically(path, enh.to_records(), started);
    return enh;
}

std::optional<double> ModelStore::training_seconds(const std::filesystem::path& checkpoint) {
    std::ifstream f(seconds_path(checkpoint));
    double s = 0.0;
    if (f >> s) return s;
    return std::nullopt;
}

}  // namespace h2m
