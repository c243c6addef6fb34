#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "h2m/ablation.hpp"
#include "h2m/error.hpp"
#include "h2m/pipeline.hpp"
#include "json.hpp"

namespace h2m::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Invocation {
    std::string command;
    std::map<std::string, std::string> opts;  // every resolved option except --out and --config
    GenerationConfig cfg;
    fs::path out;
    std::ostream* log = nullptr;
    ojson inputs = ojson::object();
    ojson config_file = nullptr;  // informational; replay uses the embedded config

    const std::string& opt(const std::string& name) const {
        static const std::string empty;
        auto it = opts.find(name);
        return it == opts.end() ? empty : it->second;
    }
    bool flag(const std::string& name) const { return opt(name) == "true"; }
    // Option value, or `fallback` recorded as the resolved value.
    std::string resolve(const std::string& name, const std::string& fallback) {
        auto& v = opts[name];
        if (v.empty()) v = fallback;
        return v;
    }
    // Default checkpoint locations assume sibling run directories under one workspace.
    std::string sibling(const std::string& rel) const { return (out.parent_path() / rel).generic_string(); }
    void note(const std::string& msg) const {
        if (log) *log << msg << '\n' << std::flush;
    }
    void input_file(const fs::path& p) { inputs[p.generic_string()] = file_hash(p); }
    void input_dir(const fs::path& dir) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) input_file(f);
    }
};

std::size_t to_size(const std::string& name, const std::string& v) {
    try {
        std::size_t pos = 0;
        const auto n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ValidationError("--" + name + ": expected a non-negative integer, got '" + v + "'");
    }
}

fs::path existing(const std::string& what, const std::string& path) {
    if (path.empty() || !fs::exists(path)) throw ValidationError(what + " not found: " + path);
    return path;
}

std::vector<NamedTensor> load_input(Invocation& inv, const std::string& what, const std::string& path) {
    const auto p = existing(what, path);
    inv.input_file(p);
    return load_checkpoint(p);
}

void save_output(const Invocation& inv, const std::string& name, const std::vector<NamedTensor>& records) {
    save_checkpoint(inv.out / name, records);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw StateError("cannot write " + path.string());
    f << text;
}

LatentCodec load_codec(Invocation& inv) {
    if (inv.cfg.latent_mode == LatentMode::identity_debug) return LatentCodec::identity_debug();
    return LatentCodec::from_records(load_input(inv, "codec checkpoint", inv.resolve("codec", inv.sibling("codec/codec.h2mc"))));
}

bool neutral_track(const std::vector<ExpressionLabel>& labels) {
    return std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.expression == Expression::neutral; });
}

std::vector<double> read_signal(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot read signal file " + path.string());
    std::string text{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    std::replace_if(text.begin(), text.end(), [](char c) { return c == ',' || c == '[' || c == ']'; }, ' ');
    std::istringstream in(text);
    std::vector<double> out;
    for (std::string tok; in >> tok;) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ValidationError(path.string() + ": not a number: '" + tok + "'");
        }
    }
    if (out.empty()) throw ValidationError(path.string() + ": empty signal");
    for (double v : out)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(path.string() + ": signal samples must lie in [0, 1]");
    return out;
}

struct Driving {
    Image reference;
    DrivingSignal signal;
};

Driving driving_inputs(Invocation& inv, std::uint64_t seed) {
    const auto seq = heldout_sequence(inv.cfg, seed, neutral_track(inv.cfg.labels));
    Driving d{seq.frames[0], seq.signal};
    if (const auto& ref = inv.opt("reference"); !ref.empty()) {
        inv.input_file(existing("reference image", ref));
        d.reference = read_ppm(ref);
        if (d.reference.width != kCanvas || d.reference.height != kCanvas)
            throw ValidationError("reference image must be 32x32: " + ref);
    }
    if (const auto& sig = inv.opt("signal"); !sig.empty()) {
        inv.input_file(existing("signal file", sig));
        d.signal.samples = read_signal(sig);
    }
    return d;
}

// ---- subcommands -----------------------------------------------------------

void cmd_gen_data(Invocation& inv) {
    const auto count = to_size("count", inv.resolve("count", std::to_string(inv.cfg.data.sequences)));
    const auto length = to_size("length", inv.resolve("length", std::to_string(inv.cfg.data.length)));
    const auto seed = to_size("seed", inv.resolve("seed", std::to_string(inv.cfg.data.seed)));
    if (length < 2) throw ValidationError("--length must be at least 2");
    BlobConfig bc;
    bc.neutral_only = inv.flag("neutral-only");
    const Rng root(seed);
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "seq_%04zu", i);
        write_sequence(inv.out / name, generate_sequence(root.split(i), length, bc));
    }
    inv.note("wrote " + std::to_string(count) + " sequences to " + inv.out.string());
}

std::vector<BlobSequence> corpus(Invocation& inv) {
    if (!inv.cfg.data.train_dir.empty()) inv.input_dir(inv.cfg.data.train_dir);
    return training_corpus(inv.cfg.data);
}

void cmd_train_codec(Invocation& inv) {
    if (inv.cfg.latent_mode == LatentMode::identity_debug)
        throw ValidationError("latent_mode identity-debug has no trainable codec");
    const auto codec = train_codec_model(inv.cfg, corpus(inv));
    save_output(inv, "codec.h2mc", codec.to_records());
}

void cmd_train(Invocation& inv) {
    const auto stage = inv.resolve("stage", "");
    if (stage != "1" && stage != "2") throw ValidationError("--stage must be 1 or 2");
    if (stage == "1") {
        const auto codec = load_codec(inv);
        const auto net = train_stage1_model(inv.cfg, codec, corpus(inv));
        save_output(inv, "stage1.h2mc", net.to_records());
        return;
    }
    const auto path = inv.resolve("stage1", inv.sibling("stage1/stage1.h2mc"));
    if (!fs::exists(path)) throw ValidationError("stage-1 checkpoint not found: " + path);
    const auto codec = load_codec(inv);
    auto init = DenoiserNet::from_records(load_input(inv, "stage-1 checkpoint", path));
    const auto net = train_stage2_model(inv.cfg, codec, corpus(inv), std::move(init), config_arm(inv.cfg));
    save_output(inv, "stage2.h2mc", net.to_records());
}

void cmd_train_vq(Invocation& inv) { save_output(inv, "vq.h2mc", train_vq_model(inv.cfg).to_records()); }

VqModel load_vq(Invocation& inv) {
    return VqModel::from_records(load_input(inv, "vq checkpoint", inv.resolve("vq", inv.sibling("vq/vq.h2mc"))));
}

CodeEnhancer load_enhancer(Invocation& inv) {
    return CodeEnhancer::from_records(
        load_input(inv, "enhancer checkpoint", inv.resolve("enhancer", inv.sibling("enhancer/enhancer.h2mc"))));
}

void cmd_train_enhancer(Invocation& inv) {
    const auto vq = load_vq(inv);
    const auto enh = train_enhancer_model(inv.cfg, vq, !inv.flag("no-temporal"));
    inv.note("held-out code accuracy " + std::to_string(code_accuracy(enh, vq, enhancer_pairs(inv.cfg, true))));
    save_output(inv, "enhancer.h2mc", enh.to_records());
}

void write_frames(const fs::path& dir, const std::vector<Image>& frames) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
        write_ppm(dir / name, frames[i]);
    }
}

void cmd_animate(Invocation& inv) {
    const auto seed = to_size("seed", inv.resolve("seed", "0"));
    const auto frames = to_size("frames", inv.resolve("frames", std::to_string(inv.cfg.rollout_frames)));
    if (frames == 0) throw ValidationError("--frames must be positive");
    const auto ckpt = inv.resolve("checkpoint", inv.sibling("stage2/stage2.h2mc"));
    const auto net = DenoiserNet::from_records(load_input(inv, "stage-2 checkpoint", ckpt));
    const auto codec = load_codec(inv);
    const auto drive = driving_inputs(inv, seed);
    NoGradGuard no_grad;
    auto video = rollout(net, codec, drive.reference, drive.signal, inv.cfg.labels, frames,
                         rollout_config(inv.cfg, config_arm(inv.cfg), seed));
    video.checkpoint = file_hash(ckpt);
    write_video(inv.out, video);
    write_ppm(inv.out / "reference.ppm", drive.reference);
    if (inv.cfg.enhancer) {
        const auto vq = load_vq(inv);
        const auto enh = load_enhancer(inv);
        write_frames(inv.out / "hq", enhance(enh, vq, video.frames));
    }
    inv.note("wrote " + std::to_string(video.frames.size()) + " frames to " + inv.out.string());
}

void cmd_enhance(Invocation& inv) {
    const auto input = existing("input video", inv.resolve("input", ""));
    inv.input_dir(input);
    const auto video = read_video(input);
    const auto vq = load_vq(inv);
    const auto enh = load_enhancer(inv);
    write_frames(inv.out, enhance(enh, vq, video.frames));
}

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void cmd_metrics(Invocation& inv) {
    const auto input = existing("input video", inv.resolve("input", ""));
    inv.input_dir(input);
    const auto video = read_video(input);
    if (video.frames.empty()) throw ValidationError("input video has no frames");
    Image reference = video.frames[0];
    auto ref = inv.opt("reference");
    if (ref.empty() && fs::exists(input / "reference.ppm")) ref = (input / "reference.ppm").generic_string();
    if (!ref.empty()) {
        inv.opts["reference"] = ref;
        inv.input_file(existing("reference image", ref));
        reference = read_ppm(ref);
    }
    std::vector<double> signal;
    for (const auto& f : video.timeline) signal.push_back(f.signal);
    if (signal.size() < video.frames.size()) throw ValidationError("timeline shorter than the frame list");
    std::size_t switch_frame = 0;
    for (std::size_t k = 1; k < video.timeline.size(); ++k)
        if (video.timeline[k].label != video.timeline[0].label) {
            switch_frame = k;
            break;
        }
    const std::size_t span = switch_frame ? std::min(inv.cfg.segment_length, switch_frame) : 0;
    const auto r = make_drift_report(video.frames, reference, signal, switch_frame, span);

    ojson j;
    j["frames"] = video.frames.size();
    j["terminal_drift"] = r.terminal_drift;
    j["drift_slope"] = r.drift_slope;
    j["sync"] = r.sync;
    j["smoothness"] = r.smoothness;
    j["expression_switch_frame"] = switch_frame;
    j["expression_response"] = number_or_null(r.expression_response);
    j["drift"] = r.drift;
    write_text(inv.out / "metrics.json", j.dump(2) + "\n");
    *inv.log << "terminal drift " << r.terminal_drift << ", slope " << r.drift_slope << ", sync " << r.sync
             << ", smoothness " << r.smoothness << '\n';
}

std::string csv_matrix(const AttentionRecorder::Map& m) {
    std::ostringstream os;
    os.precision(9);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) os << (j ? "," : "") << m.weights[i * m.cols + j];
        os << '\n';
    }
    return os.str();
}

void cmd_dump_attention(Invocation& inv) {
    const auto seed = to_size("seed", inv.resolve("seed", "0"));
    const auto step = to_size("step", inv.resolve("step", "1"));
    if (step < 1 || step > inv.cfg.schedule.steps)
        throw ValidationError("--step must lie in 1.." + std::to_string(inv.cfg.schedule.steps));
    const auto ckpt = inv.resolve("checkpoint", inv.sibling("stage2/stage2.h2mc"));
    const auto net = DenoiserNet::from_records(load_input(inv, "stage-2 checkpoint", ckpt));
    const auto codec = load_codec(inv);
    const auto drive = driving_inputs(inv, seed);
    AttentionRecorder recorder;
    RolloutHooks hooks;
    hooks.recorder = &recorder;
    NoGradGuard no_grad;
    rollout(net, codec, drive.reference, drive.signal, inv.cfg.labels, inv.cfg.segment_length,
            rollout_config(inv.cfg, config_arm(inv.cfg), seed), hooks);
    std::ostringstream index;
    index << "layer,step,rows,cols,csv,pgm\n";
    for (const auto& m : recorder.maps()) {
        if (m.step != step) continue;
        const auto stem = m.layer + "_t" + std::to_string(step);
        write_text(inv.out / (stem + ".csv"), csv_matrix(m));
        write_pgm_heatmap(inv.out / (stem + ".pgm"), m.weights, m.rows, m.cols);
        index << m.layer << ',' << m.step << ',' << m.rows << ',' << m.cols << ',' << stem << ".csv," << stem
              << ".pgm\n";
    }
    write_text(inv.out / "attention_index.csv", index.str());
}

void cmd_ablate(Invocation& inv) {
    const auto grid_name = inv.resolve("grid", "default");
    AblationGrid grid;
    if (grid_name == "default")
        grid = AblationGrid::default_grid();
    else if (grid_name == "arms")
        grid = AblationGrid::arms_only();
    else
        throw ValidationError("--grid must be 'default' or 'arms', got '" + grid_name + "'");
    grid.seeds = inv.cfg.seeds;
    grid.sigma = inv.cfg.noise.sigma > 0.0 ? inv.cfg.noise.sigma : grid.sigma;
    grid.validate();
    const auto jobs = to_size("jobs", inv.resolve("jobs", "1"));
    const bool train_missing = !inv.flag("no-train");

    ModelStore store(inv.cfg, cache_root(), [&](const std::string& m) { inv.note(m); });
    LatentCodec codec = LatentCodec::identity_debug();
    if (inv.cfg.latent_mode == LatentMode::codec) {
        if (!train_missing && !fs::exists(store.codec_path()))
            throw ValidationError("codec checkpoint not found: " + store.codec_path().string());
        codec = store.codec();
        inv.input_file(store.codec_path());
    }
    auto models = [&](const ArmSpec& arm) -> std::optional<DenoiserNet> {
        const auto path = store.stage2_path(arm);
        if (!train_missing && !fs::exists(path)) return std::nullopt;
        auto net = store.stage2(arm);
        inv.input_file(path);
        return net;
    };
    const auto result =
        run_ablation(grid, models, codec, inv.cfg, jobs, [&](const std::string& m) { inv.note(m); });
    write_ablation_outputs(inv.out, result);
    *inv.log << ablation_summary(result);
}

using Handler = std::function<void(Invocation&)>;

struct OptionSpec {
    std::string name;
    std::string help;
    bool flag = false;
};

struct CommandSpec {
    std::string name;
    std::string help;
    Handler handler;
    std::vector<OptionSpec> options;
};

const std::vector<CommandSpec>& commands() {
    static const std::vector<CommandSpec> specs = {
        {"gen-data", "write a synthetic corpus (one directory per sequence)", cmd_gen_data,
         {{"count", "number of sequences (default data.sequences)"},
          {"length", "frames per sequence (default data.length)"},
          {"seed", "corpus seed (default data.seed)"},
          {"neutral-only", "no expression switches", true}}},
        {"train-codec", "train the latent autoencoder -> codec.h2mc", cmd_train_codec, {}},
        {"train", "train the denoiser -> stage1.h2mc / stage2.h2mc", cmd_train,
         {{"stage", "1 or 2"},
          {"codec", "codec checkpoint (default ../codec/codec.h2mc)"},
          {"stage1", "stage-1 checkpoint for --stage 2 (default ../stage1/stage1.h2mc)"}}},
        {"train-vq", "train the 64x64 VQ autoencoder -> vq.h2mc", cmd_train_vq, {}},
        {"train-enhancer", "train the code-sequence enhancer -> enhancer.h2mc", cmd_train_enhancer,
         {{"vq", "vq checkpoint (default ../vq/vq.h2mc)"}, {"no-temporal", "ablate the temporal alignment layers", true}}},
        {"animate", "roll out a video from a reference frame, driving signal and label track", cmd_animate,
         {{"seed", "rollout seed; also picks the held-out driving sequence (default 0)"},
          {"frames", "frames to generate, rounded up to a whole segment (default rollout_frames)"},
          {"checkpoint", "stage-2 checkpoint (default ../stage2/stage2.h2mc)"},
          {"codec", "codec checkpoint (default ../codec/codec.h2mc)"},
          {"reference", "32x32 reference PPM (default: held-out sequence frame 0)"},
          {"signal", "driving signal file, numbers in [0, 1] (default: held-out sequence)"},
          {"vq", "vq checkpoint when enhancer is on (default ../vq/vq.h2mc)"},
          {"enhancer", "enhancer checkpoint when enhancer is on (default ../enhancer/enhancer.h2mc)"}}},
        {"enhance", "upscale a rendered video to 64x64 through the code enhancer", cmd_enhance,
         {{"input", "directory written by animate"},
          {"vq", "vq checkpoint (default ../vq/vq.h2mc)"},
          {"enhancer", "enhancer checkpoint (default ../enhancer/enhancer.h2mc)"}}},
        {"ablate", "train (cached) and evaluate the augmentation ablation grid", cmd_ablate,
         {{"grid", "'default' (all sweeps) or 'arms' (four augmentation arms)"},
          {"jobs", "concurrent rollouts (default 1)"},
          {"no-train", "use cached checkpoints only; missing cells are skipped", true}}},
        {"metrics", "drift, sync and smoothness of a stored video -> metrics.json", cmd_metrics,
         {{"input", "directory written by animate"},
          {"reference", "reference PPM (default: <input>/reference.ppm, else frame 0)"}}},
        {"dump-attention", "export attention maps of the first segment as CSV and PGM", cmd_dump_attention,
         {{"seed", "rollout seed (default 0)"},
          {"step", "diffusion step to export (default 1, the final step)"},
          {"checkpoint", "stage-2 checkpoint (default ../stage2/stage2.h2mc)"},
          {"codec", "codec checkpoint (default ../codec/codec.h2mc)"},
          {"reference", "32x32 reference PPM"},
          {"signal", "driving signal file"}}},
    };
    return specs;
}

const CommandSpec& command(const std::string& name) {
    for (const auto& c : commands())
        if (c.name == name) return c;
    throw ValidationError("unknown command '" + name + "'");
}

ojson output_listing(const fs::path& out) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    ojson listing = ojson::object();
    for (const auto& f : files) listing[fs::relative(f, out).generic_string()] = file_hash(f);
    return listing;
}

std::uint64_t manifest_seed(const Invocation& inv) {
    if (const auto& s = inv.opt("seed"); !s.empty()) return to_size("seed", s);
    return inv.cfg.training.seed;
}

ojson execute(Invocation& inv) {
    const auto& spec = command(inv.command);
    validate_config(inv.cfg);
    fs::create_directories(inv.out);
    spec.handler(inv);
    ojson m;
    m["tool"] = "h2m";
    m["version"] = H2M_VERSION;
    m["command"] = inv.command;
    m["seed"] = manifest_seed(inv);
    ojson args = ojson::object();
    for (const auto& [k, v] : inv.opts) args[k] = v;
    m["args"] = args;
    m["config_file"] = inv.config_file;
    m["config"] = ojson::parse(serialize_config(inv.cfg));
    m["inputs"] = inv.inputs;
    m["outputs"] = output_listing(inv.out);
    write_text(inv.out / "manifest.json", m.dump(2) + "\n");
    return m;
}

void replay(const fs::path& manifest_path, const fs::path& out, std::ostream& log) {
    std::ifstream f(existing("manifest", manifest_path.string()));
    ojson m;
    try {
        m = ojson::parse(f);
    } catch (const std::exception& e) {
        throw ValidationError(manifest_path.string() + ": " + e.what());
    }
    for (const char* key : {"command", "args", "config", "inputs", "outputs"})
        if (!m.contains(key)) throw ValidationError(manifest_path.string() + ": missing '" + key + "'");
    if (m.value("version", "") != H2M_VERSION)
        log << "warning: manifest written by version " << m.value("version", "?") << ", running " << H2M_VERSION
            << '\n';
    for (const auto& [path, hash] : m["inputs"].items()) {
        if (!fs::exists(path)) throw ValidationError("replay input missing: " + path);
        if (file_hash(path) != hash.get<std::string>()) throw ValidationError("replay input changed: " + path);
    }
    Invocation inv;
    inv.command = m["command"].get<std::string>();
    for (const auto& [k, v] : m["args"].items()) inv.opts[k] = v.get<std::string>();
    inv.cfg = parse_config(m["config"].dump(2), manifest_path.string() + "#config");
    inv.config_file = m.value("config_file", ojson(nullptr));
    inv.out = out;
    inv.log = &log;
    const auto fresh = execute(inv);
    std::size_t same = 0;
    std::string diffs;
    for (const auto& [name, hash] : m["outputs"].items()) {
        if (!fresh["outputs"].contains(name))
            diffs += "\n  missing " + name;
        else if (fresh["outputs"][name] != hash)
            diffs += "\n  differs " + name;
        else
            ++same;
    }
    if (!diffs.empty()) throw StateError("replay produced different artifacts:" + diffs);
    log << "replay: " << same << " artifacts byte-identical\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"h2m: synthetic talking-blob animation pipeline", "h2m"};
    app.require_subcommand(1);
    app.set_version_flag("--version", H2M_VERSION);

    struct Bound {
        CLI::App* sub;
        std::string config, out;
        std::map<std::string, std::string> values;
        std::map<std::string, bool> flags;
    };
    std::map<std::string, Bound> bound;
    for (const auto& spec : commands()) {
        auto& b = bound[spec.name];
        b.sub = app.add_subcommand(spec.name, spec.help);
        b.sub->add_option("--config", b.config, "JSON run config (default: built-in defaults)");
        b.sub->add_option("--out", b.out, "output directory (gets manifest.json)")->required();
        for (const auto& o : spec.options) {
            if (o.flag)
                b.sub->add_flag("--" + o.name, b.flags[o.name], o.help);
            else
                b.sub->add_option("--" + o.name, b.values[o.name], o.help);
        }
    }
    std::string manifest, replay_out;
    auto* replay_cmd = app.add_subcommand("replay", "re-run a manifest and check the artifacts are byte-identical");
    replay_cmd->add_option("--manifest", manifest, "manifest.json of the run to repeat")->required();
    replay_cmd->add_option("--out", replay_out, "fresh output directory")->required();
    std::string schema_out;
    auto* schema_cmd = app.add_subcommand("schema", "print the config JSON schema");
    schema_cmd->add_option("--out", schema_out, "write to a file instead of stdout");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << H2M_VERSION << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*schema_cmd) {
            if (schema_out.empty())
                out << config_schema();
            else
                write_text(schema_out, config_schema());
            return 0;
        }
        if (*replay_cmd) {
            replay(manifest, replay_out, err);
            return 0;
        }
        for (auto& [name, b] : bound) {
            if (!*b.sub) continue;
            Invocation inv;
            inv.command = name;
            inv.out = b.out;
            inv.log = &err;
            if (!b.config.empty()) {
                inv.cfg = load_config(b.config);
                inv.config_file = {{"path", b.config}, {"hash", file_hash(b.config)}};
            }
            for (const auto& [k, v] : b.values)
                if (!v.empty()) inv.opts[k] = v;
            for (const auto& [k, v] : b.flags) inv.opts[k] = v ? "true" : "false";
            execute(inv);
        }
        return 0;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "failure: " << e.what() << '\n';
        return 2;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace h2m::cli
