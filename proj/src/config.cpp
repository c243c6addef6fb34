#include "h2m/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "h2m/error.hpp"
#include "json.hpp"

namespace h2m {

namespace {

using json = nlohmann::json;
using ordered = nlohmann::ordered_json;

// Line of every key and array element, addressed as "a.b" / "labels[0].label".
class LineIndex {
   public:
    explicit LineIndex(const std::string& text) { scan(text); }

    int line_of(const std::string& path) const {
        for (std::string p = path;;) {
            if (auto it = lines_.find(p); it != lines_.end()) return it->second;
            const auto cut = p.find_last_of(".[");
            if (cut == std::string::npos) return 1;
            p.resize(cut);
        }
    }

   private:
    struct Frame {
        bool object = false;
        std::string path;
        std::string key;
        std::size_t index = 0;
        bool expect_key = false;
    };

    static std::string child(const Frame& f) {
        if (f.object) return f.path.empty() ? f.key : f.path + "." + f.key;
        return f.path + "[" + std::to_string(f.index) + "]";
    }

    void value_start(std::vector<Frame>& stack, int line) {
        if (!stack.empty() && !stack.back().object) lines_.emplace(child(stack.back()), line);
    }

    void scan(const std::string& text) {
        std::vector<Frame> stack;
        int line = 1;
        for (std::size_t i = 0; i < text.size(); ++i) {
            const char ch = text[i];
            if (ch == '\n') {
                ++line;
            } else if (ch == '"') {
                std::string s;
                for (++i; i < text.size() && text[i] != '"'; ++i) {
                    if (text[i] == '\\' && i + 1 < text.size()) ++i;
                    if (text[i] == '\n') ++line;
                    s += text[i];
                }
                if (!stack.empty() && stack.back().object && stack.back().expect_key) {
                    stack.back().key = s;
                    stack.back().expect_key = false;
                    lines_.emplace(child(stack.back()), line);
                } else {
                    value_start(stack, line);
                }
            } else if (ch == '{' || ch == '[') {
                value_start(stack, line);
                Frame f;
                f.object = ch == '{';
                f.expect_key = f.object;
                if (!stack.empty()) f.path = child(stack.back());
                stack.push_back(f);
            } else if (ch == '}' || ch == ']') {
                if (!stack.empty()) stack.pop_back();
            } else if (ch == ',') {
                if (!stack.empty()) {
                    if (stack.back().object)
                        stack.back().expect_key = true;
                    else
                        ++stack.back().index;
                }
            } else if (!std::isspace(static_cast<unsigned char>(ch)) && ch != ':') {
                // bare literal: number, true, false, null
                const bool starts = i == 0 || std::string_view(" \t\r\n[,:").find(text[i - 1]) != std::string_view::npos;
                if (starts) value_start(stack, line);
            }
        }
    }

    std::map<std::string, int> lines_;
};

// Typed field access with location-aware errors and unknown-key rejection.
class Reader {
   public:
    Reader(const LineIndex& lines, std::string source) : lines_(lines), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
        throw ValidationError(source_ + ":" + std::to_string(lines_.line_of(path)) + ": " + path + ": " + msg);
    }

    void only_keys(const json& obj, const std::string& path, std::set<std::string> allowed) const {
        if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
        for (const auto& [key, value] : obj.items())
            if (!allowed.count(key)) {
                const std::string full = path.empty() ? key : path + "." + key;
                throw ValidationError(source_ + ":" + std::to_string(lines_.line_of(full)) + ": unknown key '" + key +
                                      "'" + (path.empty() ? "" : " in " + path));
            }
    }

    std::size_t count(const json& v, const std::string& path, std::size_t min = 0) const {
        if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
            fail(path, "expected an integer >= " + std::to_string(min));
        return v.get<std::size_t>();
    }

    std::uint64_t seed(const json& v, const std::string& path) const {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            fail(path, "expected a non-negative integer seed");
        return v.get<std::uint64_t>();
    }

    double number(const json& v, const std::string& path) const {
        if (!v.is_number()) fail(path, "expected a number");
        return v.get<double>();
    }

    bool boolean(const json& v, const std::string& path) const {
        if (!v.is_boolean()) fail(path, "expected true or false");
        return v.get<bool>();
    }

    std::string text(const json& v, const std::string& path) const {
        if (!v.is_string()) fail(path, "expected a string");
        return v.get<std::string>();
    }

    // Runs `parse` and re-labels ValidationError / ContractError with the location.
    template <class F>
    auto at(const std::string& path, F&& parse) const {
        try {
            return parse();
        } catch (const ValidationError& e) {
            if (std::string(e.what()).rfind(source_ + ":", 0) == 0) throw;
            fail(path, e.what());
        } catch (const ContractError& e) {
            fail(path, e.what());
        }
    }

   private:
    const LineIndex& lines_;
    std::string source_;
};

template <class T, class F>
void maybe(const json& obj, const char* key, T& out, F&& read) {
    if (auto it = obj.find(key); it != obj.end()) out = read(*it);
}

}  // namespace

void validate_config(const GenerationConfig& c) {
    if (c.schedule.steps < 2) throw ValidationError("schedule.steps must be >= 2");
    const auto sched = c.schedule.make();
    if (sched.alpha_bar_at(sched.steps) > 0.05)
        throw ValidationError("schedule: alpha_bar at T is " + std::to_string(sched.alpha_bar_at(sched.steps)) +
                              "; the sampler needs a schedule ending near pure noise (< 0.05)");
    c.patch.validate(kCanvas);
    c.noise.validate();
    if (c.segment_length == 0 || c.segment_length > 64) throw ValidationError("segment_length must be in 1..64");
    if (c.window == 0) throw ValidationError("window must be >= 1");
    if (c.rollout_frames == 0) throw ValidationError("rollout_frames must be >= 1");
    if (c.seeds.empty()) throw ValidationError("seeds must list at least one seed");
    if (c.data.sequences == 0) throw ValidationError("data.sequences must be >= 1");
    if (c.data.length < c.segment_length) throw ValidationError("data.length must be >= segment_length");
    if (c.labels.empty() || c.labels.front().onset_frame != 0)
        throw ValidationError("labels must start with an entry at onset 0");
    for (std::size_t i = 1; i < c.labels.size(); ++i)
        if (c.labels[i].onset_frame <= c.labels[i - 1].onset_frame)
            throw ValidationError("labels onsets must be strictly increasing");
    if (c.training.batch == 0) throw ValidationError("training.batch must be >= 1");
    if (!(c.training.lr > 0) || !(c.training.codec_lr > 0)) throw ValidationError("learning rates must be positive");
    if (c.model.width < 2 || c.model.stages == 0) throw ValidationError("model.width >= 2 and model.stages >= 1");
    if (c.model.enhancer_width == 0 || c.model.enhancer_blocks == 0 || c.model.codebook_size < 2 ||
        c.model.code_dim == 0)
        throw ValidationError("model enhancer sizes must be positive (codebook_size >= 2)");
}

GenerationConfig parse_config(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
        throw ValidationError(source + ":" + std::to_string(line) + ": JSON syntax error: " + e.what());
    }
    const LineIndex lines(text);
    const Reader rd(lines, source);
    GenerationConfig c;

    rd.only_keys(doc, "",
                 {"schedule", "latent_mode", "augmentation", "segment_length", "window", "rollout_frames", "seeds",
                  "data", "labels", "enhancer", "training", "model"});

    if (auto it = doc.find("schedule"); it != doc.end()) {
        rd.only_keys(*it, "schedule", {"T", "beta_start", "beta_end"});
        maybe(*it, "T", c.schedule.steps, [&](const json& v) { return rd.count(v, "schedule.T", 2); });
        maybe(*it, "beta_start", c.schedule.beta_start, [&](const json& v) { return rd.number(v, "schedule.beta_start"); });
        maybe(*it, "beta_end", c.schedule.beta_end, [&](const json& v) { return rd.number(v, "schedule.beta_end"); });
        rd.at("schedule", [&] {
            const auto s = c.schedule.make();
            if (s.alpha_bar_at(s.steps) > 0.05)
                throw ValidationError("alpha_bar at T is " + std::to_string(s.alpha_bar_at(s.steps)) +
                                      "; need < 0.05 so sampling starts from near-pure noise");
            return 0;
        });
    }
    maybe(doc, "latent_mode", c.latent_mode, [&](const json& v) {
        return rd.at("latent_mode", [&] { return parse_latent_mode(rd.text(v, "latent_mode")); });
    });
    if (auto it = doc.find("augmentation"); it != doc.end()) {
        rd.only_keys(*it, "augmentation", {"patch_size", "drop_rate", "noise_sigma", "drop_domain"});
        maybe(*it, "patch_size", c.patch.patch_size, [&](const json& v) { return rd.count(v, "augmentation.patch_size"); });
        maybe(*it, "drop_rate", c.patch.drop_rate, [&](const json& v) { return rd.number(v, "augmentation.drop_rate"); });
        maybe(*it, "noise_sigma", c.noise.sigma, [&](const json& v) { return rd.number(v, "augmentation.noise_sigma"); });
        maybe(*it, "drop_domain", c.patch.domain, [&](const json& v) {
            return rd.at("augmentation.drop_domain",
                         [&] { return parse_drop_domain(rd.text(v, "augmentation.drop_domain")); });
        });
        rd.at("augmentation.drop_rate", [&] { PatchDropConfig{0, c.patch.drop_rate, c.patch.domain}.validate(kCanvas); return 0; });
        rd.at("augmentation.patch_size", [&] { c.patch.validate(kCanvas); return 0; });
        rd.at("augmentation.noise_sigma", [&] { c.noise.validate(); return 0; });
    }
    maybe(doc, "segment_length", c.segment_length, [&](const json& v) { return rd.count(v, "segment_length", 1); });
    maybe(doc, "window", c.window, [&](const json& v) { return rd.count(v, "window", 1); });
    maybe(doc, "rollout_frames", c.rollout_frames, [&](const json& v) { return rd.count(v, "rollout_frames", 1); });
    if (auto it = doc.find("seeds"); it != doc.end()) {
        if (!it->is_array() || it->empty()) rd.fail("seeds", "expected a nonempty array of seeds");
        c.seeds.clear();
        for (std::size_t i = 0; i < it->size(); ++i)
            c.seeds.push_back(rd.seed((*it)[i], "seeds[" + std::to_string(i) + "]"));
    }
    if (auto it = doc.find("data"); it != doc.end()) {
        rd.only_keys(*it, "data", {"train_dir", "sequences", "length", "seed", "heldout_seed"});
        maybe(*it, "train_dir", c.data.train_dir, [&](const json& v) { return rd.text(v, "data.train_dir"); });
        maybe(*it, "sequences", c.data.sequences, [&](const json& v) { return rd.count(v, "data.sequences", 1); });
        maybe(*it, "length", c.data.length, [&](const json& v) { return rd.count(v, "data.length", 2); });
        maybe(*it, "seed", c.data.seed, [&](const json& v) { return rd.seed(v, "data.seed"); });
        maybe(*it, "heldout_seed", c.data.heldout_seed, [&](const json& v) { return rd.seed(v, "data.heldout_seed"); });
    }
    if (auto it = doc.find("labels"); it != doc.end()) {
        if (!it->is_array() || it->empty()) rd.fail("labels", "expected a nonempty array of {label, onset}");
        c.labels.clear();
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string path = "labels[" + std::to_string(i) + "]";
            const json& e = (*it)[i];
            rd.only_keys(e, path, {"label", "onset"});
            if (!e.contains("label") || !e.contains("onset")) rd.fail(path, "needs both 'label' and 'onset'");
            ExpressionLabel l;
            l.expression = rd.at(path + ".label", [&] { return parse_expression(rd.text(e["label"], path + ".label")); });
            l.onset_frame = rd.count(e["onset"], path + ".onset");
            if (i == 0 && l.onset_frame != 0) rd.fail(path + ".onset", "the first label must start at frame 0");
            if (i > 0 && l.onset_frame <= c.labels.back().onset_frame)
                rd.fail(path + ".onset", "onsets must be strictly increasing");
            c.labels.push_back(l);
        }
    }
    maybe(doc, "enhancer", c.enhancer, [&](const json& v) { return rd.boolean(v, "enhancer"); });
    if (auto it = doc.find("training"); it != doc.end()) {
        rd.only_keys(*it, "training",
                     {"codec_steps", "codec_lr", "stage1_steps", "stage2_steps", "batch", "lr", "snr_gamma",
                      "vq_steps", "enhancer_steps", "seed"});
        auto& t = c.training;
        maybe(*it, "codec_steps", t.codec_steps, [&](const json& v) { return rd.count(v, "training.codec_steps"); });
        maybe(*it, "codec_lr", t.codec_lr, [&](const json& v) { return rd.number(v, "training.codec_lr"); });
        maybe(*it, "stage1_steps", t.stage1_steps, [&](const json& v) { return rd.count(v, "training.stage1_steps"); });
        maybe(*it, "stage2_steps", t.stage2_steps, [&](const json& v) { return rd.count(v, "training.stage2_steps"); });
        maybe(*it, "batch", t.batch, [&](const json& v) { return rd.count(v, "training.batch", 1); });
        maybe(*it, "lr", t.lr, [&](const json& v) { return rd.number(v, "training.lr"); });
        maybe(*it, "snr_gamma", t.snr_gamma, [&](const json& v) { return rd.number(v, "training.snr_gamma"); });
        maybe(*it, "vq_steps", t.vq_steps, [&](const json& v) { return rd.count(v, "training.vq_steps"); });
        maybe(*it, "enhancer_steps", t.enhancer_steps,
              [&](const json& v) { return rd.count(v, "training.enhancer_steps"); });
        maybe(*it, "seed", t.seed, [&](const json& v) { return rd.seed(v, "training.seed"); });
        if (!(t.lr > 0)) rd.fail("training.lr", "must be positive");
        if (!(t.codec_lr > 0)) rd.fail("training.codec_lr", "must be positive");
        if (!(t.snr_gamma >= 0)) rd.fail("training.snr_gamma", "must be >= 0");
    }
    if (auto it = doc.find("model"); it != doc.end()) {
        rd.only_keys(*it, "model", {"width", "stages", "prior_variance", "enhancer_width", "enhancer_blocks", "codebook_size",
                                       "code_dim"});
        auto& m = c.model;
        maybe(*it, "width", m.width, [&](const json& v) { return rd.count(v, "model.width", 2); });
        maybe(*it, "stages", m.stages, [&](const json& v) { return rd.count(v, "model.stages", 1); });
        maybe(*it, "prior_variance", m.prior_variance,
              [&](const json& v) { return rd.number(v, "model.prior_variance"); });
        if (!(m.prior_variance >= 0)) rd.fail("model.prior_variance", "must be >= 0");
        maybe(*it, "enhancer_width", m.enhancer_width, [&](const json& v) { return rd.count(v, "model.enhancer_width", 1); });
        maybe(*it, "enhancer_blocks", m.enhancer_blocks,
              [&](const json& v) { return rd.count(v, "model.enhancer_blocks", 1); });
        maybe(*it, "codebook_size", m.codebook_size, [&](const json& v) { return rd.count(v, "model.codebook_size", 2); });
        maybe(*it, "code_dim", m.code_dim, [&](const json& v) { return rd.count(v, "model.code_dim", 1); });
    }
    // Remaining cross-field checks point at the field most likely at fault.
    rd.at("segment_length", [&] {
        if (c.segment_length > 64) throw ValidationError("must be <= 64");
        return 0;
    });
    rd.at("data.length", [&] {
        if (c.data.length < c.segment_length) throw ValidationError("must be >= segment_length");
        return 0;
    });
    rd.at("<root>", [&] { validate_config(c); return 0; });
    return c;
}

GenerationConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string serialize_config(const GenerationConfig& c) {
    ordered j;
    j["schedule"] = {{"T", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["latent_mode"] = latent_mode_name(c.latent_mode);
    j["augmentation"] = {{"patch_size", c.patch.patch_size},
                         {"drop_rate", c.patch.drop_rate},
                         {"noise_sigma", c.noise.sigma},
                         {"drop_domain", drop_domain_name(c.patch.domain)}};
    j["segment_length"] = c.segment_length;
    j["window"] = c.window;
    j["rollout_frames"] = c.rollout_frames;
    j["seeds"] = c.seeds;
    j["data"] = {{"train_dir", c.data.train_dir},
                 {"sequences", c.data.sequences},
                 {"length", c.data.length},
                 {"seed", c.data.seed},
                 {"heldout_seed", c.data.heldout_seed}};
    ordered labels = ordered::array();
    for (const auto& l : c.labels)
        labels.push_back({{"label", expression_name(l.expression)}, {"onset", l.onset_frame}});
    j["labels"] = labels;
    j["enhancer"] = c.enhancer;
    const auto& t = c.training;
    j["training"] = {{"codec_steps", t.codec_steps}, {"codec_lr", t.codec_lr},         {"stage1_steps", t.stage1_steps},
                     {"stage2_steps", t.stage2_steps}, {"batch", t.batch},             {"lr", t.lr},
                     {"snr_gamma", t.snr_gamma},     {"vq_steps", t.vq_steps},       {"enhancer_steps", t.enhancer_steps}, {"seed", t.seed}};
    const auto& m = c.model;
    j["model"] = {{"width", m.width},
                  {"stages", m.stages},
                  {"prior_variance", m.prior_variance},
                  {"enhancer_width", m.enhancer_width},
                  {"enhancer_blocks", m.enhancer_blocks},
                  {"codebook_size", m.codebook_size},
                  {"code_dim", m.code_dim}};
    return j.dump(2) + "\n";
}

std::string config_schema() {
    const ordered count = {{"type", "integer"}, {"minimum", 0}};
    const ordered positive = {{"type", "integer"}, {"minimum", 1}};
    const ordered number = {{"type", "number"}};
    auto object = [](ordered props) {
        return ordered{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)}};
    };
    ordered s;
    s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
    s["title"] = "h2m generation config";
    s["type"] = "object";
    s["additionalProperties"] = false;
    s["properties"] = {
        {"schedule", object({{"T", {{"type", "integer"}, {"minimum", 2}}},
                             {"beta_start", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                             {"beta_end", {{"type", "number"}, {"exclusiveMaximum", 1}}}})},
        {"latent_mode", {{"enum", {"codec", "identity-debug"}}}},
        {"augmentation", object({{"patch_size", {{"type", "integer"}, {"enum", {0, 1, 2, 4, 8, 16, 32}}}},
                                 {"drop_rate", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
                                 {"noise_sigma", {{"type", "number"}, {"minimum", 0}}},
                                 {"drop_domain", {{"enum", {"image", "latent"}}}}})},
        {"segment_length", {{"type", "integer"}, {"minimum", 1}, {"maximum", 64}}},
        {"window", positive},
        {"rollout_frames", positive},
        {"seeds", {{"type", "array"}, {"minItems", 1}, {"items", count}}},
        {"data", object({{"train_dir", {{"type", "string"}}},
                         {"sequences", positive},
                         {"length", {{"type", "integer"}, {"minimum", 2}}},
                         {"seed", count},
                         {"heldout_seed", count}})},
        {"labels",
         {{"type", "array"},
          {"minItems", 1},
          {"items",
           {{"type", "object"},
            {"additionalProperties", false},
            {"required", {"label", "onset"}},
            {"properties", {{"label", {{"enum", {"neutral", "happy", "surprised"}}}}, {"onset", count}}}}}}},
        {"enhancer", {{"type", "boolean"}}},
        {"training", object({{"codec_steps", count},
                             {"codec_lr", number},
                             {"stage1_steps", count},
                             {"stage2_steps", count},
                             {"batch", positive},
                             {"lr", number},
                             {"snr_gamma", {{"type", "number"}, {"minimum", 0}}},
                             {"vq_steps", count},
                             {"enhancer_steps", count},
                             {"seed", count}})},
        {"model", object({{"width", {{"type", "integer"}, {"minimum", 2}}},
                          {"stages", positive},
                          {"prior_variance", {{"type", "number"}, {"minimum", 0}}},
                          {"enhancer_width", positive},
                          {"enhancer_blocks", positive},
                          {"codebook_size", {{"type", "integer"}, {"minimum", 2}}},
                          {"code_dim", positive}})}};
    return s.dump(2) + "\n";
}

}  // namespace h2m
