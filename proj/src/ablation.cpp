#include "h2m/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "h2m/error.hpp"

namespace h2m {

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

PatchDropConfig normalized(PatchDropConfig p) {
    if (p.patch_size == 0 || p.drop_rate == 0.0) return {0, 0.0, p.domain};
    return p;
}

std::vector<double> field(const CellOutcome& c, double DriftReport::*member) {
    std::vector<double> out;
    for (const auto& r : c.reports) out.push_back(r.*member);
    return out;
}

MeanSd terminal_stats(const CellOutcome& c) {
    const auto v = field(c, &DriftReport::terminal_drift);
    return mean_sd(v);
}

bool usable(const CellOutcome* c) { return c && !c->skipped && !c->reports.empty(); }

}  // namespace

std::string arm_name(const PatchDropConfig& patch_in, const NoiseAugConfig& noise, std::size_t base_patch,
                     double base_rate) {
    const auto patch = normalized(patch_in);
    const bool noisy = noise.sigma > 0.0;
    std::string name;
    if (!patch.enabled()) return noisy ? "noise" : "none";
    if (patch.patch_size == base_patch && patch.drop_rate == base_rate) return noisy ? "combined" : "patch";
    if (patch.drop_rate == base_rate)
        name = "p" + std::to_string(patch.patch_size);
    else if (patch.patch_size == base_patch)
        name = "r" + fmt(patch.drop_rate, "%g");
    else
        name = "p" + std::to_string(patch.patch_size) + "-r" + fmt(patch.drop_rate, "%g");
    if (patch.domain == DropDomain::latent) name += "-latent";
    return noisy ? name + "+noise" : name;
}

AblationGrid AblationGrid::arms_only() {
    AblationGrid g;
    g.patch_sizes.clear();
    g.drop_rates.clear();
    return g;
}

void AblationGrid::validate() const {
    if (seeds.size() < 5) throw ValidationError("ablation grid needs at least 5 seeds per cell, got " +
                                                std::to_string(seeds.size()));
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ValidationError("ablation grid seeds must be distinct");
    for (const auto& c : cells()) c.arm.patch.validate();
    NoiseAugConfig{sigma}.validate();
}

std::vector<AblationCell> AblationGrid::cells() const {
    std::vector<AblationCell> out;
    auto add = [&](PatchDropConfig patch, double noise, const std::string& group) {
        patch = normalized(patch);
        const NoiseAugConfig na{noise};
        for (auto& c : out) {
            if (c.arm.patch == patch && c.arm.noise == na) {
                if (std::find(c.groups.begin(), c.groups.end(), group) == c.groups.end()) c.groups.push_back(group);
                return;
            }
        }
        out.push_back({ArmSpec{arm_name(patch, na, base_patch_size, base_drop_rate), patch, na}, {group}});
    };
    const PatchDropConfig off{0, 0.0, DropDomain::image};
    const PatchDropConfig base{base_patch_size, base_drop_rate, DropDomain::image};
    add(off, 0.0, "augmentation");
    add(off, sigma, "augmentation");
    add(base, 0.0, "augmentation");
    add(base, sigma, "augmentation");
    for (auto p : patch_sizes) add({p, base_drop_rate, DropDomain::image}, 0.0, "patch_size");
    for (auto r : drop_rates) add({base_patch_size, r, DropDomain::image}, 0.0, "drop_rate");
    return out;
}

const CellOutcome* AblationResult::find(const std::string& name) const {
    for (const auto& c : cells)
        if (c.cell.arm.name == name) return &c;
    return nullptr;
}

AblationResult run_ablation(const AblationGrid& grid, const ArmModelSource& models, const LatentCodec& codec,
                            const GenerationConfig& cfg, std::size_t jobs, const Log& warn) {
    grid.validate();
    AblationResult result;
    std::vector<std::optional<DenoiserNet>> nets;
    for (const auto& cell : grid.cells()) {
        CellOutcome out;
        out.cell = cell;
        auto net = models(cell.arm);
        if (!net) {
            out.skipped = true;
            out.reason = "no stage-2 checkpoint";
            if (warn) warn("warning: skipping cell '" + cell.arm.name + "': no stage-2 checkpoint");
        } else {
            out.seeds = grid.seeds;
            out.reports.resize(grid.seeds.size());
        }
        result.cells.push_back(std::move(out));
        nets.push_back(std::move(net));
    }

    // Driving sequences are shared by every cell so seeds pair across arms.
    std::vector<BlobSequence> driving;
    for (auto s : grid.seeds) driving.push_back(heldout_sequence(cfg, s, true));

    struct Task {
        std::size_t cell, seed;
    };
    std::vector<Task> tasks;
    for (std::size_t c = 0; c < result.cells.size(); ++c)
        if (!result.cells[c].skipped)
            for (std::size_t s = 0; s < grid.seeds.size(); ++s) tasks.push_back({c, s});

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        NoGradGuard no_grad;
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            try {
                const auto [c, s] = tasks[i];
                const auto& seq = driving[s];
                const auto rc = rollout_config(cfg, result.cells[c].cell.arm, grid.seeds[s]);
                auto video = rollout(*nets[c], codec, seq.frames[0], seq.signal, seq.labels, cfg.rollout_frames, rc);
                video.frames.resize(cfg.rollout_frames);
                result.cells[c].reports[s] = make_drift_report(video.frames, seq.frames[0], seq.signal.samples);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = tasks.size();
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(tasks.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    assess(result, grid);
    return result;
}

void assess(AblationResult& result, const AblationGrid& grid) {
    result.tests.clear();
    result.orderings.clear();
    auto pair_test = [&](const std::string& lower, const std::string& higher) {
        const auto* a = result.find(lower);
        const auto* b = result.find(higher);
        if (!usable(a) || !usable(b)) return;
        for (const auto& t : result.tests)
            if (t.lower == lower && t.higher == higher) return;
        const auto x = field(*a, &DriftReport::terminal_drift);
        const auto y = field(*b, &DriftReport::terminal_drift);
        result.tests.push_back({lower, higher, sign_test(x, y)});
    };
    pair_test("combined", "none");
    pair_test("patch", "none");
    pair_test("noise", "none");
    pair_test("combined", "patch");
    pair_test("patch", "noise");
    pair_test("combined", "noise");

    // Chain of strict mean inequalities on terminal drift.
    auto chain = [&](const std::string& what, const std::vector<std::string>& order) {
        OrderingCheck check{what, true, false, ""};
        for (const auto& n : order) {
            if (!usable(result.find(n))) {
                check.holds = false;
                check.detail = "cell '" + n + "' missing";
                result.orderings.push_back(check);
                return;
            }
        }
        std::ostringstream d;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto s = terminal_stats(*result.find(order[i]));
            d << (i ? " < " : "") << order[i] << " " << fmt(s.mean, "%.5f");
            if (i + 1 < order.size()) {
                const auto t = terminal_stats(*result.find(order[i + 1]));
                if (!(s.mean < t.mean)) check.holds = false;
                if (std::abs(t.mean - s.mean) < std::max(s.sd, t.sd)) check.tie_within_sd = true;
            }
        }
        check.detail = d.str();
        result.orderings.push_back(check);
    };
    chain("terminal drift: combined < patch < noise < none", {"combined", "patch", "noise", "none"});

    // Minimum over one sweep.
    auto argmin = [&](const std::string& group, const std::string& expected) {
        std::vector<const CellOutcome*> members;
        for (const auto& c : result.cells)
            if (std::find(c.cell.groups.begin(), c.cell.groups.end(), group) != c.cell.groups.end())
                members.push_back(&c);
        OrderingCheck check{"minimum " + group + " drift at '" + expected + "'", false, false, ""};
        const auto* best_expected = result.find(expected);
        bool complete = usable(best_expected);
        for (const auto* m : members) complete = complete && usable(m);
        if (members.empty() || !complete) {
            check.detail = "sweep incomplete";
            result.orderings.push_back(check);
            return;
        }
        const auto e = terminal_stats(*best_expected);
        check.holds = true;
        std::ostringstream d;
        for (const auto* m : members) {
            const auto s = terminal_stats(*m);
            d << (d.tellp() ? ", " : "") << m->cell.arm.name << " " << fmt(s.mean, "%.5f") << "±"
              << fmt(s.sd, "%.5f");
            if (m == best_expected) continue;
            if (!(e.mean < s.mean)) check.holds = false;
            if (std::abs(s.mean - e.mean) < std::max(e.sd, s.sd)) check.tie_within_sd = true;
            pair_test(expected, m->cell.arm.name);
        }
        check.detail = d.str();
        result.orderings.push_back(check);
    };
    if (!grid.patch_sizes.empty()) argmin("patch_size", "patch");
    if (!grid.drop_rates.empty()) argmin("drop_rate", "patch");

    // Slope of the combined arm below the unaugmented arm on every seed.
    {
        OrderingCheck check{"drift slope: combined < none on every seed", false, false, ""};
        const auto* a = result.find("combined");
        const auto* b = result.find("none");
        if (usable(a) && usable(b)) {
            const auto x = field(*a, &DriftReport::drift_slope);
            const auto y = field(*b, &DriftReport::drift_slope);
            std::size_t wins = 0;
            for (std::size_t i = 0; i < x.size(); ++i) wins += x[i] < y[i];
            check.holds = wins == x.size();
            check.detail = std::to_string(wins) + "/" + std::to_string(x.size()) + " seeds";
        } else {
            check.detail = "cell missing";
        }
        result.orderings.push_back(check);
    }
}

std::string ablation_csv(const AblationResult& result) {
    std::ostringstream os;
    os << "cell,groups,patch_size,drop_rate,noise_sigma,status,seeds";
    for (const char* f : {"terminal_drift", "drift_slope", "sync", "smoothness", "expression_response"})
        os << ',' << f << "_mean," << f << "_sd";
    os << '\n';
    for (const auto& c : result.cells) {
        std::string groups;
        for (const auto& g : c.cell.groups) groups += (groups.empty() ? "" : ";") + g;
        const auto& a = c.cell.arm;
        os << a.name << ',' << groups << ',' << a.patch.patch_size << ',' << fmt(a.patch.drop_rate) << ','
           << fmt(a.noise.sigma) << ',' << (c.skipped ? "skipped" : "ok") << ',' << c.reports.size();
        for (auto member : {&DriftReport::terminal_drift, &DriftReport::drift_slope, &DriftReport::sync,
                            &DriftReport::smoothness, &DriftReport::expression_response}) {
            std::vector<double> v;
            for (double x : field(c, member))
                if (std::isfinite(x)) v.push_back(x);
            if (v.empty()) {
                os << ",,";
                continue;
            }
            const auto s = mean_sd(v);
            os << ',' << fmt(s.mean, "%.9g") << ',' << fmt(s.sd, "%.9g");
        }
        os << '\n';
    }
    return os.str();
}

std::string ablation_summary(const AblationResult& result) {
    std::ostringstream os;
    os << "Ablation summary (terminal drift = mean D over the final segment; lower is better)\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %-28s %6s %21s %23s %15s\n", "cell", "groups", "seeds",
                  "terminal drift", "slope", "sync");
    os << line;
    for (const auto& c : result.cells) {
        std::string groups;
        for (const auto& g : c.cell.groups) groups += (groups.empty() ? "" : ",") + g;
        if (c.skipped) {
            std::snprintf(line, sizeof line, "%-12s %-28s SKIPPED (%s)\n", c.cell.arm.name.c_str(), groups.c_str(),
                          c.reason.c_str());
            os << line;
            continue;
        }
        const auto d = mean_sd(field(c, &DriftReport::terminal_drift));
        const auto sl = mean_sd(field(c, &DriftReport::drift_slope));
        const auto sy = mean_sd(field(c, &DriftReport::sync));
        std::snprintf(line, sizeof line, "%-12s %-28s %6zu %10.5f ± %8.5f %11.3e ± %9.3e %6.3f ± %5.3f\n",
                      c.cell.arm.name.c_str(), groups.c_str(), c.reports.size(), d.mean, d.sd, sl.mean, sl.sd,
                      sy.mean, sy.sd);
        os << line;
    }
    os << "\nPaired sign tests on terminal drift (one-sided, exact binomial, ties dropped)\n";
    for (const auto& t : result.tests) {
        std::snprintf(line, sizeof line, "  %-10s < %-10s wins %zu losses %zu ties %zu  p = %.5f\n",
                      t.lower.c_str(), t.higher.c_str(), t.test.wins, t.test.losses, t.test.ties, t.test.p_value);
        os << line;
    }
    os << "\nExpected orderings\n";
    for (const auto& o : result.orderings) {
        os << "  [" << (o.holds ? "holds" : "FAILS") << "] " << o.description;
        if (o.tie_within_sd) os << " (gap within 1 sd)";
        os << "\n      " << o.detail << '\n';
    }
    return os.str();
}

std::string drift_curve_csv(const AblationResult& result) {
    std::ostringstream os;
    os << "arm,seed,k,D\n";
    for (const auto& c : result.cells) {
        if (c.skipped) continue;
        for (std::size_t s = 0; s < c.reports.size(); ++s)
            for (std::size_t k = 0; k < c.reports[s].drift.size(); ++k)
                os << c.cell.arm.name << ',' << c.seeds[s] << ',' << k << ',' << fmt(c.reports[s].drift[k], "%.9g")
                   << '\n';
    }
    return os.str();
}

void write_ablation_outputs(const std::filesystem::path& dir, const AblationResult& result) {
    std::filesystem::create_directories(dir);
    const std::pair<const char*, std::string> files[] = {{"ablation.csv", ablation_csv(result)},
                                                         {"ablation_summary.txt", ablation_summary(result)},
                                                         {"drift_curves.csv", drift_curve_csv(result)}};
    for (const auto& [name, text] : files) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw StateError("cannot write " + (dir / name).string());
        out << text;
    }
}

}  // namespace h2m
