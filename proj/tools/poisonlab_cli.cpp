// Command-line driver for the poisoning-attack experiment pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 stage-gate failure,
// 4 I/O error, 1 anything else.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/harness.hpp"
#include "poisonlab/metrics.hpp"
#include "poisonlab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace poisonlab;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

harness::ExperimentConfig load_config(const GlobalOpts& g) {
    harness::ExperimentConfig cfg;
    if (!g.config_path.empty()) cfg = harness::ExperimentConfig::load(g.config_path);
    if (g.seed) cfg.master_seed = *g.seed;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    cfg.validate();
    return cfg;
}

void write_json(const std::string& path, const json& j) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << '\n';
}

json metrics_summary(harness::ExperimentContext& ctx, const diffusion::ModelCheckpoint& m) {
    metrics::MetricsReport r = ctx.evaluate(m);
    json j = metrics::report_to_json(r);
    j["checkpoint"] = {{"id", m.id}, {"role", diffusion::to_string(m.role)}, {"lineage", m.lineage}};
    return j;
}

int run(int argc, char** argv) {
    CLI::App app{"poisoning-attack experiment pipeline for a desk-scale text-to-image model"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config JSON file");
    app.add_option("--seed", g.seed, "override the master seed");
    app.add_option("--out", g.out_dir, "override the output directory");

    auto* c_gen = app.add_subcommand("gen-corpus", "build and cache the captioned corpus");
    auto* c_enc = app.add_subcommand("train-encoder", "train the joint image-text encoder");
    auto* c_base = app.add_subcommand("train-base", "train the clean base diffusion model");

    auto* c_attack = app.add_subcommand("attack", "run the basic poisoning attack");
    int poison_size = -1;
    std::string target_concept, target_pattern;
    int template_id = -1;
    c_attack->add_option("--poison-size", poison_size, "poisoning-set size");
    c_attack->add_option("--target-concept", target_concept, "targeted prompt concept");
    c_attack->add_option("--target-pattern", target_pattern, "targeted image concept");
    c_attack->add_option("--template", template_id, "prompt template id");

    auto* c_san = app.add_subcommand("sanitize", "run the stealthy attack with a sanitizing set");
    std::string sanitize_concept;
    int sanitize_size = -1;
    c_san->add_option("--sanitize-concept", sanitize_concept, "concept to sanitize");
    c_san->add_option("--sanitize-size", sanitize_size, "sanitizing-set size");

    auto* c_short = app.add_subcommand("shortcut", "search for a shortcut target concept");
    int shortcut_k = 3, shortcut_n = 25;
    c_short->add_option("--top-k", shortcut_k, "embedding-ranked candidates to keep");
    c_short->add_option("--eval-n", shortcut_n, "images per candidate evaluation");

    auto* c_side = app.add_subcommand("side-effects", "side-effect matrix for clean and poisoned models");

    auto* c_def = app.add_subcommand("defend", "fine-tune the poisoned model on untargeted pairs");
    std::string defend_concept;
    int defend_pairs = 10;
    c_def->add_option("--concept", defend_concept, "untargeted concept (default: sanitize concept)");
    c_def->add_option("--pairs", defend_pairs, "number of clean fine-tuning pairs");

    auto* c_eval = app.add_subcommand("evaluate", "full metric blocks for all checkpoints");
    auto* c_sweep = app.add_subcommand("sweep", "cross-product sweep over attack axes");
    std::string axes_path;
    c_sweep->add_option("--axes", axes_path, "axes JSON file")->required();
    auto* c_report = app.add_subcommand("report", "run the full experiment and emit every artifact");

    CLI11_PARSE(app, argc, argv);

    harness::ExperimentConfig cfg = load_config(g);

    if (c_attack->parsed()) {
        if (!target_concept.empty()) cfg.attack.target_concept = target_concept;
        if (!target_pattern.empty()) cfg.attack.target_pattern = target_pattern;
        if (template_id >= 0) cfg.attack.template_id = template_id;
        if (poison_size > 0) cfg.attack.poison_sizes = {poison_size};
        cfg.validate();
    }
    if (c_san->parsed()) {
        if (!sanitize_concept.empty()) cfg.attack.sanitize_concept = sanitize_concept;
        if (sanitize_size > 0) cfg.attack.sanitize_size = sanitize_size;
        cfg.validate();
    }

    harness::ExperimentContext ctx(cfg);
    const fs::path out(cfg.out_dir);

    if (c_gen->parsed()) {
        ctx.prepare_corpus();
        std::cout << "corpus ready: " << ctx.corpus_data().pairs.size() << " pairs ("
                  << ctx.corpus_data().train.size() << " train, " << ctx.corpus_data().val.size()
                  << " val), variant pool " << ctx.variant_pool().size() << '\n';
        return 0;
    }
    if (c_enc->parsed()) {
        ctx.prepare_encoder();
        std::cout << "encoder ready: dim " << ctx.space().dim << ", loss "
                  << ctx.space().first_epoch_loss << " -> " << ctx.space().last_epoch_loss << '\n';
        return 0;
    }
    if (c_base->parsed()) {
        ctx.prepare();
        std::cout << "base model ready: id " << ctx.base_model().id << ", val loss "
                  << ctx.base_model().first_epoch_loss << " -> "
                  << ctx.base_model().last_epoch_loss << '\n';
        return 0;
    }
    if (c_attack->parsed()) {
        int size = cfg.attack.poison_sizes.front();
        const auto& mp = ctx.poisoned(size);
        json j = metrics_summary(ctx, mp);
        write_json((out / ("attack_" + std::to_string(size) + ".json")).string(), j);
        std::cout << "poisoned model " << mp.id << ": poison_effect "
                  << j["poison_effect"].get<double>() << '\n';
        return 0;
    }
    if (c_san->parsed()) {
        const auto& ms = ctx.sanitized(cfg.attack.poison_sizes.front());
        json j = metrics_summary(ctx, ms);
        write_json((out / "sanitize.json").string(), j);
        std::cout << "sanitized model " << ms.id << ": poison_effect "
                  << j["poison_effect"].get<double>() << ", fid " << j["fid"].get<double>() << '\n';
        return 0;
    }
    if (c_short->parsed()) {
        auto set = ctx.shortcut(shortcut_k, shortcut_n);
        json cands = json::array();
        for (std::size_t i = 0; i < set.candidates.size(); ++i)
            cands.push_back({{"concept", set.candidates[i].name}, {"score", set.scores[i]}});
        json j = {{"candidates", cands}, {"selected", set.selected.name}};
        write_json((out / "shortcut.json").string(), j);
        std::cout << "selected shortcut concept: " << set.selected.name << '\n';
        return 0;
    }
    if (c_side->parsed()) {
        ctx.prepare();
        json j = json::object();
        std::ostringstream csv;
        csv << "model";
        for (const auto& q : ctx.query_concepts()) csv << ',' << q.name;
        csv << '\n';
        auto emit = [&](const std::string& key, const diffusion::ModelCheckpoint& m) {
            auto entries = ctx.side_effects(m);
            json arr = json::array();
            csv << key;
            for (const auto& e : entries) {
                arr.push_back({{"concept", e.concept_.name}, {"effect", e.effect}});
                csv << ',' << e.effect;
            }
            csv << '\n';
            j[key] = arr;
        };
        emit("M_o", ctx.base_model());
        emit("M_p_" + std::to_string(cfg.attack.poison_sizes.front()),
             ctx.poisoned(cfg.attack.poison_sizes.front()));
        write_json((out / "side_effects.json").string(), j);
        fs::create_directories(out);
        std::ofstream f(out / "side_effects.csv");
        if (!f) throw IoError("cannot write side_effects.csv");
        f << csv.str();
        std::cout << "side-effect matrix written to " << (out / "side_effects.csv").string()
                  << '\n';
        return 0;
    }
    if (c_def->parsed()) {
        if (defend_concept.empty()) defend_concept = cfg.attack.sanitize_concept;
        const auto& mp = ctx.poisoned(cfg.attack.poison_sizes.front());
        double before = ctx.evaluate(mp).poison_effect;
        auto md = ctx.defended(mp, defend_concept, defend_pairs);
        double after = ctx.evaluate(md).poison_effect;
        json j = {{"defended_id", md.id},
                  {"concept", defend_concept},
                  {"pairs", defend_pairs},
                  {"poison_effect_before", before},
                  {"poison_effect_after", after}};
        write_json((out / "defend.json").string(), j);
        std::cout << "poison_effect " << before << " -> " << after << " after defense\n";
        return 0;
    }
    if (c_eval->parsed()) {
        harness::RunReport report = harness::run_experiment(ctx);
        auto files = harness::emit_report(report, cfg.out_dir, {"json", "csv"});
        for (const auto& f : files) std::cout << f << '\n';
        return 0;
    }
    if (c_sweep->parsed()) {
        std::ifstream f(axes_path);
        if (!f) throw IoError("cannot read axes file: " + axes_path);
        json aj = json::parse(f, nullptr, false);
        if (aj.is_discarded()) throw ConfigError("axes file is not valid JSON: " + axes_path);
        harness::RunReport report = harness::sweep_grid(cfg, harness::SweepAxes::from_json(aj));
        auto files = harness::emit_report(report, cfg.out_dir, {"json", "csv", "plots"});
        for (const auto& f2 : files) std::cout << f2 << '\n';
        return 0;
    }
    if (c_report->parsed()) {
        harness::RunReport report = harness::run_experiment(ctx);
        auto files =
            harness::emit_report(report, cfg.out_dir, {"json", "csv", "plots", "image-grids"});
        for (const auto& f : files) std::cout << f << '\n';
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const StageGateError& e) {
        std::cerr << "stage gate failure: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
