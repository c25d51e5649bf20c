#include "poisonlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "poisonlab/errors.hpp"
#include "poisonlab/paper_reference.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace poisonlab::harness {

int DiffusionSpec::width() const {
    if (model_size == "small") return 12;
    if (model_size == "base") return 16;
    throw ConfigError("model_size must be 'small' or 'base', got '" + model_size + "'");
}

// ---------------------------------------------------------------------------
// config serialization

json ExperimentConfig::to_json() const {
    return json{
        {"corpus",
         {{"per_concept", corpus.per_concept},
          {"qualifier_rate", corpus.qualifier_rate},
          {"variant_pool", corpus.variant_pool}}},
        {"encoder",
         {{"dim", encoder.dim},
          {"temperature", encoder.temperature},
          {"epochs", encoder.epochs},
          {"batch", encoder.batch},
          {"lr", encoder.lr},
          {"align_weight", encoder.align_weight},
          {"gate_accuracy", encoder.gate_accuracy}}},
        {"diffusion",
         {{"model_size", diffusion.model_size},
          {"T", diffusion.T},
          {"schedule", diffusion.schedule},
          {"epochs", diffusion.epochs},
          {"batch", diffusion.batch},
          {"lr", diffusion.lr},
          {"cond_dropout", diffusion.cond_dropout}}},
        {"attack",
         {{"target_concept", attack.target_concept},
          {"target_pattern", attack.target_pattern},
          {"template_id", attack.template_id},
          {"beta", attack.beta},
          {"poison_sizes", attack.poison_sizes},
          {"ft_epochs", attack.ft_epochs},
          {"profile", attack.profile},
          {"sanitize_concept", attack.sanitize_concept},
          {"sanitize_size", attack.sanitize_size}}},
        {"eval",
         {{"query_concepts", eval.query_concepts},
          {"n", eval.n},
          {"sim_runs", eval.sim_runs},
          {"sim_n", eval.sim_n},
          {"guidance", eval.guidance},
          {"base_gate_accuracy", eval.base_gate_accuracy}}},
        {"master_seed", master_seed},
        {"out_dir", out_dir},
    };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig c;
    try {
        json o = j.value("corpus", json::object());
        c.corpus.per_concept = o.value("per_concept", c.corpus.per_concept);
        c.corpus.qualifier_rate = o.value("qualifier_rate", c.corpus.qualifier_rate);
        c.corpus.variant_pool = o.value("variant_pool", c.corpus.variant_pool);

        o = j.value("encoder", json::object());
        c.encoder.dim = o.value("dim", c.encoder.dim);
        c.encoder.temperature = o.value("temperature", c.encoder.temperature);
        c.encoder.epochs = o.value("epochs", c.encoder.epochs);
        c.encoder.batch = o.value("batch", c.encoder.batch);
        c.encoder.lr = o.value("lr", c.encoder.lr);
        c.encoder.align_weight = o.value("align_weight", c.encoder.align_weight);
        c.encoder.gate_accuracy = o.value("gate_accuracy", c.encoder.gate_accuracy);

        o = j.value("diffusion", json::object());
        c.diffusion.model_size = o.value("model_size", c.diffusion.model_size);
        c.diffusion.T = o.value("T", c.diffusion.T);
        c.diffusion.schedule = o.value("schedule", c.diffusion.schedule);
        c.diffusion.epochs = o.value("epochs", c.diffusion.epochs);
        c.diffusion.batch = o.value("batch", c.diffusion.batch);
        c.diffusion.lr = o.value("lr", c.diffusion.lr);
        c.diffusion.cond_dropout = o.value("cond_dropout", c.diffusion.cond_dropout);

        o = j.value("attack", json::object());
        c.attack.target_concept = o.value("target_concept", c.attack.target_concept);
        c.attack.target_pattern = o.value("target_pattern", c.attack.target_pattern);
        c.attack.template_id = o.value("template_id", c.attack.template_id);
        c.attack.beta = o.value("beta", c.attack.beta);
        c.attack.poison_sizes = o.value("poison_sizes", c.attack.poison_sizes);
        c.attack.ft_epochs = o.value("ft_epochs", c.attack.ft_epochs);
        c.attack.profile = o.value("profile", c.attack.profile);
        c.attack.sanitize_concept = o.value("sanitize_concept", c.attack.sanitize_concept);
        c.attack.sanitize_size = o.value("sanitize_size", c.attack.sanitize_size);

        o = j.value("eval", json::object());
        c.eval.query_concepts = o.value("query_concepts", c.eval.query_concepts);
        c.eval.n = o.value("n", c.eval.n);
        c.eval.sim_runs = o.value("sim_runs", c.eval.sim_runs);
        c.eval.sim_n = o.value("sim_n", c.eval.sim_n);
        c.eval.guidance = o.value("guidance", c.eval.guidance);
        c.eval.base_gate_accuracy = o.value("base_gate_accuracy", c.eval.base_gate_accuracy);

        c.master_seed = j.value("master_seed", c.master_seed);
        c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file: " + path);
    json j = json::parse(f, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config file: " + path);
    f << to_json().dump(2) << '\n';
}

void ExperimentConfig::validate() const {
    corpus::Vocabulary vocab = corpus::default_vocabulary();
    auto require_concept = [&](const std::string& name, const char* field) {
        if (!vocab.contains(name))
            throw ConfigError(std::string(field) + " '" + name + "' is not in the vocabulary");
    };
    require_concept(attack.target_concept, "target_concept");
    require_concept(attack.target_pattern, "target_pattern");
    require_concept(attack.sanitize_concept, "sanitize_concept");
    for (const auto& q : eval.query_concepts) require_concept(q, "query concept");
    if (eval.query_concepts.empty()) throw ConfigError("query_concepts must be non-empty");
    if (attack.sanitize_concept == attack.target_concept)
        throw ConfigError("sanitize_concept must differ from target_concept");
    auto ts = corpus::default_templates();
    if (attack.template_id < 0 || attack.template_id >= static_cast<int>(ts.size()))
        throw ConfigError("template_id out of range");
    if (attack.beta < 0.0 || attack.beta > 1.0) throw ConfigError("beta must be in [0,1]");
    if (attack.poison_sizes.empty()) throw ConfigError("poison_sizes must be non-empty");
    for (int s : attack.poison_sizes)
        if (s < 1) throw ConfigError("poison sizes must be >= 1");
    if (attack.ft_epochs < 0) throw ConfigError("ft_epochs must be >= 0");
    if (attack.profile != "desk" && attack.profile != "paper")
        throw ConfigError("profile must be 'desk' or 'paper'");
    if (attack.sanitize_size < 1) throw ConfigError("sanitize_size must be >= 1");
    if (corpus.per_concept < 10) throw ConfigError("per_concept must be >= 10");
    if (corpus.variant_pool < 1) throw ConfigError("variant_pool must be >= 1");
    if (encoder.epochs < 1 || diffusion.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (eval.n < 1 || eval.sim_n < 1 || eval.sim_runs < 1)
        throw ConfigError("eval sample counts must be >= 1");
    if (diffusion.T < 2) throw ConfigError("T must be >= 2");
    diffusion.width();  // validates model_size
    diffusion::schedule_kind_from_string(diffusion.schedule);
}

namespace {

std::uint64_t hash_str(const std::string& s) { return fnv1a64(s); }

std::string hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace

std::uint64_t ExperimentConfig::corpus_hash() const {
    std::ostringstream os;
    os << corpus.per_concept << '|' << corpus.qualifier_rate << '|' << corpus.variant_pool << '|'
       << attack.target_pattern << '|' << master_seed;
    return fnv1a64(os.str());
}

std::uint64_t ExperimentConfig::encoder_hash() const {
    std::ostringstream os;
    os << encoder.dim << '|' << encoder.temperature << '|' << encoder.epochs << '|'
       << encoder.batch << '|' << encoder.lr << '|' << encoder.align_weight;
    return hash_mix(corpus_hash(), fnv1a64(os.str()));
}

std::uint64_t ExperimentConfig::diffusion_hash() const {
    std::ostringstream os;
    os << diffusion.model_size << '|' << diffusion.T << '|' << diffusion.schedule << '|'
       << diffusion.epochs << '|' << diffusion.batch << '|' << diffusion.lr << '|'
       << diffusion.cond_dropout;
    return hash_mix(encoder_hash(), fnv1a64(os.str()));
}

std::uint64_t ExperimentConfig::attack_hash(int poison_size, int ft_epochs,
                                            std::uint64_t attack_seed, bool with_sanitize) const {
    std::ostringstream os;
    os << attack.target_concept << '|' << attack.target_pattern << '|' << attack.template_id << '|'
       << attack.beta << '|' << poison_size << '|' << ft_epochs << '|' << attack.profile << '|';
    // the poisoned checkpoint does not depend on the sanitizer choice, so its
    // cache key omits those fields and stays shared across sanitizer configs
    if (with_sanitize) os << attack.sanitize_concept << '|' << attack.sanitize_size << '|';
    os << attack_seed;
    return hash_mix(diffusion_hash(), fnv1a64(os.str()));
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(to_json().dump()); }

// ---------------------------------------------------------------------------
// context

ExperimentContext::ExperimentContext(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    vocab_ = corpus::default_vocabulary();
    templates_ = corpus::default_templates();
    tok_ = corpus::Tokenizer::for_vocabulary(vocab_, templates_, corpus::default_qualifiers());
}

std::string ExperimentContext::cache_dir() const {
    return (fs::path(cfg_.out_dir) / "cache").string();
}

const corpus::CaptionedCorpus& ExperimentContext::corpus_data() const {
    if (!corpus_) throw ContractError("context not prepared: corpus missing");
    return *corpus_;
}

const corpus::VariantCorpus& ExperimentContext::variant_pool() const {
    if (!pool_) throw ContractError("context not prepared: variant pool missing");
    return *pool_;
}

const embedding::EmbeddingSpace& ExperimentContext::space() const {
    if (!space_) throw ContractError("context not prepared: embedding space missing");
    return *space_;
}

const diffusion::ModelCheckpoint& ExperimentContext::base_model() const {
    if (!base_) throw ContractError("context not prepared: base model missing");
    return *base_;
}

const ImageSample& ExperimentContext::targeted_image() const { return variant_pool().anchor; }

corpus::Prompt ExperimentContext::targeted_prompt(int template_id,
                                                  const std::vector<std::string>& qualifiers) const {
    int tid = template_id < 0 ? cfg_.attack.template_id : template_id;
    if (tid < 0 || tid >= static_cast<int>(templates_.size()))
        throw ConfigError("template id out of range: " + std::to_string(tid));
    return corpus::make_prompt(vocab_, tok_, templates_[static_cast<std::size_t>(tid)],
                               vocab_.by_name(cfg_.attack.target_concept), qualifiers);
}

corpus::Prompt ExperimentContext::concept_prompt(const corpus::Concept& c) const {
    return corpus::make_prompt(vocab_, tok_,
                               templates_[static_cast<std::size_t>(cfg_.attack.template_id)], c);
}

std::vector<corpus::Concept> ExperimentContext::query_concepts() const {
    std::vector<corpus::Concept> out;
    for (const auto& name : cfg_.eval.query_concepts) out.push_back(vocab_.by_name(name));
    return out;
}

std::uint64_t ExperimentContext::eval_seed(const corpus::Concept& c) const {
    // matches the seed schedule used by the side-effect matrix so per-concept
    // batches are shared between it and the per-checkpoint metric blocks
    return derive_seed(cfg_.master_seed, "side-effect", static_cast<std::uint64_t>(c.id));
}

void ExperimentContext::prepare() {
    if (prepared_) return;
    prepare_base();
    prepared_ = true;
}

void ExperimentContext::prepare_corpus() {
    if (corpus_) return;
    fs::create_directories(cache_dir());
    const std::string corpus_dir =
        (fs::path(cache_dir()) / ("corpus-" + hex(cfg_.corpus_hash()))).string();
    if (fs::exists(fs::path(corpus_dir) / "manifest.jsonl")) {
        corpus_ = corpus::load_corpus(corpus_dir, vocab_, templates_, tok_);
    } else {
        corpus_ = corpus::build_corpus(vocab_, cfg_.corpus.per_concept, templates_, tok_,
                                       derive_seed(cfg_.master_seed, "corpus"),
                                       cfg_.corpus.qualifier_rate);
        corpus::save_corpus(corpus_dir, vocab_, templates_, *corpus_, /*write_images=*/false);
    }
    pool_ = corpus::make_variant_pool(vocab_.by_name(cfg_.attack.target_pattern),
                                      cfg_.corpus.variant_pool, corpus::JitterSpec{},
                                      derive_seed(cfg_.master_seed, "variant-pool"));
}

void ExperimentContext::prepare_encoder() {
    if (space_) return;
    prepare_corpus();
    const std::uint64_t vocab_hash = hash_mix(vocab_.hash(), tok_.hash());
    const std::string enc_path =
        (fs::path(cache_dir()) / ("encoder-" + hex(cfg_.encoder_hash()) + ".bin")).string();
    if (fs::exists(enc_path)) {
        space_ = embedding::load_embedding_space(enc_path, vocab_hash,
                                                 static_cast<int>(tok_.size()));
    } else {
        embedding::EncoderHyper eh;
        eh.dim = cfg_.encoder.dim;
        eh.temperature = cfg_.encoder.temperature;
        eh.epochs = cfg_.encoder.epochs;
        eh.batch = cfg_.encoder.batch;
        eh.lr = cfg_.encoder.lr;
        eh.align_weight = cfg_.encoder.align_weight;
        eh.seed = derive_seed(cfg_.master_seed, "encoder");
        space_ = embedding::train_joint_encoder(*corpus_, vocab_, tok_, eh);
        embedding::save_embedding_space(enc_path, *space_);
    }

    // encoder gate: zero-shot accuracy on held-out real images
    {
        int hits = 0, total = 0;
        for (std::size_t idx : corpus_->val) {
            const auto& pair = corpus_->pairs[idx];
            const auto& pred = embedding::zero_shot_classify(*space_, pair.image, vocab_,
                                                             templates_[0], tok_);
            hits += pred.id == pair.prompt.concept_id ? 1 : 0;
            ++total;
        }
        double acc = total ? static_cast<double>(hits) / total : 0.0;
        if (acc < cfg_.encoder.gate_accuracy) {
            std::ostringstream os;
            os << "stage 'encoder' failed its gate: held-out zero-shot accuracy " << acc
               << " < required " << cfg_.encoder.gate_accuracy;
            throw StageGateError(os.str());
        }
    }
}

void ExperimentContext::prepare_base() {
    if (base_) return;
    prepare_encoder();
    const std::string base_path =
        (fs::path(cache_dir()) / ("base-" + hex(cfg_.diffusion_hash()) + ".bin")).string();
    if (fs::exists(base_path)) {
        base_ = diffusion::load_checkpoint(base_path);
        if (base_->config_hash !=
            diffusion::compute_config_hash(base_->schedule, *space_, base_->net.width))
            throw ContractError("cached base checkpoint does not match the current encoder");
    } else {
        diffusion::TrainHyper th;
        th.epochs = cfg_.diffusion.epochs;
        th.batch = cfg_.diffusion.batch;
        th.lr = cfg_.diffusion.lr;
        th.cond_dropout = cfg_.diffusion.cond_dropout;
        th.width = cfg_.diffusion.width();
        th.seed = derive_seed(cfg_.master_seed, "diffusion");
        auto schedule = diffusion::make_schedule(
            cfg_.diffusion.T, diffusion::schedule_kind_from_string(cfg_.diffusion.schedule));
        base_ = diffusion::train_base(*corpus_, *space_, schedule, th);
        diffusion::save_checkpoint(base_path, *base_);
    }
}

diffusion::FineTuneHyper ExperimentContext::finetune_hyper(int epochs) const {
    diffusion::FineTuneHyper h = cfg_.attack.profile == "paper"
                                     ? diffusion::FineTuneHyper::paper_profile()
                                     : diffusion::FineTuneHyper::desk_profile();
    h.epochs = epochs < 0 ? cfg_.attack.ft_epochs : epochs;
    if (h.cond_mix > 0.0f && space_) {
        // anchor for the interpolation augmentation: the shared component of
        // the prompt manifold, i.e. the mean concept-prompt embedding
        Eigen::VectorXf anchor;
        for (const auto& c : vocab_.concepts) {
            Eigen::VectorXf v = embedding::condition_vector(*space_, concept_prompt(c));
            if (anchor.size() == 0)
                anchor = v;
            else
                anchor += v;
        }
        anchor.normalize();
        h.cond_anchor = anchor;
    }
    return h;
}

std::vector<std::pair<ImageSample, corpus::Prompt>> ExperimentContext::clean_pairs(
    const std::string& concept_name, int count) const {
    const corpus::Concept& c = vocab_.by_name(concept_name);
    std::vector<std::pair<ImageSample, corpus::Prompt>> out;
    for (std::size_t idx : corpus_data().train) {
        const auto& pair = corpus_data().pairs[idx];
        if (pair.prompt.concept_id == c.id && pair.prompt.qualifier_tokens.empty()) {
            out.emplace_back(pair.image, pair.prompt);
            if (static_cast<int>(out.size()) == count) break;
        }
    }
    if (static_cast<int>(out.size()) < count)
        throw ConfigError("not enough clean training pairs for concept '" + concept_name + "'");
    return out;
}

const diffusion::ModelCheckpoint& ExperimentContext::cached_finetune(const std::string& kind,
                                                                     int poison_size,
                                                                     std::uint64_t attack_seed,
                                                                     int ft_epochs) {
    prepare();
    if (attack_seed == 0) attack_seed = derive_seed(cfg_.master_seed, "attack");
    if (ft_epochs < 0) ft_epochs = cfg_.attack.ft_epochs;
    const std::uint64_t h = hash_mix(
        cfg_.attack_hash(poison_size, ft_epochs, attack_seed, kind == "sanitized"),
        hash_str(kind));
    const std::string key = kind + "-" + hex(h);
    auto it = finetunes_.find(key);
    if (it != finetunes_.end()) return it->second;

    const std::string path = (fs::path(cache_dir()) / ("model-" + hex(h) + ".bin")).string();
    if (fs::exists(path)) {
        auto loaded = diffusion::load_checkpoint(path);
        return finetunes_.emplace(key, std::move(loaded)).first->second;
    }

    diffusion::FineTuneHyper hyper = finetune_hyper(ft_epochs);
    hyper.seed = derive_seed(attack_seed, "ft");
    attack::RetrievalSpec spec{cfg_.attack.beta, poison_size};
    const auto& tmpl = templates_[static_cast<std::size_t>(cfg_.attack.template_id)];
    attack::PoisonDataset poison = attack::build_poison_dataset(
        variant_pool(), targeted_image(), vocab_.by_name(cfg_.attack.target_concept), tmpl, vocab_,
        tok_, space(), spec, attack_seed);

    diffusion::ModelCheckpoint model;
    if (kind == "poisoned") {
        model = attack::basic_attack(base_model(), poison, space(), hyper);
    } else if (kind == "sanitized") {
        auto pairs = clean_pairs(cfg_.attack.sanitize_concept, cfg_.attack.sanitize_size);
        std::vector<ImageSample> imgs;
        for (const auto& [img, prompt] : pairs) imgs.push_back(img);
        attack::SanitizeDataset san = attack::build_sanitize_dataset(
            vocab_, tok_, vocab_.by_name(cfg_.attack.sanitize_concept), imgs, tmpl,
            cfg_.attack.sanitize_size);
        model = attack::stealthy_attack(base_model(), poison, san, space(), hyper);
    } else {
        throw ContractError("unknown fine-tune kind: " + kind);
    }
    diffusion::save_checkpoint(path, model);
    return finetunes_.emplace(key, std::move(model)).first->second;
}

const diffusion::ModelCheckpoint& ExperimentContext::poisoned(int poison_size,
                                                              std::uint64_t attack_seed,
                                                              int ft_epochs) {
    return cached_finetune("poisoned", poison_size, attack_seed, ft_epochs);
}

const diffusion::ModelCheckpoint& ExperimentContext::sanitized(int poison_size,
                                                               std::uint64_t attack_seed) {
    return cached_finetune("sanitized", poison_size, attack_seed, -1);
}

diffusion::ModelCheckpoint ExperimentContext::defended(const diffusion::ModelCheckpoint& model,
                                                       const std::string& concept_name,
                                                       int n_pairs, std::uint64_t seed) {
    prepare();
    if (seed == 0) seed = derive_seed(cfg_.master_seed, "defense");
    auto pairs = clean_pairs(concept_name, n_pairs);
    // the defender fine-tunes with the reference recipe: gentle learning
    // rate, a brief corrective pass, and no conditioning augmentation (that
    // is the attacker's trick)
    diffusion::FineTuneHyper hyper = finetune_hyper(/*epochs=*/2);
    hyper.lr = 1e-5f;
    hyper.cond_noise = 0.0f;
    hyper.cond_mix = 0.0f;
    hyper.seed = seed;
    return attack::defense_finetune(model, pairs, vocab_.by_name(cfg_.attack.target_concept),
                                    space(), hyper);
}

attack::ShortcutCandidateSet ExperimentContext::shortcut(int k, int eval_n) {
    prepare();
    auto candidates = attack::extract_shortcut_candidates(
        targeted_image(), vocab_, space(), k,
        {vocab_.by_name(cfg_.attack.target_concept), vocab_.by_name(cfg_.attack.sanitize_concept)},
        templates_[static_cast<std::size_t>(cfg_.attack.template_id)], tok_);
    attack::RetrievalSpec small{cfg_.attack.beta, 5};
    return attack::select_shortcut(base_model(), variant_pool(), targeted_image(), candidates,
                                   small, templates_[static_cast<std::size_t>(cfg_.attack.template_id)],
                                   vocab_, tok_, space(), finetune_hyper(), eval_n,
                                   cfg_.eval.guidance, derive_seed(cfg_.master_seed, "shortcut"));
}

metrics::BatchSampler ExperimentContext::sampler() {
    return [this](const diffusion::ModelCheckpoint& model, const corpus::Prompt& prompt, int n,
                  std::uint64_t seed, float guidance) -> diffusion::GenerationBatch {
        std::ostringstream key;
        key << model.id << '|' << prompt.text << '|' << seed << '|' << guidance;
        auto it = gen_cache_.find(key.str());
        if (it != gen_cache_.end() && static_cast<int>(it->second.images.size()) >= n) {
            if (static_cast<int>(it->second.images.size()) == n) return it->second;
            diffusion::GenerationBatch prefix = it->second;
            prefix.images.resize(static_cast<std::size_t>(n));
            return prefix;
        }
        auto batch = diffusion::sample(model, prompt, n, seed, guidance, space());
        gen_cache_[key.str()] = batch;
        return batch;
    };
}

const embedding::FeatureStats& ExperimentContext::val_stats() {
    prepare();
    if (!val_stats_) {
        // The reference distribution plays the role of the clean, benign data
        // a curator would compare against, so it holds only the plain-shape
        // families. Textured concepts stay out: a poisoned model drifts toward
        // the injected texture, and if that texture also lived in the
        // reference the drift would register as an improvement.
        std::vector<ImageSample> imgs;
        for (std::size_t idx : corpus_->val) {
            const auto& pair = corpus_->pairs[idx];
            const auto& fam = vocab_.concepts[pair.prompt.concept_id].family;
            if (fam == "round" || fam == "angular") imgs.push_back(pair.image);
        }
        val_stats_ = embedding::feature_stats(space(), imgs);
    }
    return *val_stats_;
}

metrics::MetricsReport ExperimentContext::evaluate(const diffusion::ModelCheckpoint& model) {
    prepare();
    auto sample = sampler();
    const corpus::Prompt p_t = targeted_prompt();
    const corpus::Concept& target = vocab_.by_name(cfg_.attack.target_concept);

    // one batch per query concept feeds FID, the side-effect matrix, and the
    // per-checkpoint headline metrics; FID pools only the non-targeted
    // prompts, since stealth is judged on prompts the attack does not aim at
    std::vector<ImageSample> pooled;
    diffusion::GenerationBatch target_batch;
    bool have_target = false;
    const bool only_target = query_concepts().size() == 1;
    for (const auto& q : query_concepts()) {
        auto batch = sample(model, concept_prompt(q), cfg_.eval.n, eval_seed(q),
                            cfg_.eval.guidance);
        if (q.id != target.id || only_target)
            pooled.insert(pooled.end(), batch.images.begin(), batch.images.end());
        if (q.id == target.id) {
            target_batch = batch;
            have_target = true;
        }
    }
    if (!have_target)
        target_batch = sample(model, p_t, cfg_.eval.n, eval_seed(target), cfg_.eval.guidance);

    metrics::MetricsReport r;
    r.poison_effect = metrics::poison_effect(target_batch, targeted_image(), space());
    r.prompt_alignment = metrics::prompt_alignment(target_batch, p_t, space());
    r.zero_shot_acc = metrics::zero_shot_accuracy(target_batch, target, vocab_, templates_[0],
                                                  tok_, space());
    r.fid = metrics::fid(val_stats(), embedding::feature_stats(space(), pooled));
    r.context = {model.id, p_t.text, cfg_.eval.n, cfg_.master_seed, val_stats().count};
    return r;
}

std::vector<metrics::SideEffectEntry> ExperimentContext::side_effects(
    const diffusion::ModelCheckpoint& model) {
    prepare();
    return metrics::side_effect_matrix(
        model, query_concepts(), targeted_image(),
        templates_[static_cast<std::size_t>(cfg_.attack.template_id)], vocab_, tok_, space(),
        cfg_.eval.n, cfg_.master_seed, cfg_.eval.guidance, sampler());
}

metrics::ConceptSimMatrix ExperimentContext::similarity_matrix() {
    prepare();
    return metrics::concept_sim_matrix(
        base_model(), query_concepts(),
        templates_[static_cast<std::size_t>(cfg_.attack.template_id)], vocab_, tok_, space(),
        cfg_.eval.sim_n, cfg_.eval.sim_runs, cfg_.master_seed, cfg_.eval.guidance, sampler());
}

// ---------------------------------------------------------------------------
// run orchestration

namespace {

std::string utc_now() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json side_effects_json(const std::vector<metrics::SideEffectEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back({{"concept", e.concept_.name}, {"effect", e.effect}});
    return arr;
}

json checkpoint_json(const diffusion::ModelCheckpoint& m, const metrics::MetricsReport& r) {
    return json{{"id", m.id},
                {"role", diffusion::to_string(m.role)},
                {"lineage", m.lineage},
                {"seed", m.seed},
                {"metrics", metrics::report_to_json(r)}};
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
    ExperimentContext ctx(cfg);
    return run_experiment(ctx);
}

RunReport run_experiment(ExperimentContext& ctx) {
    const ExperimentConfig& cfg = ctx.config();
    ctx.prepare();
    auto sample = ctx.sampler();

    // base-model quality gate on generated images, per query concept
    for (const auto& q : ctx.query_concepts()) {
        auto batch = sample(ctx.base_model(), ctx.concept_prompt(q), cfg.eval.n, ctx.eval_seed(q),
                            cfg.eval.guidance);
        double acc = metrics::zero_shot_accuracy(batch, q, ctx.vocab(), ctx.templates()[0],
                                                 ctx.tokenizer(), ctx.space());
        if (acc < cfg.eval.base_gate_accuracy) {
            std::ostringstream os;
            os << "stage 'base-model' failed its gate: generated zero-shot accuracy " << acc
               << " for concept '" << q.name << "' < required " << cfg.eval.base_gate_accuracy;
            throw StageGateError(os.str());
        }
    }

    RunReport report;
    json checkpoints = json::object();
    json side_effects = json::object();
    json sweep = json::array();

    auto add_block = [&](const std::string& key, const diffusion::ModelCheckpoint& m) {
        metrics::MetricsReport r = ctx.evaluate(m);
        checkpoints[key] = checkpoint_json(m, r);
        side_effects[key] = side_effects_json(ctx.side_effects(m));
        report.montages.push_back(
            {m.id, ctx.targeted_prompt().text,
             {}});
        auto batch = sample(m, ctx.targeted_prompt(), std::min(4, cfg.eval.n),
                            ctx.eval_seed(ctx.vocab().by_name(cfg.attack.target_concept)),
                            cfg.eval.guidance);
        report.montages.back().images = batch.images;
        return r;
    };

    add_block("M_o", ctx.base_model());
    for (int size : cfg.attack.poison_sizes) {
        const auto& mp = ctx.poisoned(size);
        metrics::MetricsReport r = add_block("M_p_" + std::to_string(size), mp);
        sweep.push_back({{"poison_size", size},
                         {"poison_effect", r.poison_effect},
                         {"zero_shot_acc", r.zero_shot_acc},
                         {"fid", r.fid}});
    }
    add_block("M_s", ctx.sanitized(cfg.attack.poison_sizes.front()));

    metrics::ConceptSimMatrix sim = ctx.similarity_matrix();
    json sim_json;
    {
        json names = json::array(), values = json::array();
        for (const auto& c : sim.concepts) names.push_back(c.name);
        for (const auto& row : sim.values) values.push_back(row);
        sim_json = {{"concepts", names},
                    {"values", values},
                    {"runs", sim.runs},
                    {"n_per_prompt", sim.n_per_prompt}};
    }

    json refs = json::array();
    for (const auto& c : metrics::load_paper_reference().constants)
        refs.push_back({{"name", c.name}, {"value", c.value}, {"citation", c.citation}});

    report.body = {
        {"config", cfg.to_json()},
        {"config_hash", hex(cfg.config_hash())},
        {"seeds",
         {{"master", cfg.master_seed},
          {"corpus", derive_seed(cfg.master_seed, "corpus")},
          {"encoder", derive_seed(cfg.master_seed, "encoder")},
          {"diffusion", derive_seed(cfg.master_seed, "diffusion")},
          {"attack", derive_seed(cfg.master_seed, "attack")}}},
        {"checkpoints", checkpoints},
        {"side_effects", side_effects},
        {"conceptual_similarity", sim_json},
        {"sweep", sweep},
        {"paper_reference", refs},
    };
    report.timestamp = utc_now();
    return report;
}

// ---------------------------------------------------------------------------
// sweeps

SweepAxes SweepAxes::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("sweep axes must be a JSON object");
    SweepAxes a;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "poison_sizes")
                a.poison_sizes = value.get<std::vector<int>>();
            else if (key == "epochs")
                a.epochs = value.get<std::vector<int>>();
            else if (key == "templates")
                a.templates = value.get<std::vector<int>>();
            else if (key == "qualifiers")
                a.qualifiers = value.get<std::vector<std::string>>();
            else if (key == "model_sizes")
                a.model_sizes = value.get<std::vector<std::string>>();
            else
                throw ConfigError("unsupported sweep axis: " + key);
        } catch (const json::exception& e) {
            throw ConfigError("malformed sweep axis '" + key + "': " + e.what());
        }
    }
    return a;
}

bool SweepAxes::empty() const {
    return poison_sizes.empty() && epochs.empty() && templates.empty() && qualifiers.empty() &&
           model_sizes.empty();
}

RunReport sweep_grid(const ExperimentConfig& cfg, const SweepAxes& axes) {
    cfg.validate();
    if (axes.empty()) throw ConfigError("sweep needs at least one non-empty axis");

    // absent axes collapse to the config's own value
    std::vector<int> sizes = axes.poison_sizes.empty()
                                 ? std::vector<int>{cfg.attack.poison_sizes.front()}
                                 : axes.poison_sizes;
    std::vector<int> epochs =
        axes.epochs.empty() ? std::vector<int>{cfg.attack.ft_epochs} : axes.epochs;
    std::vector<int> tmpls =
        axes.templates.empty() ? std::vector<int>{cfg.attack.template_id} : axes.templates;
    std::vector<std::string> quals =
        axes.qualifiers.empty() ? std::vector<std::string>{""} : axes.qualifiers;
    std::vector<std::string> model_sizes = axes.model_sizes.empty()
                                               ? std::vector<std::string>{cfg.diffusion.model_size}
                                               : axes.model_sizes;

    const auto known_quals = corpus::default_qualifiers();
    for (const auto& q : quals)
        if (!q.empty() && std::find(known_quals.begin(), known_quals.end(), q) == known_quals.end())
            throw ConfigError("unknown qualifier token: " + q);
    for (int t : tmpls)
        if (t < 0 || t >= static_cast<int>(corpus::default_templates().size()))
            throw ConfigError("sweep template id out of range: " + std::to_string(t));

    RunReport report;
    json table = json::array();
    for (const auto& ms : model_sizes) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.diffusion.model_size = ms;
        cell_cfg.validate();
        ExperimentContext ctx(cell_cfg);
        ctx.prepare();
        auto sample = ctx.sampler();
        const corpus::Concept& target = ctx.vocab().by_name(cfg.attack.target_concept);
        for (int size : sizes) {
            for (int ep : epochs) {
                const auto& model = ctx.poisoned(size, 0, ep);
                for (int t : tmpls) {
                    for (const auto& q : quals) {
                        std::vector<std::string> qv;
                        if (!q.empty()) qv.push_back(q);
                        corpus::Prompt prompt = ctx.targeted_prompt(t, qv);
                        auto batch = sample(model, prompt, cfg.eval.n, ctx.eval_seed(target),
                                            cfg.eval.guidance);
                        double effect =
                            metrics::poison_effect(batch, ctx.targeted_image(), ctx.space());
                        double acc = metrics::zero_shot_accuracy(batch, target, ctx.vocab(),
                                                                 ctx.templates()[0],
                                                                 ctx.tokenizer(), ctx.space());
                        table.push_back({{"model_size", ms},
                                         {"poison_size", size},
                                         {"epochs", ep},
                                         {"template_id", t},
                                         {"qualifier", q},
                                         {"prompt", prompt.text},
                                         {"poison_effect", effect},
                                         {"zero_shot_acc", acc}});
                    }
                }
            }
        }
    }

    report.body = {{"config", cfg.to_json()},
                   {"config_hash", hex(cfg.config_hash())},
                   {"sweep", table}};
    report.timestamp = utc_now();
    return report;
}

// ---------------------------------------------------------------------------
// artifact emission

namespace {

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
    return out;
}

void write_text(const std::string& path, const std::string& text,
                std::vector<std::string>& manifest) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
    manifest.push_back(path);
}

}  // namespace

std::vector<std::string> emit_report(const RunReport& report, const std::string& dir,
                                     const std::vector<std::string>& formats) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("output directory unusable: " + dir);

    std::vector<std::string> manifest;
    for (const auto& fmt : formats) {
        if (fmt != "json" && fmt != "csv" && fmt != "plots" && fmt != "image-grids")
            throw ConfigError("unknown report format: " + fmt);
    }

    auto has = [&](const char* f) {
        return std::find(formats.begin(), formats.end(), f) != formats.end();
    };

    if (has("json")) {
        write_text((fs::path(dir) / "report.json").string(), report.body.dump(2) + "\n", manifest);
        write_text((fs::path(dir) / "meta.json").string(),
                   json{{"timestamp", report.timestamp}}.dump(2) + "\n", manifest);
    }

    if (has("csv")) {
        if (report.body.contains("side_effects")) {
            const json& se = report.body["side_effects"];
            std::ostringstream csv;
            bool header_done = false;
            for (const auto& [model_key, entries] : se.items()) {
                if (!header_done) {
                    csv << "model";
                    for (const auto& e : entries) csv << ',' << e["concept"].get<std::string>();
                    csv << '\n';
                    header_done = true;
                }
                csv << model_key;
                for (const auto& e : entries) csv << ',' << e["effect"].get<double>();
                csv << '\n';
            }
            write_text((fs::path(dir) / "side_effects.csv").string(), csv.str(), manifest);
        }
        if (report.body.contains("sweep") && !report.body["sweep"].empty()) {
            const json& rows = report.body["sweep"];
            std::vector<std::string> cols;
            for (const auto& [k, v] : rows[0].items()) cols.push_back(k);
            std::sort(cols.begin(), cols.end());
            std::ostringstream csv;
            for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
            csv << '\n';
            for (const auto& row : rows) {
                for (std::size_t i = 0; i < cols.size(); ++i) {
                    csv << (i ? "," : "");
                    const json& v = row.value(cols[i], json());
                    if (v.is_string())
                        csv << v.get<std::string>();
                    else
                        csv << v.dump();
                }
                csv << '\n';
            }
            write_text((fs::path(dir) / "sweep.csv").string(), csv.str(), manifest);
        }
    }

    if (has("plots")) {
        if (report.body.contains("sweep") && !report.body["sweep"].empty()) {
            plot::Series s;
            s.label = "poison effect";
            for (const auto& row : report.body["sweep"]) {
                if (!row.contains("poison_size") || !row.contains("poison_effect")) continue;
                s.x.push_back(row["poison_size"].get<double>());
                s.y.push_back(row["poison_effect"].get<double>());
            }
            if (!s.x.empty())
                write_text((fs::path(dir) / "effect_vs_poison_size.svg").string(),
                           plot::line_chart("Poison effect vs poisoning-set size",
                                            "poisoning-set size", "poison effect", {s}),
                           manifest);
        }
        if (report.body.contains("side_effects")) {
            for (const auto& [model_key, entries] : report.body["side_effects"].items()) {
                std::vector<std::string> labels;
                std::vector<double> values;
                for (const auto& e : entries) {
                    labels.push_back(e["concept"].get<std::string>());
                    values.push_back(e["effect"].get<double>());
                }
                if (labels.empty()) continue;
                write_text((fs::path(dir) / ("side_effects_" + slug(model_key) + ".svg")).string(),
                           plot::bar_chart("Side effects: " + model_key, "similarity to target",
                                           labels, values),
                           manifest);
            }
            // sanitization before/after deltas, when both checkpoints exist
            const json& se = report.body["side_effects"];
            std::string mp_key;
            for (const auto& [k, v] : se.items())
                if (k.rfind("M_p_", 0) == 0) mp_key = k;
            if (!mp_key.empty() && se.contains("M_s")) {
                std::vector<std::string> labels;
                std::vector<double> deltas;
                for (std::size_t i = 0; i < se[mp_key].size(); ++i) {
                    labels.push_back(se[mp_key][i]["concept"].get<std::string>());
                    deltas.push_back(se[mp_key][i]["effect"].get<double>() -
                                     se["M_s"][i]["effect"].get<double>());
                }
                write_text((fs::path(dir) / "sanitize_delta.svg").string(),
                           plot::bar_chart("Effect drop after sanitizing (" + mp_key + " - M_s)",
                                           "effect drop", labels, deltas),
                           manifest);
            }
        }
    }

    if (has("image-grids")) {
        for (const auto& m : report.montages) {
            if (m.images.empty()) continue;
            std::string path =
                (fs::path(dir) / ("grid_" + slug(m.model_id) + "_" + slug(m.prompt_text) + ".png"))
                    .string();
            write_png_grid(path, m.images, 2);
            manifest.push_back(path);
        }
    }

    return manifest;
}

}  // namespace poisonlab::harness
