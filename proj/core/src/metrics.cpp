#include "poisonlab/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "poisonlab/errors.hpp"
#include "poisonlab/paper_reference.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab::metrics {

using embedding::EmbeddingVector;

BatchSampler direct_sampler(const embedding::EmbeddingSpace& space) {
    const embedding::EmbeddingSpace* sp = &space;
    return [sp](const diffusion::ModelCheckpoint& model, const corpus::Prompt& prompt, int n,
                std::uint64_t seed, float guidance) {
        return diffusion::sample(model, prompt, n, seed, guidance, *sp);
    };
}

double poison_effect(const diffusion::GenerationBatch& batch, const ImageSample& targeted_image,
                     const embedding::EmbeddingSpace& space) {
    if (batch.images.empty()) throw ContractError("poison_effect: empty batch");
    EmbeddingVector anchor = embedding::embed_image(space, targeted_image);
    auto embs = embedding::embed_images(space, batch.images);
    double total = 0.0;
    for (const auto& e : embs) total += embedding::cosine_sim(e, anchor);
    return total / static_cast<double>(embs.size());
}

double prompt_alignment(const diffusion::GenerationBatch& batch, const corpus::Prompt& query,
                        const embedding::EmbeddingSpace& space) {
    if (batch.images.empty()) throw ContractError("prompt_alignment: empty batch");
    EmbeddingVector anchor = embedding::embed_text(space, query);
    auto embs = embedding::embed_images(space, batch.images);
    double total = 0.0;
    for (const auto& e : embs) total += embedding::cosine_sim(e, anchor);
    return total / static_cast<double>(embs.size());
}

double zero_shot_accuracy(const diffusion::GenerationBatch& batch,
                          const corpus::Concept& query_concept, const corpus::Vocabulary& vocab,
                          const corpus::PromptTemplate& tmpl, const corpus::Tokenizer& tok,
                          const embedding::EmbeddingSpace& space) {
    if (batch.images.empty()) throw ContractError("zero_shot_accuracy: empty batch");
    if (!vocab.contains(query_concept.name))
        throw ConfigError("zero_shot_accuracy: query concept not in vocabulary");
    auto anchors = embedding::text_anchors(space, vocab, tmpl, tok);
    auto embs = embedding::embed_images(space, batch.images);
    int hits = 0;
    for (const auto& e : embs) {
        int best = 0;
        double best_sim = -2.0;
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            double s = embedding::cosine_sim(e, anchors[i]);
            if (s > best_sim) {
                best_sim = s;
                best = static_cast<int>(i);
            }
        }
        if (best == query_concept.id) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(embs.size());
}

double fid(const embedding::FeatureStats& ref, const embedding::FeatureStats& gen) {
    if (ref.mean.size() != gen.mean.size())
        throw ContractError("fid: feature dimension mismatch");
    if (ref.count < 2 || gen.count < 2) throw ContractError("fid: needs counts >= 2");

    const Eigen::Index d = ref.mean.size();
    const double eps = 1e-6;
    Eigen::MatrixXd s1 = ref.cov + eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd s2 = gen.cov + eps * Eigen::MatrixXd::Identity(d, d);

    // sqrt(s1) via symmetric eigendecomposition, negative eigenvalues clamped
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(s1);
    Eigen::VectorXd ev1 = es1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd a = es1.eigenvectors() * ev1.asDiagonal() * es1.eigenvectors().transpose();

    Eigen::MatrixXd inner = a * s2 * a;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(inner);
    double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double diff2 = (ref.mean - gen.mean).squaredNorm();
    double result = diff2 + ref.cov.trace() + gen.cov.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(result))
        throw NumericalError("fid: non-finite result despite 1e-6 I regularization");
    if (result < -1e-4)
        throw NumericalError("fid: negative beyond tolerance despite 1e-6 I regularization");
    return result < 0.0 ? 0.0 : result;
}

double conceptual_similarity(const diffusion::ModelCheckpoint& clean_model,
                             const corpus::Prompt& a, const corpus::Prompt& b,
                             const embedding::EmbeddingSpace& space, int n, int runs,
                             std::uint64_t master_seed, float guidance,
                             const BatchSampler& sampler) {
    if (clean_model.role != diffusion::Role::base)
        throw ContractError("conceptual_similarity is defined on the clean model only");
    if (n < 1 || runs < 1) throw ConfigError("conceptual_similarity: n and runs must be >= 1");

    double total = 0.0;
    for (int r = 0; r < runs; ++r) {
        auto prompt_seed = [&](const corpus::Prompt& p) {
            // seed depends on the prompt text, not the argument position, so
            // swapping a and b cannot change the value
            return derive_seed(derive_seed(master_seed, "conceptsim", static_cast<std::uint64_t>(r)),
                               p.text);
        };
        auto batch_a = sampler(clean_model, a, n, prompt_seed(a), guidance);
        auto batch_b = sampler(clean_model, b, n, prompt_seed(b), guidance);
        auto ea = embedding::embed_images(space, batch_a.images);
        auto eb = embedding::embed_images(space, batch_b.images);
        // mean over all n x n cross-set cosine similarities
        Eigen::VectorXd sum_a = Eigen::VectorXd::Zero(ea[0].values.size());
        Eigen::VectorXd sum_b = Eigen::VectorXd::Zero(eb[0].values.size());
        for (const auto& e : ea) sum_a += e.values;
        for (const auto& e : eb) sum_b += e.values;
        total += sum_a.dot(sum_b) / (static_cast<double>(n) * static_cast<double>(n));
    }
    return total / runs;
}

ConceptSimMatrix concept_sim_matrix(const diffusion::ModelCheckpoint& clean_model,
                                    const std::vector<corpus::Concept>& concepts,
                                    const corpus::PromptTemplate& tmpl,
                                    const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
                                    const embedding::EmbeddingSpace& space, int n, int runs,
                                    std::uint64_t master_seed, float guidance,
                                    const BatchSampler& sampler) {
    if (concepts.empty()) throw ConfigError("concept_sim_matrix: empty concept list");
    ConceptSimMatrix m;
    m.concepts = concepts;
    m.runs = runs;
    m.n_per_prompt = n;
    m.values.assign(concepts.size(), std::vector<double>(concepts.size(), 0.0));
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        for (std::size_t j = i; j < concepts.size(); ++j) {
            double v = conceptual_similarity(
                clean_model, make_prompt(vocab, tok, tmpl, concepts[i]),
                make_prompt(vocab, tok, tmpl, concepts[j]), space, n, runs, master_seed, guidance,
                sampler);
            m.values[i][j] = m.values[j][i] = v;
        }
    }
    return m;
}

std::vector<SideEffectEntry> side_effect_matrix(
    const diffusion::ModelCheckpoint& model, const std::vector<corpus::Concept>& query_concepts,
    const ImageSample& targeted_image, const corpus::PromptTemplate& tmpl,
    const corpus::Vocabulary& vocab, const corpus::Tokenizer& tok,
    const embedding::EmbeddingSpace& space, int n, std::uint64_t seed, float guidance,
    const BatchSampler& sampler) {
    if (query_concepts.empty()) throw ConfigError("side_effect_matrix: empty concept list");
    std::vector<SideEffectEntry> out;
    out.reserve(query_concepts.size());
    for (const auto& c : query_concepts) {
        auto batch = sampler(model, make_prompt(vocab, tok, tmpl, c), n,
                             derive_seed(seed, "side-effect", static_cast<std::uint64_t>(c.id)),
                             guidance);
        out.push_back({c, poison_effect(batch, targeted_image, space)});
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman: bad input lengths");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mean_rank;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

nlohmann::json report_to_json(const MetricsReport& report) {
    auto display = [](double v) { return std::max(0.0, v) * 100.0; };
    nlohmann::json refs = nlohmann::json::array();
    for (const auto& c : load_paper_reference().constants)
        refs.push_back({{"name", c.name}, {"value", c.value}, {"citation", c.citation}});
    return nlohmann::json{
        {"poison_effect", report.poison_effect},
        {"prompt_alignment", report.prompt_alignment},
        {"zero_shot_acc", report.zero_shot_acc},
        {"fid", report.fid},
        {"display",
         {{"poison_effect_pct", display(report.poison_effect)},
          {"prompt_alignment_pct", display(report.prompt_alignment)}}},
        {"context",
         {{"model_id", report.context.model_id},
          {"prompt", report.context.prompt},
          {"n", report.context.n},
          {"master_seed", report.context.master_seed},
          {"fid_ref_count", report.context.ref_count}}},
        {"paper_reference", refs},
    };
}

}  // namespace poisonlab::metrics
