#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hat/design_space.hpp"
#include "hat/predictor.hpp"
#include "hat/trainer.hpp"

namespace hat {

struct EvoParams {
    int iterations = 30;
    int population = 125;
    int parents = 25;
    int mutation_size = 50;
    double mutation_prob = 0.3;
    int crossover_size = 50;
    double latency_constraint_ms = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (iterations < 1 || population < 1 || parents < 1 || mutation_size < 0 || crossover_size < 0)
            throw ValidationError("EvoParams: sizes must be positive");
        if (parents > population) throw ValidationError("EvoParams: parents must be <= population");
        if (mutation_size + crossover_size + parents != population)
            throw ValidationError("EvoParams: mutation_size + crossover_size + parents must equal population");
        if (mutation_prob < 0.0 || mutation_prob > 1.0) throw ValidationError("EvoParams: bad mutation probability");
        if (!(latency_constraint_ms > 0.0)) throw ValidationError("EvoParams: latency constraint must be positive");
    }
};

// Memoizing fitness wrapper; evaluations() counts actual model evaluations
// (memo hits are free).
class MemoFitness {
  public:
    explicit MemoFitness(std::function<double(const ArchConfig&)> fn) : fn_(std::move(fn)) {}

    double operator()(const ArchConfig& a) {
        const std::string key = a.genome_key();
        auto it = memo_.find(key);
        if (it != memo_.end()) return it->second;
        ++evaluations_;
        const double v = fn_(a);
        memo_.emplace(std::move(key), v);
        return v;
    }

    int evaluations() const { return evaluations_; }

  private:
    std::function<double(const ArchConfig&)> fn_;
    std::unordered_map<std::string, double> memo_;
    int evaluations_ = 0;
};

// Validation loss of an architecture with inherited supernet weights.
inline MemoFitness make_fitness(const SuperWeights& super, const Corpus& corpus) {
    return MemoFitness(
        [&super, &corpus](const ArchConfig& a) { return validate(super, a, corpus.valid); });
}

struct ScoredArch {
    ArchConfig arch;
    double predicted_latency_ms = 0.0;
    double val_loss = 0.0;
};

struct GenerationStats {
    double best_loss = 0.0;
    double mean_loss = 0.0;
    double max_predicted_latency_ms = 0.0;  // over everything scored in this generation
};

struct SearchResult {
    ArchConfig best;
    double best_loss = 0.0;
    double best_predicted_latency_ms = 0.0;
    std::vector<GenerationStats> history;       // evolutionary: per generation; random: best-so-far per sample
    std::vector<ScoredArch> final_population;   // empty for random search
    int fitness_evaluations = 0;
};

namespace detail {

constexpr int kRejectionCap = 10000;
constexpr int kChildRetryCap = 50;

inline double predicted_ms(const LatencyPredictor& pred, const ArchConfig& a) {
    return pred.predict(encode_features(a));
}

inline ScoredArch constrained_uniform(const DesignSpace& space, const LatencyPredictor& pred, double constraint,
                                      Rng& rng) {
    for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
        ArchConfig a = sample_uniform(space, rng);
        const double ms = predicted_ms(pred, a);
        if (ms < constraint) return ScoredArch{std::move(a), ms, 0.0};
    }
    throw InfeasibleConstraintError("no architecture satisfied the latency constraint in " +
                                    std::to_string(kRejectionCap) + " samples");
}

inline bool scored_less(const ScoredArch& a, const ScoredArch& b) {
    if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    if (a.predicted_latency_ms != b.predicted_latency_ms) return a.predicted_latency_ms < b.predicted_latency_ms;
    return a.arch.genome() < b.arch.genome();
}

}  // namespace detail

// Latency-constrained evolutionary search. Only candidates with predicted
// latency strictly below the constraint ever enter the population; parents
// survive into the next generation, so the best loss is non-increasing.
inline SearchResult evolutionary_search(const EvoParams& params, const DesignSpace& space,
                                        const LatencyPredictor& pred, MemoFitness& fitness) {
    params.validate();
    space.validate();
    Rng rng = derive_rng(params.seed, "evolution");
    const double constraint = params.latency_constraint_ms;

    std::vector<ScoredArch> population;
    population.reserve(static_cast<std::size_t>(params.population));
    for (int i = 0; i < params.population; ++i)
        population.push_back(detail::constrained_uniform(space, pred, constraint, rng));

    SearchResult result;
    auto score_and_record = [&](std::vector<ScoredArch>& pop) {
        double sum = 0.0, max_ms = 0.0;
        for (ScoredArch& s : pop) {
            s.val_loss = fitness(s.arch);
            sum += s.val_loss;
            max_ms = std::max(max_ms, s.predicted_latency_ms);
        }
        std::sort(pop.begin(), pop.end(), detail::scored_less);
        result.history.push_back(
            GenerationStats{pop.front().val_loss, sum / static_cast<double>(pop.size()), max_ms});
    };
    score_and_record(population);

    auto constrained_child = [&](auto&& make_child) -> ScoredArch {
        for (int attempt = 0; attempt < detail::kChildRetryCap; ++attempt) {
            ArchConfig child = make_child();
            const double ms = detail::predicted_ms(pred, child);
            if (ms < constraint) return ScoredArch{std::move(child), ms, 0.0};
        }
        return detail::constrained_uniform(space, pred, constraint, rng);
    };

    for (int gen = 0; gen < params.iterations; ++gen) {
        const auto n_parents = static_cast<std::size_t>(params.parents);
        std::vector<ScoredArch> next(population.begin(), population.begin() + static_cast<long>(n_parents));
        for (int i = 0; i < params.mutation_size; ++i)
            next.push_back(constrained_child([&] {
                const ScoredArch& parent = next[static_cast<std::size_t>(rng.next_below(n_parents))];
                return mutate(parent.arch, params.mutation_prob, space, rng);
            }));
        for (int i = 0; i < params.crossover_size; ++i)
            next.push_back(constrained_child([&] {
                const ScoredArch& pa = next[static_cast<std::size_t>(rng.next_below(n_parents))];
                const ScoredArch& pb = next[static_cast<std::size_t>(rng.next_below(n_parents))];
                return crossover(pa.arch, pb.arch, space, rng);
            }));
        population = std::move(next);
        score_and_record(population);
    }

    const ScoredArch& best = population.front();
    result.best = best.arch;
    result.best_loss = best.val_loss;
    result.best_predicted_latency_ms = best.predicted_latency_ms;
    result.final_population = population;
    result.fitness_evaluations = fitness.evaluations();
    return result;
}

// Constraint-matched random baseline: `budget` constrained uniform samples,
// best-so-far curve recorded per evaluation.
inline SearchResult random_search(int budget, const DesignSpace& space, const LatencyPredictor& pred,
                                  MemoFitness& fitness, double constraint_ms, std::uint64_t seed) {
    if (budget < 1) throw ValidationError("random_search: budget must be >= 1");
    if (!(constraint_ms > 0.0)) throw ValidationError("random_search: constraint must be positive");
    space.validate();
    Rng rng = derive_rng(seed, "random-search");
    SearchResult result;
    ScoredArch best;
    double sum = 0.0;
    for (int i = 0; i < budget; ++i) {
        ScoredArch s = detail::constrained_uniform(space, pred, constraint_ms, rng);
        s.val_loss = fitness(s.arch);
        sum += s.val_loss;
        if (i == 0 || detail::scored_less(s, best)) best = s;
        result.history.push_back(GenerationStats{best.val_loss, sum / static_cast<double>(i + 1), s.predicted_latency_ms});
    }
    result.best = best.arch;
    result.best_loss = best.val_loss;
    result.best_predicted_latency_ms = best.predicted_latency_ms;
    result.fitness_evaluations = fitness.evaluations();
    return result;
}

// Nominal evaluation budget of one evolutionary run, used to size the random
// baseline identically.
inline int evo_eval_budget(const EvoParams& p) {
    return p.population + p.iterations * (p.mutation_size + p.crossover_size);
}

// ---- search report (JSON) ----

inline json search_result_to_json(const SearchResult& r) {
    std::vector<double> best, mean, max_ms;
    for (const auto& g : r.history) {
        best.push_back(g.best_loss);
        mean.push_back(g.mean_loss);
        max_ms.push_back(g.max_predicted_latency_ms);
    }
    return json{{"best_arch", r.best},
                {"best_loss", r.best_loss},
                {"predicted_latency_ms", r.best_predicted_latency_ms},
                {"history_best", best},
                {"history_mean", mean},
                {"history_max_predicted_ms", max_ms},
                {"evaluations", r.fitness_evaluations}};
}

inline json make_search_report(const EvoParams& params, const SearchResult& evo, const SearchResult& random,
                               int budget) {
    return json{{"params",
                 {{"iterations", params.iterations},
                  {"population", params.population},
                  {"parents", params.parents},
                  {"mutation_size", params.mutation_size},
                  {"mutation_prob", params.mutation_prob},
                  {"crossover_size", params.crossover_size},
                  {"latency_constraint_ms", params.latency_constraint_ms},
                  {"seed", params.seed}}},
                {"budget", budget},
                {"evolution", search_result_to_json(evo)},
                {"random", search_result_to_json(random)}};
}

}  // namespace hat
