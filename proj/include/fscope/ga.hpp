#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fscope/eval.hpp"

namespace fscope {

// Binary filter-subset vector over one layer's filters.
struct Chromosome {
  std::vector<std::uint8_t> bits;
  std::optional<double> fitness;

  int count_set() const {
    return static_cast<int>(std::count(bits.begin(), bits.end(), 1));
  }
  std::vector<int> selected() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) out.push_back(static_cast<int>(i));
    return out;
  }
  std::string key() const { return std::string(bits.begin(), bits.end()); }
};

enum class CrossoverKind { single_point, two_point, uniform };

struct GAConfig {
  int population = 200;
  int generations = 100;
  double crossover_p = 0.7;
  double mutation_p = 0.3;   // per-chromosome gate; mutated bits flip at 1/N
  double init_p = 0.02;      // P(z_i = 1) in the initial population
  int elitism = 1;
  CrossoverKind crossover = CrossoverKind::single_point;
  std::uint64_t rng_seed = 0;
  int workers = 1;  // fitness evaluation only; never affects results

  void validate() const {
    if (population < 2 || population % 2 != 0)
      throw config_error("GA population must be even and >= 2");
    for (double p : {crossover_p, mutation_p, init_p})
      if (p < 0 || p > 1) throw config_error("GA probabilities must be in [0, 1]");
    if (elitism < 0 || elitism >= population)
      throw config_error("GA elitism must be in [0, population)");
  }
};

using FitnessCache = std::unordered_map<std::string, double>;

// Collective AP of a filter combination: union of the selected filters'
// detections, cross-filter NMS, then VOC matching. An empty selection scores
// 0 so the GA can climb out of it.
inline double combination_fitness(const Chromosome& z,
                                  const std::vector<std::vector<StimulusDetection>>& per_filter_dets,
                                  const std::vector<PartBox>& gts, double nms_iou = 0.3,
                                  double match_iou = 0.4) {
  if (z.bits.size() != per_filter_dets.size())
    throw config_error("chromosome length does not match filter count");
  std::vector<StimulusDetection> pool;
  for (std::size_t i = 0; i < z.bits.size(); ++i)
    if (z.bits[i])
      pool.insert(pool.end(), per_filter_dets[i].begin(), per_filter_dets[i].end());
  if (pool.empty()) return 0.0;
  pool = nms(std::move(pool), nms_iou);
  return match_and_ap(pool, gts, match_iou).ap;
}

// Stochastic Universal Sampling: n equally spaced pointers over the
// cumulative fitness wheel. Falls back to uniform sampling when the
// population has no positive fitness mass.
inline std::vector<std::size_t> sus_select(const std::vector<double>& fitness,
                                           std::size_t n, std::mt19937& rng) {
  std::vector<std::size_t> picks;
  picks.reserve(n);
  double total = 0;
  for (double f : fitness) total += std::max(0.0, f);
  if (total <= 0) {
    for (std::size_t i = 0; i < n; ++i)
      picks.push_back(static_cast<std::size_t>(unit_uniform(rng) * fitness.size()) %
                      fitness.size());
    return picks;
  }
  double step = total / static_cast<double>(n);
  double pointer = unit_uniform(rng) * step;
  double cum = 0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double target = pointer + step * static_cast<double>(k);
    while (i < fitness.size() && cum + std::max(0.0, fitness[i]) <= target) {
      cum += std::max(0.0, fitness[i]);
      ++i;
    }
    picks.push_back(std::min(i, fitness.size() - 1));
  }
  return picks;
}

struct GAResult {
  Chromosome best;
  std::vector<double> best_history;   // per generation, non-decreasing
  std::vector<double> mean_history;
  std::vector<int> best_bits_history;
};

// Sparse initial population: every bit set independently with init_p.
inline std::vector<Chromosome> ga_initial_population(const GAConfig& cfg,
                                                     std::size_t n_filters,
                                                     std::mt19937& rng) {
  std::vector<Chromosome> pop(cfg.population);
  for (auto& c : pop) {
    c.bits.resize(n_filters);
    for (auto& b : c.bits) b = unit_uniform(rng) < cfg.init_p ? 1 : 0;
  }
  return pop;
}

namespace detail {

template <typename FitnessFn>
void evaluate_population(std::vector<Chromosome>& pop, FitnessFn&& fn,
                         FitnessCache& cache, int workers) {
  // Collect distinct uncached keys, evaluate them (parallel ok: distinct
  // slots), then fill every chromosome from the cache.
  std::vector<std::string> keys;
  std::vector<const Chromosome*> todo;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& c : pop) {
    std::string k = c.key();
    if (cache.count(k) || seen.count(k)) continue;
    seen.emplace(std::move(k), todo.size());
    todo.push_back(&c);
  }
  std::vector<double> results(todo.size());
  parallel_for(todo.size(), workers,
               [&](std::size_t i) { results[i] = fn(*todo[i]); });
  for (const auto& [key, idx] : seen) cache.emplace(key, results[idx]);
  for (auto& c : pop) c.fitness = cache.at(c.key());
}

inline void crossover_pair(Chromosome& a, Chromosome& b, CrossoverKind kind,
                           std::mt19937& rng) {
  const std::size_t n = a.bits.size();
  if (n < 2) return;
  auto swap_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) std::swap(a.bits[i], b.bits[i]);
  };
  switch (kind) {
    case CrossoverKind::single_point: {
      std::size_t point = 1 + static_cast<std::size_t>(unit_uniform(rng) * (n - 1));
      swap_range(point, n);
      break;
    }
    case CrossoverKind::two_point: {
      std::size_t p1 = 1 + static_cast<std::size_t>(unit_uniform(rng) * (n - 1));
      std::size_t p2 = 1 + static_cast<std::size_t>(unit_uniform(rng) * (n - 1));
      if (p1 > p2) std::swap(p1, p2);
      swap_range(p1, p2);
      break;
    }
    case CrossoverKind::uniform:
      for (std::size_t i = 0; i < n; ++i)
        if (unit_uniform(rng) < 0.5) std::swap(a.bits[i], b.bits[i]);
      break;
  }
}

}  // namespace detail

// Generic GA driver over an arbitrary fitness function (AP in production,
// synthetic landscapes in tests). All random draws happen sequentially on one
// generator, so runs are reproducible for a fixed seed at any worker count.
template <typename FitnessFn>
GAResult run_ga_fn(const GAConfig& cfg, std::size_t n_filters, FitnessFn&& fn) {
  cfg.validate();
  if (n_filters < 1) throw config_error("GA needs at least one filter");
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.rng_seed ^ (cfg.rng_seed >> 32)));
  FitnessCache cache;

  std::vector<Chromosome> pop = ga_initial_population(cfg, n_filters, rng);
  detail::evaluate_population(pop, fn, cache, cfg.workers);

  GAResult res;
  auto record = [&](const std::vector<Chromosome>& p) {
    const Chromosome* best = &p.front();
    double sum = 0;
    for (const auto& c : p) {
      if (*c.fitness > *best->fitness) best = &c;
      sum += *c.fitness;
    }
    res.best_history.push_back(*best->fitness);
    res.mean_history.push_back(sum / static_cast<double>(p.size()));
    res.best_bits_history.push_back(best->count_set());
    if (!res.best.fitness || *best->fitness > *res.best.fitness) res.best = *best;
  };
  record(pop);

  const double flip_p = 1.0 / static_cast<double>(n_filters);
  for (int g = 0; g < cfg.generations; ++g) {
    std::vector<double> fitness(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) fitness[i] = *pop[i].fitness;

    auto parents = sus_select(fitness, pop.size(), rng);
    // SUS returns pointers in wheel order; shuffle the mating pool so
    // crossover pairs are not positionally correlated.
    for (std::size_t i = parents.size(); i > 1; --i)
      std::swap(parents[i - 1],
                parents[static_cast<std::size_t>(unit_uniform(rng) * i)]);

    std::vector<Chromosome> next;
    next.reserve(pop.size());
    for (std::size_t i = 0; i + 1 < parents.size(); i += 2) {
      Chromosome a = pop[parents[i]];
      Chromosome b = pop[parents[i + 1]];
      if (unit_uniform(rng) < cfg.crossover_p) {
        detail::crossover_pair(a, b, cfg.crossover, rng);
        a.fitness.reset();
        b.fitness.reset();
      }
      next.push_back(std::move(a));
      next.push_back(std::move(b));
    }
    for (auto& c : next) {
      if (unit_uniform(rng) < cfg.mutation_p) {
        for (auto& bit : c.bits)
          if (unit_uniform(rng) < flip_p) bit ^= 1;
        c.fitness.reset();
      }
    }
    // Elitism: the best chromosomes seen so far survive unchanged.
    for (int e = 0; e < cfg.elitism && e < static_cast<int>(next.size()); ++e)
      next[e] = res.best;

    detail::evaluate_population(next, fn, cache, cfg.workers);
    pop = std::move(next);
    record(pop);
  }
  return res;
}

inline GAResult run_ga(const GAConfig& cfg,
                       const std::vector<std::vector<StimulusDetection>>& per_filter_dets,
                       const std::vector<PartBox>& gts, double nms_iou = 0.3,
                       double match_iou = 0.4) {
  return run_ga_fn(cfg, per_filter_dets.size(), [&](const Chromosome& z) {
    return combination_fitness(z, per_filter_dets, gts, nms_iou, match_iou);
  });
}

// TopFilters baseline: the n filters with highest individual AP, ties broken
// by filter index.
inline Chromosome top_filters(const std::vector<double>& per_filter_aps, int n) {
  if (n < 0 || n > static_cast<int>(per_filter_aps.size()))
    throw config_error("top_filters count out of range");
  std::vector<int> idx(per_filter_aps.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (per_filter_aps[a] != per_filter_aps[b])
      return per_filter_aps[a] > per_filter_aps[b];
    return a < b;
  });
  Chromosome z;
  z.bits.assign(per_filter_aps.size(), 0);
  for (int i = 0; i < n; ++i) z.bits[idx[i]] = 1;
  return z;
}

inline void write_ga_log_csv(const std::string& path, const GAResult& res) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open GA log for writing: " + path);
  f << "generation,best_fitness,mean_fitness,bits_set_of_best\n";
  for (std::size_t g = 0; g < res.best_history.size(); ++g)
    f << g << ',' << format_double(res.best_history[g]) << ','
      << format_double(res.mean_history[g]) << ',' << res.best_bits_history[g] << '\n';
}

inline nlohmann::json chromosome_to_json(const Chromosome& z) {
  std::string bits(z.bits.size(), '0');
  for (std::size_t i = 0; i < z.bits.size(); ++i)
    if (z.bits[i]) bits[i] = '1';
  nlohmann::json j;
  j["bits"] = bits;
  j["filters"] = z.selected();
  j["n_filters"] = z.count_set();
  if (z.fitness) j["fitness"] = *z.fitness;
  return j;
}

}  // namespace fscope
