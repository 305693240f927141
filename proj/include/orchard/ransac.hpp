#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "orchard/error.hpp"
#include "orchard/parallel.hpp"

namespace orchard {

struct RansacOptions {
  std::uint64_t seed = 0;
  int max_iters = 500;
  double inlier_threshold = 0.01;
  // When non-empty, minimal samples are drawn from these item indices
  // only; scoring still runs over every item.
  std::vector<int> sampling_pool;
  par::ExecMode exec = par::default_mode();
};

template <typename Model>
struct RansacResult {
  Model model;
  std::vector<char> inlier_mask;
  int inlier_count = 0;
  double mean_inlier_residual = 0.0;
  int hypothesis = -1;  // winning sample index, for diagnostics
};

// Seeded hypothesize-and-verify. Samples are drawn up front from a single
// generator (deterministic given the seed); hypothesis fitting and scoring
// write per-hypothesis slots and may run in parallel; the winner is picked
// in a fixed serial scan: max inliers, ties by lower mean inlier residual.
// `fit(sample)` returns nullopt for degenerate samples; `accept(model)`
// discards hypotheses before scoring. Throws no_model_found when nothing
// survives.
template <typename Model, typename Fit, typename Residual, typename Accept>
RansacResult<Model> ransac(int n_items, int sample_size, const Fit& fit,
                           const Residual& residual, const Accept& accept,
                           const RansacOptions& opts) {
  if (n_items < sample_size) {
    throw Error(ErrorCode::insufficient_data,
                "ransac: fewer items than the minimal sample size");
  }
  std::mt19937_64 rng(opts.seed);
  std::vector<std::vector<int>> samples(opts.max_iters);
  std::vector<int> scratch = opts.sampling_pool;
  if (scratch.empty()) {
    scratch.resize(n_items);
    for (int i = 0; i < n_items; ++i) scratch[i] = i;
  }
  if (static_cast<int>(scratch.size()) < sample_size) {
    throw Error(ErrorCode::insufficient_data,
                "ransac: sampling pool smaller than the minimal sample");
  }
  const int pool = static_cast<int>(scratch.size());
  for (auto& s : samples) {
    // Partial Fisher-Yates over the index pool.
    s.resize(sample_size);
    for (int k = 0; k < sample_size; ++k) {
      std::uniform_int_distribution<int> pick(k, pool - 1);
      std::swap(scratch[k], scratch[pick(rng)]);
      s[k] = scratch[k];
    }
  }

  struct Scored {
    std::optional<Model> model;
    int inliers = 0;
    double mean_residual = 0.0;
  };
  std::vector<Scored> scored(opts.max_iters);
  par::for_index(opts.exec, opts.max_iters, [&](std::int64_t h) {
    auto model = fit(samples[h]);
    if (!model || !accept(*model)) return;
    int count = 0;
    double sum = 0.0;
    for (int i = 0; i < n_items; ++i) {
      const double r = residual(*model, i);
      if (r <= opts.inlier_threshold) {
        ++count;
        sum += r;
      }
    }
    scored[h].model = std::move(model);
    scored[h].inliers = count;
    scored[h].mean_residual = count > 0 ? sum / count : 0.0;
  });

  int best = -1;
  for (int h = 0; h < opts.max_iters; ++h) {
    if (!scored[h].model) continue;
    if (best < 0 || scored[h].inliers > scored[best].inliers ||
        (scored[h].inliers == scored[best].inliers &&
         scored[h].mean_residual < scored[best].mean_residual)) {
      best = h;
    }
  }
  if (best < 0) {
    throw Error(ErrorCode::no_model_found,
                "ransac: no hypothesis passed the degeneracy check");
  }

  RansacResult<Model> result;
  result.model = *scored[best].model;
  result.inlier_count = scored[best].inliers;
  result.mean_inlier_residual = scored[best].mean_residual;
  result.hypothesis = best;
  result.inlier_mask.assign(n_items, 0);
  for (int i = 0; i < n_items; ++i) {
    if (residual(result.model, i) <= opts.inlier_threshold)
      result.inlier_mask[i] = 1;
  }
  return result;
}

}  // namespace orchard
