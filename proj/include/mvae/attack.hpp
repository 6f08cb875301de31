#pragma once

// Adversarial example generation against the detector:
//
//   augment -> repeat { masked CW optimisation  (image space, "optimal AE")
//                       nearest-NOP substitution (binary space, "viable AE")
//                       classify }
//   until the viable AE is classified benign or the iteration budget runs out.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <span>
#include <thread>
#include <vector>

#include "mvae/binimg.hpp"
#include "mvae/detector.hpp"
#include "mvae/emu.hpp"
#include "mvae/isa.hpp"
#include "mvae/maskgen.hpp"
#include "mvae/nops.hpp"

namespace mvae::attack {

using detector::Model;

enum class RestartMode : std::uint8_t { FromFailedAe, RandomReinit };

struct AttackConfig {
  double C = 1.0;  // weight of the misclassification term
  double step_size = 0.01;
  std::size_t inner_steps = 200;
  std::size_t max_outer_iters = 10;
  // Margin the optimal AE must clear. With 0 the optimiser stops at the
  // smallest flip, which nearest-NOP substitution rounds straight back.
  double kappa = 20.0;
  RestartMode restart_mode = RestartMode::FromFailedAe;
  // Multiply C by c_growth after every failed outer iteration (1 disables).
  double c_growth = 10.0;
  std::size_t nop_limit = isa::kDefaultNopLimit;
  std::size_t block_threads = 1;  // >1 runs the NOP substitution concurrently
  std::uint64_t seed = 1;

  void validate() const {
    if (!(C > 0) || !(step_size > 0) || inner_steps == 0 || max_outer_iters == 0 ||
        !(kappa >= 0) || !(c_growth >= 1.0) || block_threads == 0)
      throw InvalidArgument("attack configuration out of range");
  }
};

// x: the image the optimisation starts from; delta lives only on the mask.
struct AttackState {
  NormalizedImage x;
  std::vector<float> delta;
  const maskgen::PerturbationMask* mask = nullptr;
  std::size_t iter = 0;

  AttackState(NormalizedImage start, const maskgen::PerturbationMask& m)
      : x(std::move(start)), delta(x.size(), 0.0f), mask(&m) {
    if (m.bits.size() != x.size() || m.width != x.width || m.height != x.height)
      throw InvalidArgument("mask is not congruent with the image");
  }

  NormalizedImage adversarial() const {
    NormalizedImage a = x;
    for (std::size_t i = 0; i < a.values.size(); ++i)
      if (mask->bits[i]) a.values[i] += delta[i];
    return a;
  }
};

struct CwResult {
  NormalizedImage optimal_ae;
  double objective = 0;  // ||M delta||^2 + C f at the returned iterate
  double cw_loss = 0;    // f at the returned iterate
  std::size_t best_step = 0;
  std::size_t gradient_evaluations = 0;
};

// Called after every update with the current state (tests use it to watch
// the mask and box invariants).
using StepObserver = std::function<void(std::size_t step, const AttackState&)>;

// Projected gradient descent on ||M delta||_2^2 + C * f(x + M delta); after
// each step delta is re-masked and x + M delta is clipped to [-1, 1]. Returns
// the iterate with the lowest objective.
inline CwResult cw_optimize(const Model& model, AttackState& state, const AttackConfig& cfg,
                            double C, const StepObserver& observe = {}) {
  const auto& mask = state.mask->bits;
  const std::size_t n = state.x.size();
  const auto loss = detector::LossSpec::cw(cfg.kappa);
  const auto step = static_cast<float>(cfg.step_size);
  const auto Cf = static_cast<float>(C);

  CwResult best;
  best.objective = std::numeric_limits<double>::infinity();
  NormalizedImage adv = state.adversarial();
  for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
    const auto g = model.grad_input(adv, loss);
    ++best.gradient_evaluations;
    double norm2 = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) norm2 += double(state.delta[i]) * state.delta[i];
    const double objective = norm2 + C * g.loss;
    if (!std::isfinite(objective)) throw NumericalFailure("non-finite CW objective", k);
    if (objective < best.objective) {
      best.objective = objective;
      best.cw_loss = g.loss;
      best.best_step = k;
      best.optimal_ae = adv;
    }
    if (k + 1 == cfg.inner_steps) break;

    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      const float grad = 2.0f * state.delta[i] + Cf * g.grad[i];
      const float xi = state.x.values[i];
      const float v = std::clamp(xi + state.delta[i] - step * grad, -1.0f, 1.0f);
      state.delta[i] = v - xi;
      adv.values[i] = v;
    }
    if (observe) observe(k, state);
  }
  return best;
}

using NopLists = std::map<std::size_t, std::vector<isa::NopSequence>>;

inline NopLists nop_lists_for(const maskgen::AugmentedBinary& aug, std::size_t limit,
                              const isa::SeedCatalog& catalog = isa::seed_catalog()) {
  NopLists lists;
  for (const auto& s : aug.block_spans)
    if (!lists.count(s.length)) lists[s.length] = catalog.generate_nops(s.length, limit);
  return lists;
}

inline std::uint64_t squared_distance(ByteView p, ByteView q) {
  std::uint64_t d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::int64_t diff = std::int64_t{q[i]} - std::int64_t{p[i]};
    d += static_cast<std::uint64_t>(diff * diff);
  }
  return d;
}

// Index of the candidate nearest to `block` in Euclidean distance; ties go to
// the lexicographically smallest byte string.
inline std::size_t nearest_nop(ByteView block, std::span<const isa::NopSequence> candidates) {
  std::size_t best = 0;
  std::uint64_t best_d = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto d = squared_distance(block, candidates[c].bytes);
    if (d < best_d || (d == best_d && candidates[c].bytes < candidates[best].bytes)) {
      best = c;
      best_d = d;
    }
  }
  return best;
}

struct AeResult {
  maskgen::AugmentedBinary viable;
  GrayImage image;
  std::vector<std::size_t> choices;  // candidate index per block
  double total_distance = 0;         // sum of per-block Euclidean distances
};

// Replaces every perturbation block of `optimal_ae` with its nearest semantic
// NOP sequence. Blocks are independent, so `threads` > 1 gives identical
// output.
inline AeResult ae_optimize(const GrayImage& optimal_ae, const maskgen::AugmentedBinary& aug,
                            const maskgen::PerturbationMask& mask, const NopLists& nop_lists,
                            std::size_t threads = 1) {
  if (optimal_ae.size() != mask.bits.size() || optimal_ae.width() != mask.width ||
      optimal_ae.payload_len() != aug.bytes.size())
    throw InvalidArgument("optimal AE is not congruent with the mask");
  std::size_t masked = 0;
  for (const auto& s : aug.block_spans) {
    for (std::size_t i = 0; i < s.length; ++i)
      if (!mask.bits[s.offset + i]) throw InvalidArgument("block span not covered by the mask");
    masked += s.length;
  }
  if (masked != mask.ones()) throw InvalidArgument("mask flags pixels outside block spans");
  for (const auto& s : aug.block_spans) {
    auto it = nop_lists.find(s.length);
    if (it == nop_lists.end() || it->second.empty()) throw UnfillableBlock(s.length);
  }

  const auto& px = optimal_ae.pixels();
  const std::size_t n_blocks = aug.block_spans.size();
  AeResult r;
  r.choices.assign(n_blocks, 0);
  auto solve = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      const auto& s = aug.block_spans[b];
      r.choices[b] = nearest_nop(ByteView(px).subspan(s.offset, s.length), nop_lists.at(s.length));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n_blocks));
  if (threads == 1) {
    solve(0, n_blocks);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n_blocks + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(solve, std::min(n_blocks, t * chunk), std::min(n_blocks, (t + 1) * chunk));
  }

  r.viable = aug;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const auto& s = aug.block_spans[b];
    const auto& q = nop_lists.at(s.length)[r.choices[b]].bytes;
    std::copy(q.begin(), q.end(), r.viable.bytes.begin() + static_cast<std::ptrdiff_t>(s.offset));
    r.total_distance +=
        std::sqrt(static_cast<double>(squared_distance(ByteView(px).subspan(s.offset, s.length), q)));
  }
  r.image = bytes_to_image(r.viable.bytes, optimal_ae.width());
  return r;
}

struct AttackResult {
  bool success = false;
  bool noop = false;  // original already classified benign
  maskgen::AugmentedBinary viable;
  GrayImage viable_image;
  std::size_t outer_iters_used = 0;
  double wall_ms = 0;
  double expansion_rate = 0;
  std::vector<double> distance_log;  // total substitution distance per outer iteration
  double final_cw_loss = 0;
  bool oscillation = false;  // a non-benign viable AE came back unchanged
  std::size_t gradient_evaluations = 0;
};

inline AttackResult run_attack(const Model& model, ByteView code, const isa::InstructionStream& stream,
                               const maskgen::MaskConfig& mask_cfg, const AttackConfig& cfg,
                               const isa::SeedCatalog& catalog = isa::seed_catalog()) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  cfg.validate();
  mask_cfg.validate();
  AttackResult res;
  auto finish = [&] {
    res.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return res;
  };

  const GrayImage original = bytes_to_image(code, mask_cfg.width);
  const auto z0 = model.forward(normalize(original));
  if (z0.label() == detector::kBenign) {
    res.success = res.noop = true;
    res.viable.bytes.assign(code.begin(), code.end());
    res.viable.original_len = code.size();
    res.viable.origin_map.reserve(stream.size());
    for (const auto& ins : stream.instructions) res.viable.origin_map.push_back(ins.offset);
    res.viable_image = original;
    res.final_cw_loss = detector::cw_loss(z0, cfg.kappa);
    return finish();
  }

  auto candidates = catalog.generate_nops(mask_cfg.block_size, cfg.nop_limit);
  if (candidates.empty()) throw UnfillableBlock(mask_cfg.block_size);
  std::mt19937_64 rng(cfg.seed);
  auto aug = maskgen::augment(code, stream, mask_cfg, candidates, rng());
  const NopLists lists{{mask_cfg.block_size, std::move(candidates)}};
  res.expansion_rate = aug.binary.expansion_rate();

  std::set<Bytes> seen;
  double C = cfg.C;
  for (std::size_t it = 1; it <= cfg.max_outer_iters; ++it) {
    res.outer_iters_used = it;
    AttackState state(normalize(aug.image), aug.mask);
    state.iter = it;
    const auto cw = cw_optimize(model, state, cfg, C);
    res.gradient_evaluations += cw.gradient_evaluations;

    auto ae = ae_optimize(denormalize(cw.optimal_ae), aug.binary, aug.mask, lists, cfg.block_threads);
    res.distance_log.push_back(ae.total_distance);
    const auto z = model.forward(normalize(ae.image));
    res.final_cw_loss = detector::cw_loss(z, cfg.kappa);
    res.viable = ae.viable;
    res.viable_image = ae.image;
    if (z.label() == detector::kBenign) {
      res.success = true;
      break;
    }
    if (!seen.insert(ae.viable.bytes).second) res.oscillation = true;

    if (cfg.restart_mode == RestartMode::FromFailedAe) {
      aug = maskgen::render(std::move(ae.viable), mask_cfg.width);
    } else {
      auto m = mask_cfg;
      m.init_mode = maskgen::InitMode::RandomNops;
      aug = maskgen::augment(code, stream, m, lists.at(mask_cfg.block_size), rng());
    }
    C *= cfg.c_growth;
  }
  return finish();
}

// ---------------------------------------------------------------------------
// Viability check of an emitted adversarial binary and batch helpers.

// Throws VerificationFailure naming the first violated property: strip
// equality with `original`, membership of every block in
// generate_nops(block length, limit), emulator neutrality of every block.
// Neutrality is a function of the block bytes, so repeated blocks are
// checked once. Returns the number of blocks checked.
inline std::size_t verify_viable(ByteView adversarial, std::span<const maskgen::Span> spans,
                                 ByteView original, std::size_t limit = isa::kDefaultNopLimit,
                                 std::size_t trials = emu::kDefaultTrials,
                                 const isa::SeedCatalog& catalog = isa::seed_catalog()) {
  maskgen::AugmentedBinary aug;
  aug.bytes.assign(adversarial.begin(), adversarial.end());
  aug.block_spans.assign(spans.begin(), spans.end());
  aug.original_len = original.size();
  for (const auto& s : spans)
    if (s.offset + s.length > aug.bytes.size()) throw VerificationFailure("block span past end of binary");

  const Bytes stripped = maskgen::strip(aug);
  if (!std::equal(stripped.begin(), stripped.end(), original.begin(), original.end())) {
    const auto mm = std::mismatch(stripped.begin(), stripped.end(), original.begin(), original.end());
    throw VerificationFailure("stripped binary differs from the original at offset " +
                              std::to_string(mm.first - stripped.begin()));
  }

  std::map<std::size_t, std::set<Bytes>> members;
  std::set<Bytes> neutral;
  for (std::size_t b = 0; b < spans.size(); ++b) {
    const auto block = aug.block(b);
    const Bytes key(block.begin(), block.end());
    const std::string where = "block at offset " + std::to_string(spans[b].offset) + " (" + isa::to_hex(block) + ")";
    auto it = members.find(block.size());
    if (it == members.end()) {
      std::set<Bytes> set;
      for (auto& q : catalog.generate_nops(block.size(), limit)) set.insert(std::move(q.bytes));
      it = members.emplace(block.size(), std::move(set)).first;
    }
    if (!it->second.count(key)) throw VerificationFailure(where + " is not a listed NOP sequence");
    if (neutral.count(key)) continue;
    emu::NeutralityResult r;
    try {
      r = emu::check_neutral(block, trials);
    } catch (const DecodeError& e) {
      throw VerificationFailure(where + " does not decode: " + e.what());
    }
    if (!r) throw VerificationFailure(where + " is not neutral: " + r.reason);
    neutral.insert(key);
  }
  return spans.size();
}

// Seed for sample `index` of a batch; depends only on (base, index), so a
// sample's attack does not depend on how the batch is scheduled.
inline std::uint64_t sample_seed(std::uint64_t base, std::size_t index) {
  std::seed_seq seq{base, static_cast<std::uint64_t>(index)};
  std::array<std::uint64_t, 1> out{};
  seq.generate(out.begin(), out.end());
  return out[0];
}

// Calls work(i) for every i in [0, n) from `jobs` threads; each index runs
// exactly once. `work` must only touch state owned by index i.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& work) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) work(i);
    });
}

}  // namespace mvae::attack
