#ifndef PIGEONHOLE_SAMPLERS_HPP
#define PIGEONHOLE_SAMPLERS_HPP

#include <cstdint>
#include <exception>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "pigeonhole/error.hpp"
#include "pigeonhole/model.hpp"

namespace pigeonhole {

using Rng = std::mt19937_64;

/// Independent stream for replication/chain `chain_id` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t chain_id);

enum class SamplerKind { Sgld, Psgld, Gibbs };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

enum class PreconditionMode { None, EmpiricalCovariance };

/// Empirical covariances of the b block and of the eta block.
struct Preconditioner {
  Matrix b_transform;
  Matrix eta_transform;
};

/// Estimate the block preconditioner from a window of recent iterates.
/// Covariance uses denominator n-1, plus a ridge of 1e-8 * trace/dim
/// (1e-8 when the trace vanishes). Needs at least 10 samples.
Preconditioner precondition(std::span<const Theta> history);

/// A resolved Langevin step: drift matrix E and a square root L with
/// L L' = E. The update is theta + E g / 2 + L z.
struct LangevinStep {
  Matrix drift;
  Matrix noise_root;

  /// E = diag(steps).
  static LangevinStep diagonal(const Vector& steps);
  /// E = D^{1/2} blockdiag(P_b, P_eta) D^{1/2}, D = diag(steps).
  static LangevinStep preconditioned(const Vector& steps, const Preconditioner& pre);
};

/// Two-phase step sizes. Phase 2 starts at iteration phase_boundary; with
/// EmpiricalCovariance the preconditioner is estimated once from iterates
/// [window_begin, window_end) and then frozen.
///
/// Step sizes must be non-negative; a zero step freezes that coordinate.
class StepSchedule {
public:
  Vector phase1_steps;
  std::optional<std::int64_t> phase_boundary;
  Vector phase2_steps;
  PreconditionMode mode = PreconditionMode::None;
  std::int64_t window_begin = 0;
  std::int64_t window_end = 0;

  StepSchedule() = default;
  static StepSchedule constant(Vector steps);

  void validate(int dim) const;

  bool needs_preconditioner() const { return mode == PreconditionMode::EmpiricalCovariance && phase_boundary; }
  bool in_window(std::int64_t t) const { return t >= window_begin && t < window_end; }
  void freeze(const Preconditioner& pre);
  bool frozen() const { return frozen_.has_value(); }

  /// Step in force at iteration t. Throws if phase 2 needs a preconditioner
  /// that has not been frozen yet.
  LangevinStep step_at(std::int64_t t) const;

private:
  std::optional<Preconditioner> frozen_;
  std::optional<LangevinStep> frozen_step_;
};

struct SamplerConfig {
  int r = 20;
  int c = 20;
  int m = 50;
  std::int64_t T = 1000;
  std::int64_t burn_in = 0;
  std::int64_t thin = 1;
  std::uint64_t seed = 1;
  /// Bounds B0, A1, B1, E1; N is taken from the table at run time.
  std::optional<SieveBounds> sieve;
  int max_redraws = 100;
  int max_sieve_redraws = 1000;
  /// Starting point. Empty b means b = 1, eta = 0 (unit variances).
  std::optional<Theta> init;
  /// Keep the variance components fixed at init (conjugate checks).
  bool hold_variances = false;

  void validate(const ObservedTable& table, SamplerKind kind) const;
};

struct ChainMeta {
  SamplerKind sampler = SamplerKind::Psgld;
  std::uint64_t seed = 0;
  int r = 0, c = 0, m = 0;
  std::int64_t T = 0, burn_in = 0, thin = 1;
};

/// Retained samples of one run. timestamps[k] is wall-clock seconds since
/// the chain started, taken when samples[k] was produced; iterations[k] is
/// its 1-based iteration number.
struct Chain {
  std::vector<Theta> samples;
  std::vector<double> timestamps;
  std::vector<std::int64_t> iterations;
  ChainMeta meta;

  std::size_t size() const { return samples.size(); }
};

/// Thrown by run_chain when a step fails; carries the failing iteration.
class ChainAborted : public Error {
public:
  ChainAborted(std::int64_t iteration, const std::string& what, std::exception_ptr cause)
      : Error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration), cause_(cause) {}
  std::int64_t iteration() const { return iteration_; }
  std::exception_ptr cause() const { return cause_; }

private:
  std::int64_t iteration_;
  std::exception_ptr cause_;
};

/// Draw r rows and c columns without replacement; rows or columns left
/// without observations are swapped for fresh ones until the batch is valid
/// or max_redraws replacement rounds have been spent.
SubsetBatch sample_subset(const ObservedTable& table, int r, int c, int max_redraws, Rng& rng);

/// Conditional means of each effect given theta and zero partner effects.
LatentState initial_latent(const SubsetBatch& batch, const Theta& theta);

/// m systematic-scan Gibbs sweeps (all alpha, then all beta) starting from
/// init. Returns the m states after each sweep.
std::vector<LatentState> latent_gibbs_sweep(const SubsetBatch& batch, const Theta& theta, const LatentState& init,
                                            int m, Rng& rng);

/// theta + E grad / 2 + L z. With a sieve, z is redrawn until the proposal
/// lies in the sieve, at most max_redraws times.
Theta langevin_update(const Theta& theta, const Vector& grad, const LangevinStep& step, Rng& rng,
                      const std::optional<SieveBounds>& sieve = std::nullopt, int max_redraws = 1000);

/// One pigeonhole SGLD transition at iteration t.
Theta psgld_step(const ObservedTable& table, const Theta& theta, const SamplerConfig& config,
                 const StepSchedule& schedule, std::int64_t t, const PriorSpec& prior, Rng& rng);

/// One balanced-design SGLD transition at iteration t. Requires a fully
/// observed table.
Theta sgld_step(const ObservedTable& table, const Theta& theta, const SamplerConfig& config,
                const StepSchedule& schedule, std::int64_t t, const PriorSpec& prior, Rng& rng);

struct GibbsState {
  Theta theta;
  Vector alpha;  // length R
  Vector beta;   // length C
};

/// Full-data conjugate Gibbs sampler. Caches the Cholesky factor of
/// sum_ij x_ij x_ij' so each sweep is O(N p).
class FullGibbs {
public:
  FullGibbs(const ObservedTable& table, PriorSpec prior);

  /// Scan order: alpha block, beta block, b, s2_alpha, s2_beta, s2_e.
  GibbsState sweep(const GibbsState& state, Rng& rng, bool hold_variances = false) const;

private:
  const ObservedTable* table_;
  PriorSpec prior_;
  Eigen::LLT<Matrix> xtx_;
};

GibbsState gibbs_full_sweep(const ObservedTable& table, const GibbsState& state, const PriorSpec& prior, Rng& rng);

/// Run T iterations of the chosen sampler, keeping iterations burn_in+thin,
/// burn_in+2*thin, ... Identical config and seed give identical samples.
Chain run_chain(SamplerKind kind, const ObservedTable& table, const SamplerConfig& config, StepSchedule schedule,
                const PriorSpec& prior);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_SAMPLERS_HPP
