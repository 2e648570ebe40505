#include "pigeonhole/samplers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include <Eigen/Eigenvalues>

#include "pigeonhole/balanced.hpp"

namespace pigeonhole {

namespace {

double standard_normal(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(rng);
}

double inverse_gamma(double shape, double rate, Rng& rng) {
  std::gamma_distribution<double> gamma(shape, 1.0 / rate);
  return 1.0 / gamma(rng);
}

// Uniform draw from [0, universe) \ used; adds the draw to used.
int draw_fresh(int universe, std::unordered_set<int>& used, Rng& rng) {
  if (static_cast<int>(used.size()) >= universe)
    throw SamplingFailure("no unused rows/columns left to replace empty ones");
  if (static_cast<int>(used.size()) * 2 <= universe) {
    std::uniform_int_distribution<int> pick(0, universe - 1);
    for (;;) {
      const int v = pick(rng);
      if (used.insert(v).second) return v;
    }
  }
  std::vector<int> free;
  free.reserve(universe - used.size());
  for (int v = 0; v < universe; ++v)
    if (!used.count(v)) free.push_back(v);
  std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
  const int v = free[pick(rng)];
  used.insert(v);
  return v;
}

Matrix symmetric_sqrt(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  if (eig.info() != Eigen::Success) throw LinearAlgebraError("eigendecomposition of step matrix failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Matrix empirical_covariance(const Matrix& samples) {
  const Vector mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  const double avg = cov.trace() / static_cast<double>(cov.rows());
  const double ridge = avg > 0.0 ? 1e-8 * avg : 1e-8;
  cov.diagonal().array() += ridge;
  return cov;
}

// Drop the eta rows/columns of a step so held variances get neither drift
// nor noise.
LangevinStep hold_eta(LangevinStep step) {
  for (auto* M : {&step.drift, &step.noise_root}) {
    M->bottomRows(3).setZero();
    M->rightCols(3).setZero();
  }
  return step;
}

std::optional<SieveBounds> sieve_for(const SamplerConfig& config, const ObservedTable& table) {
  if (!config.sieve) return std::nullopt;
  SieveBounds bounds = *config.sieve;
  bounds.N = table.N();
  return bounds;
}

Theta take_step(const ObservedTable& table, const Theta& theta, const Vector& grad, const SamplerConfig& config,
                const StepSchedule& schedule, std::int64_t t, Rng& rng) {
  if (!grad.allFinite()) throw DegenerateState("non-finite stochastic gradient");
  LangevinStep step = schedule.step_at(t);
  if (config.hold_variances) step = hold_eta(std::move(step));
  Theta next = langevin_update(theta, grad, step, rng, sieve_for(config, table), config.max_sieve_redraws);
  if (config.hold_variances) {
    next.eta_alpha = theta.eta_alpha;
    next.eta_beta = theta.eta_beta;
    next.eta_e = theta.eta_e;
  }
  return next;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t chain_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain_id), static_cast<std::uint32_t>(chain_id >> 32), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Sgld: return "sgld";
    case SamplerKind::Psgld: return "psgld";
    case SamplerKind::Gibbs: return "gibbs";
  }
  return "unknown";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "sgld") return SamplerKind::Sgld;
  if (name == "psgld") return SamplerKind::Psgld;
  if (name == "gibbs") return SamplerKind::Gibbs;
  throw InvalidArgument("unknown sampler '" + name + "' (expected sgld, psgld or gibbs)");
}

// --------------------------------------------------------- step sizes

Preconditioner precondition(std::span<const Theta> history) {
  if (history.size() < 10) throw InvalidArgument("preconditioner needs at least 10 samples");
  const int p = history.front().p();
  Matrix b(history.size(), p), eta(history.size(), 3);
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (history[k].p() != p) throw InvalidArgument("inconsistent theta dimensions in history");
    b.row(k) = history[k].b.transpose();
    eta.row(k) << history[k].eta_alpha, history[k].eta_beta, history[k].eta_e;
  }
  return {empirical_covariance(b), empirical_covariance(eta)};
}

LangevinStep LangevinStep::diagonal(const Vector& steps) {
  return {steps.asDiagonal().toDenseMatrix(), steps.cwiseMax(0.0).cwiseSqrt().asDiagonal().toDenseMatrix()};
}

LangevinStep LangevinStep::preconditioned(const Vector& steps, const Preconditioner& pre) {
  const auto p = pre.b_transform.rows();
  if (steps.size() != p + 3 || pre.eta_transform.rows() != 3)
    throw InvalidArgument("preconditioner dimensions do not match step vector");
  Matrix block = Matrix::Zero(p + 3, p + 3);
  block.topLeftCorner(p, p) = pre.b_transform;
  block.bottomRightCorner(3, 3) = pre.eta_transform;
  const Vector half = steps.cwiseSqrt();
  Matrix drift = half.asDiagonal() * block * half.asDiagonal();
  drift = 0.5 * (drift + drift.transpose());
  return {drift, symmetric_sqrt(drift)};
}

StepSchedule StepSchedule::constant(Vector steps) {
  StepSchedule s;
  s.phase1_steps = std::move(steps);
  return s;
}

void StepSchedule::validate(int dim) const {
  auto check = [dim](const Vector& v, const char* what) {
    if (v.size() != dim)
      throw InvalidArgument(std::string(what) + " must have p+3 = " + std::to_string(dim) + " entries");
    if (!v.allFinite() || (v.array() < 0.0).any())
      throw InvalidArgument(std::string(what) + " must be finite and non-negative");
  };
  check(phase1_steps, "phase-1 step sizes");
  if (phase_boundary) {
    if (*phase_boundary < 0) throw InvalidArgument("phase boundary must be >= 0");
    if (phase2_steps.size() > 0) check(phase2_steps, "phase-2 step sizes");
  }
  if (needs_preconditioner()) {
    if (window_end - window_begin < 10) throw InvalidArgument("preconditioning window needs at least 10 iterations");
    if (window_begin < 1 || window_end - 1 > *phase_boundary)
      throw InvalidArgument("preconditioning window must end at or before the phase boundary");
  }
}

void StepSchedule::freeze(const Preconditioner& pre) {
  frozen_ = pre;
  const Vector& steps = phase2_steps.size() > 0 ? phase2_steps : phase1_steps;
  frozen_step_ = LangevinStep::preconditioned(steps, pre);
}

LangevinStep StepSchedule::step_at(std::int64_t t) const {
  if (!phase_boundary || t < *phase_boundary) return LangevinStep::diagonal(phase1_steps);
  if (mode == PreconditionMode::EmpiricalCovariance) {
    if (!frozen_step_) throw InvalidArgument("phase 2 reached before the preconditioner was estimated");
    return *frozen_step_;
  }
  return LangevinStep::diagonal(phase2_steps.size() > 0 ? phase2_steps : phase1_steps);
}

void SamplerConfig::validate(const ObservedTable& table, SamplerKind kind) const {
  if (T < 0 || burn_in < 0) throw ConfigError("T and burn_in must be non-negative");
  if (burn_in > T) throw ConfigError("burn_in exceeds T");
  if (thin < 1) throw ConfigError("thin must be >= 1");
  if (init && init->p() != table.p())
    throw ConfigError("initial b has " + std::to_string(init->p()) + " entries, table has p = " +
                      std::to_string(table.p()));
  if (init && !init->valid()) throw ConfigError("initial theta is not finite");
  if (kind == SamplerKind::Gibbs) return;
  if (r < 2 || c < 2) throw ConfigError("batch needs r >= 2 and c >= 2");
  if (r >= table.R() || c >= table.C())
    throw ConfigError("batch must be strictly smaller than the table (r < R, c < C)");
  if (m < 1) throw ConfigError("latent chain length m must be >= 1");
  if (max_redraws < 0 || max_sieve_redraws < 1) throw ConfigError("redraw caps must be positive");
  if (sieve) {
    SieveBounds bounds = *sieve;
    bounds.N = table.N();
    try {
      bounds.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  if (kind == SamplerKind::Sgld && !table.fully_observed())
    throw ConfigError("sgld needs a fully observed table; use psgld for data with missing cells");
}

// ------------------------------------------------------------ subsets

SubsetBatch sample_subset(const ObservedTable& table, int r, int c, int max_redraws, Rng& rng) {
  if (r < 1 || c < 1 || r >= table.R() || c >= table.C())
    throw InvalidArgument("subset dimensions must satisfy 1 <= r < R and 1 <= c < C");
  std::unordered_set<int> used_rows, used_cols;
  std::vector<int> rows(r), cols(c);
  for (auto& v : rows) v = draw_fresh(table.R(), used_rows, rng);
  for (auto& v : cols) v = draw_fresh(table.C(), used_cols, rng);

  for (int round = 0;; ++round) {
    SubsetBatch batch = SubsetBatch::extract(table, rows, cols);
    const auto empty_rows = batch.empty_rows();
    const auto empty_cols = batch.empty_cols();
    if (empty_rows.empty() && empty_cols.empty()) return batch;
    if (round >= max_redraws)
      throw SamplingFailure("no valid " + std::to_string(r) + "x" + std::to_string(c) + " subset after " +
                            std::to_string(max_redraws) + " replacement rounds");
    for (int i : empty_rows) rows[i] = draw_fresh(table.R(), used_rows, rng);
    for (int j : empty_cols) cols[j] = draw_fresh(table.C(), used_cols, rng);
  }
}

// ------------------------------------------------------------- latents

LatentState initial_latent(const SubsetBatch& batch, const Theta& theta) {
  LatentState zero{Vector::Zero(batch.r()), Vector::Zero(batch.c())};
  LatentState init = zero;
  for (int i = 0; i < batch.r(); ++i) init.alpha[i] = conditional_effect_params(Axis::Row, i, batch, theta, zero).mean;
  for (int j = 0; j < batch.c(); ++j) init.beta[j] = conditional_effect_params(Axis::Col, j, batch, theta, zero).mean;
  return init;
}

std::vector<LatentState> latent_gibbs_sweep(const SubsetBatch& batch, const Theta& theta, const LatentState& init,
                                            int m, Rng& rng) {
  if (m < 1) throw InvalidArgument("latent chain length must be >= 1");
  if (!batch.valid()) throw InvalidArgument("batch has rows or columns without observations");
  const int r = batch.r(), c = batch.c();
  if (init.alpha.size() != r || init.beta.size() != c) throw InvalidArgument("initial latent state has wrong size");

  const Vector resid = fixed_residuals(batch, theta.b);
  const double s2_a = theta.sigma2_alpha(), s2_b = theta.sigma2_beta(), s2_e = theta.sigma2_e();

  // Per-effect shrinkage factor and conditional sd; these are the
  // conditional_effect_params formulas with the residual pass hoisted.
  Vector row_shrink(r), row_sd(r), col_shrink(c), col_sd(c);
  for (int i = 0; i < r; ++i) {
    const double denom = batch.row_count(i) * s2_a + s2_e;
    row_shrink[i] = s2_a / denom;
    row_sd[i] = std::sqrt(s2_a * s2_e / denom);
  }
  for (int j = 0; j < c; ++j) {
    const double denom = batch.col_count(j) * s2_b + s2_e;
    col_shrink[j] = s2_b / denom;
    col_sd[j] = std::sqrt(s2_b * s2_e / denom);
  }

  const auto& order = batch.col_order();
  std::vector<LatentState> chain;
  chain.reserve(m);
  LatentState state = init;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < m; ++k) {
    for (int i = 0; i < r; ++i) {
      double sum = 0.0;
      for (int t = batch.row_begin(i); t < batch.row_begin(i + 1); ++t) sum += resid[t] - state.beta[batch.cell_col(t)];
      state.alpha[i] = row_shrink[i] * sum + row_sd[i] * normal(rng);
    }
    for (int j = 0; j < c; ++j) {
      double sum = 0.0;
      for (int t = batch.col_begin(j); t < batch.col_begin(j + 1); ++t) {
        const int cell = order[t];
        sum += resid[cell] - state.alpha[batch.cell_row(cell)];
      }
      state.beta[j] = col_shrink[j] * sum + col_sd[j] * normal(rng);
    }
    chain.push_back(state);
  }
  return chain;
}

// ------------------------------------------------------------- updates

Theta langevin_update(const Theta& theta, const Vector& grad, const LangevinStep& step, Rng& rng,
                      const std::optional<SieveBounds>& sieve, int max_redraws) {
  const int d = theta.dim();
  if (grad.size() != d || step.drift.rows() != d) throw InvalidArgument("gradient/step dimension mismatch");
  if (!grad.allFinite()) throw DegenerateState("non-finite gradient");
  const Vector base = theta.to_vector() + 0.5 * step.drift * grad;
  Vector z(d);
  for (int attempt = 0; attempt < std::max(1, max_redraws); ++attempt) {
    for (int k = 0; k < d; ++k) z[k] = standard_normal(rng);
    Theta proposal = Theta::from_vector(base + step.noise_root * z);
    if (!sieve || sieve_contains(proposal, *sieve)) return proposal;
  }
  throw SamplingFailure("sieve proposal rejected " + std::to_string(max_redraws) + " times");
}

Theta psgld_step(const ObservedTable& table, const Theta& theta, const SamplerConfig& config,
                 const StepSchedule& schedule, std::int64_t t, const PriorSpec& prior, Rng& rng) {
  const SubsetBatch batch = sample_subset(table, config.r, config.c, config.max_redraws, rng);
  const auto latent = latent_gibbs_sweep(batch, theta, initial_latent(batch, theta), config.m, rng);
  const Vector grad = stochastic_gradient(batch, theta, latent, table.N(), table.R(), table.C(), prior);
  return take_step(table, theta, grad, config, schedule, t, rng);
}

Theta sgld_step(const ObservedTable& table, const Theta& theta, const SamplerConfig& config,
                const StepSchedule& schedule, std::int64_t t, const PriorSpec& prior, Rng& rng) {
  if (!table.fully_observed())
    throw ConfigError("sgld needs a fully observed table; use psgld for data with missing cells");
  const SubsetBatch batch = sample_subset(table, config.r, config.c, config.max_redraws, rng);
  const auto block = BalancedBlock::from_batch(batch);
  Vector grad = balanced_grads(block, theta);
  const int p = theta.p();
  const double scale_n = static_cast<double>(table.N()) / batch.n();
  grad.head(p) *= scale_n;
  grad[p] *= static_cast<double>(table.R()) / batch.r();
  grad[p + 1] *= static_cast<double>(table.C()) / batch.c();
  grad[p + 2] *= scale_n;
  grad += log_prior_grad(theta, prior);
  return take_step(table, theta, grad, config, schedule, t, rng);
}

// --------------------------------------------------------- full Gibbs

FullGibbs::FullGibbs(const ObservedTable& table, PriorSpec prior) : table_(&table), prior_(prior) {
  prior_.validate();
  const Matrix xtx = table.X().transpose() * table.X();
  xtx_.compute(xtx);
  if (xtx_.info() != Eigen::Success)
    throw LinearAlgebraError("sum of x x' over observed cells is singular; covariates are collinear");
  // LLT does not always flag semi-definite input; check the pivots.
  const Vector diag = Matrix(xtx_.matrixL()).diagonal();
  if (!(diag.minCoeff() > 1e-12 * std::max(1.0, diag.maxCoeff())))
    throw LinearAlgebraError("sum of x x' over observed cells is singular; covariates are collinear");
}

GibbsState FullGibbs::sweep(const GibbsState& state, Rng& rng, bool hold_variances) const {
  const ObservedTable& table = *table_;
  const int R = table.R(), C = table.C(), p = table.p();
  const auto N = table.N();
  if (state.alpha.size() != R || state.beta.size() != C || state.theta.p() != p)
    throw InvalidArgument("Gibbs state does not match table dimensions");

  GibbsState next = state;
  const double s2_a = state.theta.sigma2_alpha(), s2_b = state.theta.sigma2_beta(), s2_e = state.theta.sigma2_e();
  const Vector resid = table.y() - table.X() * state.theta.b;

  for (int i = 0; i < R; ++i) {
    const auto& cells = table.row_cells(i);
    double sum = 0.0;
    for (auto k : cells) sum += resid[k] - next.beta[table.col_of(k)];
    const double denom = static_cast<double>(cells.size()) * s2_a + s2_e;
    next.alpha[i] = sum * s2_a / denom + std::sqrt(s2_a * s2_e / denom) * standard_normal(rng);
  }
  for (int j = 0; j < C; ++j) {
    const auto& cells = table.col_cells(j);
    double sum = 0.0;
    for (auto k : cells) sum += resid[k] - next.alpha[table.row_of(k)];
    const double denom = static_cast<double>(cells.size()) * s2_b + s2_e;
    next.beta[j] = sum * s2_b / denom + std::sqrt(s2_b * s2_e / denom) * standard_normal(rng);
  }

  Vector target(N);
  for (std::int64_t k = 0; k < N; ++k)
    target[k] = table.y(k) - next.alpha[table.row_of(k)] - next.beta[table.col_of(k)];
  const Vector mean = xtx_.solve(table.X().transpose() * target);
  Vector z(p);
  for (int k = 0; k < p; ++k) z[k] = standard_normal(rng);
  // cov = s2_e (L L')^{-1}, so L'^{-1} z has the right shape.
  next.theta.b = mean + std::sqrt(s2_e) * xtx_.matrixU().solve(z);

  if (!hold_variances) {
    const double rss = (target - table.X() * next.theta.b).squaredNorm();
    next.theta.eta_alpha =
        std::log(inverse_gamma(prior_.a1 + 0.5 * R, prior_.b1 + 0.5 * next.alpha.squaredNorm(), rng));
    next.theta.eta_beta = std::log(inverse_gamma(prior_.a2 + 0.5 * C, prior_.b2 + 0.5 * next.beta.squaredNorm(), rng));
    next.theta.eta_e = std::log(inverse_gamma(prior_.a3 + 0.5 * static_cast<double>(N), prior_.b3 + 0.5 * rss, rng));
  }
  return next;
}

GibbsState gibbs_full_sweep(const ObservedTable& table, const GibbsState& state, const PriorSpec& prior, Rng& rng) {
  return FullGibbs(table, prior).sweep(state, rng);
}

// ---------------------------------------------------------------- runs

Chain run_chain(SamplerKind kind, const ObservedTable& table, const SamplerConfig& config, StepSchedule schedule,
                const PriorSpec& prior) {
  config.validate(table, kind);
  prior.validate();
  const int p = table.p();
  if (kind != SamplerKind::Gibbs) schedule.validate(p + 3);

  Chain chain;
  chain.meta = {kind, config.seed, config.r, config.c, config.m, config.T, config.burn_in, config.thin};
  const auto kept = (config.T - config.burn_in) / config.thin;
  chain.samples.reserve(kept);
  chain.timestamps.reserve(kept);
  chain.iterations.reserve(kept);

  Rng rng(config.seed);
  Theta theta = config.init ? *config.init : Theta{Vector::Ones(p), 0.0, 0.0, 0.0};
  std::optional<FullGibbs> gibbs;
  GibbsState gibbs_state;
  if (kind == SamplerKind::Gibbs) {
    gibbs.emplace(table, prior);
    gibbs_state = {theta, Vector::Zero(table.R()), Vector::Zero(table.C())};
  }
  std::vector<Theta> window;

  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t t = 0; t < config.T; ++t) {
    const std::int64_t iteration = t + 1;
    try {
      switch (kind) {
        case SamplerKind::Gibbs:
          gibbs_state = gibbs->sweep(gibbs_state, rng, config.hold_variances);
          theta = gibbs_state.theta;
          break;
        case SamplerKind::Psgld:
        case SamplerKind::Sgld:
          if (schedule.needs_preconditioner() && !schedule.frozen() && t >= *schedule.phase_boundary)
            schedule.freeze(precondition(window));
          theta = kind == SamplerKind::Psgld ? psgld_step(table, theta, config, schedule, t, prior, rng)
                                             : sgld_step(table, theta, config, schedule, t, prior, rng);
          if (!theta.valid()) throw DegenerateState("parameters left the finite range");
          if (schedule.needs_preconditioner() && schedule.in_window(iteration)) window.push_back(theta);
          break;
      }
    } catch (const Error& e) {
      throw ChainAborted(iteration, e.what(), std::current_exception());
    }
    if (iteration > config.burn_in && (iteration - config.burn_in) % config.thin == 0) {
      chain.samples.push_back(theta);
      chain.timestamps.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      chain.iterations.push_back(iteration);
    }
  }
  return chain;
}

}  // namespace pigeonhole
