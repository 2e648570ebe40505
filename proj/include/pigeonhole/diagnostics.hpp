#ifndef PIGEONHOLE_DIAGNOSTICS_HPP
#define PIGEONHOLE_DIAGNOSTICS_HPP

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pigeonhole/samplers.hpp"

namespace pigeonhole {

/// Sorted draws of one scalar parameter.
struct MarginalSamples {
  std::string label;
  std::vector<double> values;

  /// Sorts values; throws InvalidArgument when empty or non-finite.
  static MarginalSamples from(std::string label, std::vector<double> values);
  std::size_t size() const { return values.size(); }
};

/// Left-continuous empirical quantile inf{x : F(x) >= u}, u in (0, 1].
double empirical_quantile(const MarginalSamples& s, double u);

/// Exact W2 between two empirical distributions. Equal sizes reduce to
/// order-statistic matching; otherwise the squared quantile difference is
/// integrated over the merged breakpoint grid {k/n} U {l/m}.
double w2_empirical(const MarginalSamples& a, const MarginalSamples& b);

/// 1-D W2 barycenter: average of the replicate quantile functions at
/// u_k = (k - 1/2) / grid_size, k = 1..grid_size.
MarginalSamples w2_barycenter(std::span<const MarginalSamples> replicates, int grid_size = 1000);

/// Reported parameter names: b_1..b_p, sigma2_alpha, sigma2_beta, sigma2_e.
std::vector<std::string> parameter_names(int p);

/// Reported values of theta (variances on the sigma^2 scale).
Vector reported_values(const Theta& theta);

/// One MarginalSamples per reported parameter over samples [begin, end).
std::vector<MarginalSamples> chain_marginals(const Chain& chain, std::size_t begin = 0,
                                             std::size_t end = static_cast<std::size_t>(-1));

struct ParamSummary {
  std::string param;
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and sd (denominator n - 1) per reported parameter. Needs >= 2 samples.
std::vector<ParamSummary> summarize(const Chain& chain);

struct TracePoint {
  std::int64_t t = 0;  // 1-based retained-sample index
  double elapsed_s = 0.0;
  std::vector<double> w2;  // one per parameter
};

/// For t = 3..size, W2 between the trailing min(window, t) samples and the
/// benchmark, per parameter.
std::vector<TracePoint> convergence_trace(const Chain& chain, std::span<const MarginalSamples> benchmark,
                                          int window = 500);

/// `param,stat,value`.
void write_summary_csv(std::ostream& out, std::span<const ParamSummary> summary);
/// `elapsed_s,param,w2`, long format.
void write_trace_csv(std::ostream& out, std::span<const TracePoint> trace, const std::vector<std::string>& names);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_DIAGNOSTICS_HPP
