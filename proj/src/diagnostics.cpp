#include "pigeonhole/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "pigeonhole/error.hpp"

namespace pigeonhole {

namespace {

// Sorted sliding window over one parameter.
class SortedWindow {
public:
  void insert(double v) { values_.insert(std::upper_bound(values_.begin(), values_.end(), v), v); }
  void erase(double v) { values_.erase(std::lower_bound(values_.begin(), values_.end(), v)); }
  const std::vector<double>& values() const { return values_; }

private:
  std::vector<double> values_;
};

double w2_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<std::int64_t>(a.size()), m = static_cast<std::int64_t>(b.size());
  double total = 0.0;
  if (n == m) {
    for (std::int64_t k = 0; k < n; ++k) total += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(total / static_cast<double>(n));
  }
  // Breakpoints measured in units of 1/(n m): a steps at k*m, b at l*n.
  std::int64_t i = 0, j = 0, pos = 0;
  while (i < n && j < m) {
    const std::int64_t next_a = (i + 1) * m, next_b = (j + 1) * n;
    const std::int64_t next = std::min(next_a, next_b);
    const double d = a[i] - b[j];
    total += d * d * static_cast<double>(next - pos);
    pos = next;
    if (next == next_a) ++i;
    if (next == next_b) ++j;
  }
  return std::sqrt(total / (static_cast<double>(n) * static_cast<double>(m)));
}

// a_(ceil(u_k n)) for u_k = (2k - 1) / (2G), in exact integer arithmetic.
std::size_t grid_index(std::int64_t k, std::int64_t G, std::int64_t n) {
  const std::int64_t num = (2 * k - 1) * n;
  const std::int64_t idx = (num + 2 * G - 1) / (2 * G);
  return static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 1, n) - 1);
}

}  // namespace

MarginalSamples MarginalSamples::from(std::string label, std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("marginal '" + label + "' has no samples");
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("marginal '" + label + "' has non-finite samples");
  std::sort(values.begin(), values.end());
  return {std::move(label), std::move(values)};
}

double empirical_quantile(const MarginalSamples& s, double u) {
  if (s.values.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(u > 0.0 && u <= 1.0)) throw InvalidArgument("quantile level must lie in (0, 1]");
  const auto n = static_cast<double>(s.size());
  const auto idx = static_cast<std::size_t>(std::ceil(u * n));
  return s.values[std::clamp<std::size_t>(idx, 1, s.size()) - 1];
}

double w2_empirical(const MarginalSamples& a, const MarginalSamples& b) {
  if (a.values.empty() || b.values.empty()) throw InvalidArgument("W2 needs non-empty samples");
  return w2_sorted(a.values, b.values);
}

MarginalSamples w2_barycenter(std::span<const MarginalSamples> replicates, int grid_size) {
  if (replicates.empty()) throw InvalidArgument("barycenter needs at least one replicate");
  if (grid_size < 1) throw InvalidArgument("grid size must be >= 1");
  for (const auto& r : replicates)
    if (r.values.empty()) throw InvalidArgument("barycenter replicate '" + r.label + "' is empty");
  std::vector<double> out(grid_size, 0.0);
  const double weight = 1.0 / static_cast<double>(replicates.size());
  for (const auto& r : replicates) {
    const auto n = static_cast<std::int64_t>(r.size());
    for (int k = 1; k <= grid_size; ++k) out[k - 1] += weight * r.values[grid_index(k, grid_size, n)];
  }
  // Averages of non-decreasing sequences are non-decreasing up to rounding.
  std::sort(out.begin(), out.end());
  return {replicates.front().label, std::move(out)};
}

std::vector<std::string> parameter_names(int p) {
  std::vector<std::string> names;
  for (int k = 1; k <= p; ++k) names.push_back("b_" + std::to_string(k));
  names.insert(names.end(), {"sigma2_alpha", "sigma2_beta", "sigma2_e"});
  return names;
}

Vector reported_values(const Theta& theta) {
  Vector v(theta.dim());
  v.head(theta.p()) = theta.b;
  v[theta.p()] = theta.sigma2_alpha();
  v[theta.p() + 1] = theta.sigma2_beta();
  v[theta.p() + 2] = theta.sigma2_e();
  return v;
}

std::vector<MarginalSamples> chain_marginals(const Chain& chain, std::size_t begin, std::size_t end) {
  end = std::min(end, chain.size());
  if (begin >= end) throw InvalidArgument("empty sample range");
  const int p = chain.samples[begin].p();
  const auto names = parameter_names(p);
  std::vector<std::vector<double>> cols(names.size());
  for (std::size_t k = begin; k < end; ++k) {
    const Vector v = reported_values(chain.samples[k]);
    for (std::size_t q = 0; q < names.size(); ++q) cols[q].push_back(v[q]);
  }
  std::vector<MarginalSamples> out;
  for (std::size_t q = 0; q < names.size(); ++q) out.push_back(MarginalSamples::from(names[q], std::move(cols[q])));
  return out;
}

std::vector<ParamSummary> summarize(const Chain& chain) {
  if (chain.size() < 2) throw InvalidArgument("summary needs at least 2 samples, chain has " +
                                              std::to_string(chain.size()));
  const int p = chain.samples.front().p();
  const auto names = parameter_names(p);
  const auto d = static_cast<Eigen::Index>(names.size());
  Vector mean = Vector::Zero(d);
  for (const auto& s : chain.samples) mean += reported_values(s);
  mean /= static_cast<double>(chain.size());
  Vector ss = Vector::Zero(d);
  for (const auto& s : chain.samples) ss += (reported_values(s) - mean).array().square().matrix();
  std::vector<ParamSummary> out;
  for (Eigen::Index q = 0; q < d; ++q)
    out.push_back({names[q], mean[q], std::sqrt(ss[q] / static_cast<double>(chain.size() - 1))});
  return out;
}

std::vector<TracePoint> convergence_trace(const Chain& chain, std::span<const MarginalSamples> benchmark,
                                          int window) {
  if (chain.timestamps.size() != chain.samples.size()) throw InvalidArgument("chain has no timestamps");
  if (window < 1) throw InvalidArgument("trace window must be >= 1");
  if (chain.size() == 0) return {};
  const auto P = static_cast<std::size_t>(chain.samples.front().dim());
  if (benchmark.size() != P) throw InvalidArgument("benchmark needs one marginal per parameter");
  for (const auto& b : benchmark)
    if (b.values.empty()) throw InvalidArgument("benchmark marginal '" + b.label + "' is empty");

  std::vector<Vector> values;
  values.reserve(chain.size());
  for (const auto& s : chain.samples) values.push_back(reported_values(s));

  std::vector<SortedWindow> windows(P);
  std::vector<TracePoint> trace;
  for (std::size_t t = 1; t <= chain.size(); ++t) {
    for (std::size_t q = 0; q < P; ++q) {
      windows[q].insert(values[t - 1][q]);
      if (t > static_cast<std::size_t>(window)) windows[q].erase(values[t - 1 - window][q]);
    }
    if (t < 3) continue;
    TracePoint point{static_cast<std::int64_t>(t), chain.timestamps[t - 1], std::vector<double>(P)};
    for (std::size_t q = 0; q < P; ++q) point.w2[q] = w2_sorted(windows[q].values(), benchmark[q].values);
    trace.push_back(std::move(point));
  }
  return trace;
}

void write_summary_csv(std::ostream& out, std::span<const ParamSummary> summary) {
  out << "param,stat,value\n";
  out.precision(17);
  for (const auto& s : summary) {
    out << s.param << ",mean," << s.mean << '\n';
    out << s.param << ",sd," << s.sd << '\n';
  }
}

void write_trace_csv(std::ostream& out, std::span<const TracePoint> trace, const std::vector<std::string>& names) {
  out << "elapsed_s,param,w2\n";
  out.precision(17);
  for (const auto& point : trace) {
    if (point.w2.size() != names.size()) throw InvalidArgument("trace point does not match parameter names");
    for (std::size_t q = 0; q < names.size(); ++q) out << point.elapsed_s << ',' << names[q] << ',' << point.w2[q] << '\n';
  }
}

}  // namespace pigeonhole
