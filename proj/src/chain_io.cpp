#include "pigeonhole/chain_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pigeonhole/diagnostics.hpp"
#include "pigeonhole/error.hpp"

namespace pigeonhole {

void write_chain_csv(std::ostream& out, const Chain& chain, bool canonical) {
  const int p = chain.size() ? chain.samples.front().p() : 0;
  out << "iter,elapsed_s";
  for (const auto& name : parameter_names(p)) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (std::size_t k = 0; k < chain.size(); ++k) {
    out << chain.iterations[k] << ',' << (canonical ? 0.0 : chain.timestamps[k]);
    const Vector v = reported_values(chain.samples[k]);
    for (Eigen::Index q = 0; q < v.size(); ++q) out << ',' << v[q];
    out << '\n';
  }
}

void write_chain_csv(const std::string& path, const Chain& chain, bool canonical) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write chain to '" + path + "'");
  write_chain_csv(out, chain, canonical);
}

Chain read_chain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("chain file is empty", 1);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  const int p = static_cast<int>(header.size()) - 5;
  if (p < 1 || header[0] != "iter" || header[1] != "elapsed_s" || header != [&] {
        std::vector<std::string> expect{"iter", "elapsed_s"};
        for (const auto& n : parameter_names(p)) expect.push_back(n);
        return expect;
      }())
    throw ParseError("chain header must be iter,elapsed_s,b_1..b_p,sigma2_alpha,sigma2_beta,sigma2_e", 1);

  Chain chain;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
      } catch (const std::exception&) {
        throw ParseError("malformed number '" + field + "'", lineno);
      }
    }
    if (static_cast<int>(values.size()) != p + 5) throw ParseError("wrong number of fields", lineno);
    Theta theta;
    theta.b = Eigen::Map<const Vector>(values.data() + 2, p);
    for (int k = 0; k < 3; ++k)
      if (!(values[2 + p + k] > 0.0)) throw ParseError("variance must be positive", lineno);
    theta.eta_alpha = std::log(values[2 + p]);
    theta.eta_beta = std::log(values[3 + p]);
    theta.eta_e = std::log(values[4 + p]);
    chain.iterations.push_back(static_cast<std::int64_t>(values[0]));
    chain.timestamps.push_back(values[1]);
    chain.samples.push_back(std::move(theta));
  }
  return chain;
}

Chain read_chain_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open chain file '" + path + "'");
  return read_chain_csv(in);
}

}  // namespace pigeonhole
