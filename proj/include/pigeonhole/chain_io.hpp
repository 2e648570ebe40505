#ifndef PIGEONHOLE_CHAIN_IO_HPP
#define PIGEONHOLE_CHAIN_IO_HPP

#include <iosfwd>
#include <string>

#include "pigeonhole/samplers.hpp"

namespace pigeonhole {

/// `iter,elapsed_s,b_1..b_p,sigma2_alpha,sigma2_beta,sigma2_e` with 17
/// significant digits. Canonical mode writes elapsed_s = 0 so that output
/// depends on the seed only.
void write_chain_csv(std::ostream& out, const Chain& chain, bool canonical = false);
void write_chain_csv(const std::string& path, const Chain& chain, bool canonical = false);

/// Parse a chain file written by write_chain_csv. Meta is left default.
Chain read_chain_csv(const std::string& path);
Chain read_chain_csv(std::istream& in);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_CHAIN_IO_HPP
