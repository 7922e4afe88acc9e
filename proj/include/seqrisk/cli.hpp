#pragma once

#include <ostream>

namespace seqrisk {

// Runs one seqrisk command. Failures print "error\t<code>\t<message>" to `err`
// and return nonzero.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace seqrisk
