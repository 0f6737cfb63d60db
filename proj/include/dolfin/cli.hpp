#pragma once

#include <iosfwd>

namespace dolfin {

/// Entry point of the dolfin command line: train, sample, eval, render,
/// convert and synth. Returns the process exit code (2 for usage errors).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dolfin
