#include "dolfin/rng.hpp"

#include <sstream>

#include "dolfin/error.hpp"

namespace dolfin {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_ << ' ' << normal_ << ' ' << uniform_;
  return out.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream in(text);
  in >> engine_ >> normal_ >> uniform_;
  if (!in) throw Error(ErrorKind::parse, "corrupt rng state");
}

}  // namespace dolfin
