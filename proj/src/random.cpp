#include "fasn/random.hpp"

#include <sstream>

#include "fasn/errors.hpp"

namespace fasn {

std::string Random::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Random::restore(const std::string& text) {
  std::istringstream in(text);
  std::mt19937_64 engine;
  in >> engine;
  if (in.fail()) throw FormatError("malformed random generator state");
  engine_ = engine;
}

}  // namespace fasn
