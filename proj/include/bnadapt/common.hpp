#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace bnadapt {

// Thrown on any contract violation: bad shapes, bad files, bad config values.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

template <class... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <class... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(msg(std::forward<Args>(args)...));
}

}  // namespace bnadapt
