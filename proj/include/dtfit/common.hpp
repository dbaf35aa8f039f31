#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dtfit {

// Error taxonomy: shape/dimension mismatches, math domain violations,
// contract violations (misuse of an API), and bad user-facing parameters.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

}  // namespace dtfit

#define DTFIT_CHECK(cond, ExType, ...)                              \
  do {                                                              \
    if (!(cond)) throw ExType(::dtfit::detail::concat(__VA_ARGS__)); \
  } while (0)
