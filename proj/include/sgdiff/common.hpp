#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sgdiff {

// Error taxonomy used by the CLI exit-code contract:
//   config_error  -> exit 2 (bad configuration or input)
//   numeric_error -> exit 3 (non-finite values, diverged training)
// Plain std::runtime_error marks programming/contract errors.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, T&& v, Rest&&... rest) {
  os << std::forward<T>(v);
  format_into(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string msg_cat(Args&&... args) {
  std::ostringstream os;
  detail::format_into(os, std::forward<Args>(args)...);
  return os.str();
}

#define SG_CHECK(cond, ...)                                               \
  do {                                                                    \
    if (!(cond)) throw std::runtime_error(::sgdiff::msg_cat(__VA_ARGS__)); \
  } while (0)

#define SG_CHECK_CONFIG(cond, ...)                                         \
  do {                                                                     \
    if (!(cond)) throw ::sgdiff::config_error(::sgdiff::msg_cat(__VA_ARGS__)); \
  } while (0)

#define SG_CHECK_NUMERIC(cond, ...)                                         \
  do {                                                                      \
    if (!(cond)) throw ::sgdiff::numeric_error(::sgdiff::msg_cat(__VA_ARGS__)); \
  } while (0)

// Scalar precision is a runtime switch: arithmetic runs in double and results
// are rounded to float when f32 is active. Training defaults to f32; gradient
// checks force f64.
enum class Precision { f32, f64 };

inline Precision& active_precision() {
  static Precision p = Precision::f32;
  return p;
}

struct PrecisionGuard {
  Precision saved;
  explicit PrecisionGuard(Precision p) : saved(active_precision()) {
    active_precision() = p;
  }
  ~PrecisionGuard() { active_precision() = saved; }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;
};

inline double quantize(double v) {
  return active_precision() == Precision::f32
             ? static_cast<double>(static_cast<float>(v))
             : v;
}

}  // namespace sgdiff
