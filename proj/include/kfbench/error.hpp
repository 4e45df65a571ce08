#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kfb {

enum class Errc {
  NotPositiveDefinite,
  ShapeMismatch,
  NonFiniteLoss,
  NonFiniteEstimate,
  NonFinitePrior,
  NonFiniteState,
  DegenerateWeights,
  Diverged,
  DivergedSimulation,
  RankDeficientH,
  SingularUpdate,
  IoError,
  SchemaError,
  ConfigError,
  EmptyInput,
  InvalidArgument,
};

std::string_view errc_name(Errc code);

/// True for failures that originate in floating-point computation rather than
/// in malformed input.
bool is_numeric(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace kfb
