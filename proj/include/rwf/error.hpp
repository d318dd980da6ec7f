#pragma once

#include <stdexcept>
#include <string>

namespace rwf {

/// Failure raised by any stage of the pipeline. `stage()` names the module
/// that rejected its input (e.g. "mesh", "forward", "inverse").
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace rwf
