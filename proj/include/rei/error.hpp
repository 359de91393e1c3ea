#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rei {

enum class Errc {
  missing_file,
  size_mismatch,
  bad_manifest_field,
  dimension_mismatch,
  bad_range,
  shape_mismatch,
  zero_vector,
  empty_dataset,
  diverged_loss,
  too_few_vectors,
  model_mismatch,
  empty_group,
  plastic_spread_zero,
  short_log,
  config_invalid,
  unknown_scenario,
  io_error,
  format_error,
};

// Process exit classes. 0 is success.
enum class ExitClass : int {
  ok = 0,
  config = 2,
  io = 3,
  model_mismatch = 4,
  numeric = 5,
  data = 6,
};

std::string_view errc_name(Errc code) noexcept;
ExitClass exit_class(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace rei
