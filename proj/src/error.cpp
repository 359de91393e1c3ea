#include "rei/error.hpp"

namespace rei {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::missing_file: return "MissingFile";
    case Errc::size_mismatch: return "SizeMismatch";
    case Errc::bad_manifest_field: return "BadManifestField";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::bad_range: return "BadRange";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::zero_vector: return "ZeroVector";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::diverged_loss: return "DivergedLoss";
    case Errc::too_few_vectors: return "TooFewVectors";
    case Errc::model_mismatch: return "ModelMismatch";
    case Errc::empty_group: return "EmptyGroup";
    case Errc::plastic_spread_zero: return "PlasticSpreadZero";
    case Errc::short_log: return "ShortLog";
    case Errc::config_invalid: return "ConfigInvalid";
    case Errc::unknown_scenario: return "UnknownScenario";
    case Errc::io_error: return "IoError";
    case Errc::format_error: return "FormatError";
  }
  return "Unknown";
}

ExitClass exit_class(Errc code) noexcept {
  switch (code) {
    case Errc::config_invalid:
    case Errc::unknown_scenario:
    case Errc::bad_range:
      return ExitClass::config;
    case Errc::missing_file:
    case Errc::size_mismatch:
    case Errc::bad_manifest_field:
    case Errc::io_error:
    case Errc::format_error:
      return ExitClass::io;
    case Errc::model_mismatch:
      return ExitClass::model_mismatch;
    case Errc::diverged_loss:
    case Errc::zero_vector:
    case Errc::plastic_spread_zero:
      return ExitClass::numeric;
    default:
      return ExitClass::data;
  }
}

}  // namespace rei
