#pragma once

// Checkpoint files: a JSON header line {schema_version, kind, config, shapes}
// followed by one line per named parameter array.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ltg/autograd.hpp"

namespace ltg {

inline constexpr int kCheckpointSchemaVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& config, const nn::ParamStore& params);

/// Header only; validates schema_version and kind.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path,
                                      const std::string& expected_kind);

/// Loads values into a store built from the header's config. Names, order and
/// shapes must match the store exactly.
void load_checkpoint_params(const std::filesystem::path& path, nn::ParamStore& params);

}  // namespace ltg
