#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mlcrnn/tensor.hpp"
#include "mlcrnn/training.hpp"

namespace mlcrnn {

/// Everything a CLI run needs besides data paths.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Precision precision = Precision::kDouble;
  std::uint64_t seed = 1;
};

/// Parses the JSON config format. Missing keys keep their defaults; unknown
/// keys and ill-typed values raise ParseError naming the key.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

}  // namespace mlcrnn
