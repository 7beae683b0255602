#pragma once

#include <cstddef>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mlcrnn/error.hpp"
#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

/// One named block of a parameter file.
struct ParamRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // byte offset into the blob
  std::vector<unsigned char> bytes;
};

struct ParamFile {
  Precision precision = Precision::kDouble;
  std::vector<ParamRecord> records;
};

/// Layout: a line "mlcrnn-params v1 <header bytes>", a JSON header listing
/// precision and (name, shape, offset) per block, then the little-endian blob.
void write_param_file(const std::filesystem::path& path, const ParamFile& file);
ParamFile read_param_file(const std::filesystem::path& path);

/// Saves any parameter bundle exposing for_each(name, shape, span).
template <typename T, typename Params>
void save_params(const std::filesystem::path& path, const Params& params) {
  ParamFile file;
  file.precision = precision_of<T>();
  std::size_t offset = 0;
  params.for_each([&](const std::string& name, const std::vector<std::size_t>& shape, auto values) {
    ParamRecord rec{name, shape, offset, {}};
    rec.bytes.resize(values.size() * sizeof(T));
    if (!values.empty()) std::memcpy(rec.bytes.data(), values.data(), rec.bytes.size());
    offset += rec.bytes.size();
    file.records.push_back(std::move(rec));
  });
  write_param_file(path, file);
}

/// Fills an already-shaped bundle; names, shapes and precision must match.
template <typename T, typename Params>
void load_params_into(const std::filesystem::path& path, Params& params) {
  const ParamFile file = read_param_file(path);
  if (file.precision != precision_of<T>()) {
    throw ParseError(path.string() + ": parameter file precision does not match the model");
  }
  std::size_t index = 0;
  params.for_each([&](const std::string& name, const std::vector<std::size_t>& shape, auto values) {
    if (index >= file.records.size()) {
      throw ParseError(path.string() + ": missing parameter block '" + name + "'");
    }
    const ParamRecord& rec = file.records[index++];
    if (rec.name != name || rec.shape != shape || rec.bytes.size() != values.size() * sizeof(T)) {
      throw ParseError(path.string() + ": block '" + rec.name + "' does not match expected '" + name +
                       "'");
    }
    if (!values.empty()) std::memcpy(values.data(), rec.bytes.data(), rec.bytes.size());
  });
  if (index != file.records.size()) {
    throw ParseError(path.string() + ": file has " + std::to_string(file.records.size() - index) +
                     " unexpected extra blocks");
  }
}

}  // namespace mlcrnn
