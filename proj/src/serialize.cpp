#include "mlcrnn/serialize.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace mlcrnn {

namespace {

constexpr std::string_view kMagic = "mlcrnn-params v1";

static_assert(std::endian::native == std::endian::little,
              "parameter files are written in little-endian byte order");

}  // namespace

void write_param_file(const std::filesystem::path& path, const ParamFile& file) {
  nlohmann::json header;
  header["precision"] = file.precision == Precision::kDouble ? "double" : "float";
  header["entries"] = nlohmann::json::array();
  std::size_t blob = 0;
  for (const auto& rec : file.records) {
    header["entries"].push_back({{"name", rec.name}, {"shape", rec.shape}, {"offset", blob}});
    blob += rec.bytes.size();
  }
  header["blob_bytes"] = blob;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << kMagic << ' ' << text.size() << '\n' << text;
  for (const auto& rec : file.records) {
    out.write(reinterpret_cast<const char*>(rec.bytes.data()),
              static_cast<std::streamsize>(rec.bytes.size()));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ParamFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open parameter file '" + path.string() + "'");
  std::string first;
  std::getline(in, first);
  if (first.rfind(kMagic, 0) != 0) {
    throw ParseError(path.string() + ": not a parameter file (bad magic line)");
  }
  std::size_t header_bytes = 0;
  {
    std::istringstream is(first.substr(kMagic.size()));
    if (!(is >> header_bytes)) throw ParseError(path.string() + ": missing header length");
  }
  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) throw ParseError(path.string() + ": truncated header");

  ParamFile file;
  std::vector<unsigned char> blob;
  try {
    const auto header = nlohmann::json::parse(text);
    const std::string precision = header.at("precision");
    if (precision == "double") {
      file.precision = Precision::kDouble;
    } else if (precision == "float") {
      file.precision = Precision::kSingle;
    } else {
      throw ParseError(path.string() + ": unknown precision '" + precision + "'");
    }
    const std::size_t blob_bytes = header.at("blob_bytes");
    blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (blob.size() != blob_bytes) {
      throw ParseError(path.string() + ": blob has " + std::to_string(blob.size()) +
                       " bytes, header declares " + std::to_string(blob_bytes));
    }
    const std::size_t scalar = file.precision == Precision::kDouble ? 8 : 4;
    const auto& entries = header.at("entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ParamRecord rec;
      rec.name = entries[i].at("name").get<std::string>();
      rec.shape = entries[i].at("shape").get<std::vector<std::size_t>>();
      rec.offset = entries[i].at("offset");
      const std::size_t end =
          i + 1 < entries.size() ? entries[i + 1].at("offset").get<std::size_t>() : blob_bytes;
      std::size_t count = 1;
      for (std::size_t d : rec.shape) count *= d;
      if (end < rec.offset || end > blob.size() || end - rec.offset != count * scalar) {
        throw ParseError(path.string() + ": block '" + rec.name + "' has inconsistent size");
      }
      rec.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(rec.offset),
                       blob.begin() + static_cast<std::ptrdiff_t>(end));
      file.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed header: " + e.what());
  }
  return file;
}

}  // namespace mlcrnn
