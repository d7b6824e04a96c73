#include "umind/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace umind::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "umind-checkpoint";
constexpr int kFormatVersion = 1;

std::uint32_t to_little(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) |
           ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return bits;
}

}  // namespace

const nn::Matrix& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.value;
  }
  throw Error(ErrorCode::kCheckpointFormat, "checkpoint has no array " + name);
}

void write_f32(const fs::path& file, const double* data, std::size_t count) {
  std::vector<std::uint32_t> buf(count);
  for (std::size_t i = 0; i < count; ++i) {
    buf[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kInputMissing,
          "cannot open for writing: " + file.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
  require(static_cast<bool>(out), ErrorCode::kInternal, "write failed: " + file.string());
}

std::vector<double> read_f32(const fs::path& file, std::size_t expected,
                             ErrorCode on_mismatch) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kInputMissing,
          "cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes != expected * sizeof(float)) {
    throw Error(on_mismatch, file.string() + " holds " + std::to_string(bytes) +
                                 " bytes, expected " +
                                 std::to_string(expected * sizeof(float)));
  }
  std::vector<std::uint32_t> buf(expected);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    out[i] = static_cast<double>(std::bit_cast<float>(to_little(buf[i])));
  }
  return out;
}

void write(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  json meta;
  meta["format"] = kFormat;
  meta["version"] = kFormatVersion;
  meta["kind"] = ckpt.kind;
  meta["meta"] = ckpt.metadata_json.empty() ? json::object()
                                            : json::parse(ckpt.metadata_json);
  meta["arrays"] = json::array();
  for (const auto& a : ckpt.arrays) {
    const std::string file = a.name + ".f32";
    write_f32(dir / file, a.value.data(), static_cast<std::size_t>(a.value.size()));
    meta["arrays"].push_back(
        {{"name", a.name}, {"file", file}, {"shape", {a.value.rows(), a.value.cols()}}});
  }
  std::ofstream out(dir / "metadata.json", std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kInputMissing,
          "cannot write checkpoint metadata in " + dir.string());
  out << meta.dump(2) << '\n';
}

Checkpoint read(const fs::path& dir) {
  const fs::path meta_path = dir / "metadata.json";
  require(fs::exists(meta_path), ErrorCode::kInputMissing,
          "no checkpoint metadata at " + meta_path.string());
  json meta;
  try {
    std::ifstream in(meta_path);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("metadata: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    require(meta.at("format") == kFormat && meta.at("version") == kFormatVersion,
            ErrorCode::kCheckpointFormat, "unrecognized checkpoint format");
    ckpt.kind = meta.at("kind").get<std::string>();
    ckpt.metadata_json = meta.at("meta").dump();
    for (const auto& entry : meta.at("arrays")) {
      const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
      const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
      require(rows >= 0 && cols >= 0, ErrorCode::kCheckpointFormat, "negative shape");
      const auto values = read_f32(dir / entry.at("file").get<std::string>(),
                                   static_cast<std::size_t>(rows * cols),
                                   ErrorCode::kCheckpointFormat);
      nn::Matrix m(rows, cols);
      std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
      ckpt.arrays.push_back({entry.at("name").get<std::string>(), std::move(m)});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("metadata: ") + e.what());
  }
  return ckpt;
}

}  // namespace umind::checkpoint
