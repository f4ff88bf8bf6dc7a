#include "cgconf/numeric/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cgconf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian doubles");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "cgconf-checkpoint";
  manifest["dtype"] = "float64-le";
  manifest["seed"] = ckpt.seed;
  manifest["step"] = ckpt.step;
  manifest["rng"] = {{"name", Rng::kName}, {"state", ckpt.rng_state}};
  manifest["metadata"] = ckpt.metadata;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ckpt.params.entries())
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  manifest["parameters"] = std::move(params);
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& p : ckpt.params.entries())
    out.append(reinterpret_cast<const char*>(p.value.data()),
               sizeof(double) * static_cast<std::size_t>(p.value.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw std::runtime_error("not a checkpoint (bad magic)");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto len = take<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw std::runtime_error("checkpoint truncated");
  const nlohmann::json manifest = nlohmann::json::parse(bytes.substr(pos, len));
  pos += len;

  if (manifest.at("dtype") != "float64-le")
    throw std::runtime_error("unsupported checkpoint dtype");
  Checkpoint ckpt;
  ckpt.seed = manifest.at("seed").get<std::uint64_t>();
  ckpt.step = manifest.at("step").get<std::uint64_t>();
  ckpt.rng_state = manifest.at("rng").at("state").get<std::string>();
  ckpt.metadata = manifest.at("metadata");
  for (const auto& p : manifest.at("parameters")) {
    const auto rows = p.at("rows").get<Eigen::Index>();
    const auto cols = p.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd value(rows, cols);
    const std::size_t n = sizeof(double) * static_cast<std::size_t>(rows * cols);
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint payload truncated");
    std::memcpy(value.data(), bytes.data() + pos, n);
    pos += n;
    ckpt.params.add(p.at("name").get<std::string>(), std::move(value));
  }
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace cgconf
