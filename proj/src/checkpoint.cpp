#include <bit>
#include <fstream>

#include "mattn/config_io.hpp"
#include "mattn/model.hpp"

namespace mattn {

namespace {

constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian float64");

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& stem) {
  std::filesystem::path manifest = stem, payload = stem;
  manifest += ".json";
  payload += ".bin";

  Json j;
  j["format"] = "mattn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(state.config);
  j["seed"] = state.config.seed;
  j["payload"] = payload.filename().string();
  j["dtype"] = "float64-le";
  auto tensors = Json::array();
  std::size_t offset = 0;
  std::ofstream bin(payload, std::ios::binary);
  if (!bin) throw Error("cannot write " + payload.string());
  for (const auto& [name, t] : state.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    const auto d = t.data();
    bin.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    offset += d.size();
  }
  j["tensors"] = tensors;
  j["numel"] = offset;
  if (!bin) throw Error("failed writing " + payload.string());
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot read " + manifest.string());
  const Json j = Json::parse(in);
  if (j.value("format", "") != "mattn-checkpoint") throw ConfigError(manifest.string() + " is not a checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
  }
  ModelConfig cfg = model_config_from_json(j.at("config"));
  cfg.seed = j.at("seed").get<std::uint64_t>();
  ModelState state = build(cfg);

  const auto payload = manifest.parent_path() / j.at("payload").get<std::string>();
  std::ifstream bin(payload, std::ios::binary);
  if (!bin) throw Error("cannot read " + payload.string());
  std::vector<double> all(j.at("numel").get<std::size_t>());
  bin.read(reinterpret_cast<char*>(all.data()), static_cast<std::streamsize>(all.size() * sizeof(double)));
  if (!bin) throw Error("truncated checkpoint payload " + payload.string());

  const auto& tensors = j.at("tensors");
  if (tensors.size() != state.params.size()) throw DimensionError("checkpoint tensor count does not match config");
  for (const auto& entry : tensors) {
    Tensor& t = state.at(entry.at("name").get<std::string>());
    if (entry.at("shape").get<Shape>() != t.shape()) {
      throw DimensionError("checkpoint shape mismatch for " + entry.at("name").get<std::string>());
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    auto dst = t.mutable_data();
    if (offset + dst.size() > all.size()) throw DimensionError("checkpoint payload too short");
    std::copy_n(all.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
  }
  return state;
}

}  // namespace mattn
