#include "ltg/checkpoint.hpp"

#include <fstream>

namespace ltg {

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& config, const nn::ParamStore& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& e : params.entries())
      shapes.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
    nlohmann::json header = {{"schema_version", kCheckpointSchemaVersion},
                             {"kind", kind},
                             {"config", config},
                             {"shapes", shapes}};
    out << header.dump() << '\n';
    for (const auto& e : params.entries()) {
      std::vector<double> data(e.value.data(), e.value.data() + e.value.size());
      out << nlohmann::json{{"name", e.name}, {"data", data}}.dump() << '\n';
    }
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path,
                                      const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path.string() + ": empty checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  const int version = header.value("schema_version", -1);
  if (version != kCheckpointSchemaVersion)
    throw CheckpointError(path.string() + ": unsupported schema_version " + std::to_string(version));
  if (header.value("kind", std::string()) != expected_kind)
    throw CheckpointError(path.string() + ": expected a '" + expected_kind + "' checkpoint, found '" +
                          header.value("kind", std::string()) + "'");
  return header;
}

void load_checkpoint_params(const std::filesystem::path& path, nn::ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  const auto& shapes = header.at("shapes");
  auto& entries = params.entries();
  if (shapes.size() != entries.size())
    throw CheckpointError(path.string() + ": shape table has " + std::to_string(shapes.size()) +
                          " entries, model has " + std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& s = shapes[i];
    if (s.at("name").get<std::string>() != entries[i].name ||
        s.at("rows").get<long>() != entries[i].value.rows() ||
        s.at("cols").get<long>() != entries[i].value.cols())
      throw CheckpointError(path.string() + ": shape table mismatch at " + entries[i].name);
  }
  for (auto& e : entries) {
    if (!std::getline(in, line)) throw CheckpointError(path.string() + ": truncated at " + e.name);
    const auto rec = nlohmann::json::parse(line);
    if (rec.at("name").get<std::string>() != e.name)
      throw CheckpointError(path.string() + ": expected parameter " + e.name);
    const auto data = rec.at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(e.value.size()))
      throw CheckpointError(path.string() + ": wrong element count for " + e.name);
    std::copy(data.begin(), data.end(), e.value.data());
  }
}

}  // namespace ltg
