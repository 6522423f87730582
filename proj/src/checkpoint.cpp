#include "metadmoe/io.hpp"
#include "metadmoe/runner.hpp"

#include <stdexcept>

namespace metadmoe {

using nlohmann::json;

std::uint64_t Checkpoint::digest() const {
  Fnv1a h;
  for (const auto& [name, store] : stores) {
    h.update(name);
    const std::uint64_t d = store.digest();
    h.update(&d, sizeof(d));
  }
  return h.value();
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json arrays = json::array();
  int blob = 0;
  for (const auto& [store_name, store] : stores) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      const Matrix<Real>& m = store.at(i);
      const std::string file = "blob_" + std::to_string(blob++) + ".bin";
      // Column-major, as Eigen stores it.
      io::write_bytes(dir / file, m.data(), sizeof(Real) * static_cast<std::size_t>(m.size()));
      arrays.push_back({{"store", store_name},
                        {"name", store.name(i)},
                        {"rows", m.rows()},
                        {"cols", m.cols()},
                        {"file", file}});
    }
    if (store.size() == 0) arrays.push_back({{"store", store_name}, {"empty", true}});
  }
  const json manifest{{"format", "metadmoe-checkpoint-1"},
                      {"scalar", "float32"},
                      {"digest", hex_digest(digest())},
                      {"meta", meta},
                      {"arrays", arrays}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  const json manifest = json::parse(io::read_text(dir / "manifest.json"));
  if (manifest.at("format") != "metadmoe-checkpoint-1") {
    throw std::runtime_error("unsupported checkpoint format in " + dir.string());
  }
  Checkpoint ck;
  ck.meta = manifest.at("meta");
  for (const auto& a : manifest.at("arrays")) {
    ParamStore<Real>& store = ck.stores[a.at("store").get<std::string>()];
    if (a.contains("empty")) continue;
    const auto rows = a.at("rows").get<Index>();
    const auto cols = a.at("cols").get<Index>();
    const std::vector<Real> values = io::read_array<Real>(dir / a.at("file").get<std::string>());
    if (static_cast<Index>(values.size()) != rows * cols) {
      throw std::runtime_error("checkpoint blob size mismatch for " + a.at("name").get<std::string>());
    }
    store.add(a.at("name").get<std::string>(), Eigen::Map<const Matrix<Real>>(values.data(), rows, cols));
  }
  if (hex_digest(ck.digest()) != manifest.at("digest").get<std::string>()) {
    throw std::runtime_error("checkpoint digest mismatch in " + dir.string());
  }
  return ck;
}

Checkpoint& put_student(Checkpoint& ck, const std::string& prefix, const StudentParams<Real>& s) {
  ck.stores[prefix + ".extractor"] = s.extractor;
  ck.stores[prefix + ".classifier"] = s.classifier;
  ck.stores[prefix + ".norm_stats"] = s.norm_stats;
  return ck;
}

StudentParams<Real> get_student(const Checkpoint& ck, const std::string& prefix) {
  auto find = [&](const std::string& part) -> const ParamStore<Real>& {
    auto it = ck.stores.find(prefix + "." + part);
    if (it == ck.stores.end()) throw std::runtime_error("checkpoint has no " + prefix + "." + part);
    return it->second;
  };
  return {find("extractor"), find("classifier"), find("norm_stats")};
}

}  // namespace metadmoe
