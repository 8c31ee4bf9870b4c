#include "oocdm/dataset.hpp"

#include <fstream>

#include "nlohmann/json.hpp"

namespace oocdm {

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  nlohmann::json header = {{"schema", schema_to_json(ds.schema)},
                           {"env", ds.meta.env},
                           {"seed", ds.meta.seed},
                           {"policy", ds.meta.policy},
                           {"ood", ds.meta.ood},
                           {"noise_sigma", ds.meta.noise_sigma},
                           {"records", ds.records.size()}};
  out << header.dump() << "\n";
  for (const TransitionRecord& r : ds.records) {
    nlohmann::json jr = {{"counts", r.counts}, {"sa", r.sa}, {"sp", r.sp}};
    out << jr.dump() << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing dataset header: " + path);
  Dataset ds;
  try {
    nlohmann::json header = nlohmann::json::parse(line);
    ds.schema = schema_from_json(header.at("schema"));
    ds.meta.env = header.at("env").get<std::string>();
    ds.meta.seed = header.at("seed").get<std::uint64_t>();
    ds.meta.policy = header.at("policy").get<std::string>();
    ds.meta.ood = header.at("ood").get<bool>();
    ds.meta.noise_sigma = header.at("noise_sigma").get<double>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json jr = nlohmann::json::parse(line);
      TransitionRecord r;
      r.counts = jr.at("counts").get<std::vector<int>>();
      r.sa = jr.at("sa").get<std::vector<double>>();
      r.sp = jr.at("sp").get<std::vector<double>>();
      if (r.counts.size() != ds.schema.classes.size())
        throw DataError("record counts do not match the schema");
      ds.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset file " + path + ": " + e.what());
  }
  return ds;
}

Dataset load_dataset(const std::string& path, const OomdpSchema& expected) {
  Dataset ds = load_dataset(path);
  if (!(ds.schema == expected)) throw DataError("dataset schema mismatch: " + path);
  return ds;
}

}  // namespace oocdm
