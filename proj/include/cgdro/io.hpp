#pragma once

#include "cgdro/data_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgdro {

using Json = nlohmann::json;

/// Reads `source,y,x1,...,xd`. Rows are grouped by source id, returned in
/// ascending id order. Throws IoError or ParseError (with line numbers).
std::vector<LabeledDataset> read_sources_csv(std::istream& in, const std::string& name = "<stream>");
std::vector<LabeledDataset> load_sources(const std::filesystem::path& path);

/// Reads `x1,...,xd`.
UnlabeledDataset read_target_csv(std::istream& in, const std::string& name = "<stream>");
UnlabeledDataset load_target(const std::filesystem::path& path);

/// Shortest round-trip decimal form of v.
std::string format_double(double v);

void write_sources_csv(std::ostream& out, const std::vector<LabeledDataset>& sources);
void write_target_csv(std::ostream& out, const UnlabeledDataset& target);
void save_sources(const std::filesystem::path& path, const std::vector<LabeledDataset>& sources);
void save_target(const std::filesystem::path& path, const UnlabeledDataset& target);

Json to_json(const FitResult& fit);
Json to_json(const InferenceResult& res);
FitResult fit_result_from_json(const Json& j);
InferenceResult inference_result_from_json(const Json& j);

Json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const Json& j);

/// Overwrites fields of cfg named in j; unknown keys and wrong types throw
/// ValidationError.
void apply_config(const Json& j, ProblemConfig& cfg);

/// JSON (.json) or TOML (any other extension) file mirroring ProblemConfig
/// field names, layered over `base`.
ProblemConfig load_config(const std::filesystem::path& path, ProblemConfig base = {});

}  // namespace cgdro
