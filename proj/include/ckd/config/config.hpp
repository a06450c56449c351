#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "ckd/bounds/bounds.hpp"
#include "ckd/cascade/cascade.hpp"
#include "ckd/data/data.hpp"
#include "ckd/pipeline/pipeline.hpp"

namespace ckd::config {

using Json = nlohmann::ordered_json;

/// Reads a JSON config file. Parse errors become ConfigError("<file>", ...).
Json load(const std::filesystem::path& path);

/// Section parsers. Every object is strict: unknown keys are a ConfigError
/// naming their dotted path, as are wrong types and out-of-range values.
/// Missing keys keep their defaults unless noted.
data::CorpusConfig parse_corpus(const Json& j, const std::string& path = "corpus");
pipeline::PipelineConfig parse_pipeline(const Json& j, const std::string& path = "pipeline");
bounds::BoundParams parse_bound_params(const Json& j, const std::string& path = "bounds.params");
bounds::SweepSpec parse_sweep(const Json& j, const std::string& path = "bounds");
std::vector<model::Tier> parse_tiers(const Json& j, const std::string& path);

/// Resolved snapshots, for manifests. parse(snapshot(x)) == x.
Json snapshot(const data::CorpusConfig& c);
Json snapshot(const pipeline::PipelineConfig& p);
Json snapshot(const bounds::BoundParams& p);

/// Returns j[key] after checking it exists; ConfigError names path.key.
const Json& require(const Json& j, const std::string& key, const std::string& path);

/// Throws ConfigError for any key of `j` not in `allowed`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& path);

}  // namespace ckd::config
