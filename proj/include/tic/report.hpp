#pragma once

#include <string>

#include "json.hpp"
#include "tic/equilibrium.hpp"
#include "tic/hjbx.hpp"
#include "tic/model.hpp"
#include "tic/regulator.hpp"
#include "tic/sde.hpp"

namespace tic {

// Provenance block embedded in every report.
nlohmann::json run_header(const std::string& command, const std::string& config_hash, std::uint64_t seed);

nlohmann::json to_json(const ValidationReport& r);
nlohmann::json to_json(const Estimate& e);
nlohmann::json to_json(const ResidualReport& r);
nlohmann::json to_json(const StandardResidualReport& r);
nlohmann::json to_json(const ConvergenceLog& log);
nlohmann::json to_json(const EquilibriumReport& r);
nlohmann::json to_json(const GridSpec& g);

// Pretty-printed with a trailing newline; throws InputError when the file
// cannot be written.
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace tic
