#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "qnet/distill.hpp"
#include "qnet/photonsim.hpp"

namespace qnet {

/// Network configuration document (JSON). Sections: network, source, users,
/// security, sim and the optional mux. Unknown keys are rejected.
struct NetworkConfig {
    int users = 0;
    int subnets = 0;
    SourceConfig source;
    StationMap stations;
    std::map<UserId, std::string> names;
    SecurityParams security;
    double duration_s = 10.0;
    std::uint64_t seed = 1;
    std::optional<std::int64_t> tau_c_ps;   ///< unset means "optimize"
    SimulationOptions sim;
};

/// Throws Error(InvalidConfig) with the offending path in the message.
NetworkConfig parse_config(const nlohmann::json& doc);
NetworkConfig load_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const NetworkConfig& config);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);

}  // namespace qnet
