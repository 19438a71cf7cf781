#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecorec/domain.hpp"

namespace ecorec {

struct MeterInfo {
  std::string meter_id;
  std::string name;
};

struct ZoneInfo {
  std::string zone_id;
  std::string room_name;
};

struct SceneInfo {
  std::string scene_id;
  std::string zone_id;
  std::string name;
};

struct DeviceInfo {
  std::string device_id;
  std::string zone_id;
  std::string name;
  std::string meter_id;
};

// Home -> meters (one per circuit), zones (rooms), scenes and devices.
struct HomeTopology {
  std::string home_id;
  std::vector<MeterInfo> meters;
  std::vector<ZoneInfo> zones;
  std::vector<SceneInfo> scenes;
  std::vector<DeviceInfo> devices;

  // Empty when every reference resolves and zone ids are unique.
  std::vector<std::string> validate() const;

  // Fall back to the raw id when the topology does not know the entry.
  std::string room_name(const std::string& zone_id) const;
  std::string subject_name(const std::string& subject_id) const;
};

// All homes known to a deployment, keyed by home_id.
using TopologyMap = std::map<std::string, HomeTopology>;

void to_json(nlohmann::json& j, const HomeTopology& t);
void from_json(const nlohmann::json& j, HomeTopology& t);

TopologyMap load_topologies(const std::string& path);
void save_topologies(const std::string& path, const TopologyMap& homes);

}  // namespace ecorec
