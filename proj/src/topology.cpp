#include "ecorec/topology.hpp"

#include <fstream>
#include <set>

#include "ecorec/error.hpp"

namespace ecorec {

std::vector<std::string> HomeTopology::validate() const {
  std::vector<std::string> errors;
  std::set<std::string> zone_ids;
  for (const auto& z : zones) {
    if (!zone_ids.insert(z.zone_id).second) errors.push_back("duplicate zone_id " + z.zone_id);
  }
  std::set<std::string> meter_ids;
  for (const auto& m : meters) meter_ids.insert(m.meter_id);
  for (const auto& s : scenes) {
    if (!zone_ids.count(s.zone_id)) errors.push_back("scene " + s.scene_id + " references unknown zone " + s.zone_id);
  }
  for (const auto& d : devices) {
    if (!zone_ids.count(d.zone_id)) errors.push_back("device " + d.device_id + " references unknown zone " + d.zone_id);
    if (!meter_ids.count(d.meter_id)) {
      errors.push_back("device " + d.device_id + " references unknown meter " + d.meter_id);
    }
  }
  return errors;
}

std::string HomeTopology::room_name(const std::string& zone_id) const {
  for (const auto& z : zones) {
    if (z.zone_id == zone_id) return z.room_name;
  }
  return zone_id;
}

std::string HomeTopology::subject_name(const std::string& subject_id) const {
  for (const auto& d : devices) {
    if (d.device_id == subject_id) return d.name;
  }
  for (const auto& s : scenes) {
    if (s.scene_id == subject_id) return s.name;
  }
  return subject_id;
}

void to_json(nlohmann::json& j, const HomeTopology& t) {
  j = nlohmann::json{{"home_id", t.home_id}};
  auto& meters = j["meters"] = nlohmann::json::array();
  for (const auto& m : t.meters) meters.push_back({{"meter_id", m.meter_id}, {"name", m.name}});
  auto& zones = j["zones"] = nlohmann::json::array();
  for (const auto& z : t.zones) zones.push_back({{"zone_id", z.zone_id}, {"room_name", z.room_name}});
  auto& scenes = j["scenes"] = nlohmann::json::array();
  for (const auto& s : t.scenes) scenes.push_back({{"scene_id", s.scene_id}, {"zone_id", s.zone_id}, {"name", s.name}});
  auto& devices = j["devices"] = nlohmann::json::array();
  for (const auto& d : t.devices) {
    devices.push_back({{"device_id", d.device_id}, {"zone_id", d.zone_id}, {"name", d.name}, {"meter_id", d.meter_id}});
  }
}

void from_json(const nlohmann::json& j, HomeTopology& t) {
  t.home_id = j.at("home_id").get<std::string>();
  t.meters.clear();
  t.zones.clear();
  t.scenes.clear();
  t.devices.clear();
  for (const auto& m : j.value("meters", nlohmann::json::array())) {
    t.meters.push_back({m.at("meter_id").get<std::string>(), m.value("name", "")});
  }
  for (const auto& z : j.value("zones", nlohmann::json::array())) {
    t.zones.push_back({z.at("zone_id").get<std::string>(), z.value("room_name", "")});
  }
  for (const auto& s : j.value("scenes", nlohmann::json::array())) {
    t.scenes.push_back({s.at("scene_id").get<std::string>(), s.at("zone_id").get<std::string>(), s.value("name", "")});
  }
  for (const auto& d : j.value("devices", nlohmann::json::array())) {
    t.devices.push_back({d.at("device_id").get<std::string>(), d.at("zone_id").get<std::string>(), d.value("name", ""),
                         d.at("meter_id").get<std::string>()});
  }
}

TopologyMap load_topologies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open topology file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse", "topology file " + path + ": " + e.what());
  }
  TopologyMap homes;
  for (const auto& entry : j.at("homes")) {
    auto t = entry.get<HomeTopology>();
    if (auto errors = t.validate(); !errors.empty()) {
      throw Error("invalid_topology", "home " + t.home_id + ": " + errors.front());
    }
    homes.emplace(t.home_id, std::move(t));
  }
  return homes;
}

void save_topologies(const std::string& path, const TopologyMap& homes) {
  nlohmann::json j;
  auto& arr = j["homes"] = nlohmann::json::array();
  for (const auto& [id, t] : homes) arr.push_back(t);
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write topology file " + path);
  out << j.dump(1) << '\n';
}

}  // namespace ecorec
