#include <json.hpp>

#include "gacd/scenario.hpp"

namespace gacd {

using ojson = nlohmann::ordered_json;

namespace {

constexpr int kScenarioVersion = 1;

const ojson& require(const ojson& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ScenarioParseError("schema error at " + path + ": expected object");
  auto it = obj.find(key);
  if (it == obj.end())
    throw ScenarioParseError("schema error at " + path + ": missing field \"" + key + "\"");
  return *it;
}

std::string require_string(const ojson& obj, const std::string& key, const std::string& path) {
  const ojson& v = require(obj, key, path);
  if (!v.is_string())
    throw ScenarioParseError("schema error at " + path + "/" + key + ": field \"" + key +
                             "\" must be a string");
  return v.get<std::string>();
}

const ojson& require_array(const ojson& obj, const std::string& key, const std::string& path) {
  const ojson& v = require(obj, key, path);
  if (!v.is_array())
    throw ScenarioParseError("schema error at " + path + "/" + key + ": field \"" + key +
                             "\" must be an array");
  return v;
}

template <typename F>
auto convert_enum(F&& f, const std::string& value, const std::string& where) {
  try {
    return f(value);
  } catch (const std::invalid_argument& e) {
    throw ScenarioParseError("schema error at " + where + ": " + e.what());
  }
}

ojson parse_json(const std::string& text) {
  try {
    return ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw ScenarioParseError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace

std::string serialize_scenario(const Scenario& s) {
  ojson j;
  j["version"] = kScenarioVersion;
  j["subnets"] = ojson::array();
  for (const auto& sub : s.subnets)
    j["subnets"].push_back({{"id", sub.id}, {"subnet_type", to_string(sub.type)}, {"hosts", sub.hosts}});
  j["hosts"] = ojson::array();
  for (const auto& h : s.hosts)
    j["hosts"].push_back({{"id", h.id}, {"host_type", to_string(h.type)}, {"subnet", h.subnet}});
  j["acl_edges"] = ojson::array();
  for (const auto& e : s.acl_edges) j["acl_edges"].push_back({{"src", e.src}, {"dst", e.dst}});
  j["roles"] = {{"enterprise_subnet", s.enterprise_subnet},
                {"operational_subnet", s.operational_subnet},
                {"operational_server", s.operational_server},
                {"red_start_host", s.red_start_host},
                {"blue_host", s.blue_host},
                {"green_host", s.green_host}};
  return j.dump(2) + "\n";
}

Scenario parse_scenario(const std::string& text) {
  const ojson j = parse_json(text);
  const ojson& version = require(j, "version", "");
  if (!version.is_number_integer() || version.get<int>() != kScenarioVersion)
    throw ScenarioParseError("schema error at /version: unsupported version");

  Scenario s;
  const ojson& subnets = require_array(j, "subnets", "");
  for (std::size_t i = 0; i < subnets.size(); ++i) {
    const std::string path = "/subnets/" + std::to_string(i);
    Subnet sub;
    sub.id = require_string(subnets[i], "id", path);
    sub.type = convert_enum(subnet_type_from_string, require_string(subnets[i], "subnet_type", path),
                            path + "/subnet_type");
    const ojson& members = require_array(subnets[i], "hosts", path);
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (!members[k].is_string())
        throw ScenarioParseError("schema error at " + path + "/hosts/" + std::to_string(k) +
                                 ": host ids must be strings");
      sub.hosts.push_back(members[k].get<std::string>());
    }
    s.subnets.push_back(std::move(sub));
  }

  const ojson& hosts = require_array(j, "hosts", "");
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    const std::string path = "/hosts/" + std::to_string(i);
    Host h;
    h.id = require_string(hosts[i], "id", path);
    h.type = convert_enum(host_type_from_string, require_string(hosts[i], "host_type", path),
                          path + "/host_type");
    h.subnet = require_string(hosts[i], "subnet", path);
    s.hosts.push_back(std::move(h));
  }

  const ojson& edges = require_array(j, "acl_edges", "");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string path = "/acl_edges/" + std::to_string(i);
    s.acl_edges.push_back({require_string(edges[i], "src", path), require_string(edges[i], "dst", path)});
  }

  const ojson& roles = require(j, "roles", "");
  s.enterprise_subnet = require_string(roles, "enterprise_subnet", "/roles");
  s.operational_subnet = require_string(roles, "operational_subnet", "/roles");
  s.operational_server = require_string(roles, "operational_server", "/roles");
  s.red_start_host = require_string(roles, "red_start_host", "/roles");
  s.blue_host = require_string(roles, "blue_host", "/roles");
  s.green_host = require_string(roles, "green_host", "/roles");

  if (auto v = validate(s); !v.empty()) {
    std::string msg = "invariant violation:";
    for (const auto& x : v) msg += " [" + x + "]";
    throw ScenarioParseError(msg);
  }
  return s;
}

ScenarioSpec parse_scenario_spec(const std::string& text) {
  const ojson j = parse_json(text);
  ScenarioSpec spec;
  auto get_int = [&](const char* key, int& out) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number_integer())
        throw ScenarioParseError(std::string("schema error at /") + key + ": expected integer");
      out = it->get<int>();
    }
  };
  get_int("ns_lower", spec.ns_lower);
  get_int("ns_upper", spec.ns_upper);
  get_int("nh_lower", spec.nh_lower);
  get_int("nh_upper", spec.nh_upper);
  if (auto it = j.find("subnet_type_options"); it != j.end()) {
    spec.subnet_type_options.clear();
    for (std::size_t i = 0; i < it->size(); ++i)
      spec.subnet_type_options.push_back(convert_enum(subnet_type_from_string, (*it)[i].get<std::string>(),
                                                      "/subnet_type_options/" + std::to_string(i)));
  }
  if (auto it = j.find("seed"); it != j.end()) spec.seed = it->get<std::uint64_t>();
  if (auto v = spec.violations(); !v.empty()) throw ScenarioParseError("invalid spec: " + v.front());
  return spec;
}

std::string serialize_scenario_spec(const ScenarioSpec& spec) {
  ojson j;
  j["ns_lower"] = spec.ns_lower;
  j["ns_upper"] = spec.ns_upper;
  j["nh_lower"] = spec.nh_lower;
  j["nh_upper"] = spec.nh_upper;
  j["subnet_type_options"] = ojson::array();
  for (auto t : spec.subnet_type_options) j["subnet_type_options"].push_back(to_string(t));
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

}  // namespace gacd
