#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gacd/rng.hpp"

namespace gacd {

enum class SubnetType { User, Operational, Enterprise };
enum class HostType { Server, Workstation, Defender };

std::string to_string(SubnetType t);
std::string to_string(HostType t);
SubnetType subnet_type_from_string(const std::string& s);
HostType host_type_from_string(const std::string& s);

/// Bounds for the procedural scenario generator.
struct ScenarioSpec {
  int ns_lower = 3;
  int ns_upper = 3;
  int nh_lower = 13;
  int nh_upper = 13;
  std::vector<SubnetType> subnet_type_options = {SubnetType::User, SubnetType::Operational,
                                                 SubnetType::Enterprise};
  std::uint64_t seed = 0;

  /// Empty when the bounds are usable.
  std::vector<std::string> violations() const;
};

struct Subnet {
  std::string id;
  SubnetType type = SubnetType::User;
  std::vector<std::string> hosts;
  bool operator==(const Subnet&) const = default;
};

struct Host {
  std::string id;
  HostType type = HostType::Workstation;
  std::string subnet;
  bool operator==(const Host&) const = default;
};

/// Directed ACL link. An undirected link is stored as two entries.
struct AclEdge {
  std::string src;
  std::string dst;
  bool operator==(const AclEdge&) const = default;
};

/// Static description of a network: subnets, hosts, ACL links and agent placements.
struct Scenario {
  std::vector<Subnet> subnets;
  std::vector<Host> hosts;
  std::vector<AclEdge> acl_edges;
  std::string enterprise_subnet;
  std::string operational_subnet;
  std::string operational_server;
  std::string red_start_host;
  std::string blue_host;
  std::string green_host;

  bool operator==(const Scenario&) const = default;

  std::optional<std::size_t> subnet_index(const std::string& id) const;
  std::optional<std::size_t> host_index(const std::string& id) const;
};

// Violation labels reported by validate().
namespace violation {
inline constexpr const char* kNoSubnets = "no subnets";
inline constexpr const char* kNoHosts = "no hosts";
inline constexpr const char* kDuplicateId = "duplicate id";
inline constexpr const char* kEnterpriseOperational = "enterprise/operational distinct";
inline constexpr const char* kHostMembership = "host belongs to exactly one subnet";
inline constexpr const char* kRedStart = "red start in first user subnet";
inline constexpr const char* kOperationalServer = "operational server in operational subnet";
inline constexpr const char* kDanglingEdge = "dangling edge reference";
inline constexpr const char* kDisconnected = "subnet graph connected";
inline constexpr const char* kUnknownRole = "role references unknown id";
}  // namespace violation

/// Procedural scenario generator. Pure in (spec, rng state).
Scenario generate_scenario(const ScenarioSpec& spec, Rng& rng);
Scenario generate_scenario(const ScenarioSpec& spec);  // seeds from spec.seed

/// Erdos-Renyi fallback: NS subnets with each subnet pair linked with probability p
/// (re-linked along a random spanning tree if the draw is disconnected).
Scenario generate_erdos_renyi(int num_subnets, int hosts_per_subnet, double edge_prob, Rng& rng);

/// The fixed 3-subnet, 13-host reference network.
Scenario vanilla_cc2();

/// Exact list of violated scenario invariants; empty when valid.
std::vector<std::string> validate(const Scenario& s);

/// Index of the subnet red starts in under the "first User subnet" rule.
std::size_t first_user_subnet(const Scenario& s);

/// Number of Server hosts in Operational-type subnets (at least 1).
int operational_server_count(const Scenario& s);

class ScenarioParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_scenario(const Scenario& s);
/// Throws ScenarioParseError with a byte offset or a JSON-pointer location.
Scenario parse_scenario(const std::string& text);

ScenarioSpec parse_scenario_spec(const std::string& text);
std::string serialize_scenario_spec(const ScenarioSpec& spec);

}  // namespace gacd
