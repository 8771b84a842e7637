#include "gacd/scenario.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>

namespace gacd {

std::string to_string(SubnetType t) {
  switch (t) {
    case SubnetType::User: return "User";
    case SubnetType::Operational: return "Operational";
    case SubnetType::Enterprise: return "Enterprise";
  }
  return "?";
}

std::string to_string(HostType t) {
  switch (t) {
    case HostType::Server: return "Server";
    case HostType::Workstation: return "Workstation";
    case HostType::Defender: return "Defender";
  }
  return "?";
}

SubnetType subnet_type_from_string(const std::string& s) {
  if (s == "User") return SubnetType::User;
  if (s == "Operational") return SubnetType::Operational;
  if (s == "Enterprise") return SubnetType::Enterprise;
  throw std::invalid_argument("unknown subnet type '" + s + "'");
}

HostType host_type_from_string(const std::string& s) {
  if (s == "Server") return HostType::Server;
  if (s == "Workstation") return HostType::Workstation;
  if (s == "Defender") return HostType::Defender;
  throw std::invalid_argument("unknown host type '" + s + "'");
}

std::vector<std::string> ScenarioSpec::violations() const {
  std::vector<std::string> out;
  if (ns_lower < 1) out.emplace_back("ns_lower >= 1");
  if (ns_upper < ns_lower) out.emplace_back("ns_upper >= ns_lower");
  if (nh_lower < 1) out.emplace_back("nh_lower >= 1");
  if (nh_upper < nh_lower) out.emplace_back("nh_upper >= nh_lower");
  if (subnet_type_options.empty()) out.emplace_back("subnet_type_options non-empty");
  return out;
}

std::optional<std::size_t> Scenario::subnet_index(const std::string& id) const {
  for (std::size_t i = 0; i < subnets.size(); ++i)
    if (subnets[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> Scenario::host_index(const std::string& id) const {
  for (std::size_t i = 0; i < hosts.size(); ++i)
    if (hosts[i].id == id) return i;
  return std::nullopt;
}

std::size_t first_user_subnet(const Scenario& s) {
  for (std::size_t i = 0; i < s.subnets.size(); ++i)
    if (s.subnets[i].type == SubnetType::User) return i;
  return 0;
}

int operational_server_count(const Scenario& s) {
  int count = 0;
  for (const auto& h : s.hosts) {
    if (h.type != HostType::Server) continue;
    auto si = s.subnet_index(h.subnet);
    if (si && s.subnets[*si].type == SubnetType::Operational) ++count;
  }
  return std::max(count, 1);
}

namespace {

// Uniform composition of `total` into `parts` positive integers (stars and bars).
std::vector<int> sample_composition(int total, int parts, Rng& rng) {
  std::vector<int> cuts(static_cast<std::size_t>(total - 1));
  std::iota(cuts.begin(), cuts.end(), 1);
  // Partial Fisher-Yates: first parts-1 entries become a uniform subset.
  for (int i = 0; i < parts - 1; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<std::int64_t>(cuts.size()) - 1));
    std::swap(cuts[static_cast<std::size_t>(i)], cuts[j]);
  }
  std::vector<int> chosen(cuts.begin(), cuts.begin() + (parts - 1));
  std::sort(chosen.begin(), chosen.end());
  std::vector<int> sizes;
  int prev = 0;
  for (int c : chosen) {
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(total - prev);
  return sizes;
}

void add_link(Scenario& s, const std::string& a, const std::string& b) {
  s.acl_edges.push_back({a, b});
  s.acl_edges.push_back({b, a});
}

bool linked(const Scenario& s, const std::string& a, const std::string& b) {
  return std::any_of(s.acl_edges.begin(), s.acl_edges.end(), [&](const AclEdge& e) {
    return (e.src == a && e.dst == b) || (e.src == b && e.dst == a);
  });
}

// Random recursive spanning tree plus extra links with probability p.
void wire_subnets(Scenario& s, double extra_prob, Rng& rng) {
  const std::size_t ns = s.subnets.size();
  std::vector<std::size_t> order(ns);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::set<std::pair<std::size_t, std::size_t>> tree;
  for (std::size_t k = 1; k < ns; ++k) {
    const std::size_t parent = order[rng.index(k)];
    const std::size_t child = order[k];
    add_link(s, s.subnets[parent].id, s.subnets[child].id);
    tree.insert({std::min(parent, child), std::max(parent, child)});
  }
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = i + 1; j < ns; ++j) {
      if (tree.count({i, j})) continue;
      if (rng.bernoulli(extra_prob)) add_link(s, s.subnets[i].id, s.subnets[j].id);
    }
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec, Rng& rng) {
  if (auto v = spec.violations(); !v.empty())
    throw std::invalid_argument("invalid ScenarioSpec: " + v.front());

  const int ns = static_cast<int>(rng.uniform_int(spec.ns_lower, spec.ns_upper));
  const int nh_lo = std::max(ns, spec.nh_lower);
  const int nh_hi = std::max(spec.nh_upper, nh_lo);
  const int nh = static_cast<int>(rng.uniform_int(nh_lo, nh_hi));

  std::vector<SubnetType> types(static_cast<std::size_t>(ns));
  for (auto& t : types) t = spec.subnet_type_options[rng.index(spec.subnet_type_options.size())];

  const std::vector<int> sizes = sample_composition(nh, ns, rng);

  Scenario s;
  for (int i = 0; i < ns; ++i) {
    Subnet sub;
    sub.id = "subnet" + std::to_string(i);
    sub.type = types[static_cast<std::size_t>(i)];
    for (int j = 0; j < sizes[static_cast<std::size_t>(i)]; ++j) {
      Host h;
      h.id = "s" + std::to_string(i) + "h" + std::to_string(j);
      h.type = rng.bernoulli(0.5) ? HostType::Server : HostType::Workstation;
      h.subnet = sub.id;
      sub.hosts.push_back(h.id);
      s.hosts.push_back(std::move(h));
    }
    s.subnets.push_back(std::move(sub));
  }

  const std::size_t ent = rng.index(static_cast<std::size_t>(ns));
  std::size_t op = ent;
  if (ns > 1) {
    op = rng.index(static_cast<std::size_t>(ns - 1));
    if (op >= ent) ++op;
    s.subnets[ent].type = SubnetType::Enterprise;
    s.subnets[op].type = SubnetType::Operational;
  } else {
    s.subnets[0].type = SubnetType::Operational;
  }
  s.enterprise_subnet = s.subnets[ent].id;
  s.operational_subnet = s.subnets[op].id;

  auto host_ref = [&](const std::string& id) -> Host& { return s.hosts[*s.host_index(id)]; };

  // Operational server: first Server in the operational subnet, else promote the last host.
  {
    const auto& members = s.subnets[op].hosts;
    auto it = std::find_if(members.begin(), members.end(),
                           [&](const std::string& id) { return host_ref(id).type == HostType::Server; });
    const std::string chosen = it != members.end() ? *it : members.back();
    host_ref(chosen).type = HostType::Server;
    s.operational_server = chosen;
  }

  s.red_start_host = s.subnets[first_user_subnet(s)].hosts.front();
  s.blue_host = s.subnets[ent].hosts.front();
  if (s.blue_host != s.operational_server) host_ref(s.blue_host).type = HostType::Defender;
  s.green_host = s.hosts[rng.index(s.hosts.size())].id;

  wire_subnets(s, 0.3, rng);

  // Directed Operational -> User interface, as in the reference network.
  if (ns > 1) {
    for (const auto& sub : s.subnets) {
      if (sub.type != SubnetType::User) continue;
      if (!linked(s, s.operational_subnet, sub.id)) s.acl_edges.push_back({s.operational_subnet, sub.id});
      break;
    }
  }
  return s;
}

Scenario generate_scenario(const ScenarioSpec& spec) {
  Rng rng(spec.seed);
  return generate_scenario(spec, rng);
}

Scenario generate_erdos_renyi(int num_subnets, int hosts_per_subnet, double edge_prob, Rng& rng) {
  if (num_subnets < 2 || hosts_per_subnet < 1)
    throw std::invalid_argument("generate_erdos_renyi: need >= 2 subnets and >= 1 host each");
  Scenario s;
  for (int i = 0; i < num_subnets; ++i) {
    Subnet sub;
    sub.id = "subnet" + std::to_string(i);
    sub.type = i == 0 ? SubnetType::User : (i == 1 ? SubnetType::Enterprise : SubnetType::Operational);
    for (int j = 0; j < hosts_per_subnet; ++j) {
      Host h{"s" + std::to_string(i) + "h" + std::to_string(j), HostType::Workstation, sub.id};
      sub.hosts.push_back(h.id);
      s.hosts.push_back(std::move(h));
    }
    s.subnets.push_back(std::move(sub));
  }
  for (int i = 0; i < num_subnets; ++i)
    for (int j = i + 1; j < num_subnets; ++j)
      if (rng.bernoulli(edge_prob)) add_link(s, s.subnets[static_cast<std::size_t>(i)].id,
                                             s.subnets[static_cast<std::size_t>(j)].id);
  // Patch connectivity: join each component to subnet 0's component.
  std::vector<int> comp(static_cast<std::size_t>(num_subnets), -1);
  auto flood = [&](int start, int label) {
    std::queue<int> q;
    q.push(start);
    comp[static_cast<std::size_t>(start)] = label;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (const auto& e : s.acl_edges) {
        if (e.src != s.subnets[static_cast<std::size_t>(u)].id) continue;
        int v = static_cast<int>(*s.subnet_index(e.dst));
        if (comp[static_cast<std::size_t>(v)] < 0) {
          comp[static_cast<std::size_t>(v)] = label;
          q.push(v);
        }
      }
    }
  };
  flood(0, 0);
  for (int i = 1; i < num_subnets; ++i) {
    if (comp[static_cast<std::size_t>(i)] >= 0) continue;
    add_link(s, s.subnets[rng.index(static_cast<std::size_t>(i))].id, s.subnets[static_cast<std::size_t>(i)].id);
    std::fill(comp.begin(), comp.end(), -1);
    flood(0, 0);
  }
  s.enterprise_subnet = s.subnets[1].id;
  s.operational_subnet = s.subnets[2 % num_subnets].id;
  if (num_subnets == 2) s.operational_subnet = s.subnets[0].id, s.subnets[0].type = SubnetType::Operational;
  auto& op_sub = s.subnets[*s.subnet_index(s.operational_subnet)];
  s.operational_server = op_sub.hosts.back();
  s.hosts[*s.host_index(s.operational_server)].type = HostType::Server;
  s.red_start_host = s.subnets[first_user_subnet(s)].hosts.front();
  s.blue_host = s.subnets[1].hosts.front();
  s.green_host = s.hosts[rng.index(s.hosts.size())].id;
  return s;
}

Scenario vanilla_cc2() {
  Scenario s;
  auto add_subnet = [&](const std::string& id, SubnetType type,
                        std::vector<std::pair<std::string, HostType>> members) {
    Subnet sub{id, type, {}};
    for (auto& [name, ht] : members) {
      sub.hosts.push_back(name);
      s.hosts.push_back({name, ht, id});
    }
    s.subnets.push_back(std::move(sub));
  };
  add_subnet("Enterprise", SubnetType::Enterprise,
             {{"Defender", HostType::Defender},
              {"Enterprise0", HostType::Server},
              {"Enterprise1", HostType::Server},
              {"Enterprise2", HostType::Server}});
  add_subnet("Operational", SubnetType::Operational,
             {{"Op_Host0", HostType::Workstation},
              {"Op_Host1", HostType::Workstation},
              {"Op_Host2", HostType::Workstation},
              {"Op_Server0", HostType::Server}});
  add_subnet("User", SubnetType::User,
             {{"User0", HostType::Workstation},
              {"User1", HostType::Workstation},
              {"User2", HostType::Workstation},
              {"User3", HostType::Workstation},
              {"User4", HostType::Workstation}});
  add_link(s, "Enterprise", "User");
  add_link(s, "Operational", "Enterprise");
  s.acl_edges.push_back({"Operational", "User"});
  s.enterprise_subnet = "Enterprise";
  s.operational_subnet = "Operational";
  s.operational_server = "Op_Server0";
  s.red_start_host = "User0";
  s.blue_host = "Defender";
  s.green_host = "User1";
  return s;
}

std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> out;
  auto flag = [&](const char* label) {
    if (std::find(out.begin(), out.end(), label) == out.end()) out.emplace_back(label);
  };

  if (s.subnets.empty()) flag(violation::kNoSubnets);
  if (s.hosts.empty()) flag(violation::kNoHosts);

  std::map<std::string, int> ids;
  for (const auto& sub : s.subnets) ids[sub.id]++;
  for (const auto& h : s.hosts) ids[h.id]++;
  for (const auto& [id, n] : ids)
    if (n > 1) flag(violation::kDuplicateId);

  // Host membership: declared subnet exists and lists the host; listed exactly once overall.
  std::map<std::string, int> listed;
  for (const auto& sub : s.subnets)
    for (const auto& hid : sub.hosts) {
      listed[hid]++;
      if (!s.host_index(hid)) flag(violation::kHostMembership);
    }
  for (const auto& h : s.hosts) {
    auto si = s.subnet_index(h.subnet);
    if (!si || listed[h.id] != 1 ||
        std::find(s.subnets[*si].hosts.begin(), s.subnets[*si].hosts.end(), h.id) ==
            s.subnets[*si].hosts.end())
      flag(violation::kHostMembership);
  }

  const bool roles_ok = s.subnet_index(s.enterprise_subnet) && s.subnet_index(s.operational_subnet) &&
                        s.host_index(s.operational_server) && s.host_index(s.red_start_host) &&
                        s.host_index(s.blue_host) && s.host_index(s.green_host);
  if (!roles_ok) flag(violation::kUnknownRole);

  if (s.subnets.size() > 1 && s.enterprise_subnet == s.operational_subnet)
    flag(violation::kEnterpriseOperational);

  if (roles_ok && !s.subnets.empty()) {
    const auto& red = s.hosts[*s.host_index(s.red_start_host)];
    if (red.subnet != s.subnets[first_user_subnet(s)].id) flag(violation::kRedStart);
    const auto& opsrv = s.hosts[*s.host_index(s.operational_server)];
    if (opsrv.subnet != s.operational_subnet) flag(violation::kOperationalServer);
  }

  // Map every endpoint to its subnet for the connectivity check.
  auto subnet_of = [&](const std::string& id) -> std::optional<std::size_t> {
    if (auto si = s.subnet_index(id)) return si;
    if (auto hi = s.host_index(id)) return s.subnet_index(s.hosts[*hi].subnet);
    return std::nullopt;
  };
  std::vector<std::vector<std::size_t>> adj(s.subnets.size());
  for (const auto& e : s.acl_edges) {
    auto a = subnet_of(e.src);
    auto b = subnet_of(e.dst);
    if (!a || !b) {
      flag(violation::kDanglingEdge);
      continue;
    }
    adj[*a].push_back(*b);
    adj[*b].push_back(*a);
  }
  if (!s.subnets.empty()) {
    std::vector<bool> seen(s.subnets.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (auto v : adj[u])
        if (!seen[v]) {
          seen[v] = true;
          q.push(v);
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) flag(violation::kDisconnected);
  }
  return out;
}

}  // namespace gacd
