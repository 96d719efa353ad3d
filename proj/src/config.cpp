#include "hhvg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "hhvg/errors.hpp"

namespace hhvg {

namespace {

// Shortest round-trip text keeps emitted configs readable and exact.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

YAML::Node vec2(const Eigen::Vector2d& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  n.SetStyle(YAML::EmitterStyle::Flow);
  n.push_back(num(v.x()));
  n.push_back(num(v.y()));
  return n;
}

YAML::Node features(const std::vector<ForceFeature>& fs) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& f : fs) {
    YAML::Node m;
    m["center"] = vec2(f.center);
    m["strength"] = num(f.strength);
    m["width"] = num(f.width);
    n.push_back(m);
  }
  return n;
}

YAML::Node to_node(const ExperimentConfig& c) {
  YAML::Node root;
  root["profile"] = c.profile;
  root["runs_per_variant"] = c.runs_per_variant;
  root["split_seed"] = c.split_seed;

  YAML::Node env;
  env["dt"] = num(c.env.dt);
  env["damping"] = num(c.env.damping);
  env["action_bound"] = num(c.env.action_bound);
  env["grid_size"] = c.env.grid_size;
  env["start"] = vec2(c.env.start);
  env["oracle_velocity_bound"] = num(c.env.oracle_velocity_bound);
  env["attractors"] = features(c.env.attractors);
  env["repellers"] = features(c.env.repellers);
  root["env"] = env;

  YAML::Node phases;
  phases["dap_steps"] = c.plan.dap_steps;
  phases["postdap_epochs"] = c.plan.postdap_epochs;
  phases["batch_size"] = c.plan.batch_size;
  phases["validate_every"] = c.plan.validate_every;
  phases["plateau_window"] = c.plan.plateau_window;
  phases["plateau_factor"] = num(c.plan.plateau_factor);
  root["phases"] = phases;

  const AgentConfig& a = c.agent;
  YAML::Node agent;
  agent["gamma"] = num(a.gamma);
  agent["fpe_updates"] = a.fpe_updates;
  agent["clone_every"] = a.clone_every;
  agent["batch_size"] = a.batch_size;
  agent["policy_batch"] = a.policy_batch;
  agent["lr_fm"] = num(a.lr_fm);
  agent["lr_mm"] = num(a.lr_mm);
  agent["lr_vf"] = num(a.lr_vf);
  agent["lr_ap"] = num(a.lr_ap);
  agent["random_reward_std"] = num(a.random_reward_std);
  agent["pool_capacity"] = static_cast<std::uint64_t>(a.pool_capacity);
  root["agent"] = agent;

  YAML::Node model;
  YAML::Node hidden(YAML::NodeType::Sequence);
  hidden.SetStyle(YAML::EmitterStyle::Flow);
  for (int h : a.model.hidden) hidden.push_back(h);
  model["hidden"] = hidden;
  model["state_dependent_jacobians"] = a.model.state_dependent_jacobians;
  model["identity_init"] = a.model.identity_init;
  model["input_std"] = num(a.model.input_std);
  root["model"] = model;

  YAML::Node opt;
  opt["kind"] = a.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
  opt["clip_norm"] = num(a.optimizer.clip_norm);
  opt["beta1"] = num(a.optimizer.beta1);
  opt["beta2"] = num(a.optimizer.beta2);
  opt["epsilon"] = num(a.optimizer.epsilon);
  root["optimizer"] = opt;

  YAML::Node oracle;
  YAML::Node grid(YAML::NodeType::Sequence);
  grid.SetStyle(YAML::EmitterStyle::Flow);
  for (int g : c.oracle_grid.counts) grid.push_back(g);
  oracle["grid"] = grid;
  oracle["epochs"] = c.oracle.epochs;
  oracle["batch_size"] = c.oracle.batch_size;
  oracle["rate"] = num(c.oracle.rate);
  oracle["evaluate_every"] = c.oracle.evaluate_every;
  oracle["plateau_window"] = c.oracle.plateau_window;
  oracle["plateau_factor"] = num(c.oracle.plateau_factor);
  oracle["test_eval_rows"] = static_cast<std::uint64_t>(c.oracle.test_eval_rows);
  root["oracle"] = oracle;
  return root;
}

// Reads `node[key]` into `out` when present; unknown keys are rejected by `check_keys`.
template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: cannot parse " + where + "." + key);
  }
}

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError("config: " + where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("config: unknown key " + where + "." + key);
  }
}

Eigen::Vector2d read_vec2(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError("config: " + where + " must be [x, y]");
  try {
    return {n[0].as<double>(), n[1].as<double>()};
  } catch (const YAML::Exception&) {
    throw ConfigError("config: cannot parse " + where);
  }
}

std::vector<ForceFeature> read_features(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) throw ConfigError("config: " + where + " must be a list");
  std::vector<ForceFeature> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    check_keys(n[i], {"center", "strength", "width"}, w);
    ForceFeature f;
    if (n[i]["center"]) f.center = read_vec2(n[i]["center"], w + ".center");
    read(n[i], "strength", f.strength, w);
    read(n[i], "width", f.width, w);
    out.push_back(f);
  }
  return out;
}

void apply_node(const YAML::Node& root, ExperimentConfig& c) {
  check_keys(root, {"profile", "runs_per_variant", "split_seed", "env", "phases", "agent", "model",
                    "optimizer", "oracle"},
             "root");
  read(root, "profile", c.profile, "root");
  read(root, "runs_per_variant", c.runs_per_variant, "root");
  read(root, "split_seed", c.split_seed, "root");

  if (const YAML::Node env = root["env"]) {
    check_keys(env, {"dt", "damping", "action_bound", "grid_size", "start", "oracle_velocity_bound",
                     "attractors", "repellers"},
               "env");
    read(env, "dt", c.env.dt, "env");
    read(env, "damping", c.env.damping, "env");
    read(env, "action_bound", c.env.action_bound, "env");
    read(env, "grid_size", c.env.grid_size, "env");
    read(env, "oracle_velocity_bound", c.env.oracle_velocity_bound, "env");
    if (env["start"]) c.env.start = read_vec2(env["start"], "env.start");
    if (env["attractors"]) c.env.attractors = read_features(env["attractors"], "env.attractors");
    if (env["repellers"]) c.env.repellers = read_features(env["repellers"], "env.repellers");
  }
  if (const YAML::Node p = root["phases"]) {
    check_keys(p, {"dap_steps", "postdap_epochs", "batch_size", "validate_every", "plateau_window",
                   "plateau_factor"},
               "phases");
    read(p, "dap_steps", c.plan.dap_steps, "phases");
    read(p, "postdap_epochs", c.plan.postdap_epochs, "phases");
    read(p, "batch_size", c.plan.batch_size, "phases");
    read(p, "validate_every", c.plan.validate_every, "phases");
    read(p, "plateau_window", c.plan.plateau_window, "phases");
    read(p, "plateau_factor", c.plan.plateau_factor, "phases");
  }
  if (const YAML::Node a = root["agent"]) {
    check_keys(a, {"gamma", "fpe_updates", "clone_every", "batch_size", "policy_batch", "lr_fm", "lr_mm",
                   "lr_vf", "lr_ap", "random_reward_std", "pool_capacity"},
               "agent");
    AgentConfig& g = c.agent;
    read(a, "gamma", g.gamma, "agent");
    read(a, "fpe_updates", g.fpe_updates, "agent");
    read(a, "clone_every", g.clone_every, "agent");
    read(a, "batch_size", g.batch_size, "agent");
    read(a, "policy_batch", g.policy_batch, "agent");
    read(a, "lr_fm", g.lr_fm, "agent");
    read(a, "lr_mm", g.lr_mm, "agent");
    read(a, "lr_vf", g.lr_vf, "agent");
    read(a, "lr_ap", g.lr_ap, "agent");
    read(a, "random_reward_std", g.random_reward_std, "agent");
    read(a, "pool_capacity", g.pool_capacity, "agent");
  }
  if (const YAML::Node m = root["model"]) {
    check_keys(m, {"hidden", "state_dependent_jacobians", "identity_init", "input_std"}, "model");
    read(m, "hidden", c.agent.model.hidden, "model");
    read(m, "state_dependent_jacobians", c.agent.model.state_dependent_jacobians, "model");
    read(m, "identity_init", c.agent.model.identity_init, "model");
    read(m, "input_std", c.agent.model.input_std, "model");
  }
  if (const YAML::Node o = root["optimizer"]) {
    check_keys(o, {"kind", "clip_norm", "beta1", "beta2", "epsilon"}, "optimizer");
    std::string kind = c.agent.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
    read(o, "kind", kind, "optimizer");
    if (kind == "sgd") {
      c.agent.optimizer.kind = OptimizerKind::sgd;
    } else if (kind == "adam") {
      c.agent.optimizer.kind = OptimizerKind::adam;
    } else {
      throw ConfigError("config: optimizer.kind must be sgd or adam, got " + kind);
    }
    read(o, "clip_norm", c.agent.optimizer.clip_norm, "optimizer");
    read(o, "beta1", c.agent.optimizer.beta1, "optimizer");
    read(o, "beta2", c.agent.optimizer.beta2, "optimizer");
    read(o, "epsilon", c.agent.optimizer.epsilon, "optimizer");
  }
  if (const YAML::Node o = root["oracle"]) {
    check_keys(o, {"grid", "epochs", "batch_size", "rate", "evaluate_every", "plateau_window",
                   "plateau_factor", "test_eval_rows"},
               "oracle");
    if (const YAML::Node g = o["grid"]) {
      if (!g.IsSequence() || g.size() != 6) throw ConfigError("config: oracle.grid must list 6 counts");
      for (std::size_t i = 0; i < 6; ++i) c.oracle_grid.counts[i] = g[i].as<int>();
    }
    read(o, "epochs", c.oracle.epochs, "oracle");
    read(o, "batch_size", c.oracle.batch_size, "oracle");
    read(o, "rate", c.oracle.rate, "oracle");
    read(o, "evaluate_every", c.oracle.evaluate_every, "oracle");
    read(o, "plateau_window", c.oracle.plateau_window, "oracle");
    read(o, "plateau_factor", c.oracle.plateau_factor, "oracle");
    read(o, "test_eval_rows", c.oracle.test_eval_rows, "oracle");
  }
}

void set_path(YAML::Node node, const std::vector<std::string>& path, std::size_t i,
              const YAML::Node& value) {
  if (i + 1 == path.size()) {
    node[path[i]] = value;
    return;
  }
  if (!node[path[i]].IsMap()) node[path[i]] = YAML::Node(YAML::NodeType::Map);
  set_path(node[path[i]], path, i + 1, value);
}

// `a.b.c=value` parsed as YAML and grafted onto `root`.
void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("config: override must look like key=value, got " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError("config: cannot parse override " + assignment + ": " + e.what());
  }
  std::vector<std::string> path;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("config: malformed override key " + key);
    path.push_back(part);
  }
  set_path(root, path, 0, value);
}

void merge(YAML::Node base, const YAML::Node& over) {
  for (const auto& kv : over) {
    const auto key = kv.first.as<std::string>();
    if (kv.second.IsMap() && base[key] && base[key].IsMap()) {
      merge(base[key], kv.second);
    } else {
      base[key] = kv.second;
    }
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ExperimentConfig ExperimentConfig::for_profile(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk") {
    c.profile = "desk";
    c.runs_per_variant = 16;
    c.oracle_grid = OracleGridSpec::desk();
    c.plan = PhasePlan::desk();
    c.oracle.epochs = 6000;
    c.agent.policy_batch = 32;
  } else if (name == "full") {
    c.profile = "full";
    c.runs_per_variant = 128;
    c.oracle_grid = OracleGridSpec::full();
    c.plan = PhasePlan::full();
    c.oracle.epochs = 60000;
    c.agent.policy_batch = 0;
  } else {
    throw ConfigError("config: unknown profile '" + name + "' (expected desk or full)");
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_yaml(const std::string& text, const std::string& profile,
                                             const std::vector<std::string>& overrides) {
  YAML::Node file;
  try {
    file = text.empty() ? YAML::Node(YAML::NodeType::Map) : YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (file.IsNull()) file = YAML::Node(YAML::NodeType::Map);
  if (!file.IsMap()) throw ConfigError("config: top level must be a mapping");

  std::string name = profile;
  if (name.empty() && file["profile"]) name = file["profile"].as<std::string>();
  if (name.empty()) name = "desk";

  ExperimentConfig c = for_profile(name);
  YAML::Node root = to_node(c);
  merge(root, file);
  for (const auto& o : overrides) apply_override(root, o);
  root["profile"] = name;
  apply_node(root, c);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file, const std::string& profile,
                                        const std::vector<std::string>& overrides) {
  std::string text;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("config: cannot read " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return from_yaml(text, profile, overrides);
}

std::string ExperimentConfig::to_yaml() const {
  YAML::Emitter out;
  out << to_node(*this);
  return std::string(out.c_str()) + "\n";
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(to_yaml()); }

std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

void ExperimentConfig::validate() const {
  if (runs_per_variant < 1) throw ConfigError("config: runs_per_variant must be >= 1");
  for (int g : oracle_grid.counts) {
    if (g < 1) throw ConfigError("config: oracle.grid counts must be >= 1");
  }
  if (oracle.epochs < 0 || oracle.batch_size < 1 || oracle.evaluate_every < 1 ||
      oracle.plateau_window < 1 || !(oracle.rate > 0.0) ||
      !(oracle.plateau_factor > 0.0 && oracle.plateau_factor < 1.0)) {
    throw ConfigError("config: invalid oracle training schedule");
  }
  try {
    env.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  agent.validate();
  plan.validate();
}

}  // namespace hhvg
