#include "difftraffic/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace difftraffic {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!node_.contains(key)) return;
    const json& value = node_.at(key);
    const std::string where = path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) throw ConfigError("'" + where + "' must be a boolean");
      out = value.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!value.is_number_unsigned()) {
        throw ConfigError("'" + where + "' must be a non-negative integer");
      }
      out = value.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!value.is_number()) throw ConfigError("'" + where + "' must be a number");
      out = value.get<T>();
    } else {
      try {
        out = value.get<T>();
      } catch (const json::exception& e) {
        throw ConfigError("'" + where + "': " + e.what());
      }
    }
  }

  template <typename T>
  void read_list(const char* key, std::vector<T>& out) {
    known_.insert(key);
    if (!node_.contains(key)) return;
    const json& value = node_.at(key);
    const std::string where = path_ + "." + key;
    if (!value.is_array()) throw ConfigError("'" + where + "' must be an array");
    std::vector<T> items;
    for (const auto& item : value) {
      if (!item.is_number_unsigned()) {
        throw ConfigError("'" + where + "' entries must be non-negative integers");
      }
      items.push_back(item.get<T>());
    }
    out = std::move(items);
  }

  const json* child(const char* key) {
    known_.insert(key);
    return node_.contains(key) ? &node_.at(key) : nullptr;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!known_.count(item.key())) {
        throw ConfigError("unknown key '" + path_ + "." + item.key() + "'");
      }
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> known_;
};

std::string kind_name(ScenarioKind kind) {
  return kind == ScenarioKind::kRing ? "ring" : "figure_eight";
}

ScenarioKind parse_kind(const std::string& name) {
  if (name == "ring") return ScenarioKind::kRing;
  if (name == "figure_eight") return ScenarioKind::kFigureEight;
  throw ConfigError("unknown scenario kind '" + name + "' (expected ring or figure_eight)");
}

std::string initial_name(InitialCondition::Kind kind) {
  return kind == InitialCondition::Kind::kUniform ? "uniform" : "equilibrium";
}

InitialCondition::Kind parse_initial(const std::string& name) {
  if (name == "uniform") return InitialCondition::Kind::kUniform;
  if (name == "equilibrium") return InitialCondition::Kind::kEquilibrium;
  throw ConfigError("unknown initial condition '" + name + "' (expected uniform or equilibrium)");
}

void read_scenario(const json& node, ScenarioConfig& s) {
  Section sec(node, "scenario");
  std::string kind = kind_name(s.kind);
  sec.read("kind", kind);
  s.kind = parse_kind(kind);
  sec.read("track_length", s.track_length);
  sec.read("num_vehicles", s.num_vehicles);
  sec.read("controlled_index", s.controlled_index);
  sec.read("horizon", s.horizon);
  sec.read("warmup_steps", s.warmup_steps);
  sec.read("collision_penalty", s.collision_penalty);

  if (const json* init = sec.child("initial")) {
    Section ic(*init, "scenario.initial");
    std::string ikind = initial_name(s.initial.kind);
    ic.read("kind", ikind);
    s.initial.kind = parse_initial(ikind);
    ic.read("sigma", s.initial.sigma);
    ic.finish();
  }
  if (const json* idm = sec.child("idm")) {
    Section p(*idm, "scenario.idm");
    p.read("v0", s.idm.v0);
    p.read("T", s.idm.T);
    p.read("a", s.idm.a);
    p.read("b", s.idm.b);
    p.read("delta_exp", s.idm.delta_exp);
    p.read("s0", s.idm.s0);
    p.read("l", s.idm.l);
    p.finish();
  }
  if (const json* step = sec.child("step")) {
    Section p(*step, "scenario.step");
    p.read("dt", s.step.dt);
    p.read("alpha_min", s.step.alpha_min);
    p.read("alpha_max", s.step.alpha_max);
    p.finish();
  }
  if (const json* fe = sec.child("figure_eight")) {
    Section p(*fe, "scenario.figure_eight");
    p.read("crossing_a", s.figure_eight.crossing_a);
    p.read("crossing_b", s.figure_eight.crossing_b);
    p.read("approach_window", s.figure_eight.approach_window);
    p.read("conflict_length", s.figure_eight.conflict_length);
    p.read("b_max", s.figure_eight.b_max);
    p.finish();
  }
  sec.finish();
}

void read_rewards(const json& node, ScenarioConfig& s) {
  Section sec(node, "rewards");
  sec.read("alpha", s.weights.alpha);
  sec.read("beta", s.weights.beta);
  sec.read("lambda", s.weights.lambda);
  if (const json* fuel = sec.child("fuel")) {
    Section f(*fuel, "rewards.fuel");
    f.read("c0", s.fuel.c0);
    f.read("c1", s.fuel.c1);
    f.read("c2", s.fuel.c2);
    f.read("c3", s.fuel.c3);
    f.read("c4", s.fuel.c4);
    f.read("g_idle", s.fuel.g_idle);
    f.finish();
  }
  sec.finish();
}

void read_training(const json& node, TrainConfig& t) {
  Section sec(node, "training");
  std::string algo = to_string(t.algorithm);
  sec.read("algorithm", algo);
  try {
    t.algorithm = parse_algorithm(algo);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("training.algorithm: ") + e.what());
  }
  sec.read("iterations", t.iterations);
  sec.read("steps_per_iteration", t.steps_per_iteration);
  sec.read("gamma", t.gamma);
  sec.read("gae_lambda", t.gae_lambda);
  sec.read("clip_ratio", t.clip_ratio);
  sec.read("epochs", t.epochs);
  sec.read("minibatch_size", t.minibatch_size);
  sec.read("learning_rate", t.learning_rate);
  std::vector<std::uint64_t> hidden(t.hidden_sizes.begin(), t.hidden_sizes.end());
  sec.read_list("hidden_sizes", hidden);
  t.hidden_sizes.assign(hidden.begin(), hidden.end());
  sec.read("init_log_std", t.init_log_std);
  sec.read("max_grad_norm", t.max_grad_norm);
  if (const json* pert = sec.child("perturbation")) {
    Section p(*pert, "training.perturbation");
    p.read("delta", t.perturbation.delta);
    if (const json* eta = p.child("eta")) {
      if (eta->is_null()) {
        t.perturbation.eta.reset();
      } else if (eta->is_number()) {
        t.perturbation.eta = eta->get<double>();
      } else {
        throw ConfigError("'training.perturbation.eta' must be a number or null");
      }
    }
    p.finish();
  }
  sec.finish();
}

void read_output(const json& node, ExperimentConfig& cfg) {
  Section sec(node, "output");
  sec.read("directory", cfg.output_directory);
  sec.read_list("seeds", cfg.training.seeds);
  sec.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    scenario.validate();
    training.validate();
  } catch (const std::logic_error& e) {
    throw ConfigError(e.what());
  }
  if (output_directory.empty()) throw ConfigError("output.directory must not be empty");
}

json to_json(const ExperimentConfig& cfg) {
  const ScenarioConfig& s = cfg.scenario;
  const TrainConfig& t = cfg.training;
  json doc;
  doc["scenario"] = {
      {"kind", kind_name(s.kind)},
      {"track_length", s.track_length},
      {"num_vehicles", s.num_vehicles},
      {"controlled_index", s.controlled_index},
      {"horizon", s.horizon},
      {"warmup_steps", s.warmup_steps},
      {"collision_penalty", s.collision_penalty},
      {"initial", {{"kind", initial_name(s.initial.kind)}, {"sigma", s.initial.sigma}}},
      {"idm",
       {{"v0", s.idm.v0},
        {"T", s.idm.T},
        {"a", s.idm.a},
        {"b", s.idm.b},
        {"delta_exp", s.idm.delta_exp},
        {"s0", s.idm.s0},
        {"l", s.idm.l}}},
      {"step",
       {{"dt", s.step.dt}, {"alpha_min", s.step.alpha_min}, {"alpha_max", s.step.alpha_max}}},
      {"figure_eight",
       {{"crossing_a", s.figure_eight.crossing_a},
        {"crossing_b", s.figure_eight.crossing_b},
        {"approach_window", s.figure_eight.approach_window},
        {"conflict_length", s.figure_eight.conflict_length},
        {"b_max", s.figure_eight.b_max}}},
  };
  doc["rewards"] = {
      {"alpha", s.weights.alpha},
      {"beta", s.weights.beta},
      {"lambda", s.weights.lambda},
      {"fuel",
       {{"c0", s.fuel.c0},
        {"c1", s.fuel.c1},
        {"c2", s.fuel.c2},
        {"c3", s.fuel.c3},
        {"c4", s.fuel.c4},
        {"g_idle", s.fuel.g_idle}}},
  };
  json perturbation = {{"delta", t.perturbation.delta}, {"eta", nullptr}};
  if (t.perturbation.eta) perturbation["eta"] = *t.perturbation.eta;
  doc["training"] = {
      {"algorithm", to_string(t.algorithm)},
      {"iterations", t.iterations},
      {"steps_per_iteration", t.steps_per_iteration},
      {"gamma", t.gamma},
      {"gae_lambda", t.gae_lambda},
      {"clip_ratio", t.clip_ratio},
      {"epochs", t.epochs},
      {"minibatch_size", t.minibatch_size},
      {"learning_rate", t.learning_rate},
      {"hidden_sizes", t.hidden_sizes},
      {"init_log_std", t.init_log_std},
      {"max_grad_norm", t.max_grad_norm},
      {"perturbation", perturbation},
  };
  doc["output"] = {{"directory", cfg.output_directory}, {"seeds", t.seeds}};
  return doc;
}

ExperimentConfig experiment_from_json(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "<root>");
  if (const json* s = root.child("scenario")) read_scenario(*s, cfg.scenario);
  if (const json* r = root.child("rewards")) read_rewards(*r, cfg.scenario);
  if (const json* t = root.child("training")) read_training(*t, cfg.training);
  if (const json* o = root.child("output")) read_output(*o, cfg);
  for (const auto& item : doc.items()) {
    const std::string& key = item.key();
    if (key != "scenario" && key != "rewards" && key != "training" && key != "output") {
      throw ConfigError("unknown top-level section '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_experiment(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return experiment_from_json(doc);
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_experiment(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_experiment(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace difftraffic
