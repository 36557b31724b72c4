#include "atomkit/config_io.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace atomkit {

std::string to_string(SymmetryMode mode) {
  return mode == SymmetryMode::canonicalized ? "canonicalized" : "quasi_equivariant";
}
std::string to_string(LiftingKind kind) { return kind == LiftingKind::linear ? "linear" : "equivariant"; }
std::string to_string(DiscretizationStrategy s) { return s == DiscretizationStrategy::tail ? "tail" : "uniform"; }
std::string to_string(ToyPotential p) { return p == ToyPotential::pairwise_spring ? "pairwise_spring" : "harmonic"; }

SymmetryMode parse_symmetry_mode(const std::string& s) {
  if (s == "quasi_equivariant") return SymmetryMode::quasi_equivariant;
  if (s == "canonicalized") return SymmetryMode::canonicalized;
  throw ConfigError("unknown symmetry mode '" + s + "' (quasi_equivariant|canonicalized)");
}
LiftingKind parse_lifting_kind(const std::string& s) {
  if (s == "equivariant") return LiftingKind::equivariant;
  if (s == "linear") return LiftingKind::linear;
  throw ConfigError("unknown lifting '" + s + "' (equivariant|linear)");
}
DiscretizationStrategy parse_strategy(const std::string& s) {
  if (s == "uniform") return DiscretizationStrategy::uniform;
  if (s == "tail") return DiscretizationStrategy::tail;
  throw ConfigError("unknown discretization '" + s + "' (uniform|tail)");
}
ToyPotential parse_potential(const std::string& s) {
  if (s == "harmonic") return ToyPotential::harmonic;
  if (s == "pairwise_spring" || s == "pairwise-spring") return ToyPotential::pairwise_spring;
  throw ConfigError("unknown potential '" + s + "' (harmonic|pairwise_spring)");
}

namespace {

bool non_negative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Key -> assignment from a JSON value; the table doubles as the schema.
using Setter = std::function<void(const Json&)>;

class Fields {
 public:
  explicit Fields(std::string what) : what_(std::move(what)) {}

  Fields& size(const std::string& key, std::size_t& out) {
    table_[key] = [this, key, &out](const Json& v) {
      if (!non_negative_integer(v)) fail(key, "a non-negative integer");
      out = v.get<std::size_t>();
    };
    return *this;
  }
  Fields& u64(const std::string& key, std::uint64_t& out) {
    table_[key] = [this, key, &out](const Json& v) {
      if (!non_negative_integer(v)) fail(key, "a non-negative integer");
      out = v.get<std::uint64_t>();
    };
    return *this;
  }
  Fields& real(const std::string& key, double& out) {
    table_[key] = [this, key, &out](const Json& v) {
      if (!v.is_number()) fail(key, "a number");
      out = v.get<double>();
    };
    return *this;
  }
  Fields& flag(const std::string& key, bool& out) {
    table_[key] = [this, key, &out](const Json& v) {
      if (!v.is_boolean()) fail(key, "a boolean");
      out = v.get<bool>();
    };
    return *this;
  }
  template <class E>
  Fields& named(const std::string& key, E& out, E (*parse)(const std::string&)) {
    table_[key] = [this, key, &out, parse](const Json& v) {
      if (!v.is_string()) fail(key, "a string");
      out = parse(v.get<std::string>());
    };
    return *this;
  }
  Fields& custom(const std::string& key, Setter s) {
    table_[key] = std::move(s);
    return *this;
  }

  void apply(const Json& j) const {
    if (!j.is_object()) throw ConfigError(what_ + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto f = table_.find(it.key());
      if (f == table_.end()) throw ConfigError(what_ + ": unknown key '" + it.key() + "'");
      f->second(it.value());
    }
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw ConfigError(what_ + ": '" + key + "' must be " + expected);
  }

  std::string what_;
  std::map<std::string, Setter> table_;
};

}  // namespace

Json to_json(const AtomModelConfig& c) {
  return Json{{"embedding_dim", c.embedding_dim},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"rope_base", c.rope_base},
              {"rope_timescale", c.rope_timescale},
              {"attention_dropout", c.attention_dropout},
              {"mlp_hidden_multiple", c.mlp_hidden_multiple},
              {"delta_prediction", c.delta_prediction},
              {"mode", to_string(c.mode)},
              {"lifting", to_string(c.lifting)},
              {"rwpe_enabled", c.rwpe_enabled},
              {"rwpe_length", c.rwpe_length},
              {"rwpe_radius", c.rwpe_radius},
              {"output_heads", c.output_heads},
              {"zero_init_output", c.zero_init_output},
              {"norm_eps", c.norm_eps}};
}

AtomModelConfig model_config_from_json(const Json& j, AtomModelConfig c) {
  Fields("model config")
      .size("embedding_dim", c.embedding_dim)
      .size("n_layers", c.n_layers)
      .size("n_heads", c.n_heads)
      .real("rope_base", c.rope_base)
      .real("rope_timescale", c.rope_timescale)
      .real("attention_dropout", c.attention_dropout)
      .size("mlp_hidden_multiple", c.mlp_hidden_multiple)
      .flag("delta_prediction", c.delta_prediction)
      .named("mode", c.mode, &parse_symmetry_mode)
      .named("lifting", c.lifting, &parse_lifting_kind)
      .flag("rwpe_enabled", c.rwpe_enabled)
      .size("rwpe_length", c.rwpe_length)
      .real("rwpe_radius", c.rwpe_radius)
      .size("output_heads", c.output_heads)
      .flag("zero_init_output", c.zero_init_output)
      .real("norm_eps", c.norm_eps)
      .apply(j);
  return c;
}

Json to_json(const TrainRunConfig& c) {
  return Json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"label_noise", c.label_noise},
              {"horizon", c.horizon},
              {"n_steps", c.n_steps},
              {"strategy", to_string(c.strategy)},
              {"tail_lag", c.tail_lag},
              {"min_lag", c.min_lag},
              {"seed", c.seed},
              {"optimizer",
               {{"lr", c.optimizer.lr},
                {"beta1", c.optimizer.beta1},
                {"beta2", c.optimizer.beta2},
                {"weight_decay", c.optimizer.weight_decay},
                {"eps", c.optimizer.eps}}},
              {"max_grad_norm", c.max_grad_norm},
              {"train_frames", c.train_frames},
              {"val_frames", c.val_frames},
              {"window_stride", c.window_stride},
              {"val_stride", c.val_stride},
              {"eval_batch_size", c.eval_batch_size}};
}

TrainRunConfig train_config_from_json(const Json& j, TrainRunConfig c) {
  Fields("train config")
      .size("batch_size", c.batch_size)
      .size("epochs", c.epochs)
      .real("label_noise", c.label_noise)
      .real("horizon", c.horizon)
      .size("n_steps", c.n_steps)
      .named("strategy", c.strategy, &parse_strategy)
      .real("tail_lag", c.tail_lag)
      .real("min_lag", c.min_lag)
      .u64("seed", c.seed)
      .custom("optimizer",
              [&c](const Json& v) {
                Fields("optimizer config")
                    .real("lr", c.optimizer.lr)
                    .real("beta1", c.optimizer.beta1)
                    .real("beta2", c.optimizer.beta2)
                    .real("weight_decay", c.optimizer.weight_decay)
                    .real("eps", c.optimizer.eps)
                    .apply(v);
              })
      .real("max_grad_norm", c.max_grad_norm)
      .size("train_frames", c.train_frames)
      .size("val_frames", c.val_frames)
      .size("window_stride", c.window_stride)
      .size("val_stride", c.val_stride)
      .size("eval_batch_size", c.eval_batch_size)
      .apply(j);
  return c;
}

Json to_json(const ToyConfig& c) {
  return Json{{"potential", to_string(c.potential)},
              {"n_atoms", c.n_atoms},
              {"steps", c.steps},
              {"dt", c.dt},
              {"substeps", c.substeps},
              {"stiffness", c.stiffness},
              {"displacement", c.displacement},
              {"velocity", c.velocity},
              {"center", c.center},
              {"seed", c.seed}};
}

ToyConfig toy_config_from_json(const Json& j, ToyConfig c) {
  Fields("toy config")
      .named("potential", c.potential, &parse_potential)
      .size("n_atoms", c.n_atoms)
      .size("steps", c.steps)
      .real("dt", c.dt)
      .size("substeps", c.substeps)
      .real("stiffness", c.stiffness)
      .real("displacement", c.displacement)
      .real("velocity", c.velocity)
      .flag("center", c.center)
      .u64("seed", c.seed)
      .apply(j);
  return c;
}

Json to_json(const SelectionConfig& c) {
  Json j{{"lower", c.lower}, {"upper", c.upper}};
  j["accepted_cap"] = c.accepted_cap ? Json(*c.accepted_cap) : Json(nullptr);
  j["max_oxygen"] = c.max_oxygen;
  j["max_nitrogen"] = c.max_nitrogen;
  j["require_connected"] = c.require_connected;
  j["max_accepted"] = c.max_accepted;
  j["radius"] = c.radius;
  j["nbits"] = c.nbits;
  return j;
}

SelectionConfig selection_config_from_json(const Json& j, SelectionConfig c) {
  // The preset goes first so an explicit accepted_cap beside it wins.
  if (j.is_object() && j.contains("preset")) {
    if (!j["preset"].is_string()) throw ConfigError("selection config: 'preset' must be a string");
    c.accepted_cap = selection_preset(j["preset"].get<std::string>()).accepted_cap;
  }
  Fields("selection config")
      .real("lower", c.lower)
      .real("upper", c.upper)
      .custom("accepted_cap",
              [&c](const Json& v) {
                if (v.is_null()) c.accepted_cap.reset();
                else if (v.is_number()) c.accepted_cap = v.get<double>();
                else throw ConfigError("selection config: 'accepted_cap' must be a number or null");
              })
      .custom("preset", [](const Json&) {})
      .size("max_oxygen", c.max_oxygen)
      .size("max_nitrogen", c.max_nitrogen)
      .flag("require_connected", c.require_connected)
      .size("max_accepted", c.max_accepted)
      .size("radius", c.radius)
      .size("nbits", c.nbits)
      .apply(j);
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace atomkit
