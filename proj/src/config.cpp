#include "habit/config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "habit/dataset_io.hpp"
#include "habit/error.hpp"

namespace habit {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

template <typename T>
T get_as(const json& value, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!value.is_number()) throw ConfigError(key + ": expected a number");
      return value.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!value.is_number_integer()) throw ConfigError(key + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (value.is_number_unsigned()) return value.get<T>();
        if (value.get<std::int64_t>() < 0) throw ConfigError(key + ": must be nonnegative");
      }
      return value.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) throw ConfigError(key + ": expected a string");
      return value.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::vector<int> get_int_list(const json& value, const std::string& key) {
  if (!value.is_array()) throw ConfigError(key + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& v : value) {
    const int k = get_as<int>(v, key);
    if (k < 1) throw ConfigError(key + ": every entry must be at least 1");
    out.push_back(k);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

template <typename T, typename Fn>
Setter field(Fn&& member) {
  return [member](ExperimentConfig& c, const json& v, const std::string& key) {
    member(c) = get_as<T>(v, key);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"n_triplets", field<std::int64_t>([](ExperimentConfig& c) -> auto& { return c.gen.n_triplets; })},
      {"n_gallery", field<std::int64_t>([](ExperimentConfig& c) -> auto& { return c.gen.n_gallery; })},
      {"d_in", field<int>([](ExperimentConfig& c) -> auto& { return c.gen.d_in; })},
      {"n_attrs", field<int>([](ExperimentConfig& c) -> auto& { return c.gen.n_attrs; })},
      {"n_attr_values", field<int>([](ExperimentConfig& c) -> auto& { return c.gen.n_attr_values; })},
      {"max_delta_support", field<int>([](ExperimentConfig& c) -> auto& { return c.gen.max_delta_support; })},
      {"sigma", field<double>([](ExperimentConfig& c) -> auto& { return c.gen.sigma; })},
      {"partial_fraction", field<double>([](ExperimentConfig& c) -> auto& { return c.gen.partial_fraction; })},
      {"unmentioned_noise_std",
       field<double>([](ExperimentConfig& c) -> auto& { return c.gen.unmentioned_noise_std; })},
      {"epochs", field<int>([](ExperimentConfig& c) -> auto& { return c.train.epochs; })},
      {"batch_size", field<int>([](ExperimentConfig& c) -> auto& { return c.train.batch_size; })},
      {"learning_rate", field<double>([](ExperimentConfig& c) -> auto& { return c.train.learning_rate; })},
      {"weight_decay", field<double>([](ExperimentConfig& c) -> auto& { return c.train.weight_decay; })},
      {"beta1", field<double>([](ExperimentConfig& c) -> auto& { return c.train.beta1; })},
      {"beta2", field<double>([](ExperimentConfig& c) -> auto& { return c.train.beta2; })},
      {"adam_eps", field<double>([](ExperimentConfig& c) -> auto& { return c.train.adam_eps; })},
      {"tau", field<double>([](ExperimentConfig& c) -> auto& { return c.train.tau; })},
      {"tau_mk", field<double>([](ExperimentConfig& c) -> auto& { return c.train.tau_mk; })},
      {"kappa", field<double>([](ExperimentConfig& c) -> auto& { return c.train.kappa; })},
      {"gamma", field<double>([](ExperimentConfig& c) -> auto& { return c.train.gamma; })},
      {"m_base", field<double>([](ExperimentConfig& c) -> auto& { return c.train.m_base; })},
      {"dbscan_eps", field<double>([](ExperimentConfig& c) -> auto& { return c.train.dbscan_eps; })},
      {"dbscan_min_pts", field<int>([](ExperimentConfig& c) -> auto& { return c.train.dbscan_min_pts; })},
      {"q_tokens", field<int>([](ExperimentConfig& c) -> auto& { return c.train.q_tokens; })},
      {"embed_dim", field<int>([](ExperimentConfig& c) -> auto& { return c.train.embed_dim; })},
      {"subset_size", field<int>([](ExperimentConfig& c) -> auto& { return c.eval.subset_size; })},
      {"test_fraction", field<double>([](ExperimentConfig& c) -> auto& { return c.eval.test_fraction; })},
      {"data_dir", field<std::string>([](ExperimentConfig& c) -> auto& { return c.data_dir; })},
      {"out_dir", field<std::string>([](ExperimentConfig& c) -> auto& { return c.out_dir; })},
      {"seed",
       [](ExperimentConfig& c, const json& v, const std::string& key) {
         c.set_seed(get_as<std::uint64_t>(v, key));
       }},
      {"ks", [](ExperimentConfig& c, const json& v, const std::string& key) { c.eval.ks = get_int_list(v, key); }},
      {"sub_ks",
       [](ExperimentConfig& c, const json& v, const std::string& key) { c.eval.sub_ks = get_int_list(v, key); }},
      {"ablations",
       [](ExperimentConfig& c, const json& v, const std::string& key) {
         if (!v.is_array()) throw ConfigError(key + ": expected an array of flag names");
         AblationFlags flags;
         for (const auto& name : v) flags.set(AblationFlags::parse(get_as<std::string>(name, key)));
         c.train.ablations = flags;
       }},
  };
  return table;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  validate(cfg.gen);
  validate(cfg.train);
  if (cfg.eval.ks.empty()) throw ConfigError("ks: must not be empty");
  if (cfg.eval.sub_ks.empty()) throw ConfigError("sub_ks: must not be empty");
  if (cfg.eval.subset_size < 1) throw ConfigError("subset_size: must be at least 1");
  if (!(cfg.eval.test_fraction > 0.0 && cfg.eval.test_fraction < 1.0)) {
    throw ConfigError("test_fraction: must lie strictly between 0 and 1");
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  const auto& table = setters();
  // Seed first so per-section seeds stay in sync regardless of key order.
  if (doc.contains("seed")) table.at("seed")(cfg, doc["seed"], "seed");
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key + ": unknown configuration key");
    it->second(cfg, value, key);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_text_file(path));
}

std::string to_json_string(const ExperimentConfig& c, bool include_paths) {
  ordered_json j;
  j["seed"] = c.seed;
  j["n_triplets"] = c.gen.n_triplets;
  j["n_gallery"] = c.gen.n_gallery;
  j["d_in"] = c.gen.d_in;
  j["n_attrs"] = c.gen.n_attrs;
  j["n_attr_values"] = c.gen.n_attr_values;
  j["max_delta_support"] = c.gen.max_delta_support;
  j["sigma"] = c.gen.sigma;
  j["partial_fraction"] = c.gen.partial_fraction;
  j["unmentioned_noise_std"] = c.gen.unmentioned_noise_std;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["learning_rate"] = c.train.learning_rate;
  j["weight_decay"] = c.train.weight_decay;
  j["beta1"] = c.train.beta1;
  j["beta2"] = c.train.beta2;
  j["adam_eps"] = c.train.adam_eps;
  j["tau"] = c.train.tau;
  j["tau_mk"] = c.train.tau_mk;
  j["kappa"] = c.train.kappa;
  j["gamma"] = c.train.gamma;
  j["m_base"] = c.train.m_base;
  j["dbscan_eps"] = c.train.dbscan_eps;
  j["dbscan_min_pts"] = c.train.dbscan_min_pts;
  j["q_tokens"] = c.train.q_tokens;
  j["embed_dim"] = c.train.embed_dim;
  j["ablations"] = c.train.ablations.names();
  j["ks"] = c.eval.ks;
  j["sub_ks"] = c.eval.sub_ks;
  j["subset_size"] = c.eval.subset_size;
  j["test_fraction"] = c.eval.test_fraction;
  if (include_paths) {
    j["data_dir"] = c.data_dir;
    j["out_dir"] = c.out_dir;
  }
  return j.dump(2) + "\n";
}

void set_axis_value(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  double v = 0;
  std::istringstream in(value);
  in >> v;
  if (!in || !in.eof()) throw ConfigError("values: '" + value + "' is not a number");
  if (axis == "sigma") {
    cfg.gen.sigma = v;
  } else if (axis == "kappa") {
    cfg.train.kappa = v;
  } else if (axis == "gamma") {
    cfg.train.gamma = v;
  } else {
    throw ConfigError("axis: must be one of sigma, kappa, gamma (got '" + axis + "')");
  }
  validate(cfg);
}

std::vector<int> parse_int_list(const std::string& text, const char* field) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw ConfigError(std::string(field) + ": '" + item + "' is not an integer");
    }
    if (used != item.size() || k < 1) {
      throw ConfigError(std::string(field) + ": '" + item + "' is not a positive integer");
    }
    out.push_back(k);
  }
  if (out.empty()) throw ConfigError(std::string(field) + ": empty list");
  return out;
}

}  // namespace habit
