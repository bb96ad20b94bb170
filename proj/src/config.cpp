// Copyright 2026 The LTDR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ltdr/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ltdr/errors.hpp"

namespace ltdr {
namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw ConfigError("field \"" + field + "\": " + what);
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("unknown key \"" + where + it.key() + "\"");
    }
  }
}

int get_int(const json& obj, const char* key, const std::string& field, int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) field_error(field, "expected an integer, got " + v.dump());
  const auto x = v.get<long long>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    field_error(field, "out of range");
  }
  return static_cast<int>(x);
}

std::uint64_t get_seed(const json& v, const std::string& field) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                  v.get<long long>() < 0)) {
    field_error(field, "expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

double get_real(const json& obj, const char* key, const std::string& field, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) field_error(field, "expected a number, got " + v.dump());
  return v.get<double>();
}

bool get_bool(const json& obj, const char* key, const std::string& field, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) field_error(field, "expected true or false, got " + v.dump());
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& field) {
  if (!v.is_string()) field_error(field, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

TailSelector selector_from_string(const std::string& s) {
  if (s == "VTT") return TailSelector::kVisionTail;
  if (s == "VHT") return TailSelector::kVisionHead;
  if (s == "none") return TailSelector::kNone;
  field_error("selector", "expected \"VTT\", \"VHT\" or \"none\", got \"" + s + "\"");
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  field_error("optimizer", "expected \"adam\" or \"sgd\", got \"" + s + "\"");
}

Arm parse_arm(const json& v, const std::string& field) {
  const std::string name = get_string(v, field);
  try {
    return arm_from_string(name);
  } catch (const ConfigError&) {
    field_error(field, "unknown arm \"" + name + "\"");
  }
}

WorldParams parse_world(const json& obj, WorldParams w, bool& seed_given) {
  if (!obj.is_object()) field_error("world", "expected an object");
  reject_unknown(obj,
                 {"vision_concepts", "language_concepts", "width", "noise_sigma", "zipf_exponent",
                  "background_concepts", "seed"},
                 "world.");
  w.vision_concepts = get_int(obj, "vision_concepts", "world.vision_concepts", w.vision_concepts);
  w.language_concepts =
      get_int(obj, "language_concepts", "world.language_concepts", w.language_concepts);
  w.width = get_int(obj, "width", "world.width", w.width);
  w.noise_sigma = get_real(obj, "noise_sigma", "world.noise_sigma", w.noise_sigma);
  w.zipf_exponent = get_real(obj, "zipf_exponent", "world.zipf_exponent", w.zipf_exponent);
  if (obj.contains("background_concepts")) {
    const json& v = obj.at("background_concepts");
    if (!v.is_array()) field_error("world.background_concepts", "expected an array of integers");
    w.background_concepts.clear();
    for (const auto& c : v) {
      if (!c.is_number_integer()) {
        field_error("world.background_concepts", "expected integers, got " + c.dump());
      }
      w.background_concepts.push_back(c.get<int>());
    }
  }
  seed_given = obj.contains("seed");
  if (seed_given) w.seed = get_seed(obj.at("seed"), "world.seed");
  return w;
}

void check_arm_assertions(const json& doc, const ExperimentConfig& c) {
  if (doc.contains("balancing")) {
    const std::string want = get_string(doc.at("balancing"), "balancing");
    const std::string have = to_string(arm_balancing(c.arm));
    if (want != have) {
      throw ConfigError("conflict: arm " + to_string(c.arm) + " balances \"" + have +
                        "\" but balancing is \"" + want + "\"");
    }
  }
  if (doc.contains("eea")) {
    const bool want = get_bool(doc, "eea", "eea", false);
    if (want != arm_uses_eea(c.arm)) {
      throw ConfigError("conflict: arm " + to_string(c.arm) +
                        (arm_uses_eea(c.arm) ? " uses" : " does not use") +
                        " enhanced expert activation but eea is " + (want ? "true" : "false"));
    }
  }
  // Only EEA arms read the selector, so asking for VHT elsewhere is a mistake.
  if (c.selector == TailSelector::kVisionHead) {
    bool any_eea = arm_uses_eea(c.arm);
    for (Arm a : c.arms) any_eea = any_eea || arm_uses_eea(a);
    if (!any_eea) {
      throw ConfigError("conflict: selector " + to_string(c.selector) + " given but arm " +
                        to_string(c.arm) + " does not use enhanced expert activation");
    }
  }
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

ExperimentConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc,
                 {"arm", "K", "k", "a", "alpha", "layers", "residual", "hidden", "steps",
                  "learning_rate", "optimizer", "seed", "selector", "renormalize_topk",
                  "unscaled_language_balance", "vision_group_size", "vision_group_k", "language_group_k",
                  "world", "vision_tokens", "language_tokens", "eval_batches", "load_skew_bound",
                  "arms", "seeds", "workers", "balancing", "eea"},
                 "");
  ExperimentConfig c;
  if (doc.contains("arm")) c.arm = parse_arm(doc.at("arm"), "arm");
  c.num_experts = get_int(doc, "K", "K", c.num_experts);
  c.top_k = get_int(doc, "k", "k", c.top_k);
  // a follows K unless given, so {"K": 8} keeps a = K.
  c.tail_k = get_int(doc, "a", "a", c.num_experts);
  c.alpha = get_real(doc, "alpha", "alpha", c.alpha);
  c.num_layers = get_int(doc, "layers", "layers", c.num_layers);
  c.residual = get_bool(doc, "residual", "residual", c.residual);
  c.hidden = get_int(doc, "hidden", "hidden", c.hidden);
  c.steps = get_int(doc, "steps", "steps", c.steps);
  c.learning_rate = get_real(doc, "learning_rate", "learning_rate", c.learning_rate);
  if (doc.contains("optimizer")) {
    c.optimizer = optimizer_from_string(get_string(doc.at("optimizer"), "optimizer"));
  }
  if (doc.contains("seed")) c.seed = get_seed(doc.at("seed"), "seed");
  if (doc.contains("selector")) {
    c.selector = selector_from_string(get_string(doc.at("selector"), "selector"));
  }
  c.renormalize_topk = get_bool(doc, "renormalize_topk", "renormalize_topk", c.renormalize_topk);
  c.unscaled_language_balance = get_bool(doc, "unscaled_language_balance", "unscaled_language_balance", c.unscaled_language_balance);
  c.vision_group_size =
      get_int(doc, "vision_group_size", "vision_group_size", c.vision_group_size);
  c.vision_group_k = get_int(doc, "vision_group_k", "vision_group_k", c.vision_group_k);
  c.language_group_k = get_int(doc, "language_group_k", "language_group_k", c.language_group_k);
  if (doc.contains("world")) {
    bool seed_given = false;
    c.world = parse_world(doc.at("world"), c.world, seed_given);
    c.world_seed_from_run = !seed_given;
  }
  c.vision_tokens = get_int(doc, "vision_tokens", "vision_tokens", c.vision_tokens);
  c.language_tokens = get_int(doc, "language_tokens", "language_tokens", c.language_tokens);
  c.eval_batches = get_int(doc, "eval_batches", "eval_batches", c.eval_batches);
  c.load_skew_bound = get_real(doc, "load_skew_bound", "load_skew_bound", c.load_skew_bound);
  if (doc.contains("arms")) {
    const json& v = doc.at("arms");
    if (!v.is_array()) field_error("arms", "expected an array of arm names");
    c.arms.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      c.arms.push_back(parse_arm(v[i], "arms[" + std::to_string(i) + "]"));
    }
  }
  if (doc.contains("seeds")) {
    const json& v = doc.at("seeds");
    if (!v.is_array() || v.empty()) field_error("seeds", "expected a non-empty array of seeds");
    c.seeds.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      c.seeds.push_back(get_seed(v[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  c.workers = get_int(doc, "workers", "workers", c.workers);

  check_arm_assertions(doc, c);
  c.validate();
  for (Arm a : c.arms) c.with_arm_seed(a, c.seed).validate();
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(doc);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error reading config " + path.string());
  return parse_config_text(buf.str());
}

json config_to_json(const ExperimentConfig& c) {
  json world = {{"vision_concepts", c.world.vision_concepts},
                {"language_concepts", c.world.language_concepts},
                {"width", c.world.width},
                {"noise_sigma", c.world.noise_sigma},
                {"zipf_exponent", c.world.zipf_exponent},
                {"background_concepts", c.world.background_concepts}};
  if (!c.world_seed_from_run) world["seed"] = c.world.seed;
  json arms = json::array();
  for (Arm a : c.arms) arms.push_back(to_string(a));
  return {{"arm", to_string(c.arm)},
          {"K", c.num_experts},
          {"k", c.top_k},
          {"a", c.tail_k},
          {"alpha", c.alpha},
          {"layers", c.num_layers},
          {"residual", c.residual},
          {"hidden", c.hidden},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"optimizer", to_string(c.optimizer)},
          {"seed", c.seed},
          {"selector", to_string(c.selector)},
          {"renormalize_topk", c.renormalize_topk},
          {"unscaled_language_balance", c.unscaled_language_balance},
          {"vision_group_size", c.vision_group_size},
          {"vision_group_k", c.vision_group_k},
          {"language_group_k", c.language_group_k},
          {"world", world},
          {"vision_tokens", c.vision_tokens},
          {"language_tokens", c.language_tokens},
          {"eval_batches", c.eval_batches},
          {"load_skew_bound", c.load_skew_bound},
          {"arms", arms},
          {"seeds", c.seeds},
          {"workers", c.workers}};
}

}  // namespace ltdr
