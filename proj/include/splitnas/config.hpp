/* Copyright 2026 The splitnas Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Run configuration file (JSON). Every section and key is optional; unknown
// keys are rejected.
//
//   {
//     "search": {"lambda1": 1e-4, "lambda2": 0.5, "t_const": 2.0,
//                "lr_weights": 0.005, "lr_alpha": 0.05,
//                "warmup_epochs": 5, "search_epochs": 15, "retrain_epochs": 30,
//                "batch_size": 64, "seed": 1, "two_path": false,
//                "loss_mode": "multiclass", "optimizer": "adam",
//                "arch_split": "validation", "gate_point": "sampled"},
//     "space":  {"num_layers": 8, "width": 4, "candidates": ["identity", "mb3_e3", ...]},
//     "data":   {"height": 8, "width": 8, "channels": 3, "num_classes": 4,
//                "train_size": 2000, "val_size": 500, "noise": 0.3, "seed": 1},
//     "cost":   {"ms_per_mac": 1e-5}
//   }

#ifndef SPLITNAS_CONFIG_HPP_
#define SPLITNAS_CONFIG_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "splitnas/dataset.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/latency.hpp"
#include "splitnas/loss.hpp"
#include "splitnas/ops.hpp"
#include "splitnas/optim.hpp"

namespace splitnas {

enum class GatePoint {
  kSampled,  // gate gradients at the sampled one-hot (or two-path) network
  kRelaxed,  // gate gradients at the probability-weighted mixture
};

enum class ArchSplit { kValidation, kTrain };

struct SearchConfig {
  double lambda1 = 1e-4;
  double lambda2 = 0.0;
  double t_const = 0.0;
  double lr_weights = 0.005;
  double lr_alpha = 0.05;
  std::size_t warmup_epochs = 5;
  std::size_t search_epochs = 15;
  std::size_t retrain_epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  bool two_path = false;
  LossMode loss_mode = LossMode::kMulticlassSoftmax;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  ArchSplit arch_split = ArchSplit::kValidation;
  GatePoint gate_point = GatePoint::kSampled;

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be finite and >= 0");
    };
    nonneg(lambda1, "lambda1");
    nonneg(lambda2, "lambda2");
    nonneg(t_const, "t_const");
    if (!(lr_weights > 0.0) || !(lr_alpha > 0.0)) throw ValidationError("learning rates must be > 0");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  }
};

struct SpaceConfig {
  std::size_t num_layers = 8;
  std::size_t width = 4;
  std::vector<CandidateOpSpec> candidates = full_candidate_family();
};

struct RunConfig {
  SearchConfig search;
  SpaceConfig space;
  ToyDataOptions data;
  SynthOptions cost;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::string_view section,
                           std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ValidationError("config section '" + std::string(section) + "' must be an object");
  const std::set<std::string_view> known(keys);
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) {
      throw ValidationError("unknown key '" + k + "' in config section '" + std::string(section) + "'");
    }
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::reject_unknown(j, "<root>", {"search", "space", "data", "cost"});
    if (j.contains("search")) {
      const auto& s = j["search"];
      detail::reject_unknown(s, "search",
                             {"lambda1", "lambda2", "t_const", "lr_weights", "lr_alpha", "warmup_epochs",
                              "search_epochs", "retrain_epochs", "batch_size", "seed", "two_path", "loss_mode",
                              "optimizer", "arch_split", "gate_point"});
      auto& o = c.search;
      detail::read(s, "lambda1", o.lambda1);
      detail::read(s, "lambda2", o.lambda2);
      detail::read(s, "t_const", o.t_const);
      detail::read(s, "lr_weights", o.lr_weights);
      detail::read(s, "lr_alpha", o.lr_alpha);
      detail::read(s, "warmup_epochs", o.warmup_epochs);
      detail::read(s, "search_epochs", o.search_epochs);
      detail::read(s, "retrain_epochs", o.retrain_epochs);
      detail::read(s, "batch_size", o.batch_size);
      detail::read(s, "seed", o.seed);
      detail::read(s, "two_path", o.two_path);
      if (s.contains("loss_mode")) o.loss_mode = parse_loss_mode(s["loss_mode"].get<std::string>());
      if (s.contains("optimizer")) o.optimizer = parse_optimizer(s["optimizer"].get<std::string>());
      if (s.contains("arch_split")) {
        const auto v = s["arch_split"].get<std::string>();
        if (v == "validation") o.arch_split = ArchSplit::kValidation;
        else if (v == "train") o.arch_split = ArchSplit::kTrain;
        else throw ValidationError("arch_split must be 'validation' or 'train'");
      }
      if (s.contains("gate_point")) {
        const auto v = s["gate_point"].get<std::string>();
        if (v == "sampled") o.gate_point = GatePoint::kSampled;
        else if (v == "relaxed") o.gate_point = GatePoint::kRelaxed;
        else throw ValidationError("gate_point must be 'sampled' or 'relaxed'");
      }
    }
    if (j.contains("space")) {
      const auto& s = j["space"];
      detail::reject_unknown(s, "space", {"num_layers", "width", "candidates"});
      detail::read(s, "num_layers", c.space.num_layers);
      detail::read(s, "width", c.space.width);
      if (s.contains("candidates")) {
        c.space.candidates.clear();
        for (const auto& name : s["candidates"]) c.space.candidates.push_back(CandidateOpSpec::parse(name.get<std::string>()));
      }
    }
    if (j.contains("data")) {
      const auto& s = j["data"];
      detail::reject_unknown(s, "data",
                             {"height", "width", "channels", "num_classes", "train_size", "val_size", "noise", "seed"});
      detail::read(s, "height", c.data.height);
      detail::read(s, "width", c.data.width);
      detail::read(s, "channels", c.data.channels);
      detail::read(s, "num_classes", c.data.num_classes);
      detail::read(s, "train_size", c.data.train_size);
      detail::read(s, "val_size", c.data.val_size);
      detail::read(s, "noise", c.data.noise);
      detail::read(s, "seed", c.data.seed);
    }
    if (j.contains("cost")) {
      const auto& s = j["cost"];
      detail::reject_unknown(s, "cost", {"ms_per_mac"});
      detail::read(s, "ms_per_mac", c.cost.ms_per_mac);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  c.search.validate();
  if (c.space.num_layers == 0 || c.space.width == 0) throw ValidationError("space needs num_layers and width >= 1");
  if (c.space.candidates.empty()) throw ValidationError("space needs at least one candidate");
  if (c.search.loss_mode == LossMode::kBinarySigmoid && c.data.num_classes != 2) {
    throw ValidationError("binary loss_mode needs data.num_classes = 2");
  }
  return c;
}

inline RunConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  const auto& s = c.search;
  j["search"] = {{"lambda1", s.lambda1},
                 {"lambda2", s.lambda2},
                 {"t_const", s.t_const},
                 {"lr_weights", s.lr_weights},
                 {"lr_alpha", s.lr_alpha},
                 {"warmup_epochs", s.warmup_epochs},
                 {"search_epochs", s.search_epochs},
                 {"retrain_epochs", s.retrain_epochs},
                 {"batch_size", s.batch_size},
                 {"seed", s.seed},
                 {"two_path", s.two_path},
                 {"loss_mode", std::string(loss_mode_name(s.loss_mode))},
                 {"optimizer", std::string(optimizer_name(s.optimizer))},
                 {"arch_split", s.arch_split == ArchSplit::kValidation ? "validation" : "train"},
                 {"gate_point", s.gate_point == GatePoint::kSampled ? "sampled" : "relaxed"}};
  std::vector<std::string> names;
  for (const auto& cand : c.space.candidates) names.push_back(cand.name());
  j["space"] = {{"num_layers", c.space.num_layers}, {"width", c.space.width}, {"candidates", names}};
  const auto& d = c.data;
  j["data"] = {{"height", d.height},       {"width", d.width},       {"channels", d.channels},
               {"num_classes", d.num_classes}, {"train_size", d.train_size}, {"val_size", d.val_size},
               {"noise", d.noise},         {"seed", d.seed}};
  j["cost"] = {{"ms_per_mac", c.cost.ms_per_mac}};
  return j;
}

}  // namespace splitnas

#endif  // SPLITNAS_CONFIG_HPP_
