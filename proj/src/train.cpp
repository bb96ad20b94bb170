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

#include "ltdr/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "ltdr/errors.hpp"
#include "ltdr/kernels.hpp"

namespace ltdr {
namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalStream = 3;

struct ArmInfo {
  Arm arm;
  const char* name;
  BalancingScope balancing;
  bool eea;
  bool grouped;
};

constexpr ArmInfo kArms[] = {
    {Arm::kBaseline, "baseline", BalancingScope::kAllTokens, false, false},
    {Arm::kDar, "DAR", BalancingScope::kLanguageOnly, false, false},
    {Arm::kEea, "EEA", BalancingScope::kAllTokens, true, false},
    {Arm::kLtdr, "LTDR", BalancingScope::kLanguageOnly, true, false},
    {Arm::kMinusLlb, "minus-LLB", BalancingScope::kVisionOnly, false, false},
    {Arm::kMinusAlb, "minus-ALB", BalancingScope::kNone, false, false},
    {Arm::kModalityGrouped, "modality-grouped", BalancingScope::kAllTokens, false, true},
    {Arm::kModalityGroupedDar, "modality-grouped-DAR", BalancingScope::kLanguageOnly, false, true},
};

const ArmInfo& info(Arm arm) {
  for (const auto& a : kArms)
    if (a.arm == arm) return a;
  throw ConfigError("unknown arm");
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string snapshot(const Model& model, long long step, const StepLosses& losses) {
  std::ostringstream os;
  os << "step " << step << ": task_loss=" << losses.task << " balance_loss=" << losses.balance
     << " total=" << losses.total << '\n';
  for (const auto& p : model.parameters()) {
    double norm = 0.0, gnorm = 0.0;
    for (double v : p.tensor.values()) norm += v * v;
    for (double g : p.tensor.grad()) gnorm += g * g;
    os << "  " << p.name << " |w|=" << std::sqrt(norm) << " |g|=" << std::sqrt(gnorm) << '\n';
  }
  return os.str();
}

}  // namespace

std::string to_string(Arm arm) { return info(arm).name; }

Arm arm_from_string(const std::string& name) {
  for (const auto& a : kArms)
    if (name == a.name) return a.arm;
  throw ConfigError("unknown arm \"" + name + "\"");
}

const std::vector<Arm>& all_arms() {
  static const std::vector<Arm> arms = [] {
    std::vector<Arm> v;
    for (const auto& a : kArms) v.push_back(a.arm);
    return v;
  }();
  return arms;
}

BalancingScope arm_balancing(Arm arm) { return info(arm).balancing; }
bool arm_uses_eea(Arm arm) { return info(arm).eea; }
bool arm_is_grouped(Arm arm) { return info(arm).grouped; }

void ExperimentConfig::validate() const {
  info(arm);
  if (num_layers < 1) throw ConfigError("layers must be >= 1");
  if (hidden < 0) throw ConfigError("hidden must be >= 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (vision_tokens < 0 || language_tokens < 0 || vision_tokens + language_tokens < 1) {
    throw ConfigError("batch must contain at least one token");
  }
  if (eval_batches < 0) throw ConfigError("eval_batches must be >= 0");
  if (!(load_skew_bound >= 1.0)) throw ConfigError("load_skew_bound must be >= 1");
  if (workers < 0) throw ConfigError("workers must be >= 0");
  if (arm_uses_eea(arm) && selector == TailSelector::kNone) {
    throw ConfigError("arm " + to_string(arm) + " needs a tail selector (VTT or VHT), got none");
  }
  if (arm_uses_eea(arm) && vision_tokens < 1) {
    throw ConfigError("arm " + to_string(arm) + " needs vision tokens in every batch");
  }
  world.validate();
  moe_config().validate();
}

WorldParams ExperimentConfig::resolved_world() const {
  WorldParams w = world;
  if (world_seed_from_run) w.seed = seed;
  return w;
}

MoEConfig ExperimentConfig::moe_config() const {
  MoEConfig c;
  c.num_experts = num_experts;
  c.top_k = top_k;
  c.tail_k = tail_k;
  c.alpha = alpha;
  c.balancing = arm_balancing(arm);
  c.unscaled_language_balance = unscaled_language_balance;
  c.selector = arm_uses_eea(arm) ? selector : TailSelector::kNone;
  c.renormalize_topk = renormalize_topk;
  if (arm_is_grouped(arm)) {
    c.layout = ExpertGroupLayout::modality_grouped(num_experts, vision_group_size, vision_group_k,
                                                   language_group_k);
  }
  return c;
}

ModelShape ExperimentConfig::model_shape() const {
  return {world.width, hidden_width(), num_experts, num_layers,
          world.vision_concepts + world.language_concepts, residual};
}

ExperimentConfig ExperimentConfig::with_arm_seed(Arm a, std::uint64_t s) const {
  ExperimentConfig c = *this;
  c.arm = a;
  c.seed = s;
  return c;
}

double TrainTrace::mean_step_time_ms() const {
  if (step_time_ms.empty()) return 0.0;
  double s = 0.0;
  for (double t : step_time_ms) s += t;
  return s / static_cast<double>(step_time_ms.size());
}

StepLosses train_step(Model& model, Optimizer& optimizer, const TokenBatch& batch,
                      const MoEConfig& config) {
  const ForwardPass pass = forward(model, batch, config);
  StepLosses losses{pass.task_loss.item(), pass.balance_loss.item(), pass.total_loss.item()};
  if (!std::isfinite(losses.total) || !std::isfinite(losses.task) || !std::isfinite(losses.balance)) {
    throw NumericError("non-finite loss", snapshot(model, -1, losses));
  }
  backward(pass.total_loss);
  const auto params = model.parameters();
  for (const auto& p : params) {
    if (!all_finite(p.tensor.grad())) {
      const std::string snap = snapshot(model, -1, losses);
      model.zero_grad();
      throw NumericError("non-finite gradient in " + p.name, snap);
    }
  }
  optimizer.step(params);
  model.zero_grad();
  return losses;
}

std::vector<RouterRecord> evaluate(const Model& model, const ConceptWorld& world,
                                   const ExperimentConfig& config) {
  const MoEConfig moe = config.moe_config();
  Rng rng(config.seed, kEvalStream);
  std::vector<RouterRecord> records;
  for (int b = 0; b < config.eval_batches; ++b) {
    const TokenBatch batch = world.generate_batch(config.vision_tokens, config.language_tokens, rng);
    const ForwardPass pass = forward(model, batch, moe);
    for (std::size_t l = 0; l < pass.layers.size(); ++l) {
      RouterRecord r;
      r.batch = b;
      r.layer = static_cast<int>(l);
      r.routing = pass.layers[l].routing;
      r.modality = batch.modality;
      r.labels = batch.labels;
      r.predictions = pass.predictions;
      r.vision_concepts = world.params().vision_concepts;
      r.background_concepts = world.params().background_concepts;
      records.push_back(std::move(r));
    }
  }
  return records;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const StepCallback& on_step) {
  config.validate();
  const ConceptWorld world(config.resolved_world());
  const MoEConfig moe = config.moe_config();
  Rng init_rng(config.seed, kInitStream);
  Model model(config.model_shape(), init_rng);
  Optimizer optimizer(config.optimizer, config.learning_rate);
  Rng data_rng(config.seed, kTrainStream);

  ExperimentResult result;
  auto& trace = result.trace;
  trace.task_loss.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const TokenBatch batch =
        world.generate_batch(config.vision_tokens, config.language_tokens, data_rng);
    const auto t0 = std::chrono::steady_clock::now();
    StepLosses losses;
    try {
      losses = train_step(model, optimizer, batch, moe);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step), e.snapshot());
    }
    const auto t1 = std::chrono::steady_clock::now();
    trace.task_loss.push_back(losses.task);
    trace.balance_loss.push_back(losses.balance);
    trace.step_time_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    if (on_step) on_step(step, losses);
  }

  result.records = evaluate(model, world, config);
  result.stats = compute_run_stats(result.records);
  for (const auto& p : model.parameters()) {
    result.final_parameters.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  return result;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const ArmSummary& AblationTable::arm(Arm a) const {
  for (const auto& s : summary)
    if (s.arm == a) return s;
  throw std::out_of_range("arm " + to_string(a) + " not in ablation table");
}

AblationTable ablation_suite(const ExperimentConfig& base, const std::vector<Arm>& arms,
                             const std::vector<std::uint64_t>& seeds, int workers) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (arms.empty()) throw ConfigError("ablation needs at least one arm");
  AblationTable table;
  for (Arm a : arms)
    for (std::uint64_t s : seeds) {
      AblationCell cell;
      cell.arm = a;
      cell.seed = s;
      table.cells.push_back(cell);
    }

  auto run_cell = [&](AblationCell& cell) {
    try {
      const ExperimentResult r = run_experiment(base.with_arm_seed(cell.arm, cell.seed));
      cell.acc_overall = r.stats.accuracy_overall;
      cell.acc_head = r.stats.accuracy_head_concepts;
      cell.acc_tail = r.stats.accuracy_tail_concepts;
      cell.mean_rpv_vision = r.stats.mean_rpv_vision;
      cell.mean_rpv_language = r.stats.mean_rpv_language;
      cell.tail_fraction = r.stats.tail_fraction;
      cell.step_time_ms = r.trace.mean_step_time_ms();
      double bal = 0.0;
      for (double b : r.trace.balance_loss) bal += b;
      cell.mean_balance_loss = r.trace.size() ? bal / static_cast<double>(r.trace.size()) : 0.0;
      cell.expert_load = r.stats.expert_load;
      cell.ok = true;
      cell.status = "ok";
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.status = e.what();
    }
  };

  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(table.cells.size()));
  if (workers <= 1) {
    for (auto& cell : table.cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        kernels::set_thread_limit(1);
        for (std::size_t i = next++; i < table.cells.size(); i = next++) run_cell(table.cells[i]);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (Arm a : arms) {
    ArmSummary s;
    s.arm = a;
    std::vector<double> acc, head, tail, rpv_v, rpv_l, frac, time;
    for (const auto& c : table.cells) {
      if (c.arm != a || !c.ok) continue;
      ++s.cells_ok;
      acc.push_back(c.acc_overall);
      head.push_back(c.acc_head);
      tail.push_back(c.acc_tail);
      rpv_v.push_back(c.mean_rpv_vision);
      rpv_l.push_back(c.mean_rpv_language);
      frac.push_back(c.tail_fraction);
      time.push_back(c.step_time_ms);
    }
    s.acc_overall = median(acc);
    s.acc_head = median(head);
    s.acc_tail = median(tail);
    s.mean_rpv_vision = median(rpv_v);
    s.mean_rpv_language = median(rpv_l);
    s.tail_fraction = median(frac);
    s.step_time_ms = median(time);
    table.summary.push_back(s);
  }
  return table;
}

}  // namespace ltdr
