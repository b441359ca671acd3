// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ajepa/cli.hpp"
#include "ajepa/finetune.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/metrics.hpp"
#include "ajepa/model.hpp"
#include "ajepa/pretrain.hpp"

#include "gradcheck_util.hpp"

namespace ajepa {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Tolerances and budgets.
constexpr int kPlansPerMode = 1000;
constexpr double kMaskBudgetS = 10.0;
constexpr double kCurriculumTol = 1e-9;
constexpr int kModeDraws = 10000;
constexpr double kModeRateTol = 0.02;
constexpr double kGradRelTol = 1e-4;
constexpr int kGradCoords = 5;
constexpr double kGradBudgetS = 60.0;
constexpr int kEmaSteps = 50;
constexpr double kEmaMomentum = 0.99;
constexpr double kEmaTol = 1e-6;
constexpr double kAttnTol = 1e-6;
constexpr std::int64_t kPretrainSteps = 2000;
constexpr int kPretrainBatch = 16;
constexpr double kLossRatio = 0.5;
constexpr double kPretrainBudgetS = 600.0;
constexpr double kProbeAccuracy = 0.90;
constexpr double kRmMarginPoints = 2.0;
constexpr int kRmSeeds = 3;
constexpr double kApTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Numeric rows of a CSV file, header skipped.
std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// 1. Mask geometry

std::string plan_violation(const MaskPlan& plan, const SamplerConfig& cfg) {
  const GridShape g = plan.context.grid;
  std::vector<int> owner(static_cast<std::size_t>(g.size()), 0);
  for (int c : plan.context.indices) owner[static_cast<std::size_t>(c)] = 1;
  if (plan.targets.empty()) return "no targets";
  if (plan.targets.size() != plan.target_blocks.size()) return "target/block count mismatch";
  const auto& cb = plan.context_block;
  if (!(static_cast<double>(plan.context.size()) > cfg.min_ratio * cb.size.h * cb.size.w)) {
    return "context below min_ratio";
  }
  for (int c : plan.context.indices) {
    const int r = c / g.cols, col = c % g.cols;
    if (r < cb.top || r >= cb.top + cb.size.h || col < cb.left || col >= cb.left + cb.size.w) {
      return "context cell outside its block";
    }
  }
  for (std::size_t t = 0; t < plan.targets.size(); ++t) {
    const auto& b = plan.target_blocks[t];
    const auto& idx = plan.targets[t].indices;
    if (!(static_cast<double>(idx.size()) > cfg.min_ratio * b.size.h * b.size.w)) {
      return "target below min_ratio";
    }
    for (int c : idx) {
      if (owner[static_cast<std::size_t>(c)] == 1) return "context/target overlap";
      const int r = c / g.cols, col = c % g.cols;
      if (r < b.top || r >= b.top + b.size.h || col < b.left || col >= b.left + b.size.w) {
        return "target cell outside its block";
      }
    }
    if (plan.mode == MaskMode::time_frequency) {
      for (int c : plan.context.indices) {
        const int r = c / g.cols, col = c % g.cols;
        if ((r >= b.top && r < b.top + b.size.h) || (col >= b.left && col < b.left + b.size.w)) {
          return "tf context shares a row or column with a target block";
        }
      }
    }
  }
  return {};
}

Outcome criterion_mask_geometry() {
  const auto t0 = Clock::now();
  const SamplerConfig cfg;
  const CurriculumSchedule sched{kPretrainSteps, 0.01, ScheduleKind::sqrt};
  int checked = 0;
  std::string failure;
  for (GridShape grid : {GridShape{8, 8}, GridShape{64, 8}}) {
    for (MaskMode mode : {MaskMode::block, MaskMode::time_frequency}) {
      for (int i = 0; i < kPlansPerMode && failure.empty(); ++i) {
        Rng rng = Rng::stream(1234, "acceptance-masks", static_cast<std::uint64_t>(i),
                              static_cast<std::uint64_t>(grid.rows * 10 + (mode == MaskMode::block ? 0 : 1)));
        try {
          const MaskPlan plan = build_mask_plan(grid, cfg, 0, sched, rng, mode);
          const std::string v = plan_violation(plan, cfg);
          if (!v.empty()) failure = v;
        } catch (const std::exception& e) {
          failure = e.what();
        }
        if (!failure.empty()) {
          failure += " (grid " + shape_string(grid.rows, grid.cols) + ", " + std::string(to_string(mode)) +
                     ", plan " + std::to_string(i) + ")";
        }
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failure.empty() && secs < kMaskBudgetS;
  o.detail = std::to_string(checked) + " plans, " + fmt(secs, 3) + " s";
  if (!failure.empty()) o.detail += "; " + failure;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Curriculum schedule

Outcome criterion_curriculum() {
  const CurriculumSchedule sched{kPretrainSteps, 0.01, ScheduleKind::sqrt};
  const double f0 = curriculum_f(0, sched);
  const double fS = curriculum_f(kPretrainSteps, sched);
  const std::int64_t quarter = kPretrainSteps / 4;
  const double fq = curriculum_f(quarter, sched);
  Rng rng = Rng::stream(99, "acceptance-modes");
  int tf = 0;
  for (int i = 0; i < kModeDraws; ++i) tf += choose_mode(quarter, sched, rng) == MaskMode::time_frequency;
  const double rate = static_cast<double>(tf) / kModeDraws;
  Outcome o;
  o.pass = f0 == 0.0001 && fS == 1.0 && std::abs(fq - 0.500075) <= kCurriculumTol &&
           std::abs(rate - fq) <= kModeRateTol;
  o.detail = "f(0)=" + fmt(f0, 17) + " f(S)=" + fmt(fS, 17) + " f(S/4)=" + fmt(fq, 12) +
             " tf rate " + fmt(rate, 5);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t coords = 0;
  auto note = [&](const testutil::CheckReport& r, const char* path) {
    coords += r.coords_checked;
    if (r.worst_rel >= worst) {
      worst = r.worst_rel;
      where = std::string(path) + " " + r.worst_name;
    }
  };

  {
    testutil::ToyProblem toy(21);
    const MaskPlan plan = toy.plan();
    auto loss = [&] {
      return sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                                   TargetNorm::layernorm, 1.0, nullptr, nullptr);
    };
    ParamStore<double> cg = toy.context.zeros_like();
    ParamStore<double> pg = toy.predictor.zeros_like();
    sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                          TargetNorm::layernorm, 1.0, &cg, &pg);
    note(testutil::check_store(toy.context, cg, loss, kGradCoords, 1), "encoder");
    note(testutil::check_store(toy.predictor, pg, loss, kGradCoords, 2), "predictor");
  }
  {
    testutil::ToyProblem toy(22);
    Rng head_rng(5);
    ParamStore<double> head = init_head<double>(toy.geo.cfg.embed_dim, 3, 0.5, head_rng);
    const RMConfig rm{0.25, true, false};
    auto forward = [&](EncoderCache<double>* cache) {
      Rng rng(77);
      return rm_forward(toy.grid, toy.geo, toy.context, rm, rng, cache);
    };
    auto loss = [&] { return softmax_cross_entropy(classify(forward(nullptr), head), 2, nullptr); };
    EncoderCache<double> cache;
    const RowVec<double> pooled = forward(&cache);
    RowVec<double> d_logits;
    softmax_cross_entropy(classify(pooled, head), 2, &d_logits);
    ParamStore<double> hg = head.zeros_like();
    hg.at("head.w") = pooled.transpose() * d_logits;
    hg.at("head.b") = d_logits;
    ParamStore<double> eg = toy.context.zeros_like();
    const RowVec<double> d_pooled = d_logits * head.at("head.w").transpose();
    const auto n = static_cast<Eigen::Index>(toy.geo.grid.size());
    encoder_backward(toy.geo, toy.context, cache,
                     Mat<double>(d_pooled.replicate(n, 1) / static_cast<double>(n)), eg);
    note(testutil::check_store(head, hg, loss, kGradCoords, 3), "classifier head");
    note(testutil::check_store(toy.context, eg, loss, kGradCoords, 4), "classifier encoder");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < kGradRelTol && secs < kGradBudgetS;
  o.detail = std::to_string(coords) + " coordinates, worst rel " + fmt(worst, 3) + " (" + where + "), " +
             fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Stop-gradient and EMA

Outcome criterion_stop_gradient() {
  PretrainConfig cfg;
  cfg.frontend.n_mels = 64;
  cfg.frontend.target_frames = 64;
  cfg.frontend.patch = {8, 8};
  cfg.model.embed_dim = 16;
  cfg.model.enc_depth = 2;
  cfg.model.n_heads = 2;
  cfg.model.pred_depth = 1;
  cfg.model.pred_dim = 8;
  cfg.model.patch_len = 64;
  cfg.optim.total_steps = 50;
  cfg.optim.warmup_steps = 2;
  cfg.optim.batch_size = 2;
  cfg.curriculum.total_steps = 50;
  const ModelGeometry<float> geo(cfg.model, cfg.grid());
  TrainState s = init_train_state(cfg, 5);
  Rng data_rng(6);
  bool ema_only = true;
  for (int step = 0; step < 8; ++step) {
    std::vector<PatchGrid> batch;
    for (int i = 0; i < cfg.optim.batch_size; ++i) {
      MelSpectrogram m;
      m.values.resize(64, 64);
      for (Eigen::Index k = 0; k < m.values.size(); ++k) m.values.data()[k] = data_rng.normal();
      batch.push_back(patchify(m, cfg.frontend.patch));
    }
    const ParamStore<float> before = s.target;
    const std::int64_t at = s.step;
    training_step(s, batch, cfg, geo);
    ParamStore<float> expected = before;
    ema_update(expected, s.context, ema_momentum_at(at, cfg));
    ema_only = ema_only && (s.target == expected);
  }

  testutil::ToyProblem toy(31);
  auto distance = [&] {
    double sq = 0.0;
    auto it = toy.context.begin();
    for (const auto& [name, a] : toy.target) {
      sq += (a - it->second).squaredNorm();
      ++it;
    }
    return std::sqrt(sq);
  };
  const double d0 = distance();
  for (int i = 0; i < kEmaSteps; ++i) ema_update(toy.target, toy.context, kEmaMomentum);
  const double dn = distance();
  const double expected = std::pow(kEmaMomentum, kEmaSteps) * d0;
  Outcome o;
  o.pass = ema_only && std::abs(dn - expected) <= kEmaTol;
  o.detail = std::string("target moved only by EMA over 8 steps: ") + (ema_only ? "yes" : "no") +
             "; |d_50 - m^50 d_0| = " + fmt(std::abs(dn - expected), 3);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Attention masking

Outcome criterion_attention() {
  Rng rng(41);
  const int n = 9, d = 8, heads = 4;
  auto random = [&](int r, int c) {
    Mat<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  const Mat<double> w_qkv = random(d, 3 * d), b_qkv = random(1, 3 * d), w_out = random(d, d),
                    b_out = random(1, d);
  double worst_sum = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Mat<double> x = random(n, d) * 3.0;
    nn::KeyMask mask(n, 0);
    for (auto& m : mask) m = rng.uniform() < 0.5;
    mask[static_cast<std::size_t>(rng.uniform_int(0, n - 1))] = 0;
    nn::AttentionCache<double> cache;
    nn::attention(x, w_qkv, b_qkv, w_out, b_out, heads, mask, &cache);
    for (const auto& p : cache.probs) {
      for (int i = 0; i < n; ++i) worst_sum = std::max(worst_sum, std::abs(p.row(i).sum() - 1.0));
    }
  }

  // Width 1, one head: q = k = x, v = 2x, identity output projection.
  Mat<double> x(3, 1);
  x << 0.0, 1.0, 2.0;
  Mat<double> wq(1, 3);
  wq << 1.0, 1.0, 2.0;
  const Mat<double> one = Mat<double>::Ones(1, 1), zero = Mat<double>::Zero(1, 1);
  const Mat<double> zero3 = Mat<double>::Zero(1, 3);
  const Mat<double> dense = nn::attention(x, wq, zero3, one, zero, 1, {}, nullptr);
  const Mat<double> masked = nn::attention(x, wq, zero3, one, zero, 1, {0, 0, 1}, nullptr);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  const double oracle_err =
      std::max({std::abs(dense(0, 0) - 2.0), std::abs(dense(1, 0) - (2 * e1 + 4 * e2) / (1 + e1 + e2)),
                std::abs(masked(2, 0) - 2 * e2 / (1 + e2)), std::abs(masked(0, 0) - 1.0)});

  ModelConfig cfg;
  const ModelGeometry<float> geo(cfg, GridShape{8, 8});
  Rng init = Rng::stream(1, "init");
  const ParamStore<float> theta = init_encoder<float>(cfg, init);
  MelSpectrogram m;
  m.values.resize(128, 128);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = rng.normal();
  const PatchGrid grid = patchify(m, PatchShape{16, 16});
  const RowVec<float> a = eval_forward(grid, geo, theta);
  const RowVec<float> b = eval_forward(grid, geo, theta);
  const bool identical = a == b && encode_target(grid, geo, theta, TargetNorm::layernorm).features ==
                                       encode_target(grid, geo, theta, TargetNorm::layernorm).features;
  Outcome o;
  o.pass = worst_sum <= kAttnTol && oracle_err <= kAttnTol && identical;
  o.detail = "worst |sum-1| " + fmt(worst_sum, 3) + ", oracle error " + fmt(oracle_err, 3) +
             ", eval forward bit-identical: " + (identical ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 6-8, 10. Training pipelines through the command-line front end

struct Pipeline {
  fs::path root;
  double pretrain_seconds = 0.0;
  std::string error;

  fs::path data() const { return root / "data"; }
  fs::path run() const { return root / "run"; }
  fs::path probe() const { return root / "probe"; }
};

bool invoke(const std::vector<std::string>& args, std::ostream& log, std::string& error) {
  log << "$ ajepa";
  for (const auto& a : args) log << " " << a;
  log << std::endl;
  std::ostringstream err;
  const int code = cli::run(args, log, err);
  log << err.str();
  if (code != 0) {
    error = args.front() + " exited with " + std::to_string(code) + ": " + err.str();
    return false;
  }
  return true;
}

/// gen-data -> pretrain -> probe, all with default settings and seeds.
Pipeline run_pipeline(const fs::path& root, std::ostream& log) {
  Pipeline p;
  p.root = root;
  fs::remove_all(root);
  fs::create_directories(root);
  if (!invoke({"gen-data", "--out", p.data().string()}, log, p.error)) return p;
  const auto t0 = Clock::now();
  if (!invoke({"pretrain", "--data", p.data().string(), "--out", p.run().string()}, log, p.error)) return p;
  p.pretrain_seconds = seconds_since(t0);
  invoke({"probe", "--data", p.data().string(), "--init", (p.run() / "checkpoint.ajepa").string(), "--out",
          p.probe().string()},
         log, p.error);
  return p;
}

Outcome criterion_pretrain(const Pipeline& p) {
  Outcome o;
  if (!p.error.empty()) {
    o.detail = p.error;
    return o;
  }
  const RunConfig defaults;
  const auto rows = read_csv(p.run() / "pretrain_loss.csv");
  if (rows.size() != static_cast<std::size_t>(kPretrainSteps) ||
      defaults.pretrain.optim.batch_size != kPretrainBatch) {
    o.detail = "expected " + std::to_string(kPretrainSteps) + " logged steps at batch " +
               std::to_string(kPretrainBatch) + ", got " + std::to_string(rows.size());
    return o;
  }
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += rows[static_cast<std::size_t>(i)][1] / 10.0;
    last += rows[rows.size() - 10 + static_cast<std::size_t>(i)][1] / 10.0;
  }
  o.pass = last < kLossRatio * first && p.pretrain_seconds < kPretrainBudgetS;
  o.detail = "first-10 mean " + fmt(first) + ", last-10 mean " + fmt(last) + " (ratio " +
             fmt(last / first, 4) + "), " + fmt(p.pretrain_seconds, 4) + " s";
  return o;
}

Outcome criterion_probe(const Pipeline& p, std::ostream& log) {
  Outcome o;
  if (!p.error.empty()) {
    o.detail = p.error;
    return o;
  }
  const double acc = read_csv(p.probe() / "finetune_metrics.csv").back()[2];
  std::string error;
  const fs::path rand_out = p.root / "probe_random";
  std::string random_note = "random-init probe failed";
  if (invoke({"probe", "--data", p.data().string(), "--random-init", "--out", rand_out.string()}, log, error)) {
    const double rand_acc = read_csv(rand_out / "finetune_metrics.csv").back()[2];
    random_note = "random-init probe accuracy " + fmt(rand_acc, 4);
  }
  o.pass = acc >= kProbeAccuracy;
  o.detail = "pretrained probe accuracy " + fmt(acc, 4) + "; " + random_note + " (reported only)";
  return o;
}

Outcome criterion_rm(const Pipeline& p, std::ostream& log) {
  Outcome o;
  if (!p.error.empty()) {
    o.detail = p.error;
    return o;
  }
  double with_rm = 0.0, without_rm = 0.0;
  std::string per_seed;
  for (int seed = 0; seed < kRmSeeds; ++seed) {
    double acc[2] = {0.0, 0.0};
    for (int k = 0; k < 2; ++k) {
      const std::string ratio = k == 0 ? "0.1" : "0";
      const fs::path out = p.root / ("ft_rm" + ratio + "_seed" + std::to_string(seed));
      std::string error;
      if (!invoke({"finetune", "--data", p.data().string(), "--init", (p.run() / "checkpoint.ajepa").string(),
                   "--out", out.string(), "--seed", std::to_string(seed), "--rm-ratio", ratio},
                  log, error)) {
        o.detail = error;
        return o;
      }
      acc[k] = read_csv(out / "finetune_metrics.csv").back()[2];
    }
    with_rm += acc[0] / kRmSeeds;
    without_rm += acc[1] / kRmSeeds;
    per_seed += (seed ? ", " : "") + fmt(100 * acc[0], 4) + "/" + fmt(100 * acc[1], 4);
  }
  o.pass = 100 * with_rm >= 100 * without_rm - kRmMarginPoints;
  o.detail = "mean accuracy RM 0.10 " + fmt(100 * with_rm, 4) + "% vs none " + fmt(100 * without_rm, 4) +
             "% (per seed RM/none: " + per_seed + ")";
  return o;
}

Outcome criterion_determinism(const Pipeline& a, const Pipeline& b) {
  Outcome o;
  if (!a.error.empty() || !b.error.empty()) {
    o.detail = a.error.empty() ? b.error : a.error;
    return o;
  }
  const std::vector<fs::path> files{"run/checkpoint.ajepa", "run/pretrain_loss.csv", "probe/finetune.ajepa",
                                    "probe/finetune_metrics.csv"};
  std::string mismatched;
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const std::string x = slurp(a.root / f);
    const std::string y = slurp(b.root / f);
    bytes += x.size();
    if (x.empty() || x != y) mismatched += (mismatched.empty() ? "" : ", ") + f.string();
  }
  o.pass = mismatched.empty();
  o.detail = mismatched.empty() ? std::to_string(files.size()) + " artifacts identical (" +
                                      std::to_string(bytes) + " bytes)"
                                : "differs: " + mismatched;
  return o;
}

// ---------------------------------------------------------------------------
// 9. Metric oracle

double brute_force_ap(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Selection by repeated maximum; the earlier index wins ties.
  std::vector<bool> used(scores.size(), false);
  double sum = 0.0;
  int hits = 0;
  for (std::size_t rank = 1; rank <= scores.size(); ++rank) {
    std::size_t best = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!used[i] && (best == scores.size() || scores[i] > scores[best])) best = i;
    }
    used[best] = true;
    if (positive[best]) sum += static_cast<double>(++hits) / static_cast<double>(rank);
  }
  return hits ? sum / hits : -1.0;
}

Outcome criterion_metric_oracle() {
  double worst = 0.0;
  int cases = 0;
  std::vector<double> scores{0.2, 0.5, 0.9};
  std::sort(scores.begin(), scores.end());
  do {
    for (int mask = 1; mask < 8; ++mask) {
      const std::vector<bool> pos{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
      Mat<double> s(3, 1);
      std::vector<std::vector<int>> labels(3);
      for (int i = 0; i < 3; ++i) {
        s(i, 0) = scores[static_cast<std::size_t>(i)];
        if (pos[static_cast<std::size_t>(i)]) labels[static_cast<std::size_t>(i)] = {0};
      }
      worst = std::max(worst, std::abs(metric_map(s, labels) - brute_force_ap(scores, pos)));
      ++cases;
    }
  } while (std::next_permutation(scores.begin(), scores.end()));
  const double ap13 = average_precision({0.9, 0.8, 0.7, 0.1}, {true, false, true, false});
  Outcome o;
  o.pass = worst <= kApTol && std::abs(ap13 - 0.8333) <= 1e-4 && std::abs(ap13 - 5.0 / 6.0) <= kApTol;
  o.detail = std::to_string(cases) + " permutation cases, worst error " + fmt(worst, 3) +
             "; ranks (1,3) AP " + fmt(ap13, 8);
  return o;
}

}  // namespace
}  // namespace ajepa

int main(int argc, char** argv) {
  using namespace ajepa;
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  app.add_option("--work-dir", work, "scratch directory for training pipelines");
  CLI11_PARSE(app, argc, argv);

  const fs::path root = work;
  fs::create_directories(root);
  std::ofstream log(root / "pipeline.log");
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << std::setw(2) << id << " " << name << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 4) << " s]" << std::endl;
  };

  report(1, "mask geometry", criterion_mask_geometry);
  report(2, "curriculum schedule", criterion_curriculum);
  report(3, "gradient correctness", criterion_gradients);
  report(4, "stop-gradient and EMA", criterion_stop_gradient);
  report(5, "attention masking", criterion_attention);
  std::cout << "running pipeline A (gen-data, pretrain, probe); log in " << (root / "pipeline.log").string()
            << std::endl;
  const Pipeline a = run_pipeline(root / "pipeline_a", log);
  report(6, "pretraining smoke", [&] { return criterion_pretrain(a); });
  report(7, "linear probe", [&] { return criterion_probe(a, log); });
  report(8, "RM ablation direction", [&] { return criterion_rm(a, log); });
  report(9, "metric oracle", criterion_metric_oracle);
  std::cout << "running pipeline B" << std::endl;
  const Pipeline b = run_pipeline(root / "pipeline_b", log);
  report(10, "determinism", [&] { return criterion_determinism(a, b); });
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
