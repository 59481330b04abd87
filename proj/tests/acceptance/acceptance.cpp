// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fact/checkpoint.hpp"
#include "fact/config.hpp"
#include "fact/experiment.hpp"
#include "fact/gradcheck.hpp"
#include "fact/mixup.hpp"
#include "fact/protocol.hpp"
#include "fact/trainer.hpp"
#include "helpers.hpp"

using namespace fact;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << "criterion " << id << ": " << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

SessionState random_state(std::size_t known, std::size_t virtuals, std::size_t dim, Rng& rng) {
  EmbeddingNet net = make_embedding_net(dim, 8, dim, rng);
  CosineHead head = make_cosine_head(known, virtuals, dim, 16.0, rng);
  head.num_base = known;
  return make_session_state(std::move(net), std::move(head));
}

bool same_bits(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void gradient_oracles() {
  GradCheckOptions opt;
  opt.seed = 0;
  opt.trials = 200;
  const GradCheckReport r = run_gradient_suite(opt);
  const bool ok = r.passed() && r.elapsed_seconds < 30.0;
  std::string detail = "200 instances, max fd err " + fmt(r.max_finite_diff_error()) + " (<= 1e-5), max closed-form err " +
                       fmt(r.max_closed_form_error()) + " (<= 1e-9), " + fixed(r.elapsed_seconds) + " s";
  for (const auto& name : r.failing()) detail += " failing:" + name;
  verdict(1, ok, detail);
}

void degradation_equivalence() {
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 2 + rng.uniform_index(15);
    const SessionState s = random_state(2 + rng.uniform_index(10), 1 + rng.uniform_index(10), dim, rng);
    InferConfig cfg;
    cfg.eta = 1.0;
    cfg.prior = PriorMode::uniform;
    const Vec x = testing::random_vec(dim, rng, 2.0);
    const Vec a = infer_fact(s, cfg, x);
    const Vec b = infer_protonet(s, x, cfg.tau);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  verdict(2, worst <= 1e-12, "100 random heads, max |fact - protonet| = " + fmt(worst));
}

void masked_softmax_contract() {
  Rng rng(77);
  double worst_sum = 0.0;
  bool masked_zero = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.uniform_index(30);
    const Vec logits = testing::random_vec(n, rng, 1.0 + 20.0 * rng.uniform());
    const std::size_t y = rng.uniform_index(n);
    const Vec p = masked_softmax(logits, y);
    masked_zero = masked_zero && p[y] == 0.0;
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }
  verdict(3, masked_zero && worst_sum <= 1e-12,
          "1000 vectors, masked entry exactly 0: " + std::string(masked_zero ? "yes" : "no") +
              ", max |sum - 1| = " + fmt(worst_sum));
}

void table_metrics() {
  const std::vector<double> a{75.90, 73.23, 70.14, 66.49, 63.51, 61.74, 59.94, 58.81, 56.94};
  const std::vector<double> b{74.60, 72.09, 67.56, 63.52, 61.38, 58.36, 56.28, 54.24, 52.10};
  const double pa = performance_drop(a);
  const double pb = performance_drop(b);
  const bool ok = fixed(pa) == "18.96" && fixed(pb) == "22.50";
  verdict(4, ok, "pd = " + fixed(pa) + " and " + fixed(pb));
}

void synthetic_benchmark(const RunConfig& base_cfg) {
  const auto started = std::chrono::steady_clock::now();
  bool pd_ok = true;
  bool acc_ok = true;
  double fact_sum = 0.0;
  double proto_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig cfg = base_cfg;
    cfg.seed = seed;
    cfg.train.seed = seed;
    const BaseRun run = train_base_from_config(cfg);
    const SessionMetrics f = run_sessions(run.state, run.stream, Method::fact, cfg.infer, cfg.adapt);
    const SessionMetrics p = run_sessions(run.state, run.stream, Method::protonet, cfg.infer, cfg.adapt);
    const SessionMetrics t = run_sessions(run.state, run.stream, Method::finetune, cfg.infer, cfg.adapt);
    const double fa = f.sessions.back().acc;
    const double pa = p.sessions.back().acc;
    const double ta = t.sessions.back().acc;
    pd_ok = pd_ok && f.pd < t.pd;
    acc_ok = acc_ok && fa > ta;
    fact_sum += fa;
    proto_sum += pa;
    std::cout << "  seed " << seed << ": final acc fact " << fixed(100 * fa) << " protonet " << fixed(100 * pa)
              << " finetune " << fixed(100 * ta) << " | pd fact " << fixed(100 * f.pd) << " finetune "
              << fixed(100 * t.pd) << std::endl;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const bool fast = seconds < 120.0;
  verdict(5, pd_ok && acc_ok && fact_sum >= proto_sum && fast,
          std::string("(a) pd fact < finetune every seed: ") + (pd_ok ? "yes" : "no") +
              "; (b) final acc fact > finetune every seed: " + (acc_ok ? "yes" : "no") +
              "; (c) mean final acc fact " + fixed(100 * fact_sum / 5) + " vs protonet " + fixed(100 * proto_sum / 5) +
              (fact_sum >= proto_sum ? " (met)" : " (not met)") + "; " + fixed(seconds) + " s");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FACT_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

void determinism() {
  testing::TempDir dir("determinism");
  const std::string cfg = std::string(FACT_CONFIG_DIR) + "/reference.cfg";
  bool ran = true;
  for (const char* tag : {"a", "b"}) {
    const fs::path out = dir.path() / tag;
    ran = ran && run_cli("train-base --config \"" + cfg + "\" --out \"" + out.string() + "\" --seed 3") == 0;
    ran = ran && run_cli("run-sessions --checkpoint \"" + (out / "base.ckpt").string() + "\" --out \"" +
                         out.string() + "\" --method fact") == 0;
  }
  const std::string ca = slurp(dir.path() / "a" / "base.ckpt");
  const std::string cb = slurp(dir.path() / "b" / "base.ckpt");
  const std::string ra = slurp(dir.path() / "a" / "fact_report.txt");
  const std::string rb = slurp(dir.path() / "b" / "fact_report.txt");
  const bool ok = ran && !ca.empty() && ca == cb && !ra.empty() && ra == rb;
  verdict(6, ok, "two CLI runs: checkpoints " + std::string(ca == cb ? "identical" : "differ") + " (" +
                     std::to_string(ca.size()) + " bytes), reports " + (ra == rb ? "identical" : "differ"));
}

void mixup_contracts() {
  Rng rng(5);
  bool cross = true;
  bool in_range = true;
  std::size_t pairs_seen = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t classes = 1 + rng.uniform_index(6);
    std::vector<int> labels(2 + rng.uniform_index(40));
    for (int& l : labels) l = static_cast<int>(rng.uniform_index(classes));
    for (const MixPair& p : make_pairs(labels, rng, 0.5)) {
      cross = cross && labels[p.index_i] != labels[p.index_j];
      in_range = in_range && p.lambda >= 0.0 && p.lambda <= 1.0;
      ++pairs_seen;
    }
  }
  const Vec a = testing::random_vec(9, rng);
  const Vec b = testing::random_vec(9, rng);
  const bool endpoints = manifold_mix(a, b, 1.0) == a && manifold_mix(a, b, 0.0) == b;

  LabeledDataset single;
  for (int i = 0; i < 8; ++i) {
    single.features.push_back(testing::random_vec(3, rng));
    single.labels.push_back(1);
  }
  Rng init(6);
  const EmbeddingNet net = make_embedding_net(3, 5, 4, init);
  CosineHead head = make_cosine_head(2, 2, 4, 16.0, init);
  head.num_base = 2;
  TrainConfig tc;
  tc.loss = LossConfig{0.01, 2, 2};
  std::vector<std::size_t> batch(single.size());
  std::iota(batch.begin(), batch.end(), 0);
  bool single_ok = false;
  try {
    Rng mix(7);
    const BatchResult r = batch_loss_and_grad(net, head, single, batch, tc, mix);
    single_ok = r.num_pairs == 0 && r.loss.l3 == 0.0 && r.loss.l4 == 0.0;
  } catch (const std::exception&) {
    single_ok = false;
  }
  verdict(7, cross && in_range && endpoints && single_ok,
          std::to_string(pairs_seen) + " pairs cross-class: " + (cross ? "yes" : "no") + ", lambda in [0,1]: " +
              (in_range ? "yes" : "no") + ", endpoints exact: " + (endpoints ? "yes" : "no") +
              ", single-class batch L_f = 0: " + (single_ok ? "yes" : "no"));
}

void assignment_sanity(const RunConfig& cfg) {
  const BaseRun run = train_base_from_config(cfg);
  const auto counts = assignment_matrix(run.state, run.stream.base_train);
  bool sums = counts.size() == cfg.protocol.num_base;
  bool nonzero = true;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const std::size_t total = std::accumulate(counts[c].begin(), counts[c].end(), std::size_t{0});
    sums = sums && total == run.stream.base_train.count(static_cast<int>(c));
    nonzero = nonzero && total > 0;
  }
  verdict(8, sums && nonzero,
          std::to_string(counts.size()) + " base classes, row sums match class counts: " + (sums ? "yes" : "no") +
              ", every row nonzero: " + (nonzero ? "yes" : "no"));
}

void checkpoint_round_trip(const RunConfig& cfg) {
  RunConfig quick = cfg;
  quick.train.epochs = 5;
  const BaseRun run = train_base_from_config(quick);
  testing::TempDir dir("roundtrip");
  save_checkpoint(dir.path() / "base.ckpt", Checkpoint{run.state, render_run_config(quick)});
  const Checkpoint back = load_checkpoint(dir.path() / "base.ckpt");
  Rng rng(99);
  std::size_t same = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec x = testing::random_vec(quick.gaussian.dim, rng, quick.gaussian.center_scale);
    same += same_bits(infer_fact(run.state, quick.infer, x), infer_fact(back.state, quick.infer, x));
  }
  verdict(9, same == 100, std::to_string(same) + "/100 inputs bitwise identical after save and load");
}

}  // namespace

int main() {
  const RunConfig reference = load_run_config(FACT_CONFIG_DIR "/reference.cfg");
  gradient_oracles();
  degradation_equivalence();
  masked_softmax_contract();
  table_metrics();
  synthetic_benchmark(reference);
  determinism();
  mixup_contracts();
  assignment_sanity(reference);
  checkpoint_round_trip(reference);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
