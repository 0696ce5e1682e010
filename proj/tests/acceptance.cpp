// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icelab/checkpoint.hpp"
#include "icelab/config_text.hpp"
#include "icelab/corpus.hpp"
#include "icelab/editing.hpp"
#include "icelab/exact.hpp"
#include "icelab/harness.hpp"
#include "icelab/metrics.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace icelab;
using testing::random_model;
using testing::random_tokens;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;
// Criteria listed with --known-gap still print FAIL but do not fail the run,
// unless they throw.
std::set<int> known_gaps;
int blocking = 0;
// Copy of stdout; ctest hides the output of passing tests.
std::string summary;

void emit(const std::string& line) {
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  summary += line;
}

void report(int id, const char* title, double budget_s, const std::function<Verdict()>& body) {
  const auto t0 = Clock::now();
  Verdict v;
  bool threw = false;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
    threw = true;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::string timing = std::to_string(secs).substr(0, std::to_string(secs).find('.') + 3) + " s";
  if (budget_s > 0 && secs > budget_s) {
    v.pass = false;
    timing += " over budget " + std::to_string(static_cast<int>(budget_s)) + " s";
  }
  if (!v.pass) ++failures;
  const bool gap = known_gaps.contains(id);
  if (!v.pass && (threw || !gap)) ++blocking;
  emit(fmt("criterion %2d %s  %s: %s [%s]%s\n", id, v.pass ? "PASS" : "FAIL", title,
           v.detail.c_str(), timing.c_str(), gap && !v.pass ? " (known gap)" : ""));
}

struct Instance {
  Model live, target;
  TokenSeq context, query, x_star;
  int horizon;
};

// Enumerable instance: vocab 4..6, horizon 1..3.
Instance make_instance(std::uint64_t seed) {
  Rng rng(seed * 7 + 1);
  const int vocab = 4 + static_cast<int>(seed % 3);
  const auto arch = Architecture::kTransformer1Block;
  return {random_model(arch, vocab, seed + 1, 0.5), random_model(arch, vocab, seed + 2001, 0.5),
          random_tokens(rng, vocab, 1 + static_cast<int>(seed % 2)),
          random_tokens(rng, vocab, 1 + static_cast<int>((seed / 2) % 2)),
          random_tokens(rng, vocab, 1 + static_cast<int>((seed / 3) % 2)),
          1 + static_cast<int>(seed % 3)};
}

Verdict gradient_oracle() {
  constexpr int kSeeds = 20;
  double worst = 0.0;
  std::size_t entries = 0, bad = 0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Model m = random_model(Architecture::kTransformer1Block, 6, seed);
    Model theta0 = random_model(Architecture::kTransformer1Block, 6, seed + 500);
    Rng rng(seed + 11);
    const auto c = random_tokens(rng, 6, 2), q = random_tokens(rng, 6, 2),
               x = random_tokens(rng, 6, 1);
    const std::vector<TokenSeq> fixed{random_tokens(rng, 6, 2), random_tokens(rng, 6, 2),
                                      random_tokens(rng, 6, 2)};
    const std::vector<testing::LossFn> losses{
        [&](ad::Graph& g, const Binding& b) { return ft_loss(g, b, m.config, q, x); },
        [&](ad::Graph& g, const Binding& b) {
          return g.add(ft_loss(g, b, m.config, q, x),
                       completion_nll(g, b, m.config, q, x, fixed));
        },
        [&](ad::Graph& g, const Binding& b) {
          Rng r(seed);
          return sample_loss_static(g, b, m.config, theta0, c, q, x, 3, 2, 100.0, r);
        },
    };
    for (const auto& loss : losses) {
      const auto r = testing::check_gradients(m.params, {}, loss, 1e-4);
      worst = std::max(worst, r.worst_relative);
      entries += r.entries;
      bad += r.failures;
    }
  }
  return {bad == 0, fmt("3 losses x %d seeds, %zu entries, %zu outside tolerance, worst rel %.2e",
                        kSeeds, entries, bad, worst)};
}

Verdict observation_one() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto in = make_instance(seed);
    const double exact = ft_sampling_loss_exact(in.live, in.query, in.x_star, in.horizon);
    worst = std::max(worst, std::abs(exact - ft_loss_value(in.live, in.query, in.x_star)));
  }
  return {worst < 1e-8, fmt("30 instances, max |exact - ft| = %.2e", worst)};
}

Verdict combined_identity() {
  double worst_kl_form = 0.0, worst_nll_form = 0.0, worst_shift = 0.0, entropy_lo = 1e300,
         entropy_hi = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto in = make_instance(seed);
    const TokenSeq tp = with_bos({in.context, in.query, in.x_star});
    const TokenSeq lp = with_bos({in.query, in.x_star});
    const double ft = ft_loss_value(in.live, in.query, in.x_star);
    const double kl = continuation_kl(in.target, tp, in.live, lp, in.horizon);
    const double obj = combined_objective_exact(in.target, in.live, in.context, in.query,
                                                in.x_star, in.horizon);
    const double nll = expected_combined_nll_exact(in.target, in.live, in.context, in.query,
                                                   in.x_star, in.horizon);
    const double h =
        completion_entropy_exact(in.target, in.context, in.query, in.x_star, in.horizon);
    worst_kl_form = std::max(worst_kl_form, std::abs(obj - (ft + kl)));
    worst_nll_form = std::max(worst_nll_form, std::abs(nll - (ft + kl + h)));
    entropy_lo = std::min(entropy_lo, h);
    entropy_hi = std::max(entropy_hi, h);
    // Equivalence as an objective: the residual must not depend on the live model.
    const Model other = random_model(Architecture::kTransformer1Block, in.live.config.vocab_size,
                                     seed + 9000, 0.5);
    const double nll2 = expected_combined_nll_exact(in.target, other, in.context, in.query,
                                                    in.x_star, in.horizon);
    const double rhs2 = ft_loss_value(other, in.query, in.x_star) +
                        continuation_kl(in.target, tp, other, lp, in.horizon);
    worst_shift = std::max(worst_shift, std::abs((nll - (ft + kl)) - (nll2 - rhs2)));
  }
  const bool ok = worst_kl_form < 1e-8 && worst_nll_form < 1e-8 && worst_shift < 1e-8;
  return {ok, fmt("30 instances; KL(target||live) form err %.1e; E[NLL] = ft+KL+H(target) err "
                  "%.1e; live-independent offset err %.1e (H in [%.3f, %.3f])",
                  worst_kl_form, worst_nll_form, worst_shift, entropy_lo, entropy_hi)};
}

Verdict one_hot_lemma() {
  int exact = 0;
  const int n = 50;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    Rng rng(seed);
    const int vocab = 2 + static_cast<int>(seed % 5), len = 1 + static_cast<int>(seed % 3);
    std::map<TokenSeq, double> table;
    std::normal_distribution<double> nd(0.0, 10.0);
    auto f = [&](const TokenSeq& x) {
      auto it = table.find(x);
      if (it == table.end()) it = table.emplace(x, nd(rng)).first;
      return it->second;
    };
    std::uniform_int_distribution<int> d(0, vocab - 1);
    TokenSeq y(static_cast<std::size_t>(len));
    for (auto& t : y) t = d(rng);
    const double e = expectation_over_sequences(
        vocab, len, [&](const TokenSeq& x) { return one_hot_weight(y, x); }, f);
    exact += e == f(y);
  }
  return {exact == n, fmt("%d/%d tabulated functions reproduced bit-exactly", exact, n)};
}

struct Toy {
  HarnessConfig config;
  Model base;
  EditDataset dataset;
  std::vector<TokenizedRecord> records;
  fs::path checkpoint, dataset_path;
};

std::vector<EditOutcome> edit_suite(const Toy& toy, EditConfig ec, std::size_t n,
                                    const StepObserver& observer = {}) {
  std::vector<EditOutcome> out;
  for (std::size_t i = 0; i < n; ++i) {
    ec.seed = record_seed(toy.config.seed, i);
    out.push_back(ice_edit(toy.base, toy.records[i], ec, observer));
  }
  return out;
}

constexpr std::size_t kSuite = 10;

Verdict edit_success_and_gap(const Toy& toy, Verdict& gap_verdict) {
  const EditConfig& ec = toy.config.edit;
  const auto outcomes = edit_suite(toy, ec, kSuite);
  std::size_t hits = 0, gap_ok = 0;
  int max_steps = 0;
  double worst_ratio = 0.0, min_target_prob = 1.0;
  std::string per_record;
  for (std::size_t i = 0; i < kSuite; ++i) {
    const Model post{toy.base.config, outcomes[i].final_params};
    const auto& r = toy.records[i];
    hits += starts_with(decode_answer(post, r.query, static_cast<int>(r.target.size())), r.target);
    max_steps = std::max(max_steps, outcomes[i].steps_taken);
    min_target_prob = std::min(min_target_prob, std::exp(-ft_loss_value(post, r.query, r.target)));
    const double g0 = consistency_gap(toy.base, r.contexts.front(), r.query, 1).value;
    const double g1 = consistency_gap(post, r.contexts.front(), r.query, 1).value;
    gap_ok += g1 <= g0 / 10.0;
    worst_ratio = std::max(worst_ratio, g1 / g0);
    per_record += fmt("%s%.3f", i ? " " : "", g1 / g0);
  }
  gap_verdict = {gap_ok == kSuite,
                 fmt("%zu/%zu records with post/pre gap <= 0.1; worst ratio %.3f; ratios [%s]",
                     gap_ok, kSuite, worst_ratio, per_record.c_str())};
  return {hits == kSuite && max_steps <= 25,
          fmt("%s lambda=%g lr=%g K=%d S<=%d: %zu/%zu edits succeed, max steps %d, "
              "min p(x*|q) %.3f",
              to_string(ec.variant).c_str(), ec.lambda, ec.lr, ec.samples, ec.max_steps, hits,
              kSuite, max_steps, min_target_prob)};
}

// Single steps carry K-sample noise, so the equilibrium level is the mean
// combined loss over the last few steps.
double tail_mean(const EditOutcome& o, std::size_t window = 5) {
  const auto& t = o.loss_trace;
  const std::size_t n = std::min(window, t.size());
  double s = 0.0;
  for (std::size_t k = t.size() - n; k < t.size(); ++k) s += t[k].combined;
  return s / static_cast<double>(n);
}

Verdict static_vs_dynamic(const Toy& toy) {
  EditConfig dyn = toy.config.edit;
  dyn.temperature = 100.0;
  dyn.variant = Variant::kIceDynamic;
  dyn.convergence_tol = 0.0;  // run to S so both variants settle
  EditConfig st = dyn;
  st.variant = Variant::kIceStatic;
  const auto a = edit_suite(toy, dyn, kSuite), b = edit_suite(toy, st, kSuite);
  int wins = 0;
  double sum_d = 0.0, sum_s = 0.0;
  for (std::size_t i = 0; i < kSuite; ++i) {
    const double ld = tail_mean(a[i]), ls = tail_mean(b[i]);
    wins += ld < ls;
    sum_d += ld;
    sum_s += ls;
  }
  return {wins >= 8, fmt("dynamic below static on %d/%zu edits (mean equilibrium loss %.3f vs %.3f)",
                         wins, kSuite, sum_d / kSuite, sum_s / kSuite)};
}

Verdict continual(const Toy& toy, const fs::path& out) {
  HarnessConfig ice = toy.config;
  ice.max_records = 50;
  HarnessConfig ft = ice;
  ft.edit.variant = Variant::kFt;
  ft.edit.lambda = 0.0;
  const auto ri = run_continual(toy.checkpoint, toy.dataset_path, ice, out / "continual_ice");
  const auto rf = run_continual(toy.checkpoint, toy.dataset_path, ft, out / "continual_ft");
  const auto& ai = ri.report.aggregate;
  const auto& af = rf.report.aggregate;
  if (ri.report.records.size() != 50 || rf.report.records.size() != 50)
    return {false, fmt("expected 50 edits, got %zu and %zu", ri.report.records.size(),
                       rf.report.records.size())};
  if (!ai.fluency || !af.fluency || !ai.ppl_r || !af.ppl_r)
    return {false, "missing fluency or PPL_r aggregate"};
  const bool ok = *ai.fluency >= *af.fluency && *ai.ppl_r <= *af.ppl_r;
  return {ok, fmt("50 sequential edits: fluency ICE %.4f vs FT %.4f; PPL_r ICE %.4f vs FT %.4f; "
                  "edit succ ICE %.0f%% FT %.0f%%",
                  *ai.fluency, *af.fluency, *ai.ppl_r, *af.ppl_r, 100 * ai.edit_succ.value_or(0),
                  100 * af.edit_succ.value_or(0))};
}

Verdict clamp_discipline(const Toy& toy) {
  constexpr double kRadius = 5e-4;
  double worst = 0.0;
  std::size_t steps = 0;
  for (Variant v : {Variant::kIceDynamic, Variant::kFtClamped}) {
    EditConfig ec = toy.config.edit;
    ec.variant = v;
    ec.clamp_radius = kRadius;
    ec.convergence_tol = 0.0;  // run every step
    edit_suite(toy, ec, kSuite, [&](const StepRecord&, const Model& live) {
      worst = std::max(worst, max_abs_difference(live.params, toy.base.params,
                                                 toy.base.config.editable()));
      ++steps;
    });
  }
  return {worst <= kRadius,
          fmt("%zu optimization steps (ICE_DYNAMIC, FT_CLAMPED), max deviation %.6e <= %.0e",
              steps, worst, kRadius)};
}

Verdict metric_oracles(const Toy& toy) {
  const MetricsConfig mc;
  const TokenSeq a5{2, 2, 2, 2, 2}, abab{2, 3, 2, 3, 2, 3};
  const double f0 = fluency(a5, mc), f1 = fluency(abab, mc);
  bool ok = f0 == 0.0 && std::abs(f1 - 0.6831) <= 1e-4;
  std::string ppl_detail;
  for (int k : {3, 5, 8, 13}) {
    Model u = random_model(Architecture::kBigramTable, k, 1);
    for (auto& [_, t] : u.params)
      for (auto& v : t.values()) v = 0.0;
    Rng rng(static_cast<std::uint64_t>(k));
    const double p = perplexity(u, TokenSeq{kBos}, random_tokens(rng, k, 7));
    ok = ok && std::abs(p - k) <= 1e-12 * k;
    ppl_detail += fmt("%s%d->%.12g", ppl_detail.empty() ? "" : " ", k, p);
  }
  const auto loc = locality(toy.base, toy.base, toy.records, mc);
  ok = ok && loc && *loc == 1.0;
  return {ok, fmt("fluency(a a a a a)=%g, fluency(a b a b a b)=%.6f, uniform ppl [%s], "
                  "locality(pre, pre)=%.1f%%",
                  f0, f1, ppl_detail.c_str(), loc ? 100 * *loc : -1.0)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism(const Toy& toy, const fs::path& out) {
  HarnessConfig c = toy.config;
  c.max_records = static_cast<int>(kSuite);
  run_edit(toy.checkpoint, toy.dataset_path, c, out / "edit_a");
  run_edit(toy.checkpoint, toy.dataset_path, c, out / "edit_b");
  std::size_t same = 0, bytes = 0;
  const char* files[] = {"report.json", "report.csv", "trace.ndjson"};
  for (const char* f : files) {
    const auto x = slurp(out / "edit_a" / f), y = slurp(out / "edit_b" / f);
    same += !x.empty() && x == y;
    bytes += x.size();
  }
  return {same == 3, fmt("%zu/3 report files byte-identical (%zu bytes)", same, bytes)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icelab acceptance run"};
  std::string config_path, world_dir, out_dir;
  app.add_option("--config", config_path, "toy experiment config")->required();
  app.add_option("--world", world_dir, "directory holding model.ckpt and dataset.json")->required();
  app.add_option("--out", out_dir, "scratch directory for run outputs")->required();
  std::vector<int> gaps;
  app.add_option("--known-gap", gaps, "criteria whose FAIL is reported but not fatal")
      ->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  known_gaps.insert(gaps.begin(), gaps.end());

  report(1, "gradient oracle", 30, gradient_oracle);
  report(2, "fine-tuning with sampling equals fine-tuning", 10, observation_one);
  report(3, "combined objective equals FT plus KL", 20, combined_identity);
  report(4, "one-hot expectation", 0, one_hot_lemma);

  Toy toy;
  try {
    toy.config = parse_harness_config(read_key_values(config_path));
    toy.checkpoint = fs::path(world_dir) / "model.ckpt";
    toy.dataset_path = fs::path(world_dir) / "dataset.json";
    toy.base = load_checkpoint(toy.checkpoint.string());
    toy.dataset = load_edit_records(toy.dataset_path).dataset;
    toy.records = tokenize_dataset(toy.dataset);
    fs::create_directories(out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load the toy world: %s\n", e.what());
    return 2;
  }
  if (toy.records.size() < 50) {
    std::fprintf(stderr, "toy dataset has %zu records, 50 needed\n", toy.records.size());
    return 2;
  }

  Verdict gap;
  report(5, "edit success", 120, [&] { return edit_success_and_gap(toy, gap); });
  report(6, "consistency gap", 0, [&] { return gap; });
  report(7, "static vs dynamic equilibrium", 0, [&] { return static_vs_dynamic(toy); });
  report(8, "continual degradation ordering", 300, [&] { return continual(toy, out_dir); });
  report(9, "clamp discipline", 0, [&] { return clamp_discipline(toy); });
  report(10, "metric oracles", 0, [&] { return metric_oracles(toy); });
  report(11, "determinism", 0, [&] { return determinism(toy, out_dir); });

  emit(fmt("%d of 11 criteria failed, %d outside the known gaps\n", failures, blocking));
  std::ofstream(fs::path(out_dir) / "summary.txt") << summary;
  return blocking == 0 ? 0 : 1;
}
