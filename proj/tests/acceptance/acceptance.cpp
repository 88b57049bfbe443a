// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "metaqa/harness.hpp"
#include "metaqa/simulator.hpp"

using namespace metaqa;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<std::string, Outcome>> results;

void record(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  results.emplace_back(name, o);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double f_score(double hits, double np, double ng) {
  if (hits == 0) return 0.0;
  const double p = hits / np, r = hits / ng;
  return 2.0 * p * r / (p + r);
}

double bag_f1(const std::string& pred, const std::string& gold) {
  auto p = words(normalize(pred)), g = words(normalize(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  std::vector<std::string> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  return f_score(static_cast<double>(common.size()), static_cast<double>(p.size()), static_cast<double>(g.size()));
}

double dp_rouge(const std::string& pred, const std::string& gold) {
  auto p = words(normalize(pred)), g = words(normalize(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<std::vector<int>> t(p.size() + 1, std::vector<int>(g.size() + 1, 0));
  for (std::size_t i = 1; i <= p.size(); ++i)
    for (std::size_t j = 1; j <= g.size(); ++j)
      t[i][j] = p[i - 1] == g[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return f_score(t[p.size()][g.size()], static_cast<double>(p.size()), static_cast<double>(g.size()));
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pool = {"x", "y", "z", "The", "a", "w", "Q,", "v!", "an", "u", "x."};
  std::uniform_int_distribution<std::size_t> len(0, 8), pick(0, pool.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) s += (i ? " " : "") + pool[pick(rng)];
  return s;
}

// ---------------------------------------------------------------------------
// Shared state for the experiment criteria

constexpr std::uint64_t kBenchmarkSeed = 2022;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3, 4, 5};
constexpr std::size_t kTrainSize = 10000;

struct SeedRun {
  Checkpoint ckpt;
  RunReport metaqa, conf_argmax, router_only;
};

Benchmark* bench = nullptr;
EvalMetricConfig metrics;
RunReport oracle;
std::map<std::uint64_t, SeedRun> runs;
double experiment_seconds = 0.0;

TrainConfig paper_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.max_train_examples = kTrainSize;
  return c;
}

double accuracy_on(const RunReport& r, const std::string& domain) { return r.metrics.per_dataset.at(domain).accuracy; }

}  // namespace

int main() {
  const auto start = Clock::now();

  record("C1 gradient check (toy config, full loss)", [] {
    GradCheckConfig cfg;
    cfg.options.sample = 200;
    cfg.options.tol = 1e-4;
    const auto t = Clock::now();
    GradReport r = model_gradcheck(cfg);
    const double secs = seconds_since(t);
    return Outcome{r.passed && r.checked >= 200 && r.max_rel_error <= 1e-4 && secs < 60.0,
                   fmt("max rel error %.3g over %zu params in %.1f s (tol 1e-4, limit 60 s)", r.max_rel_error,
                       r.checked, secs)};
  });

  record("C2 input embedding equals naive per-position sum", [] {
    std::mt19937_64 rng(77);
    EncoderConfig cfg;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ffn = 32;
    cfg.vocab_size = 60;
    cfg.max_len = 40;
    cfg.init_std = 0.5;
    EncoderWeights w = EncoderWeights::init(cfg, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : w.conf_bias.value.data()) v = n(rng);
    std::vector<std::string> toks = Vocab().tokens();
    for (std::size_t i = toks.size(); i < cfg.vocab_size; ++i) toks.push_back("t" + std::to_string(i));
    Vocab vocab(toks);
    std::uniform_int_distribution<std::size_t> word(kNumSpecials, toks.size() + 3), len(0, 4), qlen(1, 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto phrase = [&](std::size_t k) {
        std::string s;
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t id = word(rng);
          s += (i ? " " : "") + (id < toks.size() ? toks[id] : "oov" + std::to_string(id));
        }
        return s;
      };
      Example ex;
      ex.qid = std::to_string(trial);
      ex.question = phrase(qlen(rng));
      for (int j = 0; j < 3; ++j) ex.candidates.push_back({"a" + std::to_string(j), phrase(len(rng)), u(rng), u(rng) < 0.8});
      EncoderInput in = assemble(ex, vocab, cfg.max_len);
      Tape tape;
      const Tensor h0 = embed(tape, in, w, Binding::kFrozen).value();
      for (std::size_t i = 0; i < cfg.max_len; ++i) {
        const std::size_t tok = i < in.length ? in.token_ids[i] : kPadId;
        for (std::size_t d = 0; d < cfg.hidden; ++d) {
          double x = w.token.value.at(tok, d) + w.position.value.at(i, d);
          x += w.segment.value.at(in.segment_ids[i], d);
          x += in.confidence_values[i] * w.conf_weight.value[d] + w.conf_bias.value[d];
          mismatches += h0.at(i, d) != x;
        }
      }
    }
    return Outcome{mismatches == 0, fmt("%zu mismatching entries over 100 random inputs", mismatches)};
  });

  record("C3 metric oracles", [] {
    std::mt19937_64 rng(5);
    std::size_t f1_bad = 0, rouge_bad = 0;
    for (int i = 0; i < 1000; ++i) {
      std::string p = random_text(rng), g = random_text(rng);
      f1_bad += token_f1(p, g) != bag_f1(p, g);
      rouge_bad += rouge_l(p, g) != dp_rouge(p, g);
    }
    const double legend = token_f1("Legend", "Legend of Sleepy Hollow");
    return Outcome{f1_bad == 0 && rouge_bad == 0 && std::abs(legend - 0.4) < 1e-15,
                   fmt("F1 mismatches %zu/1000, ROUGE-L mismatches %zu/1000, Legend F1 %.6f", f1_bad, rouge_bad, legend)};
  });

  record("C4 loss arithmetic", [] {
    Tape tape;
    Labels hand{{1, 0}, {0, 1}, std::vector<double>{1.0, 0.0}};
    const double total =
        total_loss(tape.constant(Tensor::matrix({{0.5, 0.5}})), tape.constant(Tensor::matrix({{0.0, 0.0}})), hand, {0.5, 1.0})
            .total;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::normal_distribution<double> n(0.0, 3.0);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t k = 2 + trial % 5;
      Tensor p({1, k}), z({1, k});
      Labels l;
      std::size_t pos = 0;
      for (std::size_t j = 0; j < k; ++j) {
        p[j] = u(rng);
        z[j] = n(rng);
        l.agsen.push_back(u(rng) < 0.3);
        l.anssel.push_back(u(rng) < 0.4);
        pos += l.anssel.back();
      }
      if (pos) {
        std::vector<double> t(k);
        for (std::size_t j = 0; j < k; ++j) t[j] = l.anssel[j] ? 1.0 / pos : 0.0;
        l.anssel_target = t;
      }
      const double a1 = u(rng), a2 = u(rng) * 2.0;
      Tape tp;
      const double got = total_loss(tp.constant(p), tp.constant(z), l, {a1, a2}).total;
      double bce = 0.0, lse = -INFINITY, ce = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        bce += l.agsen[j] ? -std::log(p[j]) : -std::log(1.0 - p[j]);
        lse = std::max(lse, z[j]);
      }
      double se = 0.0;
      for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - lse);
      lse += std::log(se);
      for (std::size_t j = 0; j < k; ++j)
        if (l.anssel[j]) ce += (lse - z[j]) / static_cast<double>(pos);
      worst = std::max(worst, std::abs(got - (a1 / static_cast<double>(k) * bce + a2 * ce)));
    }
    return Outcome{std::abs(total - 1.0397) <= 1e-4 && worst <= 1e-12,
                   fmt("hand example %.6f (target 1.0397), max deviation from recomputation %.3g", total, worst)};
  });

  // Main experiment: standard benchmark, paper hyperparameters, 10k examples.
  const auto exp_start = Clock::now();
  bench = new Benchmark(generate_benchmark(standard_benchmark(kBenchmarkSeed), kBenchmarkSeed));
  metrics = standard_benchmark(kBenchmarkSeed).metric_config();
  oracle = run_baseline("oracle", bench->test, metrics);
  RunReport conf = run_baseline("conf_argmax", bench->test, metrics);
  for (std::uint64_t seed : kSeeds) {
    const auto t = Clock::now();
    SeedRun r;
    r.ckpt = train(bench->train, nullptr, paper_config(seed));
    r.metaqa = evaluate(r.ckpt, bench->test, {.ablated = {}, .workers = 1, .metrics = metrics});
    r.conf_argmax = conf;
    r.router_only = run_baseline("router_only", bench->test, metrics, &r.ckpt);
    std::fprintf(stderr, "[acceptance] seed %llu: metaqa %.4f conf_argmax %.4f oracle %.4f (%.0f s)\n",
                 static_cast<unsigned long long>(seed), r.metaqa.selection_accuracy, conf.selection_accuracy,
                 oracle.selection_accuracy, seconds_since(t));
    runs.emplace(seed, std::move(r));
  }
  experiment_seconds = seconds_since(exp_start);

  record("C5 end-to-end synthetic experiment", [] {
    std::size_t ok = 0;
    std::string per;
    for (const auto& [seed, r] : runs) {
      const double m = r.metaqa.selection_accuracy;
      const double gain = m - r.conf_argmax.selection_accuracy;
      const double minority = accuracy_on(r.metaqa, "film") - accuracy_on(r.router_only, "film");
      const double frac = m / oracle.selection_accuracy;
      const bool good = gain >= 0.05 && minority >= 0.03 && frac >= 0.9;
      ok += good;
      per += fmt(" [seed %llu acc %.3f, +%.1f vs conf_argmax, +%.1f vs router_only on film, %.1f%% of oracle]",
                 static_cast<unsigned long long>(seed), m, 100 * gain, 100 * minority, 100 * frac);
    }
    return Outcome{ok >= 4 && experiment_seconds <= 1800.0,
                   fmt("%zu/5 seeds meet all targets, %.0f s total;", ok, experiment_seconds) + per};
  });

  record("C6 leave-one-out without retraining", [] {
    SeedRun& r = runs.at(kSeeds.front());
    const std::string before = serialize_checkpoint(r.ckpt);
    std::size_t hits = 0;
    std::string per;
    for (const auto& agent : bench->test.registry.agents) {
      RunReport a = evaluate(r.ckpt, bench->test, {.ablated = {agent}, .workers = 1, .metrics = metrics});
      for (const auto& s : a.selected_agents) hits += s == agent;
      per += fmt(" -%s %.3f", agent.c_str(), a.selection_accuracy);
    }
    const bool unchanged = serialize_checkpoint(r.ckpt) == before;
    return Outcome{hits == 0 && unchanged,
                   fmt("%zu selections of ablated agents, checkpoint bytes %s;", hits, unchanged ? "identical" : "changed") +
                       per};
  });

  record("C7 ablation behaviour", [] {
    // confidence embedding off: outputs ignore any permutation of confidences
    TrainConfig nc = paper_config(kSeeds.front());
    nc.disable_conf_emb = true;
    std::vector<double> no_conf_acc, no_agsen_acc, full_acc;
    Checkpoint no_conf = train(bench->train, nullptr, nc);
    std::mt19937_64 rng(8);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < 300; ++i) {
      Example ex = bench->test.examples[i];
      auto logits = [&](const Example& e) {
        Tape tape;
        EncoderInput in = assemble(e, no_conf.model.vocab, no_conf.model.encoder.config.max_len);
        ForwardResult f = forward(tape, no_conf.model, trimmed(in, in.length), Binding::kFrozen);
        return std::pair{f.anssel_logits.value(), f.agsen_probs.value()};
      };
      auto base = logits(ex);
      std::vector<double> confs;
      for (auto& c : ex.candidates) confs.push_back(c.confidence);
      std::shuffle(confs.begin(), confs.end(), rng);
      for (std::size_t j = 0; j < confs.size(); ++j) ex.candidates[j].confidence = confs[j];
      auto permuted = logits(ex);
      differing += !(base.first.bit_equal(permuted.first) && base.second.bit_equal(permuted.second));
    }

    // alpha1 = 0: AgSeN weights stay at their initial bytes
    TrainConfig na = paper_config(kSeeds.front());
    na.alpha1 = 0.0;
    MetaQAModel init = initial_model(training_subset(bench->train, na), na);
    Checkpoint no_agsen = train(bench->train, nullptr, na);
    bool frozen = true;
    auto pi = init.heads.agsen_parameters();
    auto pt = no_agsen.model.heads.agsen_parameters();
    for (std::size_t i = 0; i < pi.size(); ++i) frozen = frozen && same_bytes(pi[i]->value, pt[i]->value);

    const EvalOptions opts{.ablated = {}, .workers = 1, .metrics = metrics};
    for (std::uint64_t seed : kSeeds) {
      full_acc.push_back(runs.at(seed).metaqa.selection_accuracy);
      if (seed == kSeeds.front()) {
        no_conf_acc.push_back(evaluate(no_conf, bench->test, opts).selection_accuracy);
        no_agsen_acc.push_back(evaluate(no_agsen, bench->test, opts).selection_accuracy);
        continue;
      }
      TrainConfig c1 = paper_config(seed);
      c1.disable_conf_emb = true;
      Checkpoint k1 = train(bench->train, nullptr, c1);
      no_conf_acc.push_back(evaluate(k1, bench->test, opts).selection_accuracy);
      TrainConfig c2 = paper_config(seed);
      c2.alpha1 = 0.0;
      Checkpoint k2 = train(bench->train, nullptr, c2);
      no_agsen_acc.push_back(evaluate(k2, bench->test, opts).selection_accuracy);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const double mf = mean(full_acc), mc = mean(no_conf_acc), ma = mean(no_agsen_acc);
    return Outcome{differing == 0 && frozen && mc <= mf && ma <= mf,
                   fmt("permutation changes %zu/300 outputs, AgSeN weights %s, mean accuracy full %.4f / "
                       "no conf-emb %.4f / no AgSeN loss %.4f",
                       differing, frozen ? "unchanged" : "changed", mf, mc, ma)};
  });

  record("C8 data efficiency (10k within 1 point of 20k)", [] {
    TrainConfig c = paper_config(kSeeds.front());
    auto rows = efficiency_sweep(bench->train, bench->test, {1000, 2000, 5000, 10000, 20000}, c, metrics);
    std::string per;
    double m10 = 0, m20 = 0;
    for (const auto& r : rows) {
      per += fmt(" %zu:%.2f", r.train_size, 100 * r.metric);
      if (r.train_size == 10000) m10 = r.metric;
      if (r.train_size == 20000) m20 = r.metric;
    }
    return Outcome{std::abs(m10 - m20) <= 0.01, fmt("metric at 10k %.2f vs 20k %.2f;", 100 * m10, 100 * m20) + per};
  });

  record("C9 unsolvable-rate identity", [] {
    bool counts_match = true;
    for (const Dataset* ds : {&bench->train, &bench->test}) {
      UnsolvableReport r = describe_oracle(*ds);
      std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
      std::size_t total_un = 0;
      for (const auto& ex : ds->examples) {
        bool any = false;
        for (const auto& c : ex.candidates)
          for (const auto& g : ex.gold_answers) any = any || (c.present && bag_f1(c.answer, g) > 0.7);
        tally[ex.dataset_id].first += !any;
        tally[ex.dataset_id].second += 1;
        total_un += !any;
      }
      for (const auto& [d, t] : tally)
        counts_match = counts_match && r.per_dataset.at(d) == static_cast<double>(t.first) / static_cast<double>(t.second);
      counts_match = counts_match && r.overall == static_cast<double>(total_un) / static_cast<double>(ds->size());
    }
    const double un = describe_oracle(bench->test).overall;
    return Outcome{counts_match && oracle.selection_accuracy == 1.0 - un,
                   fmt("recount %s, oracle accuracy %.4f, 1 - unsolvable %.4f", counts_match ? "matches" : "differs",
                       oracle.selection_accuracy, 1.0 - un)};
  });

  record("C10 determinism and round trips", [] {
    TrainConfig c = paper_config(kSeeds.front());
    c.max_train_examples = 1500;
    const std::string a = serialize_checkpoint(train(bench->train, nullptr, c));
    const std::string b = serialize_checkpoint(train(bench->train, nullptr, c));
    Checkpoint& ck = runs.at(kSeeds.front()).ckpt;
    const std::string bytes = serialize_checkpoint(ck);
    Checkpoint back = deserialize_checkpoint(bytes);
    bool params_equal = true;
    auto p0 = ck.model.parameters();
    auto p1 = back.model.parameters();
    for (std::size_t i = 0; i < p0.size(); ++i) params_equal = params_equal && same_bytes(p0[i]->value, p1[i]->value);
    const EvalOptions opts{.ablated = {}, .workers = 1, .metrics = metrics};
    const std::string r0 = to_json(runs.at(kSeeds.front()).metaqa).dump();
    const std::string r1 = to_json(evaluate(back, bench->test, opts)).dump();
    const std::string preds = serialize_predictions(bench->test);
    const bool preds_ok = parse_predictions(preds, Split::kTest) == bench->test &&
                          serialize_predictions(parse_predictions(preds, Split::kTest)) == preds;
    const std::string regen = serialize_predictions(generate_benchmark(standard_benchmark(kBenchmarkSeed), kBenchmarkSeed).test);
    TTestResult t = compare_runs({2.1, 2.5, 2.3, 2.2}, {1.9, 2.0, 2.1, 1.8});
    // reference values from scipy.stats.ttest_ind(equal_var=False)
    const bool welch = std::abs(t.t - 3.0361458822299396) < 5e-5 && std::abs(t.p - 0.025081308884364682) < 5e-5;
    const bool ok = a == b && params_equal && bytes == serialize_checkpoint(back) && r0 == r1 && preds_ok &&
                    regen == preds && welch;
    return Outcome{ok, fmt("checkpoints %s, round trip %s, reports %s, prediction files %s, regenerated data %s, "
                           "Welch t %.4f p %.4f",
                           a == b ? "identical" : "differ", params_equal ? "bit-exact" : "lossy",
                           r0 == r1 ? "identical" : "differ", preds_ok ? "bit-exact" : "lossy",
                           regen == preds ? "identical" : "differs", t.t, t.p)};
  });

  std::size_t passed = 0;
  for (const auto& [name, o] : results) passed += o.pass;
  std::printf("%zu/%zu criteria passed in %.0f s\n", passed, results.size(), seconds_since(start));
  delete bench;
  return passed == results.size() ? 0 : 1;
}
