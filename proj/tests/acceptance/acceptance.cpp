// Acceptance suite: one PASS/FAIL line per criterion.
//
// Criteria 4 to 7 run the desk profile end to end (16 seeds of every
// variant) under a scratch run root. Criteria listed in --expect-fail still
// print FAIL but do not change the exit status. The verdicts are also written
// to report.txt under the root.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hhvg/checks.hpp"
#include "hhvg/config.hpp"
#include "hhvg/mathcore.hpp"
#include "hhvg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hhvg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict from_checks(int id, std::string title, const std::vector<CheckResult>& checks,
                    double budget_seconds) {
  Verdict v{id, std::move(title), true, {}};
  double total = 0.0;
  for (const auto& c : checks) {
    v.passed = v.passed && c.passed;
    total += c.seconds;
    v.detail += c.name + ": " + (c.passed ? "ok" : "FAILED") + " (" + c.detail + "); ";
  }
  v.passed = v.passed && total < budget_seconds;
  v.detail += fmt("%.1f s", total) + fmt(" of %.0f s budget", budget_seconds);
  return v;
}

// Desk runs keyed by variant key then seed.
using DeskRuns = std::map<std::string, std::map<std::uint64_t, RunOutcome>>;

struct DeskData {
  ExperimentConfig cfg;
  DeskRuns runs;
  std::vector<fs::path> dirs;
  double seconds = 0.0;
  std::vector<std::string> failures;
};

DeskData run_desk(const fs::path& root, int seeds, bool reuse) {
  DeskData d{ExperimentConfig::for_profile("desk"), {}, {}, 0.0, {}};
  const auto t0 = Clock::now();
  const SharedData shared = prepare_shared(d.cfg);
  std::vector<std::string> order;
  for (const auto& k : run_variant_keys()) {
    if (k != "pgirs") order.push_back(k);
  }
  order.push_back("pgirs");
  for (const auto& key : order) {
    for (int s = 1; s <= seeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      RunOutcome o = execute_run(d.cfg, key, seed, root, {!reuse, &shared});
      std::fprintf(stderr, "  %-6s seed %2d %s %s\n", key.c_str(), s,
                   o.completed ? "completed" : "FAILED", o.reused ? "(reused)" : "");
      if (!o.completed) d.failures.push_back(key + " seed " + std::to_string(s) + ": " + o.failure);
      d.dirs.push_back(o.dir);
      d.runs[key][seed] = std::move(o);
    }
  }
  d.seconds = seconds_since(t0);
  return d;
}

const SummaryRow* find_row(const Comparison& cmp, const std::string& label) {
  for (const auto& r : cmp.summary) {
    if (r.variant == label) return &r;
  }
  return nullptr;
}

Verdict criterion_ordering(const DeskData& d, const Comparison& cmp) {
  Verdict v{4, "desk-scale ordering of terminal post-DAP validation MSE", false, {}};
  const char* labels[] = {"Oracle", "C/B", "C/PE", "PG/IRS", "PG/GR", "P/RW"};
  std::map<std::string, double> m;
  for (const char* l : labels) {
    const SummaryRow* r = find_row(cmp, l);
    if (r == nullptr || r->runs == 0) {
      v.detail = std::string("no completed runs for ") + l;
      return v;
    }
    m[l] = r->postdap_mse_mean;
    v.detail += std::string(l) + "=" + fmt("%.4g", m[l]) + " ";
  }
  // "a <= b" allows 5% slack, "a ~ b" means within 5% of the larger mean.
  constexpr double kSlack = 0.05;
  auto approx = [&](double a, double b) { return std::abs(a - b) <= kSlack * std::max(a, b); };
  struct Clause {
    std::string text;
    bool ok;
  };
  const double ratio = m["P/RW"] / m["PG/GR"];
  const std::vector<Clause> clauses{
      {"Oracle<C/B", m["Oracle"] < m["C/B"]},
      {"C/B<=C/PE", m["C/B"] <= (1.0 + kSlack) * m["C/PE"]},
      {"C/PE~PG/IRS", approx(m["C/PE"], m["PG/IRS"])},
      {"PG/IRS<PG/GR", m["PG/IRS"] < m["PG/GR"]},
      {"P/RW>=5xPG/GR", ratio >= 5.0},
  };
  v.passed = d.failures.empty();
  v.detail += "| ";
  for (const auto& c : clauses) {
    v.passed = v.passed && c.ok;
    v.detail += c.text + (c.ok ? " ok; " : " violated; ");
  }
  v.detail += "P/RW/PG/GR=" + fmt("%.2f", ratio);
  v.detail += "; " + std::to_string(d.failures.size()) + " failed runs; runs took " +
              fmt("%.0f s", d.seconds);
  return v;
}

Verdict criterion_exploration(const DeskData& d, int seeds, int required) {
  Verdict v{5, "exploration signatures at matched DAP steps", false, {}};
  const std::vector<std::string> curious{"cb", "cpe", "pgirs"};
  const std::vector<std::string> others{"cb", "cpe", "pgirs", "pggr"};
  int cr_hits = 0, ce_hits = 0, both = 0, usable = 0;
  double cr_curious_sum = 0.0, cr_prw_sum = 0.0, ce_prw_sum = 0.0, ce_min_other_sum = 0.0;
  for (int s = 1; s <= seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    auto terminal = [&](const std::string& key) -> const RunRow* {
      const auto& o = d.runs.at(key).at(seed);
      return o.completed && o.dap_terminal ? &*o.dap_terminal : nullptr;
    };
    const RunRow* prw = terminal("prw");
    bool ok = prw != nullptr;
    std::int64_t step = prw ? prw->step : -1;
    for (const auto& k : others) {
      const RunRow* r = terminal(k);
      ok = ok && r != nullptr && r->step == step;
    }
    if (!ok) continue;
    ++usable;
    double cr_mean = 0.0;
    for (const auto& k : curious) cr_mean += terminal(k)->cr;
    cr_mean /= static_cast<double>(curious.size());
    double ce_min = terminal(others.front())->ce;
    for (const auto& k : others) ce_min = std::min(ce_min, terminal(k)->ce);
    const bool cr_ok = cr_mean > prw->cr;
    const bool ce_ok = prw->ce < ce_min;
    cr_hits += cr_ok;
    ce_hits += ce_ok;
    both += cr_ok && ce_ok;
    cr_curious_sum += cr_mean;
    cr_prw_sum += prw->cr;
    ce_prw_sum += prw->ce;
    ce_min_other_sum += ce_min;
  }
  v.passed = both >= required;
  const double n = std::max(usable, 1);
  v.detail = "seeds holding both " + std::to_string(both) + "/" + std::to_string(seeds) +
             " (need " + std::to_string(required) + "); CR curious>P/RW on " +
             std::to_string(cr_hits) + ", P/RW lowest CE on " + std::to_string(ce_hits) +
             "; mean CR curious " + fmt("%.4f", cr_curious_sum / n) + " vs P/RW " +
             fmt("%.4f", cr_prw_sum / n) + ", mean CE P/RW " + fmt("%.4f", ce_prw_sum / n) +
             " vs lowest other " + fmt("%.4f", ce_min_other_sum / n);
  return v;
}

Verdict criterion_statistics(const Comparison& cmp) {
  Verdict v{6, "rank-sum correctness and corrected desk-data tests", false, {}};
  const CheckResult rs = check_rank_sum();
  int executed = 0;
  std::string decisions;
  for (const auto& t : cmp.tests) {
    const bool sane = std::isfinite(t.result.p) && t.result.p >= 0.0 && t.result.p <= 1.0 &&
                      std::abs(t.alpha - 0.025) < 1e-15 && t.n_x > 0 && t.n_y > 0;
    executed += sane;
    decisions += t.hypothesis + " " + t.phase + " p=" + fmt("%.3g", t.result.p) +
                 (t.reject ? " reject; " : " keep; ");
  }
  v.passed = rs.passed && executed == 4 && cmp.tests.size() == 4;
  v.detail = rs.detail + "; " + std::to_string(executed) + "/4 tests at alpha 0.025: " + decisions;
  return v;
}

Verdict criterion_determinism(const DeskData& d, const fs::path& root) {
  Verdict v{7, "byte-identical metric CSVs for identical config and seed", false, {}};
  const SharedData shared = prepare_shared(d.cfg);
  const fs::path again = root / "rerun";
  std::vector<std::pair<std::string, std::string>> files{{"cb", "dap.csv"},
                                                         {"cb", "postdap.csv"},
                                                         {"prw", "dap.csv"},
                                                         {"prw", "postdap.csv"}};
  std::set<std::string> rerun;
  int same = 0;
  for (const auto& [key, file] : files) {
    if (rerun.insert(key).second) execute_run(d.cfg, key, 1, again, {true, &shared});
    const auto a = read_bytes(run_directory(root, key, 1, d.cfg) / file);
    const auto b = read_bytes(run_directory(again, key, 1, d.cfg) / file);
    const bool eq = !a.empty() && a == b;
    same += eq;
    v.detail += key + "/" + file + (eq ? " identical; " : " DIFFERS; ");
  }
  v.passed = same == static_cast<int>(files.size());
  return v;
}

std::set<int> parse_ids(const std::string& spec) {
  std::set<int> out;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ',');) {
    if (!part.empty()) out.insert(std::stoi(part));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string root_opt = "acceptance_runs", expect_spec, only_spec = "1,2,3,4,5,6,7";
  int seeds = 16;
  bool reuse = false;
  app.add_option("--root", root_opt, "Scratch run root");
  app.add_option("--seeds", seeds, "Seeds per variant")->check(CLI::Range(2, 1024));
  app.add_flag("--reuse", reuse, "Reuse completed runs under the root");
  app.add_option("--expect-fail", expect_spec, "Criteria whose failure does not fail the suite");
  app.add_option("--only", only_spec, "Criteria to evaluate");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> expected = parse_ids(expect_spec);
  const std::set<int> only = parse_ids(only_spec);
  const fs::path root(root_opt);
  std::vector<Verdict> verdicts;
  std::string transcript;
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    transcript += line;
  };
  auto report = [&](const Verdict& v) {
    const bool xfail = !v.passed && expected.count(v.id) > 0;
    emit(std::string(v.passed ? "PASS" : "FAIL") + " criterion " + std::to_string(v.id) + ": " +
         v.title + (xfail ? " [expected]" : "") + "\n    " + v.detail + "\n");
    verdicts.push_back(v);
  };

  try {
    if (only.count(1)) {
      report(from_checks(1, "numerical core properties",
                         std::vector<CheckResult>{
                             check_kl_properties([](const Gaussian4& p, const Gaussian4& q) {
                               return gaussian_kl(p, q);
                             }),
                             check_householder_orthogonality(), check_hetero_identity()},
                         120.0));
    }
    if (only.count(2)) {
      report(from_checks(2, "gradient fidelity of the four losses", {check_loss_gradients()}, 300.0));
    }
    if (only.count(3)) {
      report(from_checks(3, "devaluation descent", {check_devaluation_descent()}, 1e9));
    }
    if (only.count(4) || only.count(5) || only.count(6) || only.count(7)) {
      std::fprintf(stderr, "desk runs under %s\n", root.string().c_str());
      const DeskData desk = run_desk(root, seeds, reuse);
      const Comparison cmp = compare_runs(desk.dirs);
      write_comparison(root / "comparison", cmp);
      const int required = (seeds * 3 + 3) / 4;
      if (only.count(4)) report(criterion_ordering(desk, cmp));
      if (only.count(5)) report(criterion_exploration(desk, seeds, required));
      if (only.count(6)) report(criterion_statistics(cmp));
      if (only.count(7)) report(criterion_determinism(desk, root));
    }
  } catch (const std::exception& e) {
    emit(std::string("FAIL acceptance suite aborted: ") + e.what() + "\n");
    return 1;
  }

  int unexpected = 0;
  for (const auto& v : verdicts) {
    if (!v.passed && expected.count(v.id) == 0) ++unexpected;
    if (v.passed && expected.count(v.id) > 0) {
      emit("note: criterion " + std::to_string(v.id) + " passed although listed as expected to fail\n");
    }
  }
  emit(std::to_string(verdicts.size()) + " criteria evaluated, " + std::to_string(unexpected) +
       " unexpected failures\n");
  // ctest hides the output of passing tests
  fs::create_directories(root);
  std::ofstream(root / "report.txt") << transcript;
  return unexpected == 0 ? 0 : 1;
}
