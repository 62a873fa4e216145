// End-to-end gate: one PASS/FAIL line per criterion, nonzero exit when a
// gated criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "drilldown/gradsuite.hpp"
#include "drilldown/retrievald.hpp"
#include "drilldown/simrank.hpp"
#include "drilldown/statebank.hpp"
#include "drilldown/trainer.hpp"
#include "httplib.h"

namespace fs = std::filesystem;
using namespace dd;
using grad::Rng;
using grad::Tensor;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Gate {
  int failures = 0;

  void report(const std::string& name, const Outcome& o, bool gated = true) {
    const char* tag = o.pass ? "PASS" : (gated ? "FAIL" : "SOFT-FAIL");
    std::printf("%-9s %-26s %s\n", tag, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && gated) ++failures;
  }

  void run(const std::string& name, const std::function<Outcome()>& fn, bool gated = true) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    report(name, o, gated);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- unit-level criteria ----------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = train::run_gradient_suite();
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : results) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  return {worst < 1e-4 && secs < 120.0,
          fmt("%zu cases, max rel error %.2e (%s), %.1fs", results.size(), worst, worst_name.c_str(), secs)};
}

double brute_force_score(const state::StateSet& x, const Tensor& v, double lambda, bool inverse_n) {
  double total = 0;
  int used = 0;
  for (std::size_t i = 0; i < x.slot_count(); ++i) {
    if (x.empty[i]) continue;
    std::vector<double> cos;
    for (std::size_t k = 0; k < v.rows(); ++k) {
      double xv = 0, xx = 0, vv = 0;
      for (std::size_t d = 0; d < v.cols(); ++d) {
        xv += x.slots(i, d) * v(k, d);
        xx += x.slots(i, d) * x.slots(i, d);
        vv += v(k, d) * v(k, d);
      }
      cos.push_back(xv / std::sqrt(xx * vv));
    }
    double z = 0, s = 0;
    for (double c : cos) z += std::exp(lambda * c);
    for (double c : cos) s += std::exp(lambda * c) / z * c;
    total += inverse_n ? s / static_cast<double>(v.rows()) : s;
    ++used;
  }
  return used ? total / used : 0.0;
}

state::StateSet random_bank(std::size_t m, std::size_t d, Rng& rng) {
  auto x = state::init_states(m, d);
  std::bernoulli_distribution coin(0.35);
  for (std::size_t j = 0; j < m; ++j) {
    x.empty[j] = coin(rng);
    if (!x.empty[j]) {
      const Tensor row = uniform(1, d, rng);
      std::copy(row.data().begin(), row.data().end(), x.slots.row(j).begin());
    }
  }
  return x;
}

// Pairs ordered by more than rounding in `base` that swap in `other`.
int order_violations(const std::vector<sim::RankedImage>& base, const std::vector<sim::RankedImage>& other) {
  std::map<sim::ImageId, std::size_t> position;
  for (std::size_t i = 0; i < other.size(); ++i) position[other[i].id] = i;
  int bad = 0;
  for (std::size_t a = 0; a < base.size(); ++a)
    for (std::size_t b = a + 1; b < base.size(); ++b)
      if (base[a].score - base[b].score > 1e-12 && position.at(base[a].id) > position.at(base[b].id)) ++bad;
  return bad;
}

Outcome similarity_oracle() {
  Rng rng(8080);
  std::uniform_int_distribution<std::size_t> m_dist(1, 4), n_dist(1, 5), d_dist(1, 6);
  std::uniform_real_distribution<double> positive(0.05, 20.0);
  double worst = 0;
  int rank_mismatches = 0;
  double scale_drift = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = m_dist(rng), n = n_dist(rng), d = d_dist(rng);
    const sim::SimilarityConfig cfg{trial % 2 ? 9.0 : 4.0, trial % 5 == 0};
    auto x = random_bank(m, d, rng);
    x.empty[rng() % m] = false;
    std::vector<Tensor> images;
    std::vector<sim::ImageId> ids;
    for (int i = 0; i < 6; ++i) {
      images.push_back(uniform(n, d, rng));
      ids.push_back(100 - 7 * i);
    }
    sim::RetrievalIndex index(ids, images);
    const auto scores = index.score(x, cfg);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double oracle = brute_force_score(x, images[i], cfg.lambda, cfg.literal_inverse_n);
      worst = std::max({worst, std::abs(scores[i] - oracle),
                        std::abs(sim::set_image_similarity(x, images[i], cfg) - oracle)});
    }

    // positive rescaling of any state or region vector
    auto scaled_x = x;
    for (std::size_t j = 0; j < m; ++j) {
      const double c = positive(rng);
      for (double& v : scaled_x.slots.row(j)) v *= c;
    }
    auto scaled_images = images;
    for (auto& img : scaled_images) {
      for (std::size_t k = 0; k < n; ++k) {
        const double c = positive(rng);
        for (double& v : img.row(k)) v *= c;
      }
    }
    const auto base = sim::rank_corpus(x, index, {cfg.lambda, false});
    const auto scaled = sim::rank_corpus(scaled_x, sim::RetrievalIndex(ids, scaled_images), {cfg.lambda, false});
    const auto inverse = sim::rank_corpus(x, index, {cfg.lambda, true});
    rank_mismatches += order_violations(base, scaled) + order_violations(base, inverse);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const auto same = std::find_if(scaled.begin(), scaled.end(), [&](const auto& r) { return r.id == base[i].id; });
      scale_drift = std::max(scale_drift, std::abs(base[i].score - same->score));
    }
  }
  return {worst < 1e-10 && rank_mismatches == 0 && scale_drift < 1e-12,
          fmt("100 instances, max |err| %.1e; rescaled score drift %.1e; order violations under rescaling or 1/N %d", worst,
              scale_drift, rank_mismatches)};
}

Outcome policy_branch() {
  Rng rng(4242);
  const std::size_t d = 5;
  grad::ParamStore store;
  state::init_policy(store, d, rng);
  std::uniform_int_distribution<std::size_t> m_dist(1, 6);
  int violations = 0, with_empty = 0;
  for (int call = 0; call < 10000; ++call) {
    auto x = random_bank(m_dist(rng), d, rng);
    const auto q = uniform(1, d, rng).values();
    const auto mode = call % 2 ? state::SelectMode::sample : state::SelectMode::greedy;
    const auto choice = state::select_slot(x, q, store, mode, rng);
    if (x.has_empty()) {
      ++with_empty;
      if (!x.empty[choice.index]) ++violations;
      for (std::size_t j = 0; j < x.slot_count(); ++j)
        if (!x.empty[j] && choice.distribution[j] != 0.0) ++violations;
    }
  }
  int sequence_errors = 0;
  for (std::size_t m : {1, 2, 3, 5}) {
    std::vector<std::vector<double>> queries;
    for (int t = 0; t < 20; ++t) queries.push_back(uniform(1, d, rng).values());
    grad::ParamStore fusion;
    state::init_fusion(fusion, d, rng);
    const auto episode = state::run_episode(queries, state::EpisodePolicy::fixed, fusion, m, rng);
    for (std::size_t t = 1; t <= 20; ++t) {
      if (state::fixed_policy_slot(t, m) != (t - 1) % m) ++sequence_errors;
      if (episode.actions[t - 1] != (t - 1) % m) ++sequence_errors;
    }
  }
  return {violations == 0 && sequence_errors == 0 && with_empty > 5000,
          fmt("10000 calls (%d with an empty slot), %d empty-first violations; %d circular-sequence errors",
              with_empty, violations, sequence_errors)};
}

// ---- trained-model criteria -------------------------------------------------

struct Workspace {
  fs::path cli, dir;
  bool reuse = false;

  fs::path at(const std::string& name) const { return dir / name; }

  // Runs the CLI; returns wall seconds.
  double cli_run(const std::string& args, const std::string& log) const {
    const std::string cmd = "\"" + cli.string() + "\" " + args + " > \"" + at(log).string() + "\" 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed: " + cmd);
    return seconds_since(t0);
  }

  double train(const std::string& out, const std::string& args) const {
    if (reuse && fs::exists(at(out))) return 0.0;
    return cli_run("train --corpus \"" + at("corpus").string() + "\" --out \"" + at(out).string() + "\" " + args,
                   out + ".log");
  }
};

train::EvalResult evaluate_test(const fs::path& checkpoint, const std::vector<scene::Scene>& test) {
  train::RetrievalModel model(train::load_checkpoint(checkpoint));
  return train::evaluate(model, train::encode_scenes(test, model.checkpoint().vocab), model.config().turns);
}

std::string recall_curve(const train::EvalResult& r) {
  std::string s;
  for (const auto& t : r.turns) s += fmt("%s%.3f", s.empty() ? "" : " ", t.r10);
  return s;
}

Outcome pretraining_efficacy(const train::EvalResult& fp, double train_seconds) {
  bool monotone = true;
  for (std::size_t t = 1; t < fp.turns.size(); ++t) monotone &= fp.turns[t].r10 >= fp.turns[t - 1].r10 - 0.01;
  const double final = fp.final_recall10();
  return {monotone && final >= 0.20 && train_seconds < 1800.0,
          fmt("R@10 by turn [%s], final %.3f (>= 0.20, random 0.02); train %.0fs", recall_curve(fp).c_str(), final,
              train_seconds)};
}

Outcome multi_slot(const train::EvalResult& drill, const train::EvalResult& rhre) {
  const double gap = drill.final_recall10() - rhre.final_recall10();
  return {gap >= 0.02, fmt("final R@10 drilldown M=3 D=48 %.3f vs R-HRE D=144 %.3f, gap %+.3f (need >= 0.02)",
                           drill.final_recall10(), rhre.final_recall10(), gap)};
}

Outcome rl_improvement(const train::EvalResult& fp, const train::EvalResult& joint, const train::Checkpoint& cp) {
  double first = NAN, best = NAN;
  for (const auto& r : cp.history) {
    if (r.phase != "joint") continue;
    if (r.epoch == 1) first = r.policy_loss;
    if (r.epoch == cp.epoch) best = r.policy_loss;
  }
  const bool recall = joint.final_recall10() >= fp.final_recall10();
  const bool reward = joint.mean_reward >= fp.mean_reward;
  const bool policy = cp.phase == "joint" && best < first;
  return {recall && reward && policy,
          fmt("final R@10 %.3f vs FP %.3f; reward %.4f vs FP %.4f; L_pi epoch 1 %.4f, best epoch %zu %.4f",
              joint.final_recall10(), fp.final_recall10(), joint.mean_reward, fp.mean_reward, first, cp.epoch, best)};
}

Outcome baseline_ordering(const std::map<std::string, double>& final) {
  const double hre = final.at("hre"), rre = final.at("rre"), rhre = final.at("rhre"), rf = final.at("rankfusion");
  const bool pass = rre > hre && rhre > hre && rf <= std::max(rre, rhre);
  return {pass, fmt("final R@10 HRE %.3f, R-HRE %.3f, R-RE %.3f, RankFusion %.3f", hre, rhre, rre, rf)};
}

Outcome determinism(const Workspace& ws, const fs::path& checkpoint, const std::vector<scene::Scene>& test) {
  const std::string base = "simulate --checkpoint \"" + checkpoint.string() + "\" --corpus \"" +
                           ws.at("corpus").string() + "\" --seed 99 --out ";
  ws.cli_run(base + "\"" + ws.at("sim_a.csv").string() + "\"", "sim_a.log");
  ws.cli_run(base + "\"" + ws.at("sim_b.csv").string() + "\"", "sim_b.log");
  const std::string a = slurp(ws.at("sim_a.csv")), b = slurp(ws.at("sim_b.csv"));

  const auto original = train::load_checkpoint(checkpoint);
  train::save_checkpoint(original, ws.at("roundtrip.json"));
  const auto reloaded = train::load_checkpoint(ws.at("roundtrip.json"));
  train::RetrievalModel m1(original), m2(reloaded);
  const auto data = train::encode_scenes(std::vector(test.begin(), test.begin() + 50), original.vocab);
  const auto i1 = m1.build_index(data), i2 = m2.build_index(data);
  std::size_t probes = 0, differing = 0;
  for (std::size_t e = 0; e < 10; ++e) {
    train::EpisodeRunner r1(m1, i1), r2(m2, i2);
    for (const auto& caption : data[e].captions) {
      const auto l1 = r1.observe(caption), l2 = r2.observe(caption);
      for (std::size_t i = 0; i < l1.size(); ++i, ++probes)
        if (l1[i].id != l2[i].id || l1[i].score != l2[i].score) ++differing;
    }
  }
  return {!a.empty() && a == b && differing == 0 && probes > 0,
          fmt("simulate CSV %zu bytes, identical: %s; round-trip probe scores %zu/%zu identical", a.size(),
              a == b ? "yes" : "no", probes - differing, probes)};
}

Outcome service_contract(const fs::path& checkpoint, const std::vector<scene::Scene>& test) {
  serve::ServiceConfig config;
  config.target_seed = 20241015;
  serve::Service service(train::load_checkpoint(checkpoint), test, config);
  httplib::Server server;
  serve::mount_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  std::map<std::string, sim::ImageId> by_svg;
  for (const auto& s : test) by_svg[scene::render_svg(s)] = static_cast<sim::ImageId>(s.id);

  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  auto post = [&](const std::string& path, const json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw std::runtime_error("no response from " + path);
    return std::make_pair(res->status, res->body.empty() ? json() : json::parse(res->body));
  };

  // Describe the target from its own captions until found; describe another
  // scene to run out of turns.
  int found = 0, exhausted = 0, capped = 0, sessions = 0;
  for (int attempt = 0; attempt < 20 && (found < 2 || exhausted < 2); ++attempt) {
    const bool honest = attempt % 2 == 0;
    auto [status, session] = post("/api/session", json::object());
    expect(status == 200 && session["turn"] == 0 && session["status"] == "active", "create");
    ++sessions;
    const std::string id = session["session_id"];
    const auto target = by_svg.find(session["target_svg"].get<std::string>());
    expect(target != by_svg.end(), "target svg not in the test split");
    if (target == by_svg.end()) continue;
    const auto& described = test[(std::find_if(test.begin(), test.end(), [&](const auto& s) {
                                   return static_cast<sim::ImageId>(s.id) == target->second;
                                 }) - test.begin() + (honest ? 0 : 1)) % test.size()];
    std::string last = "active";
    for (std::size_t t = 0; t < 5; ++t) {
      auto [qs, reply] = post("/api/session/" + id + "/query", {{"text", described.captions[t].text}});
      expect(qs == 200 && reply["turn"] == t + 1, "query");
      const std::size_t rank = reply["target_rank"];
      last = reply["status"];
      const std::string want = rank <= 5 ? "found" : (t + 1 == 5 ? "exhausted" : "active");
      expect(last == want, "status " + last + " at turn " + std::to_string(t + 1) + " rank " + std::to_string(rank));
      if (last != "active") break;
    }
    found += last == "found";
    exhausted += last == "exhausted";
    auto [after, body] = post("/api/session/" + id + "/query", {{"text", "red circle"}});
    expect(after == 409 && body["status"] == last, "query after the session ended");
    capped += after == 409;
    auto state = client.Get("/api/session/" + id);
    expect(state && json::parse(state->body)["history"].size() <= 5, "history cap");
  }
  auto [unknown, body] = post("/api/session/does-not-exist/query", {{"text", "red circle"}});
  expect(unknown == 404 && body.contains("error"), "unknown session");
  expect(found > 0 && exhausted > 0, "both terminal states observed");

  server.stop();
  loop.join();
  std::string detail = fmt("%d sessions: %d found, %d exhausted, %d rejected after ending; unknown session -> %d",
                           sessions, found, exhausted, capped, unknown);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gate"};
  Workspace ws;
  app.add_option("--cli", ws.cli, "drilldown executable")->required();
  app.add_option("--work", ws.dir, "scratch directory")->required();
  app.add_flag("--reuse", ws.reuse, "keep an existing corpus and checkpoints in the scratch directory");
  CLI11_PARSE(app, argc, argv);

  Gate gate;
  gate.run("gradient suite", gradient_suite);
  gate.run("similarity oracle", similarity_oracle);
  gate.run("policy branch", policy_branch);

  try {
    fs::create_directories(ws.dir);
    if (!ws.reuse || !fs::exists(ws.at("corpus") / "manifest.json"))
      ws.cli_run("gen-corpus --out \"" + ws.at("corpus").string() + "\"", "corpus.log");
    const auto test = scene::load_split(ws.at("corpus"), scene::Split::test);

    const double drill_seconds =
        ws.train("joint.json", "--joint --save-pretrained \"" + ws.at("fp.json").string() + "\"");
    const auto fp = evaluate_test(ws.at("fp.json"), test);
    const auto joint = evaluate_test(ws.at("joint.json"), test);
    gate.run("pretraining efficacy", [&] { return pretraining_efficacy(fp, drill_seconds); });

    ws.train("rhre144.json", "--model rhre --dim 144");
    const auto rhre144 = evaluate_test(ws.at("rhre144.json"), test);
    gate.run("multi-slot advantage", [&] { return multi_slot(joint, rhre144); });
    gate.run("RL improvement", [&] { return rl_improvement(fp, joint, train::load_checkpoint(ws.at("joint.json"))); });

    std::map<std::string, double> finals;
    for (const char* kind : {"hre", "rhre", "rre", "rankfusion"}) {
      const std::string out = std::string(kind) + ".json";
      ws.train(out, std::string("--model ") + kind);
      finals[kind] = evaluate_test(ws.at(out), test).final_recall10();
    }
    gate.run("baseline ordering", [&] { return baseline_ordering(finals); }, false);

    gate.run("determinism", [&] { return determinism(ws, ws.at("joint.json"), test); });
    gate.run("service contract", [&] { return service_contract(ws.at("joint.json"), test); });
  } catch (const std::exception& e) {
    gate.report("desk benchmark", {false, std::string("aborted: ") + e.what()});
  }

  std::printf("%s: %d gated failure(s)\n", gate.failures ? "FAILED" : "ALL PASSED", gate.failures);
  return gate.failures ? 1 : 0;
}
