#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "drilldown/gradsuite.hpp"
#include "drilldown/retrievald.hpp"
#include "drilldown/trainer.hpp"
#include "httplib.h"

namespace {

using namespace dd;

struct CorpusData {
  std::vector<scene::Scene> train, val, test;
};

void write_text(const std::string& path, const std::string& body) {
  if (path.empty() || path == "-") {
    std::cout << body;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
}

std::string metrics_csv(const std::vector<sim::TurnMetrics>& turns) {
  std::ostringstream out;
  sim::write_metrics_csv(out, turns);
  return out.str();
}

int run_gen_corpus(const std::string& out_dir, scene::CorpusConfig config) {
  scene::make_corpus(config, out_dir);
  std::printf("wrote %zu/%zu/%zu scenes to %s\n", config.train_count, config.val_count, config.test_count,
              out_dir.c_str());
  return 0;
}

struct TrainArgs {
  std::string corpus, out, config_file, from, pretrained_out, log;
  std::string model = "drilldown";
  train::TrainConfig cfg;
  bool joint = false;
};

int run_train(TrainArgs args) {
  train::TrainConfig cfg = args.cfg;
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    if (!in) throw std::runtime_error("cannot read config " + args.config_file);
    cfg = train::TrainConfig::from_json(nlohmann::json::parse(in));
  } else {
    cfg.model = train::parse_model(args.model);
  }
  cfg.validate();

  const auto train_scenes = scene::load_split(args.corpus, scene::Split::train);
  const auto val_scenes = scene::load_split(args.corpus, scene::Split::val);

  std::ofstream log;
  if (!args.log.empty()) {
    log.open(args.log);
    log << "phase,epoch,train_loss,policy_loss,val_metric,seconds\n";
  }
  auto start = std::chrono::steady_clock::now();
  auto report = [&](const train::EpochRecord& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%s epoch %zu loss %.5f policy %.5f val %.4f (%.0fs)\n", r.phase.c_str(), r.epoch,
                 r.train_loss, r.policy_loss, r.val_metric, secs);
    if (log.is_open()) {
      log << r.phase << ',' << r.epoch << ',' << r.train_loss << ',' << r.policy_loss << ',' << r.val_metric << ','
          << secs << '\n';
      log.flush();
    }
  };

  train::Checkpoint cp;
  if (!args.from.empty()) {
    cp = train::load_checkpoint(args.from);
  } else {
    const auto vocab = train::build_vocab(train_scenes, cfg.min_count);
    const auto train_set = train::encode_scenes(train_scenes, vocab);
    const auto val_set = train::encode_scenes(val_scenes, vocab);
    cp = train::pretrain(cfg, vocab, train_set, val_set, report);
    if (!args.pretrained_out.empty()) train::save_checkpoint(cp, args.pretrained_out);
  }
  if (args.joint) {
    const auto train_set = train::encode_scenes(train_scenes, cp.vocab);
    const auto val_set = train::encode_scenes(val_scenes, cp.vocab);
    cp = train::joint_train(cp, train_set, val_set, report);
  }
  train::save_checkpoint(cp, args.out);
  std::printf("saved %s (%s epoch %zu)\n", args.out.c_str(), cp.phase.c_str(), cp.epoch);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& corpus, const std::string& split,
             const std::string& out) {
  train::RetrievalModel model(train::load_checkpoint(checkpoint));
  const auto scenes = train::encode_scenes(scene::load_split(corpus, scene::parse_split(split)),
                                           model.checkpoint().vocab);
  const auto result = train::evaluate(model, scenes, model.config().turns);
  write_text(out, metrics_csv(result.turns));
  std::fprintf(stderr, "mean episode reward %.6f\n", result.mean_reward);
  return 0;
}

int run_simulate(const std::vector<std::string>& checkpoints, const std::string& corpus, std::uint64_t seed,
                 std::size_t turns, const std::string& out) {
  const auto test_scenes = scene::load_split(corpus, scene::Split::test);
  std::ostringstream csv;
  csv << "model,turn,r1,r5,r10,mean_rank\n";
  for (const auto& path : checkpoints) {
    train::RetrievalModel model(train::load_checkpoint(path));
    const auto scenes = train::encode_scenes(test_scenes, model.checkpoint().vocab);
    grad::Rng rng(seed);
    const auto result = train::evaluate(model, scenes, turns ? turns : model.config().turns, &rng);
    std::ostringstream rows;
    sim::write_metrics_csv(rows, result.turns);
    std::string line;
    std::istringstream lines(rows.str());
    std::getline(lines, line);  // header
    const std::string label = std::filesystem::path(path).stem().string();
    while (std::getline(lines, line)) csv << label << ',' << line << '\n';
  }
  write_text(out, csv.str());
  return 0;
}

int run_gradcheck(double tolerance) {
  double worst = 0.0;
  for (const auto& r : train::run_gradient_suite()) {
    std::printf("%-28s %4zu coords  max rel error %.3e  (%s[%zu])\n", r.name.c_str(), r.coordinates, r.max_rel_error,
                r.worst_param.c_str(), r.worst_index);
    worst = std::max(worst, r.max_rel_error);
  }
  std::printf("max rel error %.3e\n", worst);
  return worst < tolerance ? 0 : 2;
}

struct ServeArgs {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string checkpoint, corpus;
  serve::ServiceConfig config;
};

int run_serve(const ServeArgs& args) {
  serve::Service service(train::load_checkpoint(args.checkpoint),
                         scene::load_split(args.corpus, scene::Split::test), args.config);
  httplib::Server server;
  serve::mount_routes(server, service);
  std::fprintf(stderr, "serving %s on %s:%d\n", args.checkpoint.c_str(), args.host.c_str(), args.port);
  if (!server.listen(args.host, args.port)) throw std::runtime_error("cannot listen on port " + std::to_string(args.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-slot interactive image retrieval: corpus, training, evaluation and serving"};
  app.require_subcommand(1);

  std::string corpus_out;
  scene::CorpusConfig corpus_cfg;
  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic scene corpus");
  gen->add_option("--out", corpus_out, "output directory")->required();
  gen->add_option("--train", corpus_cfg.train_count, "training scenes");
  gen->add_option("--val", corpus_cfg.val_count, "validation scenes");
  gen->add_option("--test", corpus_cfg.test_count, "test scenes");
  gen->add_option("--regions", corpus_cfg.regions_per_scene, "regions per scene");
  gen->add_option("--turns", corpus_cfg.turns, "minimum captions per scene");
  gen->add_option("--noise", corpus_cfg.feature_noise, "feature noise stddev");
  gen->add_option("--seed", corpus_cfg.seed, "corpus seed");

  TrainArgs targs;
  auto* tr = app.add_subcommand("train", "pretrain with the fixed policy, optionally followed by joint training");
  tr->add_option("--corpus", targs.corpus, "corpus directory")->required();
  tr->add_option("--out", targs.out, "checkpoint to write")->required();
  tr->add_option("--config", targs.config_file, "JSON training config (overrides the flags below)");
  tr->add_option("--model", targs.model, "drilldown|hre|rhre|rre|rankfusion");
  tr->add_option("--slots", targs.cfg.slots, "state slots M");
  tr->add_option("--dim", targs.cfg.state_dim, "state dimension D");
  tr->add_option("--embed", targs.cfg.embed_dim, "word embedding dimension E");
  tr->add_option("--turns", targs.cfg.turns, "turns per training episode");
  tr->add_option("--epochs", targs.cfg.pretrain_epochs, "pretraining epochs");
  tr->add_option("--joint-epochs", targs.cfg.joint_epochs, "joint epochs");
  tr->add_option("--batch", targs.cfg.batch_size, "batch size");
  tr->add_option("--lr", targs.cfg.learning_rate, "Adam learning rate");
  tr->add_option("--margin", targs.cfg.margin, "triplet margin");
  tr->add_option("--lambda", targs.cfg.lambda, "attention sharpness");
  tr->add_option("--mu", targs.cfg.mu, "policy loss weight");
  tr->add_option("--gamma", targs.cfg.gamma, "look-ahead discount");
  tr->add_option("--seed", targs.cfg.seed, "training seed");
  tr->add_flag("--literal-inverse-n", targs.cfg.literal_inverse_n, "scale each state-image score by 1/N");
  tr->add_flag("--joint", targs.joint, "run the joint policy phase after pretraining");
  tr->add_option("--from", targs.from, "start the joint phase from this pretrained checkpoint");
  tr->add_option("--save-pretrained", targs.pretrained_out, "also write the pretrained checkpoint here");
  tr->add_option("--log", targs.log, "per-epoch CSV log");

  std::string ck, ev_corpus, split = "test", ev_out;
  auto* ev = app.add_subcommand("eval", "per-turn recall on a split as CSV");
  ev->add_option("--checkpoint", ck, "checkpoint")->required();
  ev->add_option("--corpus", ev_corpus, "corpus directory")->required();
  ev->add_option("--split", split, "train|val|test");
  ev->add_option("--out", ev_out, "CSV path (default stdout)");

  std::vector<std::string> sim_cks;
  std::string sim_corpus, sim_out;
  std::uint64_t sim_seed = 1;
  std::size_t sim_turns = 0;
  auto* simc = app.add_subcommand("simulate", "simulated-query retrieval over the test split as CSV");
  simc->add_option("--checkpoint", sim_cks, "one or more checkpoints")->required();
  simc->add_option("--corpus", sim_corpus, "corpus directory")->required();
  simc->add_option("--seed", sim_seed, "query sampling seed");
  simc->add_option("--turns", sim_turns, "turns per episode (default: checkpoint turns)");
  simc->add_option("--out", sim_out, "CSV path (default stdout)");

  ServeArgs sargs;
  auto* srv = app.add_subcommand("serve", "HTTP retrieval sessions over the test split");
  srv->add_option("--port", sargs.port, "listen port")->envname("DRILLDOWN_PORT");
  srv->add_option("--host", sargs.host, "listen address")->envname("DRILLDOWN_HOST");
  srv->add_option("--checkpoint", sargs.checkpoint, "checkpoint")->envname("DRILLDOWN_CHECKPOINT")->required();
  srv->add_option("--corpus", sargs.corpus, "corpus directory")->envname("DRILLDOWN_CORPUS")->required();
  srv->add_option("--top-k", sargs.config.top_k, "results per turn")->envname("DRILLDOWN_TOP_K");
  srv->add_option("--max-turns", sargs.config.max_turns, "turns per session")->envname("DRILLDOWN_MAX_TURNS");
  srv->add_option("--capacity", sargs.config.capacity, "live sessions kept")->envname("DRILLDOWN_CAPACITY");

  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op and model loss");
  gc->add_option("--tolerance", tolerance, "fail above this max relative error");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return run_gen_corpus(corpus_out, corpus_cfg);
    if (*tr) return run_train(targs);
    if (*ev) return run_eval(ck, ev_corpus, split, ev_out);
    if (*simc) return run_simulate(sim_cks, sim_corpus, sim_seed, sim_turns, sim_out);
    if (*srv) return run_serve(sargs);
    if (*gc) return run_gradcheck(tolerance);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
