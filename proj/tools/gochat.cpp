// gochat: ingest -> synth -> label -> pretrain -> train-rl -> evaluate -> chat
//
// Every stage reads and writes artifacts under one root directory (--out,
// else $GOCHAT_DATA_DIR, else ./gochat_data). Exit codes: 0 ok, 2 bad input or
// config, 3 missing artifact.

#include "gochat/errors.hpp"
#include "gochat/metrics.hpp"
#include "gochat/pipeline.hpp"

#include <CLI11.hpp>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

namespace fs = std::filesystem;
using namespace gochat;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) {
    cfg = RunConfig::load(g.config, g.overrides);
  } else {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& o : g.overrides) apply_override(j, o);
    cfg = RunConfig::from_json(j);
  }
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.validate();
  return cfg;
}

fs::path artifact_root(const Globals& g) {
  if (!g.out.empty()) return g.out;
  if (const char* env = std::getenv("GOCHAT_DATA_DIR"); env && *env) return env;
  return "gochat_data";
}

// Artifact file names, relative to the root.
namespace art {
const char* corpus = "corpus.jsonl";
const char* vocab = "vocab.json";
const char* topics = "topics.ckpt";
const char* labels = "labels.jsonl";
const char* worker = "worker.ckpt";
const char* manager = "manager.ckpt";
const char* user = "user.ckpt";
const char* judge = "judge.ckpt";
const char* index = "index.ckpt";
const char* index_payload = "index_payload.jsonl";
const char* rl_dir = "rl";
const char* critic = "critic.ckpt";
const char* log = "train_log.csv";
const char* eval_dir = "eval";
}  // namespace art

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError(p.string());
}

IngestOptions ingest_options(const RunConfig& cfg) { return {cfg.corpus.strict, cfg.corpus.max_turns}; }

// Encoded dialogues and the vocabulary that produced them.
struct Data {
  Vocab vocab;
  std::vector<Dialogue> dialogues;
};

Data load_data(const fs::path& root, const RunConfig& cfg) {
  require(root / art::corpus);
  require(root / art::vocab);
  Data d;
  d.vocab = Vocab::load(root / art::vocab);
  d.dialogues = ingest_dialogues(root / art::corpus, ingest_options(cfg));
  encode_corpus(d.vocab, cfg.corpus.n, d.dialogues);
  return d;
}

std::vector<LabeledPair> load_pairs(const fs::path& root, const RunConfig& cfg, const Data& d) {
  require(root / art::labels);
  return read_labels(root / art::labels, d.dialogues, cfg.subgoals.K);
}

void save_stamped(Container c, const Vocab& vocab, const fs::path& path) {
  c.meta["vocab_fingerprint"] = vocab.fingerprint();
  c.save(path);
}

Container load_stamped(const Vocab& vocab, const fs::path& path) {
  Container c = Container::load(path);
  if (!c.meta.contains("vocab_fingerprint") || c.meta["vocab_fingerprint"].get<std::uint64_t>() != vocab.fingerprint())
    throw ValidationError(path.string() + ": vocabulary does not match " + art::vocab);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Models for train-rl, evaluate and chat. `stage` picks rl/ outputs when present.
struct Models {
  Manager manager;
  Worker worker;
};

Models load_models(const fs::path& root, const Vocab& vocab, const std::string& stage) {
  fs::path dir = root;
  if (stage == "rl") dir = root / art::rl_dir;
  else if (stage != "pretrained") throw ValidationError("--stage must be 'rl' or 'pretrained'");
  require(dir / art::manager);
  require(dir / art::worker);
  return {Manager::from_container(load_stamped(vocab, dir / art::manager)),
          Worker::from_container(load_stamped(vocab, dir / art::worker))};
}

JudgeFn make_judge(const RunConfig& cfg, const fs::path& root, const Vocab& vocab) {
  if (cfg.judge.mode == JudgeMode::synthetic) {
    require(cfg.judge.task);
    SyntheticTask task = SyntheticTask::load(cfg.judge.task);
    if (!vocab.contains(task.secret_token))
      throw ValidationError("secret token '" + task.secret_token + "' is not in the vocabulary");
    return make_synthetic_judge(vocab.id(task.secret_token));
  }
  require(root / art::judge);
  auto judge = std::make_shared<const LearnedJudge>(LearnedJudge::from_container(load_stamped(vocab, root / art::judge)));
  return make_learned_judge(judge);
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Globals& g, const std::string& input) {
  RunConfig cfg = load_config(g);
  auto dialogues = ingest_dialogues(input, ingest_options(cfg));
  fs::path root = artifact_root(g);
  fs::create_directories(root);
  write_dialogues(root / art::corpus, dialogues);
  std::cout << "ingested " << dialogues.size() << " dialogues -> " << (root / art::corpus).string() << "\n";
  return 0;
}

int cmd_synth(const Globals& g, std::string task_path, int count) {
  RunConfig cfg = load_config(g);
  if (task_path.empty()) task_path = cfg.judge.task;
  if (task_path.empty()) throw ValidationError("synth: no task file (use --task or judge.task)");
  if (count < 1) throw ValidationError("synth: --count must be >= 1");
  require(task_path);
  SyntheticTask task = SyntheticTask::load(task_path);
  auto dialogues = generate_synthetic_corpus(task, count, cfg.seed);
  fs::path root = artifact_root(g);
  fs::create_directories(root);
  write_dialogues(root / art::corpus, dialogues);
  int ok = 0;
  for (const auto& d : dialogues) ok += d.outcome == Outcome::success;
  std::cout << "synthesized " << dialogues.size() << " dialogues (" << ok << " successes) -> "
            << (root / art::corpus).string() << "\n";
  return 0;
}

int cmd_label(const Globals& g) {
  RunConfig cfg = load_config(g);
  fs::path root = artifact_root(g);
  require(root / art::corpus);
  auto prep = prepare_corpus(ingest_dialogues(root / art::corpus, ingest_options(cfg)), cfg);
  prep.vocab.save(root / art::vocab);
  prep.topics.save(root / art::topics);
  write_labels(root / art::labels, prep.pairs);

  std::vector<int> counts(static_cast<std::size_t>(cfg.subgoals.K), 0);
  for (const auto& p : prep.pairs) ++counts[static_cast<std::size_t>(p.subgoal.index)];
  std::cout << "vocab " << prep.vocab.size() << ", " << prep.pairs.size() << " labeled pairs, K=" << cfg.subgoals.K
            << "\nsub-goal counts:";
  for (int c : counts) std::cout << ' ' << c;
  std::cout << "\n";
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& which) {
  RunConfig cfg = load_config(g);
  if (which != "worker" && which != "manager" && which != "user" && which != "judge")
    throw ValidationError("--which must be worker, manager, user or judge");
  fs::path root = artifact_root(g);
  Data d = load_data(root, cfg);
  const int V = d.vocab.size();

  if (which == "worker") {
    auto pairs = load_pairs(root, cfg, d);
    Worker w = pretrain_worker(pairs, cfg.worker(V), cfg.train, [&](int epoch, double loss, const Worker& cur) {
      save_stamped(cur.to_container(), d.vocab, root / art::worker);
      std::cerr << "worker epoch " << epoch + 1 << " loss " << loss << "\n";
    });
    save_stamped(w.to_container(), d.vocab, root / art::worker);
    build_index(w, pairs, cfg).save(root / art::index, root / art::index_payload);
    std::cout << "worker greedy token accuracy " << greedy_token_accuracy(w, examples_from_pairs(pairs)) << "\n";
  } else if (which == "manager") {
    auto pairs = load_pairs(root, cfg, d);
    Manager m = pretrain_manager(pairs, cfg.han(V), cfg.subgoals.K, cfg.train,
                                 [](int epoch, double loss) { std::cerr << "manager epoch " << epoch + 1 << " loss " << loss << "\n"; });
    save_stamped(m.to_container(), d.vocab, root / art::manager);
    std::cout << "manager accuracy " << manager_accuracy(m, pairs) << "\n";
  } else if (which == "user") {
    UserModel u = train_user_model(d.dialogues, cfg.user_model(V), cfg.user_fit(), cfg.seed);
    save_stamped(u.to_container(), d.vocab, root / art::user);
    std::cout << "user model greedy token accuracy "
              << greedy_token_accuracy(u.network(), user_model_examples(d.dialogues, cfg.corpus.n)) << "\n";
  } else {
    JudgeTrainReport rep;
    LearnedJudge j = train_judge(d.dialogues, cfg.han(V), cfg.judge_config(), &rep);
    save_stamped(j.to_container(), d.vocab, root / art::judge);
    std::cout << "judge held-out accuracy " << rep.heldout_accuracy << " (best epoch " << rep.best_epoch + 1 << " of "
              << rep.epochs_run << ")\n";
  }
  return 0;
}

int cmd_train_rl(const Globals& g, int baseline_episodes) {
  RunConfig cfg = load_config(g);
  if (baseline_episodes < 0) throw ValidationError("--baseline must be >= 0");
  fs::path root = artifact_root(g);
  Data d = load_data(root, cfg);
  Models models = load_models(root, d.vocab, "pretrained");
  require(root / art::user);
  require(root / art::index);
  require(root / art::index_payload);
  UserModel user = UserModel::from_container(load_stamped(d.vocab, root / art::user));
  NeighborIndex index = NeighborIndex::load(root / art::index, root / art::index_payload);
  if (models.manager.K() != cfg.subgoals.K || models.worker.config().K != cfg.subgoals.K || index.K() != cfg.subgoals.K)
    throw ValidationError("checkpoints disagree with subgoals.K");

  Environment env;
  env.user = &user;
  env.judge = make_judge(cfg, root, d.vocab);
  env.index = &index;
  env.state_key = make_state_key(models.worker);
  env.k = cfg.reward.k;
  env.m = cfg.train.m;
  env.vocab = &d.vocab;
  auto inits = opening_utterances(d.dialogues);

  if (baseline_episodes > 0) {
    auto eps = collect_rollouts(Agent{nullptr, &models.worker}, env, inits, derive_seed(cfg.seed, "baseline"), 0,
                                baseline_episodes, cfg.train.parallel);
    int ok = 0;
    for (const auto& e : eps) ok += e.outcome == Outcome::success;
    std::cout << "random-policy success " << static_cast<double>(ok) / baseline_episodes << " over "
              << baseline_episodes << " episodes\n";
  }

  Critic critic(cfg.han(d.vocab.size()));
  critic.init(cfg.seed);
  A2CTrainer trainer(models.manager, models.worker, critic, env, inits, cfg.train);
  trainer.run(cfg.train.episodes, [&](const UpdateStats& s) {
    if (s.update % 25 == 0) std::cerr << csv_row(s) << "\n";
  });

  fs::path dir = root / art::rl_dir;
  fs::create_directories(dir);
  save_stamped(models.manager.to_container(), d.vocab, dir / art::manager);
  save_stamped(models.worker.to_container(), d.vocab, dir / art::worker);
  save_stamped(critic.to_container(), d.vocab, dir / art::critic);
  trainer.write_log(dir / art::log);
  std::cout << "episodes " << trainer.episodes_done() << ", rolling success (last 200) "
            << rolling_success(trainer.outcomes(), 200) << "\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& test_path, const std::string& stage, bool scale100) {
  RunConfig cfg = load_config(g);
  fs::path root = artifact_root(g);
  Data d = load_data(root, cfg);
  Models models = load_models(root, d.vocab, stage);
  std::vector<Dialogue> test = d.dialogues;
  if (!test_path.empty()) {
    require(test_path);
    test = ingest_dialogues(test_path, ingest_options(cfg));
    encode_corpus(d.vocab, cfg.corpus.n, test);
  }
  EvalReport report = evaluate(models.manager, models.worker, test);
  fs::path dir = root / art::eval_dir;
  fs::create_directories(dir);
  write_text(dir / ("report_" + stage + ".json"), report.to_json().dump(2) + "\n");
  write_text(dir / ("report_" + stage + ".txt"), report.to_table(scale100));
  std::cout << report.to_table(scale100);
  return 0;
}

int cmd_chat(const Globals& g, const std::string& stage, const std::string& quit) {
  RunConfig cfg = load_config(g);
  fs::path root = artifact_root(g);
  require(root / art::vocab);
  Vocab vocab = Vocab::load(root / art::vocab);
  Models models = load_models(root, vocab, stage);
  const bool tty = isatty(STDIN_FILENO) != 0;

  std::vector<Utterance> history;
  std::string line;
  for (;;) {
    if (tty) std::cout << "you> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (line == quit) break;
    if (tokenize(line).empty()) continue;
    Utterance h{Speaker::human, line, encode_utterance(vocab, line, cfg.corpus.n)};
    history.push_back(std::move(h));
    SubGoal sg = greedy_subgoal(models.manager.probs(DialogueState{history}));
    Generation gen = respond_greedy(models.worker, history, sg);
    std::string text = decode_tokens(vocab, gen.tokens);
    std::cout << "bot [g=" << sg.index << "]> " << text << "\n" << std::flush;
    history.push_back(Utterance{Speaker::chatbot, text, gen.tokens});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GoChat: hierarchical RL chatbot pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "run seed; overrides the config");
  app.add_option("--out", g.out, "artifact root (default $GOCHAT_DATA_DIR or ./gochat_data)");
  app.add_option("--set", g.overrides, "config override section.key=value (repeatable)");

  std::string input;
  auto* ingest = app.add_subcommand("ingest", "validate a JSONL corpus and copy it into the artifact root");
  ingest->add_option("--input", input, "JSONL dialogues")->required();

  std::string task;
  int count = 200;
  auto* synth = app.add_subcommand("synth", "generate the synthetic secret-elicitation corpus");
  synth->add_option("--task", task, "task JSON (default judge.task)");
  synth->add_option("--count", count, "number of dialogues");

  auto* label = app.add_subcommand("label", "build the vocabulary, fit LDA and label sub-goals");

  std::string which;
  auto* pretrain = app.add_subcommand("pretrain", "supervised pretraining of one model");
  pretrain->add_option("--which", which, "worker | manager | user | judge")->required();

  int baseline = 0;
  auto* train = app.add_subcommand("train-rl", "actor-critic self-play training");
  train->add_option("--baseline", baseline, "also report random-policy success over this many episodes");

  std::string test_path, stage = "rl";
  bool scale100 = false;
  auto* eval = app.add_subcommand("evaluate", "BLEU and distinct-1/2 on a test corpus");
  eval->add_option("--test", test_path, "JSONL test dialogues (default: the training corpus)");
  eval->add_option("--stage", stage, "rl | pretrained");
  eval->add_flag("--scale100", scale100, "print BLEU x 100");

  std::string quit = "/quit";
  auto* chat = app.add_subcommand("chat", "talk to the agent on stdin");
  chat->add_option("--stage", stage, "rl | pretrained");
  chat->add_option("--quit", quit, "line that ends the session");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ingest) return cmd_ingest(g, input);
    if (*synth) return cmd_synth(g, task, count);
    if (*label) return cmd_label(g);
    if (*pretrain) return cmd_pretrain(g, which);
    if (*train) return cmd_train_rl(g, baseline);
    if (*eval) return cmd_evaluate(g, test_path, stage, scale100);
    if (*chat) return cmd_chat(g, stage, quit);
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
