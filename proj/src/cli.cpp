#include "sabre/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "sabre/binary_io.hpp"
#include "sabre/detector.hpp"
#include "sabre/report.hpp"
#include "sabre/toy_world.hpp"

namespace sabre::cli {

namespace {

std::string usage_text(const CLI::App& app) {
  return app.help("", CLI::AppFormatMode::All);
}

void require_file(const std::string& path, const std::string& flag) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw CliError(kExitMissingFile, "missing file for " + flag + ": " + path);
  }
}

std::string first_line(const std::string& text) {
  const auto cut = text.find('\n');
  return cut == std::string::npos ? text : text.substr(0, cut);
}

}  // namespace

Command parse_args(const std::vector<std::string>& args) {
  CLI::App app{"Federated prompt-learning backdoor simulator", "sabre"};
  app.require_subcommand(1, 1);

  // Required options are checked after parsing so an unknown flag is
  // reported ahead of a missing one.
  std::vector<std::pair<CLI::App*, CLI::Option*>> mandatory;
  auto must = [&](CLI::App* sub, CLI::Option* opt) { mandatory.emplace_back(sub, opt); };

  RunCommand run;
  std::string embeddings_out;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a JSON config");
  must(run_cmd, run_cmd->add_option("--config", run.config_path, "Experiment config (JSON)"));
  must(run_cmd, run_cmd->add_option("--out", run.out_path, "Report output path (JSON)"));
  run_cmd->add_option("--embeddings-out", embeddings_out, "Also write submitted embeddings as an SBEF store");
  run_cmd->add_flag("--serial", run.serial, "Disable the parallel client loop");

  TrainDetectorCommand train;
  int hidden = 0, epochs = 0, batch_size = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  auto* train_cmd = app.add_subcommand("train-detector", "Train a detector on a 0/1-labelled SBEF store");
  must(train_cmd, train_cmd->add_option("--aux", train.aux_path, "Auxiliary store; labels are clean(0)/poisoned(1)"));
  must(train_cmd, train_cmd->add_option("--out", train.out_path, "Model output path (SBDM)"));
  auto* o_hidden = train_cmd->add_option("--hidden", hidden, "Hidden width");
  auto* o_lr = train_cmd->add_option("--lr", lr, "Adam learning rate");
  auto* o_epochs = train_cmd->add_option("--epochs", epochs, "Training epochs");
  auto* o_batch = train_cmd->add_option("--batch-size", batch_size, "Mini-batch size");
  auto* o_seed = train_cmd->add_option("--seed", seed, "Init and shuffle seed");

  ScoreStoreCommand score;
  auto* score_cmd = app.add_subcommand("score-store", "Score every record of a store with a detector");
  must(score_cmd, score_cmd->add_option("--model", score.model_path, "Detector (SBDM)"));
  must(score_cmd, score_cmd->add_option("--store", score.store_path, "Embedding store (SBEF)"));

  ExportToyCommand exp;
  auto* export_cmd = app.add_subcommand("export-toy", "Write a synthetic toy-domain store");
  must(export_cmd, export_cmd->add_option("--out", exp.out_path, "Output path (SBEF)"));
  export_cmd->add_option("--samples", exp.samples, "Clean samples")->check(CLI::PositiveNumber);
  export_cmd->add_option("--classes", exp.classes, "Classes in the domain")->check(CLI::PositiveNumber);
  export_cmd->add_option("--pixels", exp.pixels, "Input dimension")->check(CLI::Range(2, 1 << 16));
  export_cmd->add_option("--dim", exp.dim, "Embedding dimension")->check(CLI::PositiveNumber);
  export_cmd->add_option("--seed", exp.seed, "World seed");
  export_cmd->add_flag("--aux", exp.aux, "Emit clean/poisoned pairs labelled 0/1");
  export_cmd->add_option("--epsilon", exp.epsilon, "Trigger bound for --aux")->check(CLI::NonNegativeNumber);

  InspectCommand inspect;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the header of an SBEF store or SBDM model");
  must(inspect_cmd, inspect_cmd->add_option("path", inspect.path, "File to inspect"));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw CliError(kExitOk, usage_text(app));
  } catch (const CLI::CallForAllHelp&) {
    throw CliError(kExitOk, usage_text(app));
  } catch (const CLI::ParseError& e) {
    throw CliError(kExitUsage, std::string("usage error: ") + e.what() + "\nrun 'sabre --help' for usage");
  }
  for (const auto& [sub, opt] : mandatory) {
    if (sub->parsed() && opt->count() == 0) {
      throw CliError(kExitUsage, "usage error: " + opt->get_name() + " is required\nrun 'sabre --help' for usage");
    }
  }

  if (run_cmd->parsed()) {
    if (!embeddings_out.empty()) run.embeddings_out = embeddings_out;
    require_file(run.config_path, "--config");
    return run;
  }
  if (train_cmd->parsed()) {
    if (o_hidden->count()) train.hidden = hidden;
    if (o_lr->count()) train.lr = lr;
    if (o_epochs->count()) train.epochs = epochs;
    if (o_batch->count()) train.batch_size = batch_size;
    if (o_seed->count()) train.seed = seed;
    require_file(train.aux_path, "--aux");
    return train;
  }
  if (score_cmd->parsed()) {
    require_file(score.model_path, "--model");
    require_file(score.store_path, "--store");
    return score;
  }
  if (export_cmd->parsed()) return exp;
  require_file(inspect.path, "path");
  return inspect;
}

namespace {

int do_run(const RunCommand& cmd, std::ostream& out) {
  const ExperimentConfig config = load_config(cmd.config_path);
  std::vector<SubmittedEmbeddings> sink;
  RoundOptions options;
  options.exec = cmd.serial ? Execution::Serial : Execution::Parallel;
  if (cmd.embeddings_out) options.sink = &sink;
  const ExperimentResult result = run_experiment(config, options);
  const int num_classes = config.encoder.mode == EncoderConfig::Mode::Toy
                              ? config.toy_task.num_classes
                              : static_cast<int>(read_store(std::filesystem::path(*config.encoder.path)).num_classes());
  if (cmd.embeddings_out) write_embedding_export(*cmd.embeddings_out, sink, num_classes);
  write_text_atomically(cmd.out_path, render_report(config, result));
  out << "rounds " << result.rounds.size() << "\n"
      << "final_clean_acc " << result.summary.final_clean_acc << "\n"
      << "final_backdoor_acc " << result.summary.final_backdoor_acc << "\n";
  return kExitOk;
}

int do_train(const TrainDetectorCommand& cmd, std::ostream& out) {
  const EmbeddingStore store = read_store(std::filesystem::path(cmd.aux_path));
  std::vector<LabeledEmbedding> aux;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const int flag = store.label(i);
    if (flag > 1) throw InvalidArgument("auxiliary store labels must be 0 (clean) or 1 (poisoned)");
    aux.push_back({store.embedding(i), flag});
  }
  DetectorHyper hyper;
  if (cmd.hidden) hyper.hidden = *cmd.hidden;
  if (cmd.lr) hyper.lr = *cmd.lr;
  if (cmd.epochs) hyper.epochs = *cmd.epochs;
  if (cmd.batch_size) hyper.batch_size = *cmd.batch_size;
  if (cmd.seed) hyper.seed = *cmd.seed;
  const DetectorModel model = train_detector(aux, hyper);
  save_detector(model, std::filesystem::path(cmd.out_path));
  out << "records " << aux.size() << "\n"
      << "train_accuracy " << detector_accuracy(model, aux) << "\n";
  return kExitOk;
}

int do_score(const ScoreStoreCommand& cmd, std::ostream& out) {
  const DetectorModel model = load_detector(std::filesystem::path(cmd.model_path));
  const EmbeddingStore store = read_store(std::filesystem::path(cmd.store_path));
  if (static_cast<Eigen::Index>(store.dim()) != model.dim()) {
    throw DimensionError("store dimension " + std::to_string(store.dim()) + " does not match detector input " +
                         std::to_string(model.dim()));
  }
  std::vector<Embedding> zs;
  for (std::size_t i = 0; i < store.size(); ++i) zs.push_back(store.embedding(i));
  const auto flags = detect_batch(model, zs, Execution::Parallel);
  const auto flagged = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
  out << "records " << zs.size() << "\n"
      << "flagged " << flagged << "\n"
      << "score " << static_cast<double>(flagged) / static_cast<double>(zs.size()) << "\n";
  return kExitOk;
}

int do_export(const ExportToyCommand& cmd, std::ostream& out) {
  if (cmd.pixels < 2) throw InvalidArgument("--pixels must be at least 2");
  const int rank = std::max(1, std::min(cmd.pixels - 1, cmd.pixels / 2));
  const FrozenEncoder encoder = FrozenEncoder::toy(ToyEncoderSpec{cmd.pixels, cmd.dim, derive_seed(cmd.seed, {1}), true});
  const Matrix basis = content_basis(cmd.pixels, rank, derive_seed(cmd.seed, {2}));
  const ToyDomain domain(basis, cmd.classes, 0.8, 0.04, 0.5, derive_seed(cmd.seed, {3}));
  Rng rng(derive_seed(cmd.seed, {4}));
  const auto xs = domain.sample(cmd.samples, rng);

  std::vector<Embedding> zs;
  std::vector<int> labels;
  std::uint32_t num_classes = static_cast<std::uint32_t>(cmd.classes);
  if (cmd.aux) {
    // Strong fixed trigger: epsilon times a seeded sign pattern.
    Rng trng(derive_seed(cmd.seed, {5}));
    Vector t(cmd.pixels);
    for (int j = 0; j < cmd.pixels; ++j) t(j) = trng.uniform() < 0.5 ? -cmd.epsilon : cmd.epsilon;
    const auto aux = build_aux_dataset(xs, Trigger::input_space(t, cmd.epsilon), encoder, derive_seed(cmd.seed, {6}));
    for (const auto& r : aux) {
      zs.push_back(r.embedding);
      labels.push_back(r.poisoned);
    }
    num_classes = 2;
  } else {
    for (const auto& x : xs) {
      zs.push_back(encoder.encode(x));
      labels.push_back(x.label);
    }
  }
  write_store(EmbeddingStore::from_embeddings(num_classes, zs, labels), std::filesystem::path(cmd.out_path));
  out << "records " << zs.size() << "\n";
  return kExitOk;
}

int do_inspect(const InspectCommand& cmd, std::ostream& out) {
  char magic[4] = {};
  {
    std::ifstream in(cmd.path, std::ios::binary);
    in.read(magic, 4);
  }
  if (std::equal(magic, magic + 4, kModelMagic)) {
    const DetectorModel m = load_detector(std::filesystem::path(cmd.path));
    out << "format SBDM\n"
        << "dim " << m.dim() << "\n"
        << "hidden " << m.hidden() << "\n";
    return kExitOk;
  }
  const EmbeddingStore s = read_store(std::filesystem::path(cmd.path));
  out << "format SBEF\n"
      << "dim " << s.dim() << "\n"
      << "count " << s.size() << "\n"
      << "num_classes " << s.num_classes() << "\n";
  return kExitOk;
}

}  // namespace

int execute(const Command& command, std::ostream& out, std::ostream& err) {
  try {
    return std::visit(
        [&](const auto& cmd) -> int {
          using T = std::decay_t<decltype(cmd)>;
          if constexpr (std::is_same_v<T, RunCommand>) return do_run(cmd, out);
          if constexpr (std::is_same_v<T, TrainDetectorCommand>) return do_train(cmd, out);
          if constexpr (std::is_same_v<T, ScoreStoreCommand>) return do_score(cmd, out);
          if constexpr (std::is_same_v<T, ExportToyCommand>) return do_export(cmd, out);
          if constexpr (std::is_same_v<T, InspectCommand>) return do_inspect(cmd, out);
        },
        command);
  } catch (const ConfigSyntaxError& e) {
    err << "error: " << first_line(e.what()) << "\n";
    return kExitBadConfig;
  } catch (const std::exception& e) {
    err << "error: " << first_line(e.what()) << "\n";
    return kExitFailure;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Command cmd;
  try {
    cmd = parse_args(args);
  } catch (const CliError& e) {
    (e.code() == kExitOk ? out : err) << e.what() << (e.code() == kExitOk ? "" : "\n");
    return e.code();
  }
  return execute(cmd, out, err);
}

}  // namespace sabre::cli
