#include "sabre/orchestrator.hpp"

#include <cmath>

#include "sabre/toy_world.hpp"

namespace sabre {

namespace {

// Stream tags for derive_seed.
enum Tag : std::uint64_t {
  kEncoder = 1,
  kBasis,
  kDomain,
  kData,
  kSplit,
  kPartition,
  kShots,
  kPrompt,
  kTriggerInit,
  kTriggerOpt,
  kPoison,
  kLocalTrain,
  kAggregate,
  kAuxDomain,
  kAuxData,
  kAuxTrigger,
  kAuxShuffle,
  kDetector,
  kSubmit,
  kShadow,
};

std::vector<Sample> from_store(const EmbeddingStore& store) {
  std::vector<Sample> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back(Sample{Vector(), store.embedding(i), store.label(i)});
  return out;
}

Embedding mean_embedding(const std::vector<Embedding>& zs) {
  Embedding m = Embedding::Zero(zs.front().size());
  for (const auto& z : zs) m += normalize(z);
  return m / static_cast<double>(zs.size());
}

// Shift direction for precomputed mode: from the data's mean direction
// towards the target's text embedding.
Trigger embedding_trigger_towards(const std::vector<Embedding>& zs, const PromptState& prompt,
                                  const ClassVocabulary& vocab, int target, double epsilon) {
  const Vector g = class_text_embedding(prompt, vocab, target);
  Vector dir = g;
  const Vector m = mean_embedding(zs);
  if (m.norm() > 1e-12) {
    const Vector d = g - normalize(m);
    if (d.norm() > 1e-12) dir = d;
  }
  return Trigger::embedding_space(epsilon * normalize(dir));
}

std::vector<Embedding> embeddings_of(const std::vector<Sample>& samples) {
  std::vector<Embedding> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.embedding);
  return out;
}

std::vector<InputSample> inputs_of(const std::vector<Sample>& samples) {
  std::vector<InputSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(InputSample{s.pixels, s.label});
  return out;
}

ClassVocabulary mean_class_vocabulary(const std::vector<Sample>& train, int num_classes, double temperature) {
  const Eigen::Index d = train.front().embedding.size();
  Matrix c = Matrix::Zero(num_classes, d);
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : train) {
    c.row(s.label) += normalize(s.embedding).transpose();
    ++counts[static_cast<std::size_t>(s.label)];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0) c.row(k) /= counts[static_cast<std::size_t>(k)];
  }
  return ClassVocabulary(c, Matrix::Identity(d, d), temperature);
}

}  // namespace

bool Environment::is_malicious(int client) const {
  return std::binary_search(malicious.begin(), malicious.end(), client);
}

Accuracy evaluate(const PromptState& prompt, const ClassVocabulary& vocab, const FrozenEncoder& encoder,
                  const std::vector<Sample>& clean_test, const Trigger& trigger, int target) {
  if (clean_test.empty()) throw InvalidArgument("empty test set");
  const Matrix text = text_embeddings(prompt, vocab);
  std::size_t correct = 0;
  std::size_t eligible = 0;
  std::size_t hits = 0;
  for (const auto& s : clean_test) {
    if (label_from_text(s.embedding, text) == s.label) ++correct;
    if (s.label == target) continue;
    ++eligible;
    Embedding z;
    if (trigger.is_input_space()) {
      z = encoder.encode(apply_trigger(InputSample{s.pixels, s.label}, trigger));
    } else {
      z = shift_embedding(s.embedding, trigger);
    }
    if (label_from_text(z, text) == target) ++hits;
  }
  if (eligible == 0) throw InvalidArgument("BA undefined: every test label is the target");
  return Accuracy{100.0 * static_cast<double>(correct) / static_cast<double>(clean_test.size()),
                  100.0 * static_cast<double>(hits) / static_cast<double>(eligible)};
}

Environment build_environment(const ExperimentConfig& config) {
  config.validate();
  Environment env;
  env.config = config;
  const std::uint64_t seed = config.seed;
  std::vector<Sample> train;
  std::optional<Matrix> basis;
  int num_classes = 0;

  if (config.encoder.mode == EncoderConfig::Mode::Toy) {
    const ToyTaskConfig& tt = config.toy_task;
    ToyEncoderSpec spec{config.encoder.pixels, config.encoder.dim, derive_seed(seed, {kEncoder}),
                        config.encoder.orthogonal};
    env.encoder = std::make_shared<FrozenEncoder>(FrozenEncoder::toy(spec));
    basis = content_basis(config.encoder.pixels, tt.content_rank, derive_seed(seed, {kBasis}));
    const ToyDomain domain(*basis, tt.num_classes, tt.radius, tt.sigma, tt.off_subspace_noise,
                           derive_seed(seed, {kDomain}));
    Rng rng(derive_seed(seed, {kData}));
    auto to_samples = [&](const std::vector<InputSample>& xs) {
      std::vector<Sample> out;
      for (const auto& x : xs) out.push_back(Sample{x.pixels, env.encoder->encode(x), x.label});
      return out;
    };
    train = to_samples(domain.sample(tt.train_samples, rng));
    env.test = to_samples(domain.sample(tt.test_samples, rng));
    num_classes = tt.num_classes;
    Matrix c(num_classes, config.encoder.dim);
    for (int k = 0; k < num_classes; ++k) c.row(k) = (env.encoder->weights() * domain.center(k)).transpose();
    env.vocab = std::make_shared<ClassVocabulary>(c, Matrix::Identity(config.encoder.dim, config.encoder.dim),
                                                  config.prompt.temperature);
  } else {
    auto store = std::make_shared<const EmbeddingStore>(read_store(std::filesystem::path(*config.encoder.path)));
    env.encoder = std::make_shared<FrozenEncoder>(FrozenEncoder::precomputed(store));
    num_classes = static_cast<int>(store->num_classes());
    auto all = from_store(*store);
    if (config.encoder.test_path) {
      const EmbeddingStore test_store = read_store(std::filesystem::path(*config.encoder.test_path));
      if (test_store.dim() != store->dim()) throw DimensionError("test store dimension differs from train store");
      if (test_store.num_classes() != store->num_classes()) throw InvalidArgument("test store class count differs");
      train = std::move(all);
      env.test = from_store(test_store);
    } else {
      Rng rng(derive_seed(seed, {kSplit}));
      const auto order = rng.permutation(all.size());
      const auto n_test = static_cast<std::size_t>(std::llround(config.encoder.test_fraction * all.size()));
      if (n_test == 0 || n_test >= all.size()) throw InvalidArgument("store too small to split into train and test");
      for (std::size_t i = 0; i < order.size(); ++i) (i < n_test ? env.test : train).push_back(all[order[i]]);
    }
    env.vocab = std::make_shared<ClassVocabulary>(mean_class_vocabulary(train, num_classes, config.prompt.temperature));
  }
  if (num_classes < 2) throw InvalidArgument("at least two classes are required");
  config.attack.validate(num_classes);
  if (train.size() < static_cast<std::size_t>(config.num_clients)) throw InvalidArgument("dataset too small to partition");

  const auto parts = config.partition.kind == PartitionConfig::Kind::Iid
                         ? partition_iid(train, config.num_clients, derive_seed(seed, {kPartition}))
                         : partition_dirichlet(train, config.num_clients, config.partition.alpha,
                                               derive_seed(seed, {kPartition}));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    env.clients.push_back(sample_few_shot(parts[k], config.shots, derive_seed(seed, {kShots, k})));
  }
  for (int k = 0; k < config.num_malicious(); ++k) env.malicious.push_back(k);
  env.m = config.resolved_m();

  if (config.defense.kind == DefenseConfig::Kind::SabreFl) {
    const PromptState prompt0 = PromptState::init(config.prompt.length, static_cast<int>(env.vocab->text_width()),
                                                  config.prompt.init_std, derive_seed(seed, {kPrompt}));
    const int target = config.attack.target_class;
    std::vector<LabeledEmbedding> aux;
    if (config.defense.aux_store) {
      const EmbeddingStore aux_store = read_store(std::filesystem::path(*config.defense.aux_store));
      if (aux_store.dim() != static_cast<std::uint32_t>(env.encoder->embedding_dim())) {
        throw DimensionError("auxiliary store dimension does not match the experiment");
      }
      std::vector<Embedding> zs;
      for (std::size_t i = 0; i < aux_store.size(); ++i) zs.push_back(aux_store.embedding(i));
      if (env.toy()) {
        // Without pixels the trigger is optimised on the FL task's own first
        // client and applied to the stored embeddings as W t.
        const auto xs = inputs_of(env.clients.front());
        const Trigger t = optimize_trigger(
            init_trigger(config.encoder.pixels, config.attack.epsilon, derive_seed(seed, {kAuxTrigger, 0})), xs,
            target, prompt0, *env.vocab, *env.encoder, config.attack, derive_seed(seed, {kAuxTrigger, 1}));
        aux = build_aux_dataset(zs, t, env.encoder.get(), derive_seed(seed, {kAuxShuffle}));
      } else {
        const Trigger t = embedding_trigger_towards(zs, prompt0, *env.vocab, target, config.attack.embed_epsilon);
        aux = build_aux_dataset(zs, t, nullptr, derive_seed(seed, {kAuxShuffle}));
      }
    } else if (env.toy()) {
      const ToyTaskConfig& tt = config.toy_task;
      const ToyDomain aux_domain(*basis, config.defense.aux_classes, tt.radius, tt.sigma, tt.off_subspace_noise,
                                 derive_seed(seed, {kAuxDomain}));
      Rng rng(derive_seed(seed, {kAuxData}));
      const auto xs = aux_domain.sample(config.defense.aux_samples, rng);
      const Trigger t = optimize_trigger(
          init_trigger(config.encoder.pixels, config.attack.epsilon, derive_seed(seed, {kAuxTrigger, 0})), xs, target,
          prompt0, *env.vocab, *env.encoder, config.attack, derive_seed(seed, {kAuxTrigger, 1}));
      aux = build_aux_dataset(xs, t, *env.encoder, derive_seed(seed, {kAuxShuffle}));
    } else {
      const auto zs = embeddings_of(train);
      const Trigger t = embedding_trigger_towards(zs, prompt0, *env.vocab, target, config.attack.embed_epsilon);
      aux = build_aux_dataset(zs, t, nullptr, derive_seed(seed, {kAuxShuffle}));
    }
    DetectorHyper hyper{config.defense.hidden, config.defense.lr, config.defense.epochs, config.defense.batch_size,
                        derive_seed(seed, {kDetector})};
    env.detector = train_detector(aux, hyper);
    env.detector_aux_accuracy = detector_accuracy(*env.detector, aux);
  }
  return env;
}

FlState initial_state(const Environment& env) {
  const ExperimentConfig& c = env.config;
  FlState s;
  s.prompt = PromptState::init(c.prompt.length, static_cast<int>(env.vocab->text_width()), c.prompt.init_std,
                               derive_seed(c.seed, {kPrompt}));
  s.triggers.resize(env.clients.size());
  const int target = c.attack.target_class;
  auto initial = [&](std::size_t client) {
    if (env.toy()) {
      return init_trigger(env.encoder->input_dim(), c.attack.epsilon, derive_seed(c.seed, {kTriggerInit, client}));
    }
    return embedding_trigger_towards(embeddings_of(env.clients[client]), s.prompt, *env.vocab, target,
                                     c.attack.embed_epsilon);
  };
  for (int k : env.malicious) s.triggers[static_cast<std::size_t>(k)] = initial(static_cast<std::size_t>(k));
  if (env.malicious.empty()) s.shadow = initial(0);
  return s;
}

const Trigger& evaluation_trigger(const Environment& env, const FlState& state) {
  if (!env.malicious.empty()) return *state.triggers[static_cast<std::size_t>(env.malicious.front())];
  return *state.shadow;
}

namespace {

struct ClientOutcome {
  FlatUpdate update;
  std::vector<Embedding> submitted;
  std::vector<int> labels;
  std::vector<int> poisoned;
  std::optional<Trigger> trigger;
};

Trigger refresh_trigger(const Environment& env, const FlState& state, const Trigger& current,
                        const std::vector<Sample>& data, std::uint64_t seed) {
  const ExperimentConfig& c = env.config;
  const bool first = state.round == 0;
  if (!c.attack.reoptimize_each_round && !first) return current;
  const int target = c.attack.target_class;
  if (env.toy()) {
    return optimize_trigger(current, inputs_of(data), target, state.prompt, *env.vocab, *env.encoder, c.attack, seed);
  }
  return embedding_trigger_towards(embeddings_of(data), state.prompt, *env.vocab, target, c.attack.embed_epsilon);
}

ClientOutcome run_client(const Environment& env, const FlState& state, std::size_t k) {
  const ExperimentConfig& c = env.config;
  const std::uint64_t seed = c.seed;
  const auto round = static_cast<std::uint64_t>(state.round);
  const auto& data = env.clients[k];
  ClientOutcome out;

  std::vector<TrainingExample> examples;
  std::vector<int> poisoned(data.size(), 0);
  if (env.is_malicious(static_cast<int>(k))) {
    const Trigger trigger =
        refresh_trigger(env, state, *state.triggers[k], data, derive_seed(seed, {kTriggerOpt, round, k}));
    const std::uint64_t poison_seed = derive_seed(seed, {kPoison, round, k});
    if (env.toy()) {
      const auto p = poison_dataset(inputs_of(data), trigger, c.attack, poison_seed);
      for (const auto& x : p.samples) examples.push_back(TrainingExample{env.encoder->encode(x), x.label});
      for (std::size_t i : p.indices) poisoned[i] = 1;
    } else {
      std::vector<TrainingExample> clean;
      for (const auto& s : data) clean.push_back(TrainingExample{s.embedding, s.label});
      auto p = poison_embeddings(clean, trigger, c.attack, poison_seed);
      examples = std::move(p.samples);
      for (std::size_t i : p.indices) poisoned[i] = 1;
    }
    out.trigger = trigger;
  } else {
    for (const auto& s : data) examples.push_back(TrainingExample{s.embedding, s.label});
  }

  TrainSchedule schedule{c.schedule.epochs, c.schedule.warmup_epochs, c.schedule.base_lr, c.schedule.batch_size,
                         derive_seed(seed, {kLocalTrain, round, k})};
  const PromptState local = local_train(state.prompt, examples, schedule, *env.vocab);
  out.update = FlatUpdate{local.flatten() - state.prompt.flatten(), static_cast<int>(k)};

  std::vector<std::size_t> chosen(examples.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
  if (c.defense.max_embeddings_per_client &&
      static_cast<std::size_t>(*c.defense.max_embeddings_per_client) < examples.size()) {
    Rng rng(derive_seed(seed, {kSubmit, round, k}));
    rng.shuffle(chosen);
    chosen.resize(static_cast<std::size_t>(*c.defense.max_embeddings_per_client));
    std::sort(chosen.begin(), chosen.end());
  }
  for (std::size_t i : chosen) {
    out.submitted.push_back(examples[i].z);
    out.labels.push_back(examples[i].label);
    out.poisoned.push_back(poisoned[i]);
  }
  return out;
}

}  // namespace

RoundReport run_round(const Environment& env, FlState& state, const RoundOptions& options) {
  const ExperimentConfig& c = env.config;
  const std::size_t n = env.clients.size();
  const auto round = static_cast<std::uint64_t>(state.round);

  // Client side: independent per client, results land in per-client slots.
  std::vector<ClientOutcome> outcomes(n);
  std::optional<Trigger> shadow;
  for_each_index(n + (state.shadow ? 1 : 0), options.exec, [&](std::size_t k) {
    if (k < n) {
      outcomes[k] = run_client(env, state, k);
    } else {
      shadow = refresh_trigger(env, state, *state.shadow, env.clients.front(), derive_seed(c.seed, {kShadow, round}));
    }
  });

  RoundReport report;
  report.round = state.round + 1;
  std::vector<int> rejected;
  if (env.detector) {
    std::vector<std::vector<Embedding>> per_client;
    std::vector<int> ids;
    for (std::size_t k = 0; k < n; ++k) {
      per_client.push_back(outcomes[k].submitted);
      ids.push_back(static_cast<int>(k));
    }
    const auto scores = score_clients(*env.detector, per_client, ids, options.exec);
    for (const auto& s : scores) report.scores.push_back(s.score);
    rejected = filter_clients(scores, env.m).rejected;
  }
  report.rejected = rejected;

  std::vector<FlatUpdate> accepted;
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::binary_search(rejected.begin(), rejected.end(), static_cast<int>(k))) {
      accepted.push_back(outcomes[k].update);
    }
  }
  if (accepted.empty()) throw Error("empty aggregation set");
  const FlatUpdate agg = aggregate(c.aggregator, accepted, derive_seed(c.seed, {kAggregate, round}));

  if (options.sink) {
    for (std::size_t k = 0; k < n; ++k) {
      options.sink->push_back(SubmittedEmbeddings{report.round, static_cast<int>(k), outcomes[k].submitted,
                                                  outcomes[k].labels, outcomes[k].poisoned});
    }
  }

  if (options.update_sink) {
    for (const auto& o : outcomes) options.update_sink->push_back(o.update);
  }

  state.prompt.context += PromptState::unflatten(agg.values, state.prompt.length(), state.prompt.width()).context;
  for (std::size_t k = 0; k < n; ++k) {
    if (outcomes[k].trigger) state.triggers[k] = outcomes[k].trigger;
  }
  if (shadow) state.shadow = shadow;
  state.round += 1;

  const Accuracy acc =
      evaluate(state.prompt, *env.vocab, *env.encoder, env.test, evaluation_trigger(env, state), c.attack.target_class);
  report.prompt_norm = state.prompt.context.norm();
  report.clean_acc = acc.clean;
  report.backdoor_acc = acc.backdoor;
  return report;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RoundOptions& options) {
  const Environment env = build_environment(config);
  FlState state = initial_state(env);
  ExperimentResult result;
  for (int r = 0; r < config.rounds; ++r) result.rounds.push_back(run_round(env, state, options));
  if (result.rounds.empty()) {
    const Accuracy acc = evaluate(state.prompt, *env.vocab, *env.encoder, env.test, evaluation_trigger(env, state),
                                  config.attack.target_class);
    result.summary.final_clean_acc = acc.clean;
    result.summary.final_backdoor_acc = acc.backdoor;
  } else {
    result.summary.final_clean_acc = result.rounds.back().clean_acc;
    result.summary.final_backdoor_acc = result.rounds.back().backdoor_acc;
  }
  result.summary.malicious = env.malicious;
  result.summary.detector_aux_accuracy = env.detector_aux_accuracy;
  return result;
}

}  // namespace sabre
