#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "sabre/orchestrator.hpp"
#include "sabre/report.hpp"
#include "test_util.hpp"

using namespace sabre;
using namespace sabre::testing;

namespace {

struct Item {
  int id = 0;
  int label = 0;
};

std::vector<Item> items(int n, int classes) {
  std::vector<Item> out;
  for (int i = 0; i < n; ++i) out.push_back({i, i % classes});
  return out;
}

std::vector<int> sorted_ids(const std::vector<std::vector<Item>>& parts) {
  std::vector<int> ids;
  for (const auto& p : parts)
    for (const auto& it : p) ids.push_back(it.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> iota_ids(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

ExperimentConfig attack_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.attack.epsilon = 0.16;
  c.seed = seed;
  return c;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

TEST(PartitionIid, SizesFollowTheRemainderRule) {
  const auto a = partition_iid(items(10, 2), 2, 1);
  EXPECT_EQ(a[0].size(), 5u);
  EXPECT_EQ(a[1].size(), 5u);
  const auto b = partition_iid(items(11, 2), 2, 1);
  EXPECT_EQ(b[0].size(), 6u);
  EXPECT_EQ(b[1].size(), 5u);
}

TEST(PartitionIid, DeterministicDisjointAndComplete) {
  const auto a = partition_iid(items(37, 3), 5, 9);
  const auto b = partition_iid(items(37, 3), 5, 9);
  for (std::size_t k = 0; k < 5; ++k) {
    ASSERT_EQ(a[k].size(), b[k].size());
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_EQ(a[k][i].id, b[k][i].id);
  }
  EXPECT_EQ(sorted_ids(a), iota_ids(37));
  EXPECT_THROW(partition_iid(items(3, 1), 4, 0), InvalidArgument);
}

TEST(PartitionDirichlet, HugeAlphaIsNearlyIid) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto parts = partition_dirichlet(items(1000, 4), 4, 1e6, seed);
    for (const auto& p : parts) {
      std::vector<int> counts(4, 0);
      for (const auto& it : p) ++counts[static_cast<std::size_t>(it.label)];
      for (int c : counts) {
        EXPECT_GE(c, 62.5 * 0.7);
        EXPECT_LE(c, 62.5 * 1.3);
      }
    }
  }
}

TEST(PartitionDirichlet, TinyAlphaConcentratesClasses) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto parts = partition_dirichlet(items(1000, 4), 4, 0.05, seed);
    bool concentrated = false;
    for (const auto& p : parts) {
      std::vector<int> counts(4, 0);
      for (const auto& it : p) ++counts[static_cast<std::size_t>(it.label)];
      const int top = *std::max_element(counts.begin(), counts.end());
      if (!p.empty() && top >= 0.8 * static_cast<double>(p.size())) concentrated = true;
    }
    EXPECT_TRUE(concentrated) << "seed " << seed;
  }
}

TEST(PartitionDirichlet, AlwaysAPartitionWithNoEmptyClient) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto parts = partition_dirichlet(items(40, 4), 8, 0.01, seed);
    EXPECT_EQ(sorted_ids(parts), iota_ids(40));
    for (const auto& p : parts) EXPECT_FALSE(p.empty());
  }
  EXPECT_THROW(partition_dirichlet(items(10, 2), 2, 0.0, 0), InvalidArgument);
}

TEST(FewShot, Examples) {
  const auto data = items(20, 4);  // five per class
  EXPECT_EQ(sample_few_shot(data, 5, 1).size(), 20u);
  const auto two = sample_few_shot(data, 2, 1);
  std::map<int, int> per_class;
  for (const auto& it : two) ++per_class[it.label];
  for (const auto& [label, count] : per_class) EXPECT_EQ(count, 2);
  const auto again = sample_few_shot(data, 2, 1);
  for (std::size_t i = 0; i < two.size(); ++i) EXPECT_EQ(two[i].id, again[i].id);
  EXPECT_THROW(sample_few_shot(std::vector<Item>{}, 2, 1), InvalidArgument);
  EXPECT_THROW(sample_few_shot(data, 0, 1), InvalidArgument);
}

TEST(Evaluate, EverythingPredictedAsTarget) {
  // Pixels are positive, the target text is the all-ones direction and the
  // others point into the negative orthant.
  const auto enc = FrozenEncoder::toy_linear(Matrix::Identity(3, 3));
  Matrix classes(3, 3);
  classes << 1, 1, 1, -1, 0, 0, 0, -1, 0;
  const ClassVocabulary vocab(classes, Matrix::Identity(3, 3), 0.01);
  const PromptState prompt{Matrix::Zero(1, 3)};
  std::vector<Sample> test;
  Rng rng(1);
  for (int i = 0; i < 12; ++i) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x(j) = rng.uniform(0.1, 0.9);
    test.push_back({x, x, i % 3});
  }
  const auto acc = evaluate(prompt, vocab, enc, test, Trigger::zero_input(3, 0.1), 0);
  EXPECT_DOUBLE_EQ(acc.backdoor, 100.0);
  EXPECT_DOUBLE_EQ(acc.clean, 100.0 / 3.0);
}

TEST(Evaluate, BaUndefinedWhenEveryLabelIsTheTarget) {
  const auto enc = FrozenEncoder::toy_linear(Matrix::Identity(2, 2));
  const ClassVocabulary vocab(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.01);
  const std::vector<Sample> test{{Vector::Ones(2), Vector::Ones(2), 1}};
  try {
    evaluate(PromptState{Matrix::Zero(1, 2)}, vocab, enc, test, Trigger::zero_input(2, 0.1), 1);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("BA undefined"), std::string::npos);
  }
}

TEST(Evaluate, MatchesLoopCountOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto enc = FrozenEncoder::toy(ToyEncoderSpec{6, 5, seed, false});
    const ClassVocabulary vocab(random_matrix(rng, 3, 5), Matrix::Identity(5, 5), 0.01);
    const PromptState prompt{random_matrix(rng, 2, 5, 0.2)};
    Vector tv(6);
    for (int j = 0; j < 6; ++j) tv(j) = rng.uniform(-0.2, 0.2);
    const auto trig = Trigger::input_space(tv, 0.2);
    std::vector<Sample> test;
    for (int i = 0; i < 30; ++i) {
      Vector x(6);
      for (int j = 0; j < 6; ++j) x(j) = rng.uniform();
      const int y = static_cast<int>(rng.below(3));
      test.push_back({x, enc.encode({x, y}), y});
    }
    int correct = 0, eligible = 0, hits = 0;
    for (const auto& s : test) {
      if (predict_label(s.embedding, prompt, vocab) == s.label) ++correct;
      if (s.label == 1) continue;
      ++eligible;
      if (predict_label(enc.encode(apply_trigger({s.pixels, s.label}, trig)), prompt, vocab) == 1) ++hits;
    }
    const auto acc = evaluate(prompt, vocab, enc, test, trig, 1);
    EXPECT_DOUBLE_EQ(acc.clean, 100.0 * correct / 30.0);
    EXPECT_DOUBLE_EQ(acc.backdoor, 100.0 * hits / eligible);
  }
}

TEST(Evaluate, ZeroTriggerMeasuresExistingConfusionWithTheTarget) {
  ExperimentConfig cfg;
  cfg.malicious_fraction = 0.0;
  const auto env = build_environment(cfg);
  const auto state = initial_state(env);
  int eligible = 0, confused = 0;
  for (const auto& s : env.test) {
    if (s.label == 0) continue;
    ++eligible;
    confused += predict_label(s.embedding, state.prompt, *env.vocab) == 0;
  }
  const auto acc = evaluate(state.prompt, *env.vocab, *env.encoder, env.test, Trigger::zero_input(16, 0.1), 0);
  EXPECT_DOUBLE_EQ(acc.backdoor, 100.0 * confused / eligible);
}

TEST(Environment, MaliciousIdsAreTheLowest) {
  ExperimentConfig cfg;
  cfg.num_clients = 10;
  cfg.malicious_fraction = 0.3;
  const auto env = build_environment(cfg);
  EXPECT_EQ(env.malicious, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(env.clients.size(), 10u);
  for (const auto& c : env.clients) {
    std::map<int, int> counts;
    for (const auto& s : c) ++counts[s.label];
    for (const auto& [label, n] : counts) EXPECT_LE(n, cfg.shots);
  }
}

TEST(RunRound, MeanAggregationIsPlainFedAvg) {
  auto cfg = attack_config(3);
  const auto env = build_environment(cfg);
  auto state = initial_state(env);
  for (int r = 0; r < 3; ++r) {
    const Matrix before = state.prompt.context;
    std::vector<FlatUpdate> ups;
    run_round(env, state, RoundOptions{Execution::Serial, nullptr, &ups});
    ASSERT_EQ(ups.size(), 8u);
    Vector mean = Vector::Zero(ups[0].values.size());
    for (const auto& u : ups) mean += u.values;
    mean /= 8.0;
    const Vector delta = PromptState{state.prompt.context - before}.flatten();
    EXPECT_LT((delta - mean).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RunExperiment, ZeroRoundsReportsZeroShotAccuracy) {
  auto cfg = attack_config(1);
  cfg.rounds = 0;
  const auto result = run_experiment(cfg);
  EXPECT_TRUE(result.rounds.empty());
  const auto env = build_environment(cfg);
  const auto state = initial_state(env);
  const auto acc = evaluate(state.prompt, *env.vocab, *env.encoder, env.test, evaluation_trigger(env, state), 0);
  EXPECT_EQ(result.summary.final_clean_acc, acc.clean);
  EXPECT_EQ(result.summary.final_backdoor_acc, acc.backdoor);
}

TEST(RunExperiment, NoAttackStaysNearTheConfusionBaseRate) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto cfg = attack_config(seed);
    cfg.malicious_fraction = 0.0;
    cfg.rounds = 5;
    const auto env = build_environment(cfg);
    auto state = initial_state(env);
    double previous_ca = -1.0;
    for (int r = 0; r < 5; ++r) {
      const auto rep = run_round(env, state);
      const auto base = evaluate(state.prompt, *env.vocab, *env.encoder, env.test, Trigger::zero_input(16, 0.16), 0);
      EXPECT_LE(std::abs(rep.backdoor_acc - base.backdoor), 5.0) << "seed " << seed << " round " << r;
      if (previous_ca >= 0.0) EXPECT_GE(rep.clean_acc, previous_ca - 2.0);
      previous_ca = rep.clean_acc;
    }
  }
}

TEST(RunExperiment, AttackOpensABackdoorGap) {
  std::vector<double> gaps;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto clean = attack_config(seed);
    clean.malicious_fraction = 0.0;
    gaps.push_back(run_experiment(attack_config(seed)).summary.final_backdoor_acc -
                   run_experiment(clean).summary.final_backdoor_acc);
  }
  EXPECT_GE(median(gaps), 40.0);
}

TEST(RunExperiment, PoisonedPromptFavoursTheTargetButKeepsCleanPredictions) {
  const auto attacked_cfg = attack_config(0);
  auto clean_cfg = attacked_cfg;
  clean_cfg.malicious_fraction = 0.0;

  const auto env = build_environment(attacked_cfg);
  auto state = initial_state(env);
  for (int r = 0; r < attacked_cfg.rounds; ++r) run_round(env, state);
  const auto clean_env = build_environment(clean_cfg);
  auto clean_state = initial_state(clean_env);
  for (int r = 0; r < clean_cfg.rounds; ++r) run_round(clean_env, clean_state);

  const Matrix text = text_embeddings(state.prompt, *env.vocab);
  const Trigger& trig = evaluation_trigger(env, state);
  int eligible = 0, favoured = 0, changed = 0;
  for (const auto& s : env.test) {
    changed += predict_label(s.embedding, state.prompt, *env.vocab) !=
               predict_label(s.embedding, clean_state.prompt, *clean_env.vocab);
    if (s.label == 0) continue;
    ++eligible;
    const Vector z = normalize(env.encoder->encode(apply_trigger({s.pixels, s.label}, trig)));
    favoured += text.row(0).dot(z) > text.row(s.label).dot(z);
  }
  EXPECT_GE(static_cast<double>(favoured) / eligible, 0.6);
  EXPECT_LE(static_cast<double>(changed) / static_cast<double>(env.test.size()), 0.10);
}

TEST(RunExperiment, SameSeedSameReportBytes) {
  auto cfg = attack_config(7);
  cfg.defense.kind = DefenseConfig::Kind::SabreFl;
  cfg.defense.aux_samples = 200;
  cfg.defense.aux_classes = 50;
  cfg.rounds = 3;
  EXPECT_EQ(render_report(cfg, run_experiment(cfg)), render_report(cfg, run_experiment(cfg)));
}

TEST(RunExperiment, ReloadedConfigGivesIdenticalResults) {
  auto cfg = attack_config(8);
  cfg.rounds = 3;
  cfg.aggregator = TrimmedMeanAggregator{1};
  const auto reloaded = parse_config(config_to_json(cfg).dump());
  EXPECT_EQ(render_report(cfg, run_experiment(cfg)), render_report(reloaded, run_experiment(reloaded)));
}

TEST(RunExperiment, StrongTriggerIsFilteredOut) {
  auto cfg = attack_config(2);
  cfg.defense.kind = DefenseConfig::Kind::SabreFl;
  cfg.rounds = 3;
  const auto result = run_experiment(cfg);
  for (const auto& r : result.rounds) {
    EXPECT_EQ(r.rejected, (std::vector<int>{0, 1}));
    EXPECT_EQ(r.scores.size(), 8u);
  }
  EXPECT_LE(result.summary.final_backdoor_acc, 10.0);
  ASSERT_TRUE(result.summary.detector_aux_accuracy.has_value());
}

TEST(RunExperiment, EveryAggregatorRuns) {
  for (const AggregatorSpec& spec : std::vector<AggregatorSpec>{TrimmedMeanAggregator{1}, MedianAggregator{},
                                                                NormBoundAggregator{}, FlameAggregator{}}) {
    auto cfg = attack_config(5);
    cfg.rounds = 2;
    cfg.aggregator = spec;
    cfg.partition.kind = PartitionConfig::Kind::Dirichlet;
    const auto result = run_experiment(cfg);
    EXPECT_EQ(result.rounds.size(), 2u) << aggregator_name(spec);
    EXPECT_GT(result.summary.final_clean_acc, 0.0);
  }
}

TEST(RunExperiment, EmbeddingSinkFlagsPoisonedRecords) {
  auto cfg = attack_config(6);
  cfg.rounds = 1;
  std::vector<SubmittedEmbeddings> sink;
  run_experiment(cfg, RoundOptions{Execution::Serial, &sink});
  ASSERT_EQ(sink.size(), 8u);
  for (const auto& b : sink) {
    const int flagged = static_cast<int>(std::count(b.poisoned.begin(), b.poisoned.end(), 1));
    if (b.client < 2) {
      EXPECT_EQ(flagged, static_cast<int>(std::lround(0.5 * static_cast<double>(b.embeddings.size()))));
    } else {
      EXPECT_EQ(flagged, 0);
    }
  }

  TempDir dir("export");
  write_embedding_export(dir / "e.sbef", sink, 4);
  const auto store = read_store(dir / "e.sbef");
  std::size_t total = 0;
  for (const auto& b : sink) total += b.embeddings.size();
  EXPECT_EQ(store.size(), total);
  EXPECT_TRUE(std::filesystem::exists(dir / "e.sbef.labels.csv"));
}

TEST(RunExperiment, PrecomputedStoresEndToEnd) {
  // Class clusters on the unit sphere, written as SBEF stores.
  Rng rng(9);
  const int d = 12, k = 3;
  std::vector<Vector> centers;
  for (int c = 0; c < k; ++c) centers.push_back(random_vector(rng, d).normalized());
  auto make_store = [&](int n) {
    std::vector<Embedding> zs;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      zs.push_back(centers[static_cast<std::size_t>(i % k)] + random_vector(rng, d, 0.05));
      labels.push_back(i % k);
    }
    return EmbeddingStore::from_embeddings(k, zs, labels);
  };
  TempDir dir("precomputed");
  write_store(make_store(240), dir / "train.sbef");
  write_store(make_store(90), dir / "test.sbef");

  ExperimentConfig cfg;
  cfg.rounds = 3;
  cfg.encoder.mode = EncoderConfig::Mode::Precomputed;
  cfg.encoder.path = (dir / "train.sbef").string();
  cfg.encoder.test_path = (dir / "test.sbef").string();
  cfg.defense.kind = DefenseConfig::Kind::SabreFl;
  const auto result = run_experiment(cfg);
  ASSERT_EQ(result.rounds.size(), 3u);
  EXPECT_GT(result.summary.final_clean_acc, 90.0);
  for (const auto& r : result.rounds) EXPECT_EQ(r.rejected, (std::vector<int>{0, 1}));
}

TEST(RunExperiment, BackdoorGrowsWithTheMaliciousFraction) {
  double mean0 = 0.0, mean25 = 0.0, mean50 = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto c = attack_config(seed);
    c.malicious_fraction = 0.0;
    mean0 += run_experiment(c).summary.final_backdoor_acc / 10.0;
    c.malicious_fraction = 0.25;
    mean25 += run_experiment(c).summary.final_backdoor_acc / 10.0;
    c.malicious_fraction = 0.5;
    mean50 += run_experiment(c).summary.final_backdoor_acc / 10.0;
  }
  EXPECT_GE(mean25 - mean0, 5.0);
  EXPECT_GE(mean50 - mean25, 5.0);
}
