#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "sabre/prompt_learner.hpp"

using namespace sabre;
using namespace sabre::testing;

namespace {

ClassVocabulary axis_vocab(int k, double tau = kDefaultTemperature) {
  return ClassVocabulary(Matrix::Identity(k, k), Matrix::Identity(k, k), tau);
}

}  // namespace

TEST(TextEmbedding, ZeroContextGivesNormalizedClassProjection) {
  Rng rng(1);
  const Matrix c = random_matrix(rng, 3, 4), u = random_matrix(rng, 5, 4);
  const ClassVocabulary vocab(c, u, 0.01);
  const PromptState prompt{Matrix::Zero(2, 4)};
  for (int i = 0; i < 3; ++i) {
    const Vector expected = (u * c.row(i).transpose()).normalized();
    EXPECT_LT((class_text_embedding(prompt, vocab, i) - expected).norm(), 1e-12);
  }
}

TEST(TextEmbedding, EqualClassEmbeddingsGiveEqualText) {
  Matrix c(2, 3);
  c << 0.3, -0.2, 1.0, 0.3, -0.2, 1.0;
  const ClassVocabulary vocab(c, Matrix::Identity(3, 3), 0.01);
  const auto prompt = PromptState::init(4, 3, 0.02, 9);
  EXPECT_EQ(class_text_embedding(prompt, vocab, 0), class_text_embedding(prompt, vocab, 1));
}

TEST(TextEmbedding, SingleContextVectorMatchesMatrixProductOracle) {
  Rng rng(2);
  const Matrix u = random_matrix(rng, 4, 3);
  const Vector v = random_vector(rng, 3);
  const ClassVocabulary vocab(Matrix::Zero(2, 3), u, 0.01);
  const PromptState prompt{v.transpose()};
  const Matrix oracle = naive_text_embeddings(prompt.context, vocab.class_embeddings(), u);
  EXPECT_LT((class_text_embedding(prompt, vocab, 0) - oracle.row(0).transpose()).norm(), 1e-12);
}

TEST(TextEmbedding, IndexOutOfRangeThrows) {
  EXPECT_THROW(class_text_embedding(PromptState{Matrix::Zero(1, 2)}, axis_vocab(2), 2), InvalidArgument);
}

TEST(TextEmbedding, DegenerateNormThrows) {
  const ClassVocabulary vocab(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 0.01);
  EXPECT_THROW(class_text_embedding(PromptState{Matrix::Zero(1, 2)}, vocab, 0), DegenerateInput);
}

TEST(Predict, EquidistantEmbeddingGivesUniform) {
  const auto vocab = axis_vocab(3);
  const auto p = predict_probabilities(Vector::Ones(3), PromptState{Matrix::Zero(1, 3)}, vocab);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p(i), 1.0 / 3.0, 1e-12);
}

TEST(Predict, TinyTemperatureConcentratesOnArgmax) {
  const auto vocab = axis_vocab(3, 1e-4);
  const auto p = predict_probabilities((Vector(3) << 0.5, 0.4, 0.3).finished(), PromptState{Matrix::Zero(1, 3)}, vocab);
  EXPECT_GT(p(0), 0.999);
}

TEST(Predict, MatchesNaiveSoftmaxOfCosines) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const ClassVocabulary vocab(random_matrix(rng, 3, 4), random_matrix(rng, 5, 4), 0.1);
    const PromptState prompt{random_matrix(rng, 2, 4, 0.3)};
    const Vector z = random_vector(rng, 5);
    const auto p = predict_probabilities(z, prompt, vocab);
    const auto oracle =
        naive_probabilities(z, naive_text_embeddings(prompt.context, vocab.class_embeddings(), vocab.projection()), 0.1);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p(i), oracle[static_cast<std::size_t>(i)], 1e-9);
  }
}

TEST(Predict, SelfSimilarityWins) {
  Rng rng(3);
  const ClassVocabulary vocab(random_matrix(rng, 4, 6), random_matrix(rng, 6, 6), 0.01);
  const auto prompt = PromptState::init(4, 6, 0.02, 1);
  for (int t = 0; t < 4; ++t) EXPECT_EQ(predict_label(class_text_embedding(prompt, vocab, t), prompt, vocab), t);
}

TEST(Predict, AllCosinesEqualPicksClassZero) {
  EXPECT_EQ(predict_label(Vector::Ones(4), PromptState{Matrix::Zero(1, 4)}, axis_vocab(4)), 0);
}

TEST(Predict, LabelIsArgmaxOfOracleProbabilities) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(100 + seed);
    const ClassVocabulary vocab(random_matrix(rng, 5, 4), random_matrix(rng, 4, 4), 0.01);
    const PromptState prompt{random_matrix(rng, 3, 4, 0.1)};
    const Vector z = random_vector(rng, 4);
    const auto oracle =
        naive_probabilities(z, naive_text_embeddings(prompt.context, vocab.class_embeddings(), vocab.projection()), 1.0);
    const auto best = std::max_element(oracle.begin(), oracle.end()) - oracle.begin();
    EXPECT_EQ(predict_label(z, prompt, vocab), best);
  }
}

TEST(Predict, ProbabilitiesLieOnTheSimplex) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const ClassVocabulary vocab(random_matrix(rng, 6, 5), random_matrix(rng, 7, 5), std::pow(10.0, rng.uniform(-4, 0)));
    const PromptState prompt{random_matrix(rng, 2, 5)};
    const auto p = predict_probabilities(random_vector(rng, 7), prompt, vocab);
    EXPECT_GE(p.minCoeff(), 0.0);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
  }
}

TEST(Predict, ScaleInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const ClassVocabulary vocab(random_matrix(rng, 4, 4), random_matrix(rng, 4, 4), 0.01);
    const PromptState prompt{random_matrix(rng, 2, 4, 0.1)};
    const Vector z = random_vector(rng, 4);
    const double alpha = std::pow(10.0, rng.uniform(-6, 6));
    EXPECT_EQ(predict_label(alpha * z, prompt, vocab), predict_label(z, prompt, vocab));
  }
}

TEST(Predict, NeedsTwoClasses) {
  EXPECT_THROW(predict_probabilities(Vector::Ones(2), PromptState{Matrix::Zero(1, 2)},
                                     ClassVocabulary(Matrix::Ones(1, 2), Matrix::Identity(2, 2), 0.01)),
               InvalidArgument);
}

TEST(Predict, ZeroEmbeddingIsDegenerate) {
  EXPECT_THROW(predict_probabilities(Vector::Zero(3), PromptState{Matrix::Zero(1, 3)}, axis_vocab(3)), DegenerateInput);
}

TEST(LossGradient, OptimumHasZeroLossAndGradient) {
  const auto vocab = axis_vocab(3);
  const PromptState prompt{Matrix::Zero(2, 3)};
  std::vector<TrainingExample> batch;
  for (int y = 0; y < 3; ++y) batch.push_back({class_text_embedding(prompt, vocab, y), y});
  const auto lg = loss_and_gradient(batch, prompt, vocab);
  EXPECT_LT(lg.loss, 1e-12);
  EXPECT_LT(lg.grad.norm(), 1e-12);
}

TEST(LossGradient, MirroredTwoClassGradientFlipsWithLabel) {
  Matrix c(2, 2);
  c << 1.0, 0.3, 1.0, -0.3;
  const ClassVocabulary vocab(c, Matrix::Identity(2, 2), 0.01);
  const PromptState prompt{Matrix::Zero(1, 2)};
  const Vector z = (Vector(2) << 1.0, 0.0).finished();
  const auto g0 = loss_and_gradient({{z, 0}}, prompt, vocab).grad;
  const auto g1 = loss_and_gradient({{z, 1}}, prompt, vocab).grad;
  EXPECT_GT(g0.norm(), 1e-3);
  EXPECT_LT((g0 + g1).norm(), 1e-12);
}

TEST(LossGradient, MatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_prompt_instance(seed);
    const Matrix analytic = loss_and_gradient(inst.batch, inst.prompt, inst.vocab).grad;
    EXPECT_LT(max_relative_error(analytic, fd_prompt_gradient(inst)), 1e-4) << "seed " << seed;
  }
}

TEST(LossGradient, RowsShareTheMeanPoolGradient) {
  const auto inst = random_prompt_instance(77);
  const Matrix g = loss_and_gradient(inst.batch, inst.prompt, inst.vocab).grad;
  EXPECT_EQ(g.row(0), g.row(1));
}

TEST(LossGradient, ErrorsOnBadBatches) {
  const auto vocab = axis_vocab(2);
  const PromptState prompt{Matrix::Zero(1, 2)};
  EXPECT_THROW(loss_and_gradient({}, prompt, vocab), InvalidArgument);
  EXPECT_THROW(loss_and_gradient({{Vector::Ones(2), 2}}, prompt, vocab), InvalidArgument);
}

TEST(Schedule, WarmupThenCosine) {
  const TrainSchedule s{10, 1, 0.002, 8, 0};
  EXPECT_DOUBLE_EQ(s.lr_at(0), 0.002);
  EXPECT_DOUBLE_EQ(s.lr_at(1), 0.002);
  EXPECT_NEAR(s.lr_at(5), 0.001 * (1.0 + std::cos(std::numbers::pi * 4.0 / 9.0)), 1e-15);
  const TrainSchedule w{10, 4, 0.004, 8, 0};
  EXPECT_DOUBLE_EQ(w.lr_at(0), 0.001);
  EXPECT_DOUBLE_EQ(w.lr_at(3), 0.004);
  for (int e = 2; e < 10; ++e) EXPECT_LE(s.lr_at(e), s.lr_at(e - 1));
}

TEST(Schedule, Validation) {
  EXPECT_THROW((TrainSchedule{5, 5, 0.1, 1, 0}.validate()), InvalidArgument);
  EXPECT_THROW((TrainSchedule{5, 1, 0.0, 1, 0}.validate()), InvalidArgument);
  EXPECT_THROW((TrainSchedule{5, 1, 0.1, 0, 0}.validate()), InvalidArgument);
  EXPECT_NO_THROW((TrainSchedule{0, 1, 0.1, 1, 0}.validate()));
}

TEST(LocalTrain, ZeroEpochsReturnsPromptUnchanged) {
  const auto prompt = PromptState::init(4, 3, 0.02, 2);
  const auto out = local_train(prompt, {{Vector::Ones(3), 1}}, TrainSchedule{0, 1, 0.002, 8, 0}, axis_vocab(3));
  EXPECT_EQ(out, prompt);
}

TEST(LocalTrain, SingleSampleLossDecreases) {
  Rng rng(6);
  const ClassVocabulary vocab(random_matrix(rng, 4, 6), random_matrix(rng, 6, 6), 0.01);
  const auto prompt = PromptState::init(4, 6, 0.02, 3);
  const std::vector<TrainingExample> data{{random_vector(rng, 6), 2}};
  const double before = loss_and_gradient(data, prompt, vocab).loss;
  const auto trained = local_train(prompt, data, TrainSchedule{50, 1, 0.002, 8, 4}, vocab);
  EXPECT_LT(loss_and_gradient(data, trained, vocab).loss, before);
}

TEST(LocalTrain, DeterministicAndLeavesInputAlone) {
  Rng rng(7);
  const ClassVocabulary vocab(random_matrix(rng, 3, 5), random_matrix(rng, 5, 5), 0.01);
  const auto prompt = PromptState::init(4, 5, 0.02, 3);
  const auto copy = prompt;
  std::vector<TrainingExample> data;
  for (int i = 0; i < 30; ++i) data.push_back({random_vector(rng, 5), i % 3});
  const TrainSchedule s{10, 1, 0.002, 8, 11};
  const auto a = local_train(prompt, data, s, vocab);
  const auto b = local_train(prompt, data, s, vocab);
  EXPECT_EQ(a, b);
  EXPECT_EQ(prompt, copy);
  EXPECT_FALSE(a == prompt);
}

TEST(LocalTrain, EmptyDatasetThrows) {
  EXPECT_THROW(local_train(PromptState{Matrix::Zero(1, 2)}, {}, TrainSchedule{}, axis_vocab(2)), InvalidArgument);
}

TEST(PromptState, FlattenRoundTrip) {
  const auto p = PromptState::init(3, 5, 1.0, 8);
  const Vector flat = p.flatten();
  EXPECT_EQ(flat(5), p.context(1, 0));
  EXPECT_EQ(PromptState::unflatten(flat, 3, 5), p);
  EXPECT_THROW(PromptState::unflatten(flat, 4, 5), DimensionError);
}
