#include <gtest/gtest.h>

#include <cmath>

#include "xfire/dataset.hpp"
#include "xfire/models/autoencoder.hpp"
#include "xfire/models/checkpoint.hpp"
#include "xfire/models/cnn.hpp"
#include "xfire/models/lstm_model.hpp"
#include "xfire/models/random_forest.hpp"
#include "xfire/models/training.hpp"

namespace {

using namespace xfire;
using namespace xfire::models;

std::vector<CnnWindow> random_cnn_windows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CnnWindow> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].grid.resize(15 * 80);
    for (auto& v : out[i].grid) v = static_cast<float>(rng.uniform(0.0, 1.0));
    out[i].label = i % 2;
  }
  return out;
}

nn::Tensor<float> random_input(nn::Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor<float> t(std::move(shape));
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

TEST(Cnn, ShapesForSeveralBatchSizes) {
  CnnModel<float> m;
  m.init(1);
  for (std::size_t n : {1u, 7u, 32u}) {
    CnnTrace tr;
    const auto w = random_cnn_windows(n, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto y = m.logits(stack_cnn(std::span<const CnnWindow>(w), idx, m.arch()), &tr);
    EXPECT_EQ(tr.input, (nn::Shape{n, 15, 80, 1}));
    EXPECT_EQ(tr.temporal, (nn::Shape{n, 7, 80, 16}));
    EXPECT_EQ(tr.spatial, (nn::Shape{n, 2, 1, 20}));
    EXPECT_EQ(tr.flat, 40u);
    EXPECT_EQ(y.shape(), (nn::Shape{n, 2}));
  }
}

TEST(Cnn, InitialLossIsLnTwo) {
  CnnModel<float> m;
  m.init(3);
  const auto w = random_cnn_windows(16, 4);
  EXPECT_NEAR(cnn_mean_loss(m, w), std::log(2.0), 1e-6);
}

TEST(Cnn, BatchedPredictionMatchesOneByOne) {
  CnnModel<float> m;
  m.init(5);
  const auto w = random_cnn_windows(9, 6);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 1;
  auto trained = train_cnn(w, w, cfg).model;
  const auto batched = cnn_predict(trained, w);
  const auto single = cnn_predict(trained, w, 1);
  ASSERT_EQ(batched.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(batched[i], single[i], 1e-6);
}

TEST(Cnn, TrainingBeatsUntrainedF1) {
  ScenarioConfig c;
  c.n_instances = 20;
  auto data = synthesize_dataset(c);
  const auto stats = compute_minmax(data);
  std::vector<CnnWindow> train, val;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (auto& w : make_cnn_windows(normalize(data[i], stats), i < 15 ? 5 : 1, i)) (i < 15 ? train : val).push_back(w);
  auto f1 = [&](const CnnModel<float>& m) {
    const auto p = cnn_predict(m, val);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const bool yhat = p[i] >= 0.5f;
      tp += yhat && val[i].label;
      fp += yhat && !val[i].label;
      fn += !yhat && val[i].label;
    }
    return 2 * tp / (2 * tp + fp + fn);
  };
  CnnModel<float> untrained;
  untrained.init(7);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 25;
  cfg.patience = 25;
  cfg.seed = 7;
  const auto r = train_cnn(train, val, cfg);
  EXPECT_GT(f1(r.model), f1(untrained));
}

TEST(Cnn, RejectsWrongInputShape) {
  CnnModel<float> m;
  EXPECT_THROW(m.logits(nn::Tensor<float>({2, 14, 80, 1})), std::invalid_argument);
  EXPECT_THROW(CnnModel<float>(CnnArch{15, 80, 16, 16, 6, 20, 2}), std::invalid_argument);
}

TEST(LstmModel, EmitsOneOutputPerStep) {
  LstmModel<float> m;
  m.init(1);
  EXPECT_EQ(m.forward(random_input({2, 64, 80}, 1)).shape(), (nn::Shape{128, 2}));
}

TEST(LstmModel, OutputsAreCausal) {
  LstmModel<float> m(LstmArch{3, 4, 3, 2});
  m.init(2);
  auto x = random_input({1, 64, 3}, 2);
  const auto before = m.forward(x);
  x(0, 40, 1) += 0.5f;
  const auto after = m.forward(x);
  for (std::size_t t = 0; t < 64; ++t) {
    if (t < 40) {
      EXPECT_EQ(after(t, 0), before(t, 0)) << t;
      EXPECT_EQ(after(t, 1), before(t, 1)) << t;
    } else if (t == 40) {
      EXPECT_NE(after(t, 0), before(t, 0));
    }
  }
}

TEST(LstmModel, StreamingStepMatchesForward) {
  LstmModel<float> m(LstmArch{5, 6, 4, 2});
  m.init(3);
  const auto x = random_input({1, 20, 5}, 3);
  const auto y = m.forward(x);
  auto st = m.initial_state();
  for (std::size_t t = 0; t < 20; ++t) {
    const auto z = m.step(std::span<const float>(x.data() + 5 * t, 5), st);
    EXPECT_NEAR(z[0], y(t, 0), 1e-6);
    EXPECT_NEAR(z[1], y(t, 1), 1e-6);
  }
}

TEST(LstmModel, TrainingLossDecreasesOnSimulatedData) {
  ScenarioConfig c;
  c.n_instances = 50;
  auto data = synthesize_dataset(c);
  const auto stats = compute_minmax(data);
  std::vector<SequenceExample> seqs;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (auto& s : make_lstm_sequences(normalize(data[i], stats), 56, i)) seqs.push_back(std::move(s));
  TrainConfig cfg;
  cfg.max_epochs = 5;
  const auto r = train_lstm(seqs, seqs, cfg);
  ASSERT_EQ(r.curve.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.curve.epochs[e].train_loss, r.curve.epochs[e - 1].train_loss) << e;
}

TEST(Autoencoder, DimensionsAndFeatures) {
  Autoencoder<float> ae;
  ae.init(1);
  const auto x = random_input({3, 400}, 4);
  EXPECT_EQ(ae.forward(x).shape(), (nn::Shape{3, 400}));
  EXPECT_EQ(ae.encode(x).shape(), (nn::Shape{3, 370}));
  AeWindow w;
  w.vector.assign(x.data(), x.data() + 400);
  const auto f = ae_features(ae, w);
  EXPECT_EQ(f.size(), 371u);
  EXPECT_GE(f.back(), 0.0f);
}

TEST(Autoencoder, LearnsConstantInput) {
  std::vector<AeWindow> windows(32);
  for (auto& w : windows) w.vector.assign(20, 0.5f);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 8;
  cfg.max_epochs = 150;
  cfg.patience = 150;
  const auto r = train_autoencoder(windows, windows, cfg, AutoencoderArch{{20, 10, 5, 10, 20}});
  EXPECT_LT(r.curve.best_val_loss, 1e-4);
  EXPECT_LT(ae_features(r.model, windows[0]).back(), 1e-4f);
}

TEST(Autoencoder, ValidationLossImprovesAndFeaturesAreDeterministic) {
  Rng rng(6);
  std::vector<AeWindow> windows(64);
  for (auto& w : windows) {
    const float level = static_cast<float>(rng.uniform(0.2, 0.8));
    for (int k = 0; k < 40; ++k) w.vector.push_back(level + static_cast<float>(rng.normal(0.0, 0.02)));
  }
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.batch_size = 16;
  const auto r = train_autoencoder(windows, windows, cfg, AutoencoderArch{{40, 20, 10, 20, 40}});
  EXPECT_LE(r.curve.best_val_loss, r.curve.epochs.front().val_loss);
  EXPECT_EQ(ae_features(r.model, windows[3]), ae_features(r.model, windows[3]));
}

TEST(Autoencoder, RejectsAsymmetricWidths) {
  EXPECT_THROW(Autoencoder<float>(AutoencoderArch{{10, 5, 8}}), std::invalid_argument);
  EXPECT_THROW(Autoencoder<float>(AutoencoderArch{{10, 5, 5, 10}}), std::invalid_argument);
}

struct LabeledPoints {
  std::vector<std::vector<float>> x;
  std::vector<std::uint8_t> y;
};

LabeledPoints xor_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  LabeledPoints p;
  for (std::size_t i = 0; i < n; ++i) {
    const float a = static_cast<float>(rng.uniform(0.0, 1.0)), b = static_cast<float>(rng.uniform(0.0, 1.0));
    p.x.push_back({a, b});
    p.y.push_back((a > 0.5f) != (b > 0.5f));
  }
  return p;
}

TEST(RandomForest, SeparatesOneDimensionalThreshold) {
  LabeledPoints p;
  for (int i = 0; i < 100; ++i) {
    p.x.push_back({static_cast<float>(i)});
    p.y.push_back(i >= 50);
  }
  ForestConfig cfg;
  cfg.n_trees = 10;
  const auto f = train_random_forest(p.x, p.y, cfg);
  EXPECT_GT(f.predict_proba(std::vector<float>{90.0f}), 0.9);
  EXPECT_LT(f.predict_proba(std::vector<float>{5.0f}), 0.1);
}

TEST(RandomForest, LearnsXor) {
  const auto train = xor_points(200, 1), test = xor_points(400, 2);
  ForestConfig cfg;
  cfg.n_trees = 100;
  cfg.max_features = 2;
  const auto f = train_random_forest(train.x, train.y, cfg);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.x.size(); ++i) correct += (f.predict_proba(test.x[i]) >= 0.5) == (test.y[i] != 0);
  EXPECT_GE(static_cast<double>(correct) / 400.0, 0.95);
}

TEST(RandomForest, ProbabilityIsMeanOfTreesAndOrderInvariant) {
  const auto p = xor_points(200, 3);
  ForestConfig cfg;
  cfg.n_trees = 17;
  cfg.max_depth = 3;
  auto f = train_random_forest(p.x, p.y, cfg);
  for (std::size_t i = 0; i < 20; ++i) {
    double mean = 0;
    for (const auto& t : f.trees) mean += t.predict(p.x[i]);
    EXPECT_NEAR(f.predict_proba(p.x[i]), mean / 17.0, 1e-12);
  }
  auto reversed = f;
  std::reverse(reversed.trees.begin(), reversed.trees.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(f.predict_proba(p.x[i]), reversed.predict_proba(p.x[i]));
}

DecisionTree pure_leaf(bool attack) {
  DecisionTree t;
  TreeNode leaf;
  (attack ? leaf.count1 : leaf.count0) = 3.0f;
  t.nodes.push_back(leaf);
  return t;
}

TEST(RandomForest, AveragingOracle) {
  RandomForest f;
  f.n_features = 2;
  for (int i = 0; i < 100; ++i) f.trees.push_back(pure_leaf(i % 5 < 3));
  const std::vector<float> x{0.1f, 0.2f};
  EXPECT_DOUBLE_EQ(f.predict_proba(x), 0.6);
  const auto d = f.predict_distribution(x);
  EXPECT_DOUBLE_EQ(d[0] + d[1], 1.0);
  RandomForest all;
  all.n_features = 2;
  for (int i = 0; i < 10; ++i) all.trees.push_back(pure_leaf(true));
  EXPECT_DOUBLE_EQ(all.predict_proba(x), 1.0);
}

TEST(RandomForest, CheckpointRoundTripAndValidation) {
  const auto p = xor_points(100, 4);
  ForestConfig cfg;
  cfg.n_trees = 5;
  const auto f = train_random_forest(p.x, p.y, cfg);
  ModelCheckpoint ck;
  ck.architecture = "ae_rf";
  ck.tensors = f.named_tensors();
  const auto back = RandomForest::from_checkpoint(from_bytes(to_bytes(ck)));
  for (const auto& x : p.x) EXPECT_EQ(back.predict_proba(x), f.predict_proba(x));
  std::vector<std::uint8_t> one_class(p.y.size(), 1);
  EXPECT_THROW(train_random_forest(p.x, one_class, cfg), std::invalid_argument);
}

ModelCheckpoint lstm_checkpoint() {
  LstmModel<float> m(LstmArch{4, 3, 3, 2});
  m.init(9);
  ModelCheckpoint ck;
  ck.architecture = "lstm";
  ck.meta = {{"condition", "80/80"}, {"epochs_run", 3}};
  ck.norm = NormStats{90.0, 190.0};
  ck.tensors = m.named_tensors();
  return ck;
}

void rewrite_crc(std::vector<std::uint8_t>& bytes) {
  bytes.resize(bytes.size() - 4);
  io::put_u32(bytes, crc32_of(bytes.data(), bytes.size()));
}

TEST(Checkpoint, ByteExactRoundTrip) {
  const auto ck = lstm_checkpoint();
  const auto bytes = to_bytes(ck);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "XFCK");
  const auto back = from_bytes(bytes);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(to_bytes(back), bytes);

  LstmModel<float> m(LstmArch{4, 3, 3, 2}), fresh(LstmArch{4, 3, 3, 2});
  m.init(9);
  fresh.load_tensors(back);
  const auto x = random_input({1, 6, 4}, 5);
  EXPECT_EQ(fresh.forward(x).vec(), m.forward(x).vec());
}

TEST(Checkpoint, EveryArchitectureRoundTrips) {
  CnnModel<float> cnn;
  cnn.init(2);
  Autoencoder<float> ae(AutoencoderArch{{12, 6, 4, 6, 12}});
  ae.init(3);
  for (const auto& ck : {ModelCheckpoint{"cnn", {}, NormStats{1, 2}, cnn.named_tensors()},
                         ModelCheckpoint{"ae", {}, NormStats{1, 2}, ae.named_tensors()}}) {
    const auto bytes = to_bytes(ck);
    EXPECT_EQ(to_bytes(from_bytes(bytes)), bytes) << ck.architecture;
  }
  CnnModel<float> cnn2;
  cnn2.load_tensors(from_bytes(to_bytes(ModelCheckpoint{"cnn", {}, {}, cnn.named_tensors()})));
  const auto w = random_cnn_windows(3, 8);
  EXPECT_EQ(cnn_predict(cnn2, w), cnn_predict(cnn, w));
}

TEST(Checkpoint, NormIsOptional) {
  auto ck = lstm_checkpoint();
  ck.norm.reset();
  EXPECT_FALSE(from_bytes(to_bytes(ck)).norm.has_value());
}

CheckpointError::Kind error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    from_bytes(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no CheckpointError thrown";
  return CheckpointError::Kind::io;
}

TEST(Checkpoint, CorruptionIsClassified) {
  const auto good = to_bytes(lstm_checkpoint());
  auto truncated = good;
  truncated.resize(good.size() - 7);
  EXPECT_EQ(error_kind(truncated), CheckpointError::Kind::checksum);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  EXPECT_EQ(error_kind(flipped), CheckpointError::Kind::checksum);

  auto version = good;
  version[4] = 2;
  rewrite_crc(version);
  EXPECT_EQ(error_kind(version), CheckpointError::Kind::version);

  auto magic = good;
  magic[0] = 'Z';
  EXPECT_EQ(error_kind(magic), CheckpointError::Kind::format);

  EXPECT_THROW(load_checkpoint("/nonexistent/x.xfck"), CheckpointError);
}

TEST(Checkpoint, WrongShapeRejectedOnLoad) {
  auto ck = lstm_checkpoint();
  LstmModel<float> bigger(LstmArch{4, 5, 3, 2});
  EXPECT_THROW(bigger.load_tensors(ck), CheckpointError);
}

struct Toy {
  nn::Parameter<double> w{"w", nn::Tensor<double>({1}, 0.0)};
  std::vector<nn::Parameter<double>*> parameters() { return {&w}; }
};

TEST(EarlyStopping, RestoresLowestValidationModel) {
  Toy toy;
  const std::vector<double> scripted{5, 4, 2, 3, 3.5, 2.5, 6, 7};
  std::vector<double> w_at_epoch;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 4;
  cfg.max_epochs = 8;
  cfg.patience = 4;
  auto step = [](Toy& m, std::span<const std::size_t>) {
    m.w.grad[0] = -1.0;
    return 1.0;
  };
  auto validate = [&](Toy& m) {
    w_at_epoch.push_back(m.w.value[0]);
    return scripted[w_at_epoch.size() - 1];
  };
  const auto curve = train_early_stopping<double, Toy>(toy, 8, cfg, step, validate);
  EXPECT_EQ(curve.best_epoch, 3u);
  EXPECT_TRUE(curve.stopped_early);
  EXPECT_EQ(curve.epochs.size(), 7u);
  EXPECT_EQ(toy.w.value[0], w_at_epoch[2]);
  EXPECT_DOUBLE_EQ(curve.best_val_loss, 2.0);
}

TEST(EarlyStopping, NoTrailingSingletonBatch) {
  Toy toy;
  std::vector<std::size_t> sizes;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 1;
  auto step = [&](Toy&, std::span<const std::size_t> b) {
    sizes.push_back(b.size());
    return 0.0;
  };
  train_early_stopping<double, Toy>(toy, 9, cfg, step, [](Toy&) { return 0.0; });
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 5}));
}

}  // namespace
