#include <gtest/gtest.h>

#include <cmath>

#include "dtdbd/training.hpp"
#include "oracle_models.hpp"

using namespace dtdbd;

namespace {

EncoderConfig tiny_conv() {
  EncoderConfig c;
  c.kernel_widths = {1, 3};
  c.channels_per_kernel = 4;
  return c;
}

struct Splits {
  Dataset train, val;
};

const Splits& small_data() {
  static const Splits s = [] {
    auto sp = split(generate_synthetic(SyntheticSpec::table1(400, 11)), 0.8, 0.1, 0.1, 11);
    return Splits{sp.train, sp.val};
  }();
  return s;
}

TrainConfig quick(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  c.batch_size = 32;
  c.seed = 5;
  c.patience = 0;
  return c;
}

ModelParams scalar_param(double v) {
  ModelParams p;
  p.tensors.emplace("w", Tensor::scalar(v));
  return p;
}

}  // namespace

// ---- optimizer ----

TEST(Optimizer, SgdStep) {
  auto p = scalar_param(1.0);
  OptimizerState st;
  TrainConfig c;
  c.optimizer = OptimizerKind::sgd;
  c.learning_rate = 0.1;
  optimizer_step(p, {{"w", Tensor::scalar(0.5)}}, st, c);
  EXPECT_EQ(p.at("w")[0], 0.95);
}

TEST(Optimizer, ZeroGradientLeavesParams) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto p = scalar_param(0.3);
    OptimizerState st;
    TrainConfig c;
    c.optimizer = kind;
    optimizer_step(p, {{"w", Tensor::scalar(0.0)}}, st, c);
    EXPECT_EQ(p.at("w")[0], 0.3);
  }
}

TEST(Optimizer, AdamFirstStepIsLearningRate) {
  for (double g : {1e-3, 1.0, 1e3}) {
    auto p = scalar_param(0.0);
    OptimizerState st;
    TrainConfig c;
    c.learning_rate = 1e-2;
    optimizer_step(p, {{"w", Tensor::scalar(g)}}, st, c);
    EXPECT_NEAR(p.at("w")[0], -1e-2, 1e-6);
  }
}

TEST(Optimizer, NanGradientNamesParameter) {
  auto p = scalar_param(0.0);
  OptimizerState st;
  try {
    optimizer_step(p, {{"w", Tensor({1}, std::nan(""))}}, st, TrainConfig{});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
  EXPECT_EQ(p.at("w")[0], 0.0);
}

// ---- evaluation ----

TEST(Evaluate, LabelOracleIsPerfectAndUnbiased) {
  const auto ds = dtdbd::testing::leaked_label_dataset(3, 5);
  const auto r = evaluate(dtdbd::testing::label_oracle_model(3), ds);
  EXPECT_EQ(r.overall_f1, 1.0);
  EXPECT_EQ(r.fned, 0.0);
  EXPECT_EQ(r.fped, 0.0);
}

TEST(Evaluate, DomainSplitPredictorOnToy) {
  const auto r = evaluate(dtdbd::testing::domain_split_model(), dtdbd::testing::two_domain_toy());
  EXPECT_DOUBLE_EQ(r.total, 2.0);
}

TEST(Evaluate, ConstantPredictorHasNoBias) {
  auto p = dtdbd::testing::domain_split_model();
  p.tensors.at(param_names::label_bias) = Tensor::vector({0.0, 5.0});
  const auto r = evaluate(p, dtdbd::testing::two_domain_toy());
  EXPECT_EQ(r.total, 0.0);
  EXPECT_DOUBLE_EQ(r.overall_fpr, 1.0);
}

TEST(Evaluate, Pure) {
  const auto p = init_params(tiny_conv(), 9, 1);
  const auto a = evaluate(p, small_data().val), b = evaluate(p, small_data().val);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(a.overall_f1, b.overall_f1);
}

TEST(Evaluate, ShapeMismatch) {
  EXPECT_THROW(evaluate(dtdbd::testing::label_oracle_model(3), small_data().val), ShapeError);
}

// ---- trainers ----

TEST(Training, ZeroLearningRateKeepsParams) {
  const auto& d = small_data();
  auto c = quick();
  c.learning_rate = 0.0;
  const auto init = init_params(tiny_conv(), 9, c.seed);
  EXPECT_EQ(train_ce_baseline(tiny_conv(), d.train, d.val, c).last, init);
  c.mode = TrainMode::dat_ie;
  EXPECT_EQ(train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{}).last, init);
  EXPECT_EQ(train_clean_teacher(tiny_conv(), d.train, d.val, c).last,
            init_params(clean_teacher_config(tiny_conv()), 9, c.seed));
}

TEST(Training, DeterministicCheckpoints) {
  const auto& d = small_data();
  auto c = quick(1);
  c.mode = TrainMode::dat_ie;
  const auto a = train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{});
  const auto b = train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{});
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(train_clean_teacher(tiny_conv(), d.train, d.val, c).best,
            train_clean_teacher(tiny_conv(), d.train, d.val, c).best);
}

TEST(Training, LossesFiniteAndParamsMove) {
  const auto& d = small_data();
  const auto r = train_ce_baseline(tiny_conv(), d.train, d.val, quick());
  for (const auto& e : r.history)
    for (double v : e.step_losses) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NE(r.last.checksum(), init_params(tiny_conv(), 9, 5).checksum());
}

TEST(Training, UnbiasedTeacherNeedsTwoDomains) {
  Dataset one{1, 32, Layout::vector, 0, {{"a", 0, 1, std::vector<double>(32, 0.0)}}};
  auto c = quick();
  c.mode = TrainMode::dat_ie;
  EXPECT_THROW(train_unbiased_teacher(tiny_conv(), one, one, c, DistillConfig{}), ConfigError);
  c.mode = TrainMode::ce_baseline;
  EXPECT_THROW(train_unbiased_teacher(tiny_conv(), small_data().train, small_data().val, c, DistillConfig{}),
               ConfigError);
}

TEST(Training, DatModeDropsEntropyTerm) {
  const auto& d = small_data();
  auto c = quick(1);
  c.mode = TrainMode::dat;
  const auto dat = train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{}).history[0];
  EXPECT_NEAR(dat.loss_total, dat.loss_ce + dat.loss_domain, 1e-12);
  c.mode = TrainMode::dat_ie;
  const auto ie = train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{}).history[0];
  EXPECT_NEAR(ie.loss_total, ie.loss_ce + ie.loss_domain + 0.2 * ie.loss_entropy, 1e-12);
  EXPECT_LT(ie.loss_entropy, 0.0);
}

// ---- student ----

namespace {

struct Teachers {
  ModelParams unbiased, clean;
};

const Teachers& teachers() {
  static const Teachers t = [] {
    const auto& d = small_data();
    auto c = quick(1);
    c.mode = TrainMode::dat_ie;
    return Teachers{train_unbiased_teacher(tiny_conv(), d.train, d.val, c, DistillConfig{}).best,
                    train_clean_teacher(tiny_conv(), d.train, d.val, c).best};
  }();
  return t;
}

}  // namespace

TEST(Student, ZeroDistillationWeightsReproduceCeBaseline) {
  const auto& d = small_data();
  auto c = quick(3);
  const auto base = train_ce_baseline(tiny_conv(), d.train, d.val, c);
  c.mode = TrainMode::dtdbd;
  c.fixed_weights = LossWeights{0.0, 0.0, 1.0};
  const auto st = train_student_dtdbd(tiny_conv(), d.train, d.val, teachers().unbiased, teachers().clean, c,
                                      DistillConfig{}, DaaConfig{});
  ASSERT_EQ(base.history.size(), st.history.size());
  for (std::size_t e = 0; e < base.history.size(); ++e) {
    EXPECT_EQ(base.history[e].step_losses, st.history[e].step_losses) << "epoch " << e;
    EXPECT_EQ(base.history[e].param_checksum, st.history[e].param_checksum) << "epoch " << e;
  }
  EXPECT_EQ(base.last, st.last);
}

TEST(Student, TeachersNeverMutated) {
  const auto& d = small_data();
  const auto before_u = teachers().unbiased.checksum(), before_c = teachers().clean.checksum();
  auto c = quick(2);
  c.mode = TrainMode::dtdbd;
  train_student_dtdbd(tiny_conv(), d.train, d.val, teachers().unbiased, teachers().clean, c, DistillConfig{},
                      DaaConfig{});
  EXPECT_EQ(teachers().unbiased.checksum(), before_u);
  EXPECT_EQ(teachers().clean.checksum(), before_c);
}

TEST(Student, TeacherGradientIsolation) {
  const auto& d = small_data();
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  const Tensor in = batch_input(tiny_conv(), d.train, idx);
  const auto labels = gather(d.train.labels(), idx), domains = gather(d.train.domains(), idx);
  // Teachers bound as if trainable; the objective must still cut them off.
  BoundParams tu(teachers().unbiased, true), tc(teachers().clean, true);
  auto tf = encode(tu, ad::Var::constant(in));
  auto tl = label_logits(tc, encode(tc, ad::Var::constant(in)), domains);

  const auto sp = init_params(tiny_conv(), 9, 3);
  BoundParams frozen_student(sp, false);
  auto l = distill_objective(frozen_student, in, labels, domains, tf, tl, {0.5, 0.5, 1.0}, DistillConfig{});
  EXPECT_TRUE(ad::backward(l.total).empty());

  BoundParams student(sp, true);
  auto g = ad::backward(distill_objective(student, in, labels, domains, tf, tl, {0.5, 0.5, 1.0}, DistillConfig{}).total);
  EXPECT_FALSE(g.empty());
  for (const auto& [name, t] : teachers().unbiased.tensors) EXPECT_FALSE(tu[name].node()->grad_ready) << name;
  for (const auto& [name, t] : teachers().clean.tensors) EXPECT_FALSE(tc[name].node()->grad_ready) << name;
}

TEST(Student, EncoderMismatchRejected) {
  const auto& d = small_data();
  auto other = tiny_conv();
  other.channels_per_kernel = 5;
  auto c = quick(1);
  c.mode = TrainMode::dtdbd;
  EXPECT_THROW(train_student_dtdbd(other, d.train, d.val, teachers().unbiased, teachers().clean, c, DistillConfig{},
                                   DaaConfig{}),
               ConfigError);
}

TEST(Student, DaaTrajectoryRecorded) {
  const auto& d = small_data();
  auto c = quick(4);
  c.mode = TrainMode::dtdbd;
  const auto r = train_student_dtdbd(tiny_conv(), d.train, d.val, teachers().unbiased, teachers().clean, c,
                                     DistillConfig{}, DaaConfig{});
  ASSERT_EQ(r.history.size(), 4u);
  EXPECT_EQ(r.history[0].omega_add, 0.5);
  EXPECT_EQ(r.history[1].omega_add, 0.5);
  // Epoch 2 uses the update computed from the first two validation results.
  const auto expect = update_distill_weights(DistillState::initial({}),
                                             {r.history[1].val_f1 - r.history[0].val_f1,
                                              r.history[1].val_total - r.history[0].val_total},
                                             DaaConfig{});
  EXPECT_EQ(r.history[2].omega_add, expect.omega_add);
  for (const auto& e : r.history) EXPECT_EQ(e.omega_add + e.omega_dkd, 1.0);
}

TEST(Student, NoDaaKeepsWeightsFixed) {
  const auto& d = small_data();
  auto c = quick(3);
  c.mode = TrainMode::dtdbd_no_daa;
  const auto r = train_student_dtdbd(tiny_conv(), d.train, d.val, teachers().unbiased, teachers().clean, c,
                                     DistillConfig{}, DaaConfig{});
  for (const auto& e : r.history) {
    EXPECT_EQ(e.omega_add, 0.5);
    EXPECT_EQ(e.omega_dkd, 0.5);
  }
}

TEST(Student, InitialWeightsPerMode) {
  const DaaConfig daa;
  EXPECT_EQ(initial_weights(TrainMode::add_only, daa).dkd, 0.0);
  EXPECT_EQ(initial_weights(TrainMode::dnd_only, daa).add, 0.0);
  EXPECT_THROW(initial_weights(TrainMode::dat, daa), ConfigError);
}

TEST(Logs, MetricsCsvShape) {
  const auto& d = small_data();
  const auto r = train_ce_baseline(tiny_conv(), d.train, d.val, quick(2));
  const auto test = evaluate(r.best, d.val);
  const auto csv = metrics_csv(r, &test);
  EXPECT_EQ(csv.rfind(kMetricsCsvHeader, 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find(",test,"), std::string::npos);
}
