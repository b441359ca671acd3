// Analytic gradients of the pretraining and classification graphs against
// central finite differences in double precision.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "ajepa/finetune.hpp"
#include "ajepa/model.hpp"
#include "ajepa/pretrain.hpp"

#include "gradcheck_util.hpp"

namespace ajepa {
namespace {

TEST(GradCheck, PretrainGraphMatchesFiniteDifferences) {
  testutil::ToyProblem toy(11);
  const MaskPlan plan = toy.plan();

  auto loss_fn = [&] {
    return sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                                 TargetNorm::layernorm, 1.0, nullptr, nullptr);
  };
  ParamStore<double> context_grads = toy.context.zeros_like();
  ParamStore<double> predictor_grads = toy.predictor.zeros_like();
  sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                        TargetNorm::layernorm, 1.0, &context_grads, &predictor_grads);

  const auto enc = testutil::check_store(toy.context, context_grads, loss_fn, 5, 1);
  const auto pred = testutil::check_store(toy.predictor, predictor_grads, loss_fn, 5, 2);
  EXPECT_LT(enc.worst_rel, 1e-4) << enc.worst_name;
  EXPECT_LT(pred.worst_rel, 1e-4) << pred.worst_name;
  EXPECT_EQ(enc.arrays_checked, toy.context.size());
  EXPECT_EQ(pred.arrays_checked, toy.predictor.size());
}

TEST(GradCheck, TargetEncoderReceivesNoGradientYetAffectsLoss) {
  testutil::ToyProblem toy(12);
  const MaskPlan plan = toy.plan();
  auto loss_fn = [&] {
    return sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                                 TargetNorm::layernorm, 1.0, nullptr, nullptr);
  };
  // Perturbing a target weight moves the loss...
  double& w = toy.target.at("enc.patch_proj.w")(0, 0);
  const double base = loss_fn();
  w += 1e-2;
  EXPECT_NE(loss_fn(), base);
  w -= 1e-2;
  // ...but the backward pass has no store to write target gradients into, and
  // the target weights are bit-identical after it.
  const ParamStore<double> before = toy.target;
  ParamStore<double> cg = toy.context.zeros_like();
  ParamStore<double> pg = toy.predictor.zeros_like();
  sample_loss_and_grads(toy.grid, plan, toy.geo, toy.context, toy.target, toy.predictor,
                        TargetNorm::layernorm, 1.0, &cg, &pg);
  EXPECT_TRUE(toy.target == before);
}

TEST(GradCheck, ClassifierWithRegularizedMaskingMatchesFiniteDifferences) {
  testutil::ToyProblem toy(13);
  Rng head_rng(5);
  ParamStore<double> head = init_head<double>(toy.geo.cfg.embed_dim, 3, 0.5, head_rng);
  const RMConfig rm{0.25, true, false};

  auto forward = [&](EncoderCache<double>* cache) {
    Rng rng(99);  // same RM draw on every evaluation
    return rm_forward(toy.grid, toy.geo, toy.context, rm, rng, cache);
  };
  auto loss_fn = [&] {
    return softmax_cross_entropy(classify(forward(nullptr), head), 1, nullptr);
  };

  EncoderCache<double> cache;
  const RowVec<double> pooled = forward(&cache);
  RowVec<double> d_logits;
  softmax_cross_entropy(classify(pooled, head), 1, &d_logits);
  ParamStore<double> head_grads = head.zeros_like();
  head_grads.at("head.w") = pooled.transpose() * d_logits;
  head_grads.at("head.b") = d_logits;
  ParamStore<double> enc_grads = toy.context.zeros_like();
  const RowVec<double> d_pooled = d_logits * head.at("head.w").transpose();
  const auto n = static_cast<Eigen::Index>(toy.geo.grid.size());
  encoder_backward(toy.geo, toy.context, cache, Mat<double>(d_pooled.replicate(n, 1) / static_cast<double>(n)),
                   enc_grads);

  const auto h = testutil::check_store(head, head_grads, loss_fn, 5, 3);
  const auto e = testutil::check_store(toy.context, enc_grads, loss_fn, 5, 4);
  EXPECT_LT(h.worst_rel, 1e-4) << h.worst_name;
  EXPECT_LT(e.worst_rel, 1e-4) << e.worst_name;
}

TEST(GradCheck, MultiLabelObjectiveMatchesFiniteDifferences) {
  Rng rng(3);
  RowVec<double> logits(4);
  for (int i = 0; i < 4; ++i) logits(i) = rng.uniform(-3, 3);
  RowVec<double> grad;
  sigmoid_bce(logits, {0, 2}, &grad);
  for (int i = 0; i < 4; ++i) {
    RowVec<double> up = logits;
    RowVec<double> down = logits;
    up(i) += 1e-5;
    down(i) -= 1e-5;
    const double fd = (sigmoid_bce<double>(up, {0, 2}, nullptr) - sigmoid_bce<double>(down, {0, 2}, nullptr)) / 2e-5;
    EXPECT_NEAR(grad(i), fd, 1e-8);
  }
}

}  // namespace
}  // namespace ajepa
