// Copyright 2026 The PLPCL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "plpcl/losses.hpp"
#include "test_util.hpp"

namespace plpcl {
namespace {

using namespace plpcl::testing;

const double kOrthoTwin = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));  // ~0.5514

double scl_value(const Matrix& f, const Matrix& fa, const SupervisionMask& mask, double tau, SclPool pool) {
  Tape t;
  return scl_loss(t.constant(f), t.constant(fa), mask, tau, pool).scalar();
}

// ---- SCL --------------------------------------------------------------------

TEST(Scl, LonePositiveIdenticalFeaturesIsZero) {
  const Matrix f{{1, 0}, {1, 0}};
  const SupervisionMask mask{Supervision::labeled(0), Supervision::labeled(0)};
  EXPECT_NEAR(scl_value(f, f, mask, 1.0, SclPool::Single), 0.0, 1e-15);
}

TEST(Scl, NoPositivesIsZero) {
  const Matrix f{{1, 0}, {0, 1}};
  const SupervisionMask mask{Supervision::labeled(0), Supervision::labeled(1)};
  EXPECT_EQ(scl_value(f, f, mask, 1.0, SclPool::Single), 0.0);
}

TEST(Scl, PairedPoolCountsTwinAsPositive) {
  // Same two distinct-label rows, but each now has its dropout twin.
  const Matrix f{{1, 0}, {0, 1}};
  const SupervisionMask mask{Supervision::labeled(0), Supervision::labeled(1)};
  EXPECT_NEAR(scl_value(f, f, mask, 1.0, SclPool::Paired), kOrthoTwin, 1e-12);
}

TEST(Scl, ThreeSampleOracle) {
  std::mt19937_64 rng(31);
  const Matrix f = random_unit_rows(3, 4, rng), fa = random_unit_rows(3, 4, rng);
  const SupervisionMask mask{Supervision::labeled(0), Supervision::labeled(0), Supervision::labeled(1)};
  const auto labels = to_labels(mask);
  EXPECT_NEAR(scl_value(f, fa, mask, 0.5, SclPool::Single), oracle::scl(to_rows(f), to_rows(fa), labels, 0.5, false),
              1e-10);
  EXPECT_NEAR(scl_value(f, fa, mask, 0.5, SclPool::Paired), oracle::scl(to_rows(f), to_rows(fa), labels, 0.5, true),
              1e-10);
}

TEST(Scl, PseudoLabelsAreSupervision) {
  std::mt19937_64 rng(32);
  const Matrix f = random_unit_rows(4, 3, rng), fa = random_unit_rows(4, 3, rng);
  const SupervisionMask a{Supervision::labeled(0), Supervision::pseudo(0), Supervision::unlabeled(),
                          Supervision::pseudo(1)};
  SupervisionMask b = a;
  b[1] = Supervision::labeled(0);
  b[3] = Supervision::labeled(1);
  EXPECT_EQ(scl_value(f, fa, a, 0.5, SclPool::Paired), scl_value(f, fa, b, 0.5, SclPool::Paired));
}

TEST(Scl, NoSupervisedRowsIsEmptyBatch) {
  const Matrix f{{1, 0}};
  EXPECT_EQ(error_code_of([&] { scl_value(f, f, {Supervision::unlabeled()}, 0.5, SclPool::Paired); }),
            ErrorCode::EmptyBatch);
}

TEST(Scl, MaskLengthMismatch) {
  const Matrix f{{1, 0}, {0, 1}};
  EXPECT_EQ(error_code_of([&] { scl_value(f, f, {Supervision::labeled(0)}, 0.5, SclPool::Paired); }),
            ErrorCode::LengthMismatch);
}

// ---- ILCL -------------------------------------------------------------------

double ilcl_value(const Matrix& f, const Matrix& fa, const SupervisionMask& mask, double tau) {
  Tape t;
  return ilcl_loss(t.constant(f), t.constant(fa), mask, tau).scalar();
}

TEST(Ilcl, SingleSampleIsZero) {
  const Matrix f{{0.6, 0.8}};
  EXPECT_NEAR(ilcl_value(f, f, {Supervision::unlabeled()}, 1.0), 0.0, 1e-15);
}

TEST(Ilcl, OrthogonalPair) {
  const Matrix f{{1, 0}, {0, 1}};
  EXPECT_NEAR(ilcl_value(f, f, {Supervision::unlabeled(), Supervision::unlabeled()}, 1.0), kOrthoTwin, 1e-12);
  EXPECT_NEAR(kOrthoTwin, 0.5514, 1e-4);
}

TEST(Ilcl, FourSampleOracle) {
  std::mt19937_64 rng(33);
  const Matrix f = random_unit_rows(4, 5, rng), fa = random_unit_rows(4, 5, rng);
  const SupervisionMask mask(4, Supervision::unlabeled());
  EXPECT_NEAR(ilcl_value(f, fa, mask, 0.5), oracle::ilcl(to_rows(f), to_rows(fa), to_labels(mask), 0.5), 1e-10);
}

TEST(Ilcl, IgnoresSupervisedRows) {
  std::mt19937_64 rng(34);
  const Matrix f = random_unit_rows(5, 3, rng), fa = random_unit_rows(5, 3, rng);
  const SupervisionMask mask{Supervision::labeled(0), Supervision::unlabeled(), Supervision::pseudo(1),
                             Supervision::unlabeled(), Supervision::unlabeled()};
  EXPECT_NEAR(ilcl_value(f, fa, mask, 0.5), oracle::ilcl(to_rows(f), to_rows(fa), to_labels(mask), 0.5), 1e-10);
}

// ---- CLCL -------------------------------------------------------------------

double clcl_value(const Matrix& g, const Matrix& ga, const std::vector<std::size_t>& cols, double tau) {
  Tape t;
  return clcl_loss(t.constant(g), t.constant(ga), cols, tau).scalar();
}

TEST(Clcl, HardDisjointClusters) {
  const Matrix g{{1, 0}, {0, 1}, {1, 0}};
  EXPECT_NEAR(clcl_value(g, g, {0, 1}, 1.0), kOrthoTwin, 1e-12);
}

TEST(Clcl, SingleColumnRejected) {
  const Matrix g{{0.5, 0.5}};
  EXPECT_EQ(error_code_of([&] { clcl_value(g, g, {1}, 1.0); }), ErrorCode::TooFewClusters);
}

TEST(Clcl, ZeroColumnRejected) {
  const Matrix g{{1, 0}, {1, 0}};
  EXPECT_EQ(error_code_of([&] { clcl_value(g, g, {0, 1}, 1.0); }), ErrorCode::ZeroColumn);
}

TEST(Clcl, RandomOracle) {
  std::mt19937_64 rng(35);
  const Matrix g = random_simplex_rows(6, 3, rng), ga = random_simplex_rows(6, 3, rng);
  EXPECT_NEAR(clcl_value(g, ga, {0, 1, 2}, 0.5), oracle::clcl(to_rows(g), to_rows(ga), {0, 1, 2}, 0.5), 1e-10);
  const Matrix h = random_simplex_rows(6, 5, rng), ha = random_simplex_rows(6, 5, rng);
  EXPECT_NEAR(clcl_value(h, ha, {2, 3, 4}, 0.5), oracle::clcl(to_rows(h), to_rows(ha), {2, 3, 4}, 0.5), 1e-10);
}

// ---- CE ---------------------------------------------------------------------

double ce_value(const Matrix& g, const SupervisionMask& mask) {
  Tape t;
  return ce_loss(t.constant(g), mask).scalar();
}

TEST(Ce, OneHotIsZero) { EXPECT_EQ(ce_value(Matrix{{0, 1, 0}}, {Supervision::labeled(1)}), 0.0); }

TEST(Ce, UniformIsLogK) {
  EXPECT_NEAR(ce_value(Matrix{{0.25, 0.25, 0.25, 0.25}}, {Supervision::labeled(2)}), std::log(4.0), 1e-15);
}

TEST(Ce, ThreeSampleValue) {
  const Matrix g{{0.7, 0.3}, {0.2, 0.8}, {0.5, 0.5}};
  const SupervisionMask mask{Supervision::labeled(0), Supervision::labeled(1), Supervision::labeled(0)};
  const double expected = (-std::log(0.7) - std::log(0.8) - std::log(0.5)) / 3.0;
  EXPECT_NEAR(ce_value(g, mask), expected, 1e-15);
  EXPECT_NEAR(expected, 0.4243, 1e-4);
}

TEST(Ce, ZeroProbabilityIsClamped) {
  const double v = ce_value(Matrix{{1, 0}}, {Supervision::labeled(1)});
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(Ce, LabelOutOfRange) {
  EXPECT_EQ(error_code_of([] { ce_value(Matrix{{0.5, 0.5}}, {Supervision::labeled(2)}); }),
            ErrorCode::LabelOutOfRange);
}

// ---- PCL --------------------------------------------------------------------

double pcl_value(const Matrix& m, const Matrix& ma, double tau) {
  Tape t;
  return pcl_loss(t.constant(m), t.constant(ma), tau).scalar();
}

TEST(Pcl, OrthonormalPrototypes) { EXPECT_NEAR(pcl_value(Matrix::identity(2), Matrix::identity(2), 1.0), kOrthoTwin, 1e-12); }

TEST(Pcl, SinglePrototypeRejected) {
  EXPECT_EQ(error_code_of([] { pcl_value(Matrix{{1, 0}}, Matrix{{1, 0}}, 1.0); }), ErrorCode::TooFewClusters);
}

TEST(Pcl, RandomOracle) {
  std::mt19937_64 rng(36);
  const Matrix m = random_unit_rows(4, 6, rng), ma = random_unit_rows(4, 6, rng);
  EXPECT_NEAR(pcl_value(m, ma, 0.5), oracle::nt_xent(to_rows(m), to_rows(ma), 0.5), 1e-10);
}

// ---- total ------------------------------------------------------------------

TEST(Total, UnitWeightsSum) {
  Tape t;
  LossParts parts;
  const double vals[] = {0.1, 0.3, 0.2, 0.4, 0.5};  // scl, ce, ilcl, clcl, pcl
  for (std::size_t i = 0; i < kNumLossTerms; ++i) parts.terms[i] = t.constant(Matrix{{vals[i]}});
  LossConfig cfg;
  EXPECT_NEAR(total_loss(t, parts, cfg).scalar(), 1.5, 1e-15);
  cfg.weight(LossTerm::Scl) = 2.0;
  EXPECT_NEAR(total_loss(t, parts, cfg).scalar(), 1.6, 1e-15);
  cfg.weight(LossTerm::Pcl) = 0.0;
  EXPECT_NEAR(total_loss(t, parts, cfg).scalar(), 1.1, 1e-15);
}

TEST(Total, AllAbsentIsZero) {
  Tape t;
  EXPECT_EQ(total_loss(t, LossParts{}, LossConfig{}).scalar(), 0.0);
}

TEST(Total, ZeroWeightTermGetsNoGradient) {
  Tape t;
  Var a = t.param(Matrix{{2.0}}), b = t.param(Matrix{{3.0}});
  LossParts parts;
  parts[LossTerm::Scl] = ad::mul(a, a);
  parts[LossTerm::Pcl] = ad::mul(b, b);
  LossConfig cfg;
  cfg.weight(LossTerm::Pcl) = 0.0;
  const std::vector<Var> ps{a, b};
  const auto g = grad_of(t, total_loss(t, parts, cfg), ps);
  EXPECT_EQ(g[0](0, 0), 4.0);
  EXPECT_EQ(g[1](0, 0), 0.0);
}

TEST(Total, TermNamesRoundTrip) {
  for (LossTerm term : kLossTermOrder) EXPECT_EQ(parse_loss_term(loss_term_name(term)), term);
  EXPECT_FALSE(parse_loss_term("xyz"));
}

TEST(Config, RejectsBadValues) {
  LossConfig c;
  c.tau = 0.0;
  EXPECT_EQ(error_code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
  c.tau = 0.5;
  c.weight(LossTerm::Ce) = -1.0;
  EXPECT_EQ(error_code_of([&] { c.validate(); }), ErrorCode::InvalidConfig);
}

// ---- properties -------------------------------------------------------------

TEST(LossProperties, BatchOrderDoesNotMatter) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng() % 5;
    const Matrix f = random_unit_rows(n, 4, rng), fa = random_unit_rows(n, 4, rng);
    const Matrix g = random_simplex_rows(n, 3, rng), ga = random_simplex_rows(n, 3, rng);
    SupervisionMask mask = random_mask(n, 3, rng);
    mask[0] = Supervision::labeled(0);
    mask[1] = Supervision::unlabeled();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    SupervisionMask pmask;
    for (std::size_t i : perm) pmask.push_back(mask[i]);
    const Matrix pf = select_rows(f, perm), pfa = select_rows(fa, perm), pg = select_rows(g, perm),
                 pga = select_rows(ga, perm);
    EXPECT_NEAR(scl_value(f, fa, mask, 0.5, SclPool::Paired), scl_value(pf, pfa, pmask, 0.5, SclPool::Paired), 1e-12);
    EXPECT_NEAR(ilcl_value(f, fa, mask, 0.5), ilcl_value(pf, pfa, pmask, 0.5), 1e-12);
    EXPECT_NEAR(clcl_value(g, ga, {0, 1, 2}, 0.5), clcl_value(pg, pga, {0, 1, 2}, 0.5), 1e-12);
    EXPECT_NEAR(ce_value(g, mask), ce_value(pg, pmask), 1e-12);
  }
}

TEST(LossProperties, SinglePositiveLossesAreNonNegative) {
  std::mt19937_64 rng(38);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    const Matrix f = random_unit_rows(n, 3, rng), fa = random_unit_rows(n, 3, rng);
    EXPECT_GE(ilcl_value(f, fa, SupervisionMask(n, Supervision::unlabeled()), 0.1 + 0.9 * (trial % 3) / 2.0), 0.0);
  }
}

// ---- gradients --------------------------------------------------------------

class LossGrad : public ::testing::TestWithParam<double> {};

TEST_P(LossGrad, SclThroughNormalization) {
  const double tau = GetParam();
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 3; ++trial) {
    SupervisionMask mask = random_mask(6, 2, rng);
    mask[0] = Supervision::labeled(1);
    const auto r = check_gradients(
        [&](Tape&, const std::vector<Var>& v) {
          return scl_loss(ad::l2_normalize_rows(v[0]), ad::l2_normalize_rows(v[1]), mask, tau, SclPool::Paired);
        },
        {random_matrix(6, 4, rng), random_matrix(6, 4, rng)});
    EXPECT_TRUE(r.ok()) << "rel " << r.max_rel_error << " abs " << r.max_abs_error;
  }
}

TEST_P(LossGrad, IlclThroughNormalization) {
  const double tau = GetParam();
  std::mt19937_64 rng(41);
  const SupervisionMask mask = SupervisionMask(5, Supervision::unlabeled());
  const auto r = check_gradients(
      [&](Tape&, const std::vector<Var>& v) {
        return ilcl_loss(ad::l2_normalize_rows(v[0]), ad::l2_normalize_rows(v[1]), mask, tau);
      },
      {random_matrix(5, 4, rng), random_matrix(5, 4, rng)});
  EXPECT_TRUE(r.ok()) << "rel " << r.max_rel_error << " abs " << r.max_abs_error;
}

TEST_P(LossGrad, ClclThroughSoftmax) {
  const double tau = GetParam();
  std::mt19937_64 rng(42);
  const auto r = check_gradients(
      [&](Tape&, const std::vector<Var>& v) {
        return clcl_loss(ad::softmax_rows(v[0]), ad::softmax_rows(v[1]), {1, 2, 3}, tau);
      },
      {random_matrix(6, 4, rng), random_matrix(6, 4, rng)});
  EXPECT_TRUE(r.ok()) << "rel " << r.max_rel_error << " abs " << r.max_abs_error;
}

TEST_P(LossGrad, CeThroughSoftmax) {
  std::mt19937_64 rng(43);
  const SupervisionMask mask{Supervision::labeled(0), Supervision::unlabeled(), Supervision::pseudo(2)};
  const auto r = check_gradients(
      [&](Tape&, const std::vector<Var>& v) { return ce_loss(ad::softmax_rows(v[0]), mask); },
      {random_matrix(3, 3, rng)});
  EXPECT_TRUE(r.ok()) << "rel " << r.max_rel_error << " abs " << r.max_abs_error;
}

TEST_P(LossGrad, PclThroughNormalization) {
  const double tau = GetParam();
  std::mt19937_64 rng(44);
  const auto r = check_gradients(
      [&](Tape&, const std::vector<Var>& v) {
        return pcl_loss(ad::l2_normalize_rows(v[0]), ad::l2_normalize_rows(v[1]), tau);
      },
      {random_matrix(3, 5, rng), random_matrix(3, 5, rng)});
  EXPECT_TRUE(r.ok()) << "rel " << r.max_rel_error << " abs " << r.max_abs_error;
}

INSTANTIATE_TEST_SUITE_P(Temperatures, LossGrad, ::testing::Values(0.1, 0.5, 1.0));

}  // namespace
}  // namespace plpcl
