#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "smcgcn/signal_ingest.hpp"

using namespace smcgcn;

namespace {

Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// Textbook Pearson: sum((x - mx)(y - my)) / sqrt(sum((x - mx)^2) sum((y - my)^2)).
double pearson_oracle(const Matrix& w, Index a, Index b) {
  const Index n = w.cols();
  double ma = 0, mb = 0;
  for (Index t = 0; t < n; ++t) {
    ma += w(a, t);
    mb += w(b, t);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (Index t = 0; t < n; ++t) {
    sab += (w(a, t) - ma) * (w(b, t) - mb);
    saa += (w(a, t) - ma) * (w(a, t) - ma);
    sbb += (w(b, t) - mb) * (w(b, t) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<Index> brute_force_starts(Index n, Index gamma, Index s) {
  std::vector<Index> out;
  for (Index start = 0; start < n; ++start)
    if (start + gamma <= n && start % s == 0) out.push_back(start);
  return out;
}

}  // namespace

TEST(SlidingWindows, CountsAndStarts) {
  auto w = sliding_windows(160, {100, 3});
  ASSERT_EQ(w.size(), 21u);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(w[i].start, static_cast<Index>(3 * i));
    EXPECT_EQ(w[i].length, 100);
  }
  EXPECT_EQ(w.back().start, 60);

  auto single = sliding_windows(50, {50, 7});
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].start, 0);

  auto two = sliding_windows(10, {4, 4});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1].start, 4);
}

TEST(SlidingWindows, MatchesBruteForceEnumeration) {
  for (Index n = 1; n <= 40; ++n)
    for (Index gamma = 1; gamma <= n; ++gamma)
      for (Index s = 1; s <= 9; ++s) {
        auto w = sliding_windows(n, {gamma, s});
        auto ref = brute_force_starts(n, gamma, s);
        ASSERT_EQ(w.size(), ref.size()) << n << " " << gamma << " " << s;
        ASSERT_EQ(static_cast<Index>(w.size()), (n - gamma) / s + 1);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(w[i].start, ref[i]);
      }
}

TEST(SlidingWindows, Errors) {
  try {
    sliding_windows(50, {100, 1});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "window exceeds series length");
  }
  try {
    sliding_windows(50, {10, 0});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "invalid stride");
  }
  EXPECT_THROW(sliding_windows(50, {10, -2}), InputError);
}

TEST(PearsonFeatures, PerfectCorrelations) {
  Matrix w = gaussian(3, 30, 1);
  w.row(1) = w.row(0);
  const double m = w.row(0).mean();
  w.row(2) = -(w.row(0).array() - m).matrix();
  Matrix f = pearson_features(w);
  EXPECT_NEAR(f(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(f(0, 2), -1.0, 1e-12);
  EXPECT_EQ(f(0, 0), 1.0);
}

TEST(PearsonFeatures, MatchesOracle) {
  Matrix w = gaussian(3, 200, 2);
  Matrix f = pearson_features(w);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      if (i == j) {
        EXPECT_EQ(f(i, j), 1.0);
      } else {
        EXPECT_NEAR(f(i, j), pearson_oracle(w, i, j), 1e-12);
      }
    }
}

TEST(PearsonFeatures, AffineInvariance) {
  Matrix w = gaussian(6, 80, 3);
  Matrix f = pearson_features(w);
  Matrix v = w;
  Rng rng(4);
  std::uniform_real_distribution<double> slope(0.1, 10.0), shift(-50.0, 50.0);
  for (Index i = 0; i < v.rows(); ++i) v.row(i) = (v.row(i).array() * slope(rng) + shift(rng)).matrix();
  EXPECT_LE((pearson_features(v) - f).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PearsonFeatures, ZeroVarianceRowNamesIndex) {
  Matrix w = gaussian(4, 20, 5);
  w.row(2).setConstant(3.5);
  try {
    pearson_features(w);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("ROI 2"), std::string::npos) << e.what();
  }
}

TEST(PartialCorrelation, TwoNodesEqualsPearsonAtSmallShrinkage) {
  Matrix w = gaussian(2, 100, 6);
  w.row(1) += 0.7 * w.row(0);
  Matrix f = pearson_features(w);
  Matrix p = partial_correlation_adjacency(w, 1e-12);
  EXPECT_NEAR(p(0, 1), f(0, 1), 1e-9);
  EXPECT_EQ(p(0, 0), 0.0);
}

TEST(PartialCorrelation, ChainSuppressesConditionedEdge) {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const Index len = 5000;
  Matrix w(3, len);
  for (Index t = 0; t < len; ++t) {
    const double z1 = n(rng);
    const double z2 = z1 + 0.8 * n(rng);
    const double z3 = z2 + 0.8 * n(rng);
    w(0, t) = z1;
    w(1, t) = z2;
    w(2, t) = z3;
  }
  Matrix p = partial_correlation_adjacency(w, 1e-3);
  EXPECT_LT(std::abs(p(0, 2)), 0.05);
  EXPECT_GT(std::abs(p(0, 1)), 0.5);
  EXPECT_GT(std::abs(p(1, 2)), 0.5);
}

TEST(PartialCorrelation, FullShrinkageIsZero) {
  Matrix p = partial_correlation_adjacency(gaussian(5, 40, 8), 1.0);
  EXPECT_EQ(p.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PartialCorrelation, SymmetricBoundedShortWindow) {
  // Fewer timestamps than ROIs: only the shrinkage keeps this invertible.
  Matrix w = gaussian(30, 12, 9);
  Matrix p = partial_correlation_adjacency(w, 0.1);
  EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(p.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(p.diagonal().cwiseAbs().maxCoeff(), 0.0);
}

TEST(PartialCorrelation, Errors) {
  Matrix w = gaussian(3, 20, 10);
  EXPECT_THROW(partial_correlation_adjacency(w, 0.0), InputError);
  EXPECT_THROW(partial_correlation_adjacency(w, 1.5), InputError);
  // Duplicated ROI at tiny shrinkage: condition number ~ 1/lambda.
  w.row(1) = w.row(0);
  try {
    partial_correlation_adjacency(w, 1e-15);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_STREQ(e.what(), "singular correlation matrix");
  }
}

TEST(TopK, Extremes) {
  Matrix a = gaussian(6, 6, 11);
  a = 0.5 * (a + a.transpose()).eval();
  a.diagonal().setZero();
  EXPECT_EQ(topk_sparsify(a, 0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(topk_sparsify(a, 5), a);
  EXPECT_THROW(topk_sparsify(a, 6), InputError);
  EXPECT_THROW(topk_sparsify(a, -1), InputError);
}

TEST(TopK, FourNodeExplicit) {
  Matrix a(4, 4);
  a << 0.0, 0.9, -0.2, 0.1,
       0.9, 0.0, 0.3, -0.8,
      -0.2, 0.3, 0.0, 0.5,
       0.1, -0.8, 0.5, 0.0;
  // Per-row winners: 0->1, 1->0, 2->3, 3->1.
  Matrix expected = Matrix::Zero(4, 4);
  expected(0, 1) = expected(1, 0) = 0.9;
  expected(2, 3) = expected(3, 2) = 0.5;
  expected(1, 3) = expected(3, 1) = -0.8;
  EXPECT_EQ(topk_sparsify(a, 1), expected);
}

TEST(TopK, MatchesExhaustiveOracleAndIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Index n = 4 + static_cast<Index>(seed % 5);
    Matrix a = gaussian(n, n, 100 + seed);
    a = 0.5 * (a + a.transpose()).eval();
    a.diagonal().setZero();
    for (Index k = 0; k < n; ++k) {
      // Oracle: an entry survives if fewer than k row entries beat it.
      Matrix ref = Matrix::Zero(n, n);
      auto survives = [&](Index i, Index j) {
        Index better = 0;
        for (Index c = 0; c < n; ++c)
          if (c != i && c != j && (std::abs(a(i, c)) > std::abs(a(i, j)) ||
                                   (std::abs(a(i, c)) == std::abs(a(i, j)) && c < j)))
            ++better;
        return better < k;
      };
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
          if (i != j && (survives(i, j) || survives(j, i))) ref(i, j) = a(i, j);
      Matrix once = topk_sparsify(a, k);
      EXPECT_EQ(once, ref) << "n=" << n << " k=" << k;
      EXPECT_EQ(topk_sparsify(once, k), once);
    }
  }
}

TEST(BuildObservations, Invariants) {
  TimeSeries ts;
  ts.values = gaussian(12, 150, 12);
  for (Index i = 0; i < 12; ++i) ts.roi_labels.push_back("r" + std::to_string(i));
  GraphBuildOptions opt;
  opt.window = {60, 15};
  auto obs = build_observations(ts, opt);
  ASSERT_EQ(obs.size(), 7u);
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const auto& o = obs[t];
    EXPECT_EQ(o.window_index, static_cast<Index>(t));
    EXPECT_LE((o.adjacency - o.adjacency.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    for (Index i = 0; i < 12; ++i) {
      EXPECT_EQ(o.adjacency(i, i), 0.0);
      EXPECT_EQ(o.features(i, i), 1.0);
    }
    EXPECT_LE(o.adjacency.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LE(o.features.cwiseAbs().maxCoeff(), 1.0);
    // At most k per row survive before the union; ceil(12/10) = 2.
    EXPECT_LE((o.adjacency.array() != 0.0).count(), 2 * 2 * 12);
  }
  opt.max_windows = 3;
  EXPECT_EQ(build_observations(ts, opt).size(), 3u);
}

TEST(DefaultKTop, CeilTenth) {
  EXPECT_EQ(default_k_top(1), 1);
  EXPECT_EQ(default_k_top(10), 1);
  EXPECT_EQ(default_k_top(11), 2);
  EXPECT_EQ(default_k_top(20), 2);
  EXPECT_EQ(default_k_top(116), 12);
}
