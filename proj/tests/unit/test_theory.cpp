#include <cmath>
#include <random>

#include <doctest.h>

#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"
#include "lrrec/theory/lab.hpp"
#include "test_util.hpp"

using namespace lrrec;
using namespace lrrec::theory;

namespace {

EnvConfig small(int n, int p, int s, int envs = 1, double noise = 1.0, std::uint64_t seed = 3) {
  EnvConfig c;
  c.n = n;
  c.p = p;
  c.s_star = s;
  c.n_envs = envs;
  c.noise = noise;
  c.seed = seed;
  c.shift = envs > 1 ? 0.5 : 0.0;
  return c;
}

// Independent evaluation: explicit loops, no Eigen products.
double naive_eills(const VectorXd& beta, const std::vector<EnvDataset>& envs, double gamma, double lambda) {
  double risk = 0.0, inv = 0.0;
  int active = 0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) active += beta[j] != 0.0;
  for (const auto& e : envs) {
    std::vector<double> r(static_cast<std::size_t>(e.x.rows()));
    for (Eigen::Index k = 0; k < e.x.rows(); ++k) {
      double fit = 0.0;
      for (Eigen::Index j = 0; j < beta.size(); ++j) fit += beta[j] * e.x(k, j);
      r[static_cast<std::size_t>(k)] = e.y[k] - fit;
      risk += r[static_cast<std::size_t>(k)] * r[static_cast<std::size_t>(k)];
    }
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      if (beta[j] == 0.0) continue;
      double c = 0.0;
      for (Eigen::Index k = 0; k < e.x.rows(); ++k) c += e.x(k, j) * r[static_cast<std::size_t>(k)];
      inv += c * c;
    }
  }
  return risk + gamma * inv + lambda * active;
}

VectorXd ols_with_intercept(const MatrixXd& x, const VectorXd& y) {
  MatrixXd a(x.rows(), x.cols() + 1);
  a << VectorXd::Ones(x.rows()), x;
  const VectorXd b = a.colPivHouseholderQr().solve(y);
  return b.tail(x.cols());
}

}  // namespace

TEST_CASE("multi-environment data") {
  auto envs = gen_multi_env(small(50, 6, 3));
  REQUIRE(envs.size() == 1);
  const auto& d = envs.front();
  CHECK(d.x.rows() == 50);
  CHECK(d.x.cols() == 6);
  CHECK(d.support == Support{0, 1, 2});
  for (int j = 0; j < 6; ++j) {
    if (j < 3) {
      CHECK(std::abs(d.beta_star[j]) >= 0.5);
      CHECK(std::abs(d.beta_star[j]) <= 1.5);
    } else {
      CHECK(d.beta_star[j] == 0.0);
    }
  }
  auto again = gen_multi_env(small(50, 6, 3));
  CHECK(again.front().x == d.x);
  CHECK(again.front().y == d.y);

  auto shifted = gen_multi_env(small(2000, 3, 1, 3));
  REQUIRE(shifted.size() == 3);
  CHECK(shifted[0].beta_star == shifted[2].beta_star);
  CHECK(shifted[2].x.mean() == doctest::Approx(1.0).epsilon(0.1));

  auto cfg = small(30, 4, 2);
  cfg.spurious = true;
  auto sp = gen_multi_env(cfg);
  CHECK(sp.front().x.cols() == 5);
  CHECK(sp.front().beta_star[4] == 0.0);

  CHECK_THROWS_AS(gen_multi_env(small(10, 3, 4)), ValidationError);
}

TEST_CASE("noiseless data is recovered exactly by least squares") {
  auto d = gen_multi_env(small(40, 10, 4, 1, 0.0)).front();
  Support all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto full = oracle_ols_fit(d.x, d.y, all);
  CHECK(l2_error(full.beta, d.beta_star) < 1e-10);
  auto oracle = oracle_ols_fit(d.x, d.y, d.support);
  CHECK(l2_error(oracle.beta, d.beta_star) < 1e-10);
  CHECK(oracle.support == d.support);
}

TEST_CASE("oracle least squares") {
  auto d = gen_multi_env(small(60, 8, 3)).front();
  Support all{0, 1, 2, 3, 4, 5, 6, 7};
  auto fit = oracle_ols_fit(d.x, d.y, all);
  const VectorXd plain = d.x.colPivHouseholderQr().solve(d.y);
  CHECK((fit.beta - plain).norm() < 1e-10);

  auto restricted = oracle_ols_fit(d.x, d.y, {0, 2, 5});
  const VectorXd r = d.y - d.x * restricted.beta;
  for (int j : {0, 2, 5}) CHECK(std::abs(d.x.col(j).dot(r)) < 1e-8);
  CHECK(restricted.beta[1] == 0.0);

  MatrixXd twin = d.x;
  twin.col(1) = 2.0 * twin.col(0);
  CHECK_THROWS_AS(oracle_ols_fit(twin, d.y, {0, 1}), NumericError);
  CHECK_THROWS_AS(oracle_ols_fit(d.x, d.y, {9}), ValidationError);

  // p > n is fine when only the support is solved
  auto wide = gen_multi_env(small(1000, 2000, 20, 1, 1.0, 9)).front();
  auto o = oracle_ols_fit(wide.x, wide.y, wide.support);
  CHECK(*o.support.rbegin() == 19);
  CHECK(l2_error(o.beta, wide.beta_star) < 0.5);
}

TEST_CASE("lasso without penalty is least squares") {
  auto d = gen_multi_env(small(200, 6, 3)).front();
  auto fit = lasso_fit(d.x, d.y, 0.0);
  CHECK(fit.converged);
  CHECK((fit.beta - ols_with_intercept(d.x, d.y)).norm() < 1e-6);
}

TEST_CASE("lasso kill threshold") {
  auto d = gen_multi_env(small(100, 12, 3)).front();
  const double top = lasso_lambda_max(d.x, d.y);
  CHECK(lasso_fit(d.x, d.y, top).support.empty());
  CHECK(lasso_fit(d.x, d.y, top * 1.5).support.empty());
  CHECK(lasso_fit(d.x, d.y, top * 0.9).support.size() >= 1);
  CHECK_THROWS_AS(lasso_fit(d.x, d.y, -1.0), ValidationError);
}

TEST_CASE("lasso on an orthonormal design soft-thresholds least squares") {
  const int n = 64, p = 5;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  MatrixXd raw(n, p + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= p; ++j) raw(i, j) = g(rng);
  raw.col(0).setOnes();
  // orthogonal columns, each orthogonal to the constant, norm^2 = n
  const MatrixXd q = raw.householderQr().householderQ() * MatrixXd::Identity(n, p + 1);
  const MatrixXd x = q.rightCols(p) * std::sqrt(static_cast<double>(n));
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = g(rng);
  y += x * (VectorXd(p) << 1.0, -0.5, 0.2, 0.05, 0.0).finished();

  const VectorXd ols = x.transpose() * y / n;
  for (double lambda : {0.0, 0.1, 0.3, 0.7}) {
    auto fit = lasso_fit(x, y, lambda);
    for (int j = 0; j < p; ++j) {
      const double expect = std::copysign(std::max(std::abs(ols[j]) - lambda, 0.0), ols[j]);
      CHECK(std::abs(fit.beta[j] - expect) < 1e-8);
    }
  }
}

TEST_CASE("lasso objective never rises between sweeps") {
  auto d = gen_multi_env(small(80, 40, 5, 1, 1.0, 4)).front();
  LassoOptions opts;
  opts.trace = true;
  auto fit = lasso_fit(d.x, d.y, 0.05, opts);
  REQUIRE(fit.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);

  int warnings = 0;
  auto prev = log::set_warning_sink([&](const std::string&) { ++warnings; });
  opts.max_sweeps = 1;
  auto stopped = lasso_fit(d.x, d.y, 0.05, opts);
  log::set_warning_sink(prev);
  CHECK_FALSE(stopped.converged);
  CHECK(warnings == 1);
}

TEST_CASE("invariant least squares objective") {
  auto envs = gen_multi_env(small(30, 5, 2, 2, 0.0));
  auto t = eills_objective(envs[0].beta_star, envs, 3.0, 1.5);
  CHECK(t.risk < 1e-20);
  CHECK(t.invariance < 1e-20);
  CHECK(t.objective == doctest::Approx(1.5 * 2));

  auto noisy = gen_multi_env(small(30, 5, 2, 3, 1.0, 8));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd beta(5);
    for (int j = 0; j < 5; ++j) beta[j] = trial % 2 && j == 3 ? 0.0 : g(rng);
    const double gamma = std::abs(g(rng)), lambda = std::abs(g(rng));
    const double ref = naive_eills(beta, noisy, gamma, lambda);
    CHECK(std::abs(eills_objective(beta, noisy, gamma, lambda).objective - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
  }

  VectorXd beta = VectorXd::Constant(5, 0.3);
  const EnvDataset pooled = pool(noisy);
  CHECK(eills_objective(beta, noisy, 0.0, 0.0).objective ==
        doctest::Approx((pooled.y - pooled.x * beta).squaredNorm()).epsilon(1e-14));
}

TEST_CASE("support enumeration") {
  // single environment, no invariance term: best-subset least squares
  auto envs = gen_multi_env(small(40, 5, 2, 1, 1.0, 6));
  const auto& d = envs.front();
  const double lambda = 3.0;
  double best = INFINITY;
  VectorXd best_beta;
  for (unsigned mask = 0; mask < 32; ++mask) {
    Support s;
    for (int j = 0; j < 5; ++j)
      if (mask & (1u << j)) s.push_back(j);
    const VectorXd b = oracle_ols_fit(d.x, d.y, s).beta;
    const double v = (d.y - d.x * b).squaredNorm() + lambda * static_cast<double>(s.size());
    if (v < best) {
      best = v;
      best_beta = b;
    }
  }
  auto fit = eills_fit_smallp(envs, 0.0, lambda);
  CHECK((fit.beta - best_beta).norm() < 1e-8);

  // with invariance the chosen coefficients are stationary on their support
  auto multi = gen_multi_env(small(50, 4, 2, 2, 1.0, 7));
  const double gamma = 0.05;
  auto m = eills_fit_smallp(multi, gamma, 2.0);
  REQUIRE_FALSE(m.support.empty());
  for (int j : m.support) {
    const double h = 1e-6;
    VectorXd up = m.beta, down = m.beta;
    up[j] += h;
    down[j] -= h;
    const double slope = (eills_objective(up, multi, gamma, 0).objective - eills_objective(down, multi, gamma, 0).objective) / (2 * h);
    CHECK(std::abs(slope) < 1e-3 * eills_objective(m.beta, multi, gamma, 0).objective);
  }
  CHECK(eills_objective(m.beta, multi, gamma, 2.0).objective <=
        eills_objective(multi[0].beta_star, multi, gamma, 2.0).objective + 1e-9);

  auto wide = gen_multi_env(small(20, 15, 2));
  CHECK_THROWS_AS(eills_fit_smallp(wide, 0.0, 1.0), ValidationError);
}

TEST_CASE("single environment least squares keeps the spurious column") {
  SelectionConfig cfg;
  cfg.trials = 10;
  cfg.spurious = true;
  auto r = selection_experiment(cfg);
  CHECK(r.ols_spurious > 0.5);
  CHECK(r.eills_spurious < 0.1);
  CHECK(r.gamma == doctest::Approx(5.0 / 500));
}

TEST_CASE("rate curves") {
  auto same = rate_curves_nonlinear(10000, 20, {20});
  CHECK(same[0].mean_err == same[1].mean_err);

  auto rows = rate_curves_nonlinear(10000, 20, {100});
  CHECK(rows[0].method == "nonlinear_full");
  CHECK(rows[0].mean_err == doctest::Approx(std::pow(10000.0, -2.0 / 102)));
  CHECK(rows[1].mean_err == doctest::Approx(std::pow(10000.0, -2.0 / 22)));
  CHECK(rows[1].mean_err < rows[0].mean_err);

  double last = INFINITY;
  for (int n : {10, 100, 1000, 10000}) {
    const double v = rate_curves_nonlinear(n, 20, {50})[0].mean_err;
    CHECK(v < last);
    last = v;
  }

  ConvergenceConfig cfg;
  cfg.n_grid = {100};
  cfg.p_grid = {static_cast<int>(std::round(std::exp(4.0)))};
  cfg.s_star = 3;
  cfg.trials = 2;
  cfg.lasso = false;
  auto res = convergence_experiment(cfg);
  double lasso_rate = 0, oracle_rate = 0;
  for (auto& r : res.rows) {
    if (r.method == "lasso_rate") lasso_rate = r.mean_err;
    if (r.method == "oracle_rate") oracle_rate = r.mean_err;
  }
  CHECK(lasso_rate / oracle_rate == doctest::Approx(std::sqrt(std::log(55.0))));
  // e^4 itself: the curve ratio is exactly 2
  CHECK(std::sqrt(std::log(std::exp(4.0))) == doctest::Approx(2.0));
}

TEST_CASE("log-log slope and rate table") {
  std::vector<RateRow> rows;
  for (int n : {100, 400, 1600}) rows.push_back({"m", n, 10, 2, 3.0 / std::sqrt(static_cast<double>(n)), 0.0});
  rows.push_back({"other", 5, 10, 2, 1.0, 0.0});
  CHECK(log_log_slope(rows, "m") == doctest::Approx(-0.5));
  CHECK_THROWS_AS(log_log_slope(rows, "other"), ValidationError);

  testutil::TempDir dir("theory_csv");
  write_rate_csv(dir.file("r.csv"), {rows[0]});
  CHECK(testutil::read_text(dir.file("r.csv")) == "method,n,p,s,mean_err,sd\nm,100,10,2,0.29999999999999999,0\n");
}
