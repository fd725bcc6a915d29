#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lrrec::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Support = std::vector<int>;  // sorted column indices

struct EnvDataset {
  MatrixXd x;  // n x p
  VectorXd y;
  int env = 0;
  VectorXd beta_star;
  Support support;  // nonzero coordinates of beta_star
};

struct EnvConfig {
  int n = 100;  // rows per environment
  int p = 10;
  int s_star = 3;
  int n_envs = 1;
  double shift = 0.0;  // environment e: covariates scaled by 1 + shift*e/2, shifted by shift*e
  double noise = 1.0;  // sd of the additive noise
  // Appends one extra column equal to y + spurious_noise * N(0,1) in
  // environment 0 and independent of y elsewhere.
  bool spurious = false;
  double spurious_noise = 0.5;
  std::uint64_t seed = 1;
};

// Shared beta_star: first s_star coordinates drawn from U(0.5, 1.5) with a
// random sign, the rest zero.
std::vector<EnvDataset> gen_multi_env(const EnvConfig& cfg);

// Stacks every environment's rows.
EnvDataset pool(const std::vector<EnvDataset>& envs);

enum class Method { lasso, oracle_ols, eills, single_env_ols };
std::string method_name(Method m);

struct EstimateReport {
  Method method = Method::lasso;
  VectorXd beta;
  Support support;
  std::optional<double> error;  // ||beta - beta_star||, when the truth is known
  bool converged = true;
  int sweeps = 0;
  std::vector<double> objective_trace;  // lasso objective after each sweep
};

Support support_of(const VectorXd& beta, double tol = 1e-10);
double l2_error(const VectorXd& beta, const VectorXd& truth);

struct LassoOptions {
  double tol = 1e-8;  // max coordinate change, standardized scale
  int max_sweeps = 10000;
  bool trace = false;
};

// Minimizes (1/2n)||y - b0 - X b||^2 + lambda ||b||_1 on internally
// centred and scaled columns; the coefficients are reported on the original
// scale. Warns when the sweep limit is reached.
EstimateReport lasso_fit(const MatrixXd& x, const VectorXd& y, double lambda, const LassoOptions& opts = {});
// Smallest lambda that zeroes every coefficient.
double lasso_lambda_max(const MatrixXd& x, const VectorXd& y);

// OLS on the columns in `support`, zeros elsewhere. No intercept. Throws
// NumericError when the selected columns are rank deficient.
EstimateReport oracle_ols_fit(const MatrixXd& x, const VectorXd& y, const Support& support);

// OLS on every column of one environment; the support keeps coefficients
// with |t| > t_crit.
EstimateReport single_env_ols(const MatrixXd& x, const VectorXd& y, double t_crit = 1.96);

struct EillsTerms {
  double risk = 0.0;        // summed squared residuals over all environments
  double invariance = 0.0;  // per active coordinate, squared residual covariance per environment
  double objective = 0.0;   // risk + gamma*invariance + lambda*|support|
};

EillsTerms eills_objective(const VectorXd& beta, const std::vector<EnvDataset>& envs, double gamma,
                           double lambda);

// Exact minimizer of the objective by enumerating all 2^p supports (p <= 14);
// within a support the smooth part is quadratic and solved in closed form.
EstimateReport eills_fit_smallp(const std::vector<EnvDataset>& envs, double gamma, double lambda);

struct RateRow {
  std::string method;
  int n = 0;
  int p = 0;
  int s = 0;
  double mean_err = 0.0;
  double sd = 0.0;
};

struct ConvergenceConfig {
  std::vector<int> n_grid{1000};
  std::vector<int> p_grid{200, 1000, 5000};
  int s_star = 20;
  int trials = 50;
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::vector<double> c_grid{0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0};
  int calibration_trials = 10;
  bool lasso = true;  // false: oracle rows and theory curves only
};

struct ConvergenceResult {
  double c = 0.0;  // calibrated lasso constant
  std::vector<RateRow> rows;
};

// Per (n, p) cell: lasso with lambda = c*sqrt(log p / n) and oracle OLS,
// averaged over trials, plus the curves sqrt(s log p / n) and sqrt(s / n).
ConvergenceResult convergence_experiment(const ConvergenceConfig& cfg);

// n^(-2/(2+p)) for the full model and n^(-2/(2+s)) for the oracle.
std::vector<RateRow> rate_curves_nonlinear(int n, int s_star, const std::vector<int>& p_grid);

// Least-squares slope of log(mean_err) on log(n) over the rows of one method.
double log_log_slope(const std::vector<RateRow>& rows, const std::string& method);

struct SelectionConfig {
  int n = 500;
  int p = 8;
  int s_star = 3;
  int n_envs = 2;
  double shift = 0.5;
  double noise = 1.0;
  int trials = 50;
  std::optional<double> gamma;   // default 5 / n
  std::optional<double> lambda;  // default 2 log(n * n_envs) * noise^2
  bool spurious = false;
  std::uint64_t seed = 1;
};

struct SelectionResult {
  int trials = 0;
  double eills_exact = 0.0;       // share of trials recovering S* exactly
  double eills_spurious = 0.0;    // share including the spurious column
  double ols_exact = 0.0;         // single-environment OLS, environment 0
  double ols_spurious = 0.0;
  double eills_mean_err = 0.0;
  double eills_sd_err = 0.0;
  double ols_mean_err = 0.0;
  double ols_sd_err = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
};

SelectionResult selection_experiment(const SelectionConfig& cfg);

void write_rate_csv(const std::string& path, const std::vector<RateRow>& rows);

}  // namespace lrrec::theory
