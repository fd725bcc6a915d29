#include "lrrec/theory/lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::theory {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, tags...).
std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix(seed);
  for (auto t : tags) h = mix(h ^ t);
  return h;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double soft(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size()));
}

MatrixXd columns(const MatrixXd& x, const Support& s) {
  MatrixXd out(x.rows(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x.col(s[k]);
  return out;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::lasso: return "lasso";
    case Method::oracle_ols: return "oracle_ols";
    case Method::eills: return "eills";
    case Method::single_env_ols: return "single_env_ols";
  }
  return "unknown";
}

Support support_of(const VectorXd& beta, double tol) {
  Support s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (std::abs(beta[j]) > tol) s.push_back(static_cast<int>(j));
  return s;
}

double l2_error(const VectorXd& beta, const VectorXd& truth) {
  if (beta.size() != truth.size()) throw ValidationError("coefficient vectors differ in length");
  return (beta - truth).norm();
}

std::vector<EnvDataset> gen_multi_env(const EnvConfig& cfg) {
  if (cfg.n < 1 || cfg.p < 1 || cfg.n_envs < 1) throw ValidationError("n, p and n_envs must be positive");
  if (cfg.s_star < 0 || cfg.s_star > cfg.p) throw ValidationError("s_star must lie in [0, p]");
  std::mt19937_64 rng(derive(cfg.seed, {0x656e76}));
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);

  const int cols = cfg.p + (cfg.spurious ? 1 : 0);
  VectorXd beta = VectorXd::Zero(cols);
  for (int j = 0; j < cfg.s_star; ++j) beta[j] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  Support support(static_cast<std::size_t>(cfg.s_star));
  for (int j = 0; j < cfg.s_star; ++j) support[static_cast<std::size_t>(j)] = j;

  std::vector<EnvDataset> envs;
  for (int e = 0; e < cfg.n_envs; ++e) {
    const double scale = 1.0 + cfg.shift * e / 2.0;
    const double offset = cfg.shift * e;
    EnvDataset d;
    d.env = e;
    d.beta_star = beta;
    d.support = support;
    d.x.resize(cfg.n, cols);
    for (int j = 0; j < cfg.p; ++j)
      for (int i = 0; i < cfg.n; ++i) d.x(i, j) = scale * g(rng) + offset;
    d.y = d.x.leftCols(cfg.p) * beta.head(cfg.p);
    for (int i = 0; i < cfg.n; ++i) d.y[i] += cfg.noise * g(rng);
    if (cfg.spurious) {
      for (int i = 0; i < cfg.n; ++i)
        d.x(i, cfg.p) = e == 0 ? d.y[i] + cfg.spurious_noise * g(rng) : scale * g(rng) + offset;
    }
    envs.push_back(std::move(d));
  }
  return envs;
}

EnvDataset pool(const std::vector<EnvDataset>& envs) {
  if (envs.empty()) throw ValidationError("no environments");
  Eigen::Index rows = 0;
  for (const auto& e : envs) rows += e.x.rows();
  EnvDataset out;
  out.beta_star = envs.front().beta_star;
  out.support = envs.front().support;
  out.x.resize(rows, envs.front().x.cols());
  out.y.resize(rows);
  Eigen::Index at = 0;
  for (const auto& e : envs) {
    if (e.x.cols() != out.x.cols()) throw ValidationError("environments differ in width");
    out.x.middleRows(at, e.x.rows()) = e.x;
    out.y.segment(at, e.y.size()) = e.y;
    at += e.x.rows();
  }
  return out;
}

double lasso_lambda_max(const MatrixXd& x, const VectorXd& y) {
  const auto n = static_cast<double>(x.rows());
  const VectorXd yc = y.array() - y.mean();
  double best = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const VectorXd c = x.col(j).array() - x.col(j).mean();
    const double sd = std::sqrt(c.squaredNorm() / n);
    if (sd > 0.0) best = std::max(best, std::abs(c.dot(yc)) / (n * sd));
  }
  return best;
}

EstimateReport lasso_fit(const MatrixXd& x, const VectorXd& y, double lambda, const LassoOptions& opts) {
  if (lambda < 0.0) throw ValidationError("lambda must be non-negative");
  if (x.rows() != y.size() || x.rows() == 0) throw ValidationError("design and response differ in length");
  const Eigen::Index n = x.rows(), p = x.cols();
  const auto nd = static_cast<double>(n);

  const VectorXd mu = x.colwise().mean();
  MatrixXd z = x.rowwise() - mu.transpose();
  VectorXd sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    sd[j] = std::sqrt(z.col(j).squaredNorm() / nd);
    if (sd[j] > 0.0) z.col(j) /= sd[j];
  }
  const double ybar = y.mean();
  VectorXd r = y.array() - ybar;
  VectorXd b = VectorXd::Zero(p);

  EstimateReport rep;
  rep.method = Method::lasso;
  const auto objective = [&] { return r.squaredNorm() / (2.0 * nd) + lambda * b.lpNorm<1>(); };

  // One pass over `which`; returns the largest coefficient change.
  const auto sweep = [&](const std::vector<Eigen::Index>& which) {
    double biggest = 0.0;
    for (Eigen::Index j : which) {
      if (sd[j] == 0.0) continue;
      const double old = b[j];
      const double fresh = soft(old + z.col(j).dot(r) / nd, lambda);
      if (fresh != old) {
        r.noalias() -= (fresh - old) * z.col(j);
        b[j] = fresh;
        biggest = std::max(biggest, std::abs(fresh - old));
      }
    }
    ++rep.sweeps;
    if (opts.trace) rep.objective_trace.push_back(objective());
    return biggest;
  };

  std::vector<Eigen::Index> all(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) all[static_cast<std::size_t>(j)] = j;

  rep.converged = false;
  while (rep.sweeps < opts.max_sweeps) {
    if (sweep(all) < opts.tol) {
      rep.converged = true;
      break;
    }
    // iterate on the active set until it settles, then recheck everything
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < p; ++j)
      if (b[j] != 0.0) active.push_back(j);
    while (rep.sweeps < opts.max_sweeps && sweep(active) >= opts.tol) {
    }
  }
  if (!rep.converged)
    log::warn("lasso stopped after " + std::to_string(rep.sweeps) + " sweeps without converging");

  rep.beta = VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j)
    if (sd[j] > 0.0) rep.beta[j] = b[j] / sd[j];
  rep.support = support_of(rep.beta);
  return rep;
}

EstimateReport oracle_ols_fit(const MatrixXd& x, const VectorXd& y, const Support& support) {
  if (x.rows() != y.size()) throw ValidationError("design and response differ in length");
  for (int j : support)
    if (j < 0 || j >= x.cols()) throw ValidationError("support index " + std::to_string(j) + " out of range");
  if (static_cast<Eigen::Index>(support.size()) > x.rows())
    throw NumericError("support larger than the sample; columns are rank deficient");
  EstimateReport rep;
  rep.method = Method::oracle_ols;
  rep.beta = VectorXd::Zero(x.cols());
  if (!support.empty()) {
    const MatrixXd xs = columns(x, support);
    const MatrixXd gram = xs.transpose() * xs;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double hi = eig.eigenvalues().maxCoeff();
    const double lo = eig.eigenvalues().minCoeff();
    if (!(hi > 0.0) || lo <= hi * 1e-12)
      throw NumericError("support columns are rank deficient (eigenvalue ratio " + fmt(hi > 0 ? lo / hi : 0.0) + ")");
    const Eigen::LLT<MatrixXd> llt(gram);
    const VectorXd rhs = xs.transpose() * y;
    VectorXd bs = llt.solve(rhs);
    bs += llt.solve(rhs - gram * bs);  // one refinement step
    for (std::size_t k = 0; k < support.size(); ++k) rep.beta[support[k]] = bs[static_cast<Eigen::Index>(k)];
  }
  rep.support = support_of(rep.beta);
  return rep;
}

EstimateReport single_env_ols(const MatrixXd& x, const VectorXd& y, double t_crit) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n <= p) throw ValidationError("single-environment OLS needs more rows than columns");
  Support all(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) all[static_cast<std::size_t>(j)] = static_cast<int>(j);
  EstimateReport rep = oracle_ols_fit(x, y, all);
  rep.method = Method::single_env_ols;
  const double sigma2 = (y - x * rep.beta).squaredNorm() / static_cast<double>(n - p);
  const MatrixXd inv = (x.transpose() * x).llt().solve(MatrixXd::Identity(p, p));
  rep.support.clear();
  for (Eigen::Index j = 0; j < p; ++j)
    if (std::abs(rep.beta[j]) / std::sqrt(sigma2 * inv(j, j)) > t_crit) rep.support.push_back(static_cast<int>(j));
  return rep;
}

EillsTerms eills_objective(const VectorXd& beta, const std::vector<EnvDataset>& envs, double gamma,
                           double lambda) {
  if (gamma < 0.0 || lambda < 0.0) throw ValidationError("gamma and lambda must be non-negative");
  EillsTerms t;
  const Support active = support_of(beta, 0.0);
  for (const auto& e : envs) {
    if (e.x.cols() != beta.size()) throw ValidationError("coefficient length differs from design width");
    const VectorXd r = e.y - e.x * beta;
    t.risk += r.squaredNorm();
    for (int j : active) {
      const double c = e.x.col(j).dot(r);
      t.invariance += c * c;
    }
  }
  t.objective = t.risk + gamma * t.invariance + lambda * static_cast<double>(active.size());
  return t;
}

EstimateReport eills_fit_smallp(const std::vector<EnvDataset>& envs, double gamma, double lambda) {
  if (envs.empty()) throw ValidationError("no environments");
  if (gamma < 0.0 || lambda < 0.0) throw ValidationError("gamma and lambda must be non-negative");
  const Eigen::Index p = envs.front().x.cols();
  if (p > 14) throw ValidationError("support enumeration is limited to p <= 14 (got " + std::to_string(p) + ")");

  struct Moments {
    MatrixXd gram;
    VectorXd cross;
    double yy;
  };
  std::vector<Moments> m;
  for (const auto& e : envs) {
    if (e.x.cols() != p) throw ValidationError("environments differ in width");
    m.push_back({e.x.transpose() * e.x, e.x.transpose() * e.y, e.y.squaredNorm()});
  }

  double best = std::numeric_limits<double>::infinity();
  VectorXd best_beta = VectorXd::Zero(p);
  for (std::uint32_t mask = 0; mask < (1u << p); ++mask) {
    Support s;
    for (Eigen::Index j = 0; j < p; ++j)
      if (mask & (1u << j)) s.push_back(static_cast<int>(j));
    const auto k = static_cast<Eigen::Index>(s.size());
    VectorXd bs = VectorXd::Zero(k);
    std::vector<MatrixXd> g(m.size());
    std::vector<VectorXd> c(m.size());
    for (std::size_t e = 0; e < m.size(); ++e) {
      g[e] = m[e].gram(s, s);
      c[e] = m[e].cross(s);
    }
    if (k > 0) {
      // stationarity of sum_e ||y - X b||^2 + gamma ||c_e - G_e b||^2
      MatrixXd a = MatrixXd::Zero(k, k);
      VectorXd rhs = VectorXd::Zero(k);
      for (std::size_t e = 0; e < m.size(); ++e) {
        a += g[e] + gamma * g[e] * g[e];
        rhs += c[e] + gamma * g[e] * c[e];
      }
      bs = a.completeOrthogonalDecomposition().solve(rhs);
    }
    double risk = 0.0, inv = 0.0;
    for (std::size_t e = 0; e < m.size(); ++e) {
      risk += m[e].yy - 2.0 * bs.dot(c[e]) + bs.dot(g[e] * bs);
      inv += (c[e] - g[e] * bs).squaredNorm();
    }
    const double obj = risk + gamma * inv + lambda * static_cast<double>(k);
    if (obj < best) {
      best = obj;
      best_beta.setZero();
      for (Eigen::Index q = 0; q < k; ++q) best_beta[s[static_cast<std::size_t>(q)]] = bs[q];
    }
  }
  EstimateReport rep;
  rep.method = Method::eills;
  rep.beta = best_beta;
  rep.support = support_of(best_beta);
  return rep;
}

ConvergenceResult convergence_experiment(const ConvergenceConfig& cfg) {
  if (cfg.n_grid.empty() || cfg.p_grid.empty()) throw ValidationError("n and p grids must be non-empty");
  if (cfg.trials < 1) throw ValidationError("trials must be positive");
  ConvergenceResult out;

  const auto data = [&](int n, int p, std::uint64_t stream, int trial) {
    EnvConfig ec;
    ec.n = n;
    ec.p = p;
    ec.s_star = cfg.s_star;
    ec.noise = cfg.noise;
    ec.seed = derive(cfg.seed, {stream, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(p),
                                static_cast<std::uint64_t>(trial)});
    return std::move(gen_multi_env(ec).front());
  };
  const auto lambda_for = [](double c, int n, int p) {
    return c * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
  };

  if (cfg.lasso) {
    const int n0 = *std::min_element(cfg.n_grid.begin(), cfg.n_grid.end());
    const int p0 = *std::min_element(cfg.p_grid.begin(), cfg.p_grid.end());
    std::vector<EnvDataset> calib;
    for (int t = 0; t < cfg.calibration_trials; ++t) calib.push_back(data(n0, p0, 0xca1, t));
    double best = std::numeric_limits<double>::infinity();
    for (double c : cfg.c_grid) {
      double total = 0.0;
      for (const auto& d : calib) total += l2_error(lasso_fit(d.x, d.y, lambda_for(c, n0, p0)).beta, d.beta_star);
      if (total < best) {
        best = total;
        out.c = c;
      }
    }
    log::info("lasso constant calibrated at c = " + fmt(out.c));
  }

  for (int n : cfg.n_grid) {
    for (int p : cfg.p_grid) {
      std::vector<double> lasso_err, oracle_err;
      for (int t = 0; t < cfg.trials; ++t) {
        const EnvDataset d = data(n, p, 0x7e57, t);
        oracle_err.push_back(l2_error(oracle_ols_fit(d.x, d.y, d.support).beta, d.beta_star));
        if (cfg.lasso) lasso_err.push_back(l2_error(lasso_fit(d.x, d.y, lambda_for(out.c, n, p)).beta, d.beta_star));
      }
      RateRow row{"oracle_ols", n, p, cfg.s_star, 0, 0};
      mean_sd(oracle_err, row.mean_err, row.sd);
      out.rows.push_back(row);
      if (cfg.lasso) {
        row.method = "lasso";
        mean_sd(lasso_err, row.mean_err, row.sd);
        out.rows.push_back(row);
      }
      const double s = cfg.s_star;
      out.rows.push_back({"lasso_rate", n, p, cfg.s_star, std::sqrt(s * std::log(static_cast<double>(p)) / n), 0.0});
      out.rows.push_back({"oracle_rate", n, p, cfg.s_star, std::sqrt(s / n), 0.0});
      log::info("rates cell n=" + std::to_string(n) + " p=" + std::to_string(p) + " done");
    }
  }
  return out;
}

std::vector<RateRow> rate_curves_nonlinear(int n, int s_star, const std::vector<int>& p_grid) {
  if (n < 1) throw ValidationError("n must be positive");
  std::vector<RateRow> rows;
  for (int p : p_grid) {
    rows.push_back({"nonlinear_full", n, p, s_star, std::pow(static_cast<double>(n), -2.0 / (2.0 + p)), 0.0});
    rows.push_back({"nonlinear_oracle", n, p, s_star, std::pow(static_cast<double>(n), -2.0 / (2.0 + s_star)), 0.0});
  }
  return rows;
}

double log_log_slope(const std::vector<RateRow>& rows, const std::string& method) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double k = 0;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    const double lx = std::log(static_cast<double>(r.n)), ly = std::log(r.mean_err);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    k += 1;
  }
  const double denom = k * sxx - sx * sx;
  if (k < 2 || denom <= 0.0) throw ValidationError("slope needs at least two distinct n for " + method);
  return (k * sxy - sx * sy) / denom;
}

SelectionResult selection_experiment(const SelectionConfig& cfg) {
  if (cfg.trials < 1) throw ValidationError("trials must be positive");
  SelectionResult out;
  out.trials = cfg.trials;
  out.gamma = cfg.gamma.value_or(5.0 / cfg.n);
  out.lambda = cfg.lambda.value_or(2.0 * std::log(static_cast<double>(cfg.n) * cfg.n_envs) * cfg.noise * cfg.noise);
  std::vector<double> eills_err, ols_err;
  const int spurious_index = cfg.p;  // appended after the regular columns

  for (int t = 0; t < cfg.trials; ++t) {
    EnvConfig ec;
    ec.n = cfg.n;
    ec.p = cfg.p;
    ec.s_star = cfg.s_star;
    ec.n_envs = cfg.n_envs;
    ec.shift = cfg.shift;
    ec.noise = cfg.noise;
    ec.spurious = cfg.spurious;
    ec.seed = derive(cfg.seed, {0x5e1, static_cast<std::uint64_t>(t)});
    const auto envs = gen_multi_env(ec);
    const auto& truth = envs.front();

    const auto eills = eills_fit_smallp(envs, out.gamma, out.lambda);
    const auto ols = single_env_ols(truth.x, truth.y);
    const auto has = [&](const Support& s) { return std::find(s.begin(), s.end(), spurious_index) != s.end(); };
    out.eills_exact += eills.support == truth.support;
    out.ols_exact += ols.support == truth.support;
    if (cfg.spurious) {
      out.eills_spurious += has(eills.support);
      out.ols_spurious += has(ols.support);
    }
    eills_err.push_back(l2_error(eills.beta, truth.beta_star));
    ols_err.push_back(l2_error(ols.beta, truth.beta_star));
  }
  const double k = cfg.trials;
  out.eills_exact /= k;
  out.ols_exact /= k;
  out.eills_spurious /= k;
  out.ols_spurious /= k;
  mean_sd(eills_err, out.eills_mean_err, out.eills_sd_err);
  mean_sd(ols_err, out.ols_mean_err, out.ols_sd_err);
  return out;
}

void write_rate_csv(const std::string& path, const std::vector<RateRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out << "method,n,p,s,mean_err,sd\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.n << ',' << r.p << ',' << r.s << ',' << fmt(r.mean_err) << ',' << fmt(r.sd) << '\n';
}

}  // namespace lrrec::theory
